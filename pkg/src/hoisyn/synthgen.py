"""Synthetic desk-scale corpus of scripted human-object interactions.

Each sequence is built from 2-4 segments, each running one scripted action
on one object: grasp (reach toward it), move (carry it around) or place
(set it down). A held object is rigidly welded to the hand joint frame:
its pose is the hand frame composed with a fixed offset captured when the
weld engages, so grasp rigidity holds to float precision by construction.

Human motion comes from min-jerk interpolation of pose keyframes pinned at
segment boundaries (zero velocity at keyframes, so transitions are smooth),
run through the toy body model's forward kinematics.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .archive import SCHEMA_VERSION, write_archive
from .body import LEFT_HAND, RIGHT_HAND, BodyParams, ToyBodyModel
from .bps import build_object_geometry, unit_ball_basis
from .mesh import make_box, make_cylinder, make_sphere
from .motion import HoiSequence, HumanMotion, ObjectTrack
from .rotations import matrix_to_rot6d

# name -> (primitive, size arguments)
OBJECT_SPECS = {
    "teapot": ("cylinder", {"radius": 0.06, "height": 0.12}),
    "teacup": ("cylinder", {"radius": 0.035, "height": 0.06}),
    "mug": ("cylinder", {"radius": 0.04, "height": 0.10}),
    "bottle": ("cylinder", {"radius": 0.03, "height": 0.20}),
    "bowl": ("sphere", {"radius": 0.07}),
    "apple": ("sphere", {"radius": 0.04}),
    "lemon": ("sphere", {"radius": 0.03}),
    "box": ("box", {"size": (0.08, 0.08, 0.08)}),
    "hammer": ("box", {"size": (0.03, 0.22, 0.03)}),
    "plate": ("box", {"size": (0.16, 0.16, 0.02)}),
    "knife": ("box", {"size": (0.02, 0.18, 0.01)}),
}

GRASP_TEXTS = [
    "the person reaches for the {name} with the {side} hand and grasps it",
    "the person picks up the {name} with the {side} hand",
    "the person grabs the {name} using the {side} hand",
]
MOVE_TEXTS = [
    "they lift the {name} and carry it to the side",
    "they move the {name} around above the table",
    "they shake the {name} gently in the air",
]
PLACE_TEXTS = [
    "they put the {name} down on the table",
    "they set the {name} back onto the table",
    "they lower the {name} and release it",
]

TABLE_HEIGHT = 0.74
BODY_Z = 0.97


class CorpusConfigError(ValueError):
    """Unsatisfiable corpus generation configuration."""


@dataclass
class GenConfig:
    num_sequences: int = 16
    num_objects: int = 2
    seg_count_range: tuple = (2, 4)
    seg_len_range: tuple = (24, 40)  # frames per segment
    fps: float = 20.0
    surface_samples: int = 1024
    object_names: tuple = tuple(sorted(OBJECT_SPECS))

    def validate(self):
        if self.num_objects not in (2, 3):
            raise CorpusConfigError(f"num_objects must be 2 or 3, got {self.num_objects}")
        if self.num_sequences < 1:
            raise CorpusConfigError("num_sequences must be >= 1")
        lo, hi = self.seg_count_range
        if not (1 <= lo <= hi <= 8):
            raise CorpusConfigError(f"bad seg_count_range {self.seg_count_range}")
        flo, fhi = self.seg_len_range
        if flo < 12 or fhi < flo:
            raise CorpusConfigError(
                f"seg_len_range {self.seg_len_range} too short for smooth interactions"
            )
        for name in self.object_names:
            if name not in OBJECT_SPECS:
                raise CorpusConfigError(f"unknown object name {name!r}")


def minjerk(tau):
    """Minimum-jerk time profile on [0, 1]: zero velocity at both ends."""
    tau = np.clip(tau, 0.0, 1.0)
    return 10.0 * tau**3 - 15.0 * tau**4 + 6.0 * tau**5


def _make_mesh(name, rng):
    kind, kw = OBJECT_SPECS[name]
    jitter = rng.uniform(0.9, 1.1)
    if kind == "box":
        return make_box(tuple(np.asarray(kw["size"]) * jitter))
    if kind == "cylinder":
        return make_cylinder(kw["radius"] * jitter, kw["height"] * jitter, segments=12)
    return make_sphere(kw["radius"] * jitter, subdivisions=2)


def _build_script(rng, n_objects, n_segments):
    """Per-segment actions: dicts with action / object slot / hand."""
    held = {}  # hand name -> object slot
    script = []
    for s in range(n_segments):
        options = []
        free_hands = [h for h in ("left", "right") if h not in held]
        unheld = [o for o in range(n_objects) if o not in held.values()]
        if free_hands and unheld:
            options.append("grasp")
        if held:
            options += ["move", "place"]
        action = "grasp" if s == 0 else options[rng.integers(len(options))]
        if action == "grasp":
            obj = unheld[rng.integers(len(unheld))]
            hand = free_hands[rng.integers(len(free_hands))]
            held[hand] = obj
            script.append({"action": "grasp", "object": obj, "hand": hand})
        else:
            hand = list(held)[rng.integers(len(held))]
            obj = held[hand]
            if action == "place":
                del held[hand]
            script.append({"action": action, "object": obj, "hand": hand})
    return script


def _segment_text(step, names, rng):
    pool = {"grasp": GRASP_TEXTS, "move": MOVE_TEXTS, "place": PLACE_TEXTS}[step["action"]]
    template = pool[rng.integers(len(pool))]
    return template.format(name=names[step["object"]], side=step["hand"])


def _join_texts(parts):
    joiners = ["First, "] + ["then "] * max(0, len(parts) - 2) + (
        ["finally "] if len(parts) > 1 else []
    )
    return "".join(j + p + (", " if i < len(parts) - 1 else ".")
                   for i, (j, p) in enumerate(zip(joiners, parts)))


_ARM_ROWS = {"left": {"shoulder": 15, "elbow": 17, "wrist": 19},
             "right": {"shoulder": 16, "elbow": 18, "wrist": 20}}
_HAND_ROWS = {"left": 0, "right": 15}
_HAND_JOINT = {"left": LEFT_HAND, "right": RIGHT_HAND}


def _arm_keyframe(rng, hand, kind):
    """Axis-angle targets for one arm; signs mirror for the right side."""
    sign = 1.0 if hand == "left" else -1.0
    if kind == "reach":
        shoulder = np.array([rng.uniform(0.3, 0.7), sign * rng.uniform(0.4, 0.9), 0.0])
        elbow = np.array([0.0, 0.0, sign * rng.uniform(0.3, 0.8)])
    elif kind == "carry":
        shoulder = np.array([rng.uniform(-0.3, 0.7), sign * rng.uniform(0.2, 1.0),
                             rng.uniform(-0.3, 0.3)])
        elbow = np.array([0.0, rng.uniform(-0.3, 0.3), sign * rng.uniform(0.2, 0.9)])
    else:  # lower / neutral-ish
        shoulder = np.array([rng.uniform(-0.1, 0.2), sign * rng.uniform(0.0, 0.3), 0.0])
        elbow = np.array([0.0, 0.0, sign * rng.uniform(0.0, 0.3)])
    return shoulder, elbow


def _generate_body_motion(rng, script, seg_lens):
    """Keyframed pose parameters (one keyframe per boundary), min-jerk in between."""
    m = len(script)
    n_keys = m + 1
    key_body = np.zeros((n_keys, 21, 3))
    key_hand = np.zeros((n_keys, 30, 3))
    key_go = np.zeros((n_keys, 3))
    key_tr = np.zeros((n_keys, 3))
    key_tr[:, 2] = BODY_Z

    for k in range(1, n_keys):
        step = script[k - 1]
        hand = step["hand"]
        rows = _ARM_ROWS[hand]
        kind = {"grasp": "reach", "move": "carry", "place": "lower"}[step["action"]]
        key_body[k] = key_body[k - 1]
        key_hand[k] = key_hand[k - 1]
        shoulder, elbow = _arm_keyframe(rng, hand, kind)
        key_body[k, rows["shoulder"]] = shoulder
        key_body[k, rows["elbow"]] = elbow
        key_body[k, rows["wrist"]] = [0.0, rng.uniform(-0.3, 0.3), 0.0]
        key_hand[k, _HAND_ROWS[hand]] = [0.0, rng.uniform(-0.4, 0.4), 0.0]
        # Gentle whole-body variety: spine lean, yaw and sway.
        key_body[k, 2] = [rng.uniform(-0.08, 0.15), 0.0, rng.uniform(-0.1, 0.1)]
        key_go[k] = [0.0, 0.0, rng.uniform(-0.15, 0.15)]
        key_tr[k] = [rng.uniform(-0.04, 0.04), rng.uniform(-0.03, 0.03), BODY_Z]

    T = int(sum(seg_lens))
    params = BodyParams.zeros(T)
    t0 = 0
    for s, L in enumerate(seg_lens):
        prof = minjerk(np.arange(L) / float(L))[:, None]
        for key_arr, out in (
            (key_go, params.global_orient),
            (key_tr, params.translation),
        ):
            out[t0 : t0 + L] = key_arr[s] + prof * (key_arr[s + 1] - key_arr[s])
        prof3 = prof[:, None]
        params.body_pose[t0 : t0 + L] = key_body[s] + prof3 * (key_body[s + 1] - key_body[s])
        params.hand_pose[t0 : t0 + L] = key_hand[s] + prof3 * (key_hand[s + 1] - key_hand[s])
        t0 += L
    return params


def _generate_object_tracks(rng, script, seg_lens, geoms, hand_pos, hand_rot):
    """World-space object poses; welded while held, frozen otherwise."""
    n_obj = len(geoms)
    T = int(sum(seg_lens))
    R = np.tile(np.eye(3), (T, n_obj, 1, 1))
    t = np.zeros((T, n_obj, 3))
    # Initial placement on the table in front of the body.
    for o in range(n_obj):
        t[0, o] = [rng.uniform(-0.35, 0.35), rng.uniform(0.35, 0.55), TABLE_HEIGHT + 0.06]

    boundaries = np.cumsum([0] + list(seg_lens))
    welded = {}  # object slot -> (hand joint, offset_R, offset_t)
    for s, step in enumerate(script):
        lo, hi = boundaries[s], boundaries[s + 1]
        if step["action"] in ("move", "place") and step["object"] not in welded:
            j = _HAND_JOINT[step["hand"]]
            Rh, ph = hand_rot[lo, j], hand_pos[lo, j]
            off_R = Rh.T @ R[lo, step["object"]]
            off_t = Rh.T @ (t[lo, step["object"]] - ph)
            welded[step["object"]] = (j, off_R, off_t)
        for f in range(lo, hi):
            if f > 0:
                R[f] = R[f - 1]
                t[f] = t[f - 1]
            for o, (j, off_R, off_t) in welded.items():
                R[f, o] = hand_rot[f, j] @ off_R
                t[f, o] = hand_pos[f, j] + hand_rot[f, j] @ off_t
        if step["action"] == "place":
            welded.pop(step["object"], None)
        if step["action"] == "grasp":
            # The weld engages at the end of the reach; later move/place
            # segments pick it up from the captured offset.
            j = _HAND_JOINT[step["hand"]]
            Rh, ph = hand_rot[hi - 1, j], hand_pos[hi - 1, j]
            welded[step["object"]] = (
                j,
                Rh.T @ R[hi - 1, step["object"]],
                Rh.T @ (t[hi - 1, step["object"]] - ph),
            )
    # Drop welds that never saw a move/place; harmless either way.
    return R, t


def generate_sequence(seq_id, config, rng, body_model, basis):
    """One scripted HoiSequence plus its script (for invariant checks)."""
    n_seg = int(rng.integers(config.seg_count_range[0], config.seg_count_range[1] + 1))
    seg_lens = [int(rng.integers(config.seg_len_range[0], config.seg_len_range[1] + 1))
                for _ in range(n_seg)]
    names = list(rng.choice(config.object_names, size=config.num_objects, replace=False))
    script = _build_script(rng, config.num_objects, n_seg)

    params = _generate_body_motion(rng, script, seg_lens)
    positions, rotations = body_model.forward_with_rotations(params)

    geoms = []
    for o, name in enumerate(names):
        verts, faces = _make_mesh(name, rng)
        geoms.append(
            build_object_geometry(
                verts, faces, name=name,
                sample_count=config.surface_samples,
                sample_seed=int(rng.integers(2**31)),
                basis=basis,
            )
        )
    obj_R, obj_t = _generate_object_tracks(rng, script, seg_lens, geoms, positions, rotations)

    human = HumanMotion(
        positions=positions,
        rotations=matrix_to_rot6d(rotations),
        root_translation=params.translation,
        fps=config.fps,
    )
    objects = [
        ObjectTrack(matrix_to_rot6d(obj_R[:, o]), obj_t[:, o], geoms[o])
        for o in range(config.num_objects)
    ]
    seg_texts = [_segment_text(step, names, rng) for step in script]
    boundaries = np.cumsum([0] + seg_lens)
    segments = [(int(boundaries[i]), int(boundaries[i + 1]), seg_texts[i])
                for i in range(n_seg)]
    seq = HoiSequence(
        human=human,
        objects=objects,
        text=_join_texts(seg_texts),
        segments=segments,
        seq_id=seq_id,
    )
    return seq, script


def generate_synthetic_corpus(out_dir, config=None, seed=7, split_ratios=(0.8, 0.15, 0.05)):
    """Write a full corpus (archives + manifest.json); returns (manifest, scripts).

    Deterministic: the same config and seed produce byte-identical archives.
    """
    from .dataset import CorpusManifest, split_dataset

    config = config if config is not None else GenConfig()
    config.validate()
    body_model = ToyBodyModel()
    basis = unit_ball_basis()
    root = np.random.SeedSequence(seed)
    children = root.spawn(config.num_sequences)

    os.makedirs(out_dir, exist_ok=True)
    entries = []
    scripts = {}
    for i in range(config.num_sequences):
        rng = np.random.default_rng(children[i])
        seq_id = f"seq{i:04d}"
        seq, script = generate_sequence(seq_id, config, rng, body_model, basis)
        write_archive(os.path.join(out_dir, seq_id), seq)
        entries.append(
            {
                "id": seq_id,
                "num_frames": seq.num_frames,
                "num_objects": seq.num_objects,
                "num_segments": len(seq.segments),
            }
        )
        scripts[seq_id] = script
    manifest = CorpusManifest(
        sequences=entries,
        object_vocabulary=sorted(config.object_names),
        fps=config.fps,
        num_objects=config.num_objects,
        schema_version=SCHEMA_VERSION,
    )
    manifest = split_dataset(manifest, ratios=split_ratios, seed=seed)
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest, scripts
