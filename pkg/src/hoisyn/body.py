"""Toy articulated body: a 24-joint kinematic tree with capsule volume.

Parameterization mirrors a full parametric body so the fitting code paths
carry over: axis-angle global orient (3), body pose (21x3), hand pose
(30x3), root translation (3) and a 10-vector shape that linearly modulates
bone lengths. The toy skeleton consumes all 21 body rows plus one hand row
per side (rows 0 and 15); the remaining hand rows only see the regularizer.

Forward kinematics runs in torch so energy gradients are exact.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from .rotations import axis_angle_to_matrix_t

JOINT_NAMES = [
    "pelvis", "spine1", "spine2", "chest", "neck", "head",
    "l_hip", "l_knee", "l_ankle", "l_foot",
    "r_hip", "r_knee", "r_ankle", "r_foot",
    "l_collar", "l_shoulder", "l_elbow", "l_wrist", "l_hand",
    "r_collar", "r_shoulder", "r_elbow", "r_wrist", "r_hand",
]

PARENTS = [-1, 0, 1, 2, 3, 4, 0, 6, 7, 8, 0, 10, 11, 12, 3, 14, 15, 16, 17, 3, 19, 20, 21, 22]

# Rows of body_pose (21x3) feeding each non-root joint; -1 means hand_pose.
_BODY_POSE_ROW = {
    "spine1": 2, "spine2": 5, "chest": 8, "neck": 11, "head": 14,
    "l_hip": 0, "l_knee": 3, "l_ankle": 6, "l_foot": 9,
    "r_hip": 1, "r_knee": 4, "r_ankle": 7, "r_foot": 10,
    "l_collar": 12, "l_shoulder": 15, "l_elbow": 17, "l_wrist": 19,
    "r_collar": 13, "r_shoulder": 16, "r_elbow": 18, "r_wrist": 20,
}
_HAND_POSE_ROW = {"l_hand": 0, "r_hand": 15}

_REST_OFFSETS = {
    "pelvis": (0.0, 0.0, 0.0),
    "spine1": (0.0, 0.0, 0.10), "spine2": (0.0, 0.0, 0.12), "chest": (0.0, 0.0, 0.14),
    "neck": (0.0, 0.0, 0.12), "head": (0.0, 0.0, 0.10),
    "l_hip": (0.09, 0.0, -0.05), "l_knee": (0.0, 0.0, -0.40),
    "l_ankle": (0.0, 0.0, -0.42), "l_foot": (0.0, 0.13, -0.06),
    "r_hip": (-0.09, 0.0, -0.05), "r_knee": (0.0, 0.0, -0.40),
    "r_ankle": (0.0, 0.0, -0.42), "r_foot": (0.0, 0.13, -0.06),
    "l_collar": (0.06, 0.0, 0.08), "l_shoulder": (0.12, 0.0, 0.0),
    "l_elbow": (0.26, 0.0, 0.0), "l_wrist": (0.25, 0.0, 0.0), "l_hand": (0.09, 0.0, 0.0),
    "r_collar": (-0.06, 0.0, 0.08), "r_shoulder": (-0.12, 0.0, 0.0),
    "r_elbow": (-0.26, 0.0, 0.0), "r_wrist": (-0.25, 0.0, 0.0), "r_hand": (-0.09, 0.0, 0.0),
}

_BONE_RADII = {
    "spine1": 0.10, "spine2": 0.10, "chest": 0.11, "neck": 0.05, "head": 0.09,
    "l_hip": 0.07, "l_knee": 0.06, "l_ankle": 0.05, "l_foot": 0.04,
    "r_hip": 0.07, "r_knee": 0.06, "r_ankle": 0.05, "r_foot": 0.04,
    "l_collar": 0.05, "l_shoulder": 0.045, "l_elbow": 0.04, "l_wrist": 0.035, "l_hand": 0.03,
    "r_collar": 0.05, "r_shoulder": 0.045, "r_elbow": 0.04, "r_wrist": 0.035, "r_hand": 0.03,
}

NUM_BODY_JOINTS = 21
NUM_HAND_JOINTS = 30
SHAPE_DIM = 10
LEFT_HAND = JOINT_NAMES.index("l_hand")
RIGHT_HAND = JOINT_NAMES.index("r_hand")


@dataclass
class BodyParams:
    """Pose/shape state; arrays may carry a leading time axis N."""

    global_orient: np.ndarray
    body_pose: np.ndarray
    hand_pose: np.ndarray
    translation: np.ndarray
    shape: np.ndarray = field(default_factory=lambda: np.zeros(SHAPE_DIM))

    def __post_init__(self):
        self.global_orient = np.asarray(self.global_orient, dtype=np.float64)
        self.body_pose = np.asarray(self.body_pose, dtype=np.float64)
        self.hand_pose = np.asarray(self.hand_pose, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        self.shape = np.asarray(self.shape, dtype=np.float64)
        if self.global_orient.shape[-1] != 3:
            raise ValueError("global_orient must end in 3")
        if self.body_pose.shape[-2:] != (NUM_BODY_JOINTS, 3):
            raise ValueError(f"body_pose must end in ({NUM_BODY_JOINTS}, 3)")
        if self.hand_pose.shape[-2:] != (NUM_HAND_JOINTS, 3):
            raise ValueError(f"hand_pose must end in ({NUM_HAND_JOINTS}, 3)")
        if self.shape.shape != (SHAPE_DIM,):
            raise ValueError(f"shape must be ({SHAPE_DIM},)")
        for name in ("global_orient", "body_pose", "hand_pose", "translation", "shape"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    @classmethod
    def zeros(cls, num_frames=None):
        lead = () if num_frames is None else (num_frames,)
        return cls(
            np.zeros(lead + (3,)),
            np.zeros(lead + (NUM_BODY_JOINTS, 3)),
            np.zeros(lead + (NUM_HAND_JOINTS, 3)),
            np.zeros(lead + (3,)),
        )

    @property
    def num_frames(self):
        return 1 if self.global_orient.ndim == 1 else self.global_orient.shape[0]


def shape_from_stature(height_m=1.70, weight_kg=70.0):
    """Crude stature heuristic: shape[0] tracks height, shape[1] weight."""
    beta = np.zeros(SHAPE_DIM)
    beta[0] = (height_m - 1.70) / 0.10
    beta[1] = (weight_kg - 70.0) / 15.0
    return beta


class ToyBodyModel:
    """Forward-kinematics body with shape-modulated bone lengths.

    ``forward`` maps params to (N, J, 3) joint positions; identity params
    give the rest pose. ``forward_frames`` also returns global joint
    rotations for rigid attachment of held objects.
    """

    num_joints = len(JOINT_NAMES)

    def __init__(self, dtype=torch.float64):
        self.dtype = dtype
        self.parents = list(PARENTS)
        self.rest_offsets = torch.tensor(
            np.array([_REST_OFFSETS[n] for n in JOINT_NAMES]), dtype=dtype
        )
        # Linear shape-to-bone-length map: shape[0] scales everything,
        # shape[1] scales the arms; the rest perturb deterministically.
        rng = np.random.default_rng(1234)
        basis = rng.normal(scale=0.005, size=(self.num_joints, SHAPE_DIM))
        basis[:, 0] = 0.05
        arm = [JOINT_NAMES.index(n) for n in
               ("l_shoulder", "l_elbow", "l_wrist", "l_hand",
                "r_shoulder", "r_elbow", "r_wrist", "r_hand")]
        basis[:, 1] = 0.0
        basis[arm, 1] = 0.04
        basis[0, :] = 0.0  # root offset stays at the origin
        self.shape_basis = torch.tensor(basis, dtype=dtype)
        self._body_rows = [
            _BODY_POSE_ROW.get(name, -1) for name in JOINT_NAMES
        ]
        self._hand_rows = [
            _HAND_POSE_ROW.get(name, -1) for name in JOINT_NAMES
        ]

    def capsules(self):
        """Bone capsules as (parent_idx, child_idx, radius) triples."""
        out = []
        for j, name in enumerate(JOINT_NAMES):
            p = self.parents[j]
            if p < 0:
                continue
            out.append((p, j, _BONE_RADII[name]))
        return out

    def offsets_for_shape(self, shape_t):
        """Rest offsets scaled per joint by (1 + basis @ shape)."""
        gain = 1.0 + self.shape_basis @ shape_t  # (J,)
        return self.rest_offsets * gain[:, None]

    def forward_frames(self, global_orient, body_pose, hand_pose, translation, shape):
        """FK for a batch of frames.

        Args are torch tensors: (N, 3), (N, 21, 3), (N, 30, 3), (N, 3), (10,).
        Returns (positions (N, J, 3), global rotations (N, J, 3, 3)).
        """
        N = global_orient.shape[0]
        offsets = self.offsets_for_shape(shape.to(global_orient.dtype))  # (J, 3)
        local = [None] * self.num_joints
        local[0] = axis_angle_to_matrix_t(global_orient)
        for j in range(1, self.num_joints):
            if self._hand_rows[j] >= 0:
                aa = hand_pose[:, self._hand_rows[j]]
            else:
                aa = body_pose[:, self._body_rows[j]]
            local[j] = axis_angle_to_matrix_t(aa)
        rot = [None] * self.num_joints
        pos = [None] * self.num_joints
        rot[0] = local[0]
        pos[0] = translation
        for j in range(1, self.num_joints):
            p = self.parents[j]
            rot[j] = rot[p] @ local[j]
            pos[j] = pos[p] + (rot[p] @ offsets[j].unsqueeze(-1)).squeeze(-1)
        return torch.stack(pos, dim=1), torch.stack(rot, dim=1)

    def forward(self, params: BodyParams):
        """numpy convenience wrapper -> (N, J, 3) positions."""
        pos, _ = self.forward_frames(*self._to_torch(params))
        return pos.detach().cpu().numpy()

    def forward_with_rotations(self, params: BodyParams):
        pos, rot = self.forward_frames(*self._to_torch(params))
        return pos.detach().cpu().numpy(), rot.detach().cpu().numpy()

    def _to_torch(self, params: BodyParams):
        lead = params.global_orient.ndim == 1

        def t(x):
            arr = torch.as_tensor(x, dtype=self.dtype)
            return arr.unsqueeze(0) if lead else arr

        return (
            t(params.global_orient),
            t(params.body_pose),
            t(params.hand_pose),
            t(params.translation),
            torch.as_tensor(params.shape, dtype=self.dtype),
        )

    def rest_joints(self, shape=None):
        shape = np.zeros(SHAPE_DIM) if shape is None else shape
        params = BodyParams.zeros(1)
        params.shape = np.asarray(shape, dtype=np.float64)
        return self.forward(params)[0]
