"""Core motion containers and the flat per-frame feature layout.

Feature layouts (all float):
  human frame:  [positions J*3 | rotations J*6 | root 3]  -> width 9*J + 3
  object frame: [rotation 6 | translation 3]              -> width 9

Object rotations are relative to the object's input frame, so frame 0
decodes to the identity. Object meshes and surface samples live in that
input frame with the centroid at the origin; world-space points at frame
t are ``R_t @ x + T_t``.
"""

from dataclasses import dataclass, field

import numpy as np

from .rotations import rot6d_to_matrix

OBJECT_FEATURE_WIDTH = 9


def human_feature_width(num_joints):
    return 9 * num_joints + 3


@dataclass
class HumanMotion:
    """Per-frame joint positions (T, J, 3), 6D joint rotations (T, J, 6),
    root translation (T, 3)."""

    positions: np.ndarray
    rotations: np.ndarray
    root_translation: np.ndarray
    fps: float = 20.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float32)
        self.rotations = np.asarray(self.rotations, dtype=np.float32)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float32)
        if self.positions.ndim != 3 or self.positions.shape[-1] != 3:
            raise ValueError(f"positions must be (T, J, 3), got {self.positions.shape}")
        T, J = self.positions.shape[:2]
        if T < 1:
            raise ValueError("need at least one frame")
        if self.rotations.shape != (T, J, 6):
            raise ValueError(f"rotations must be ({T}, {J}, 6), got {self.rotations.shape}")
        if self.root_translation.shape != (T, 3):
            raise ValueError(f"root_translation must be ({T}, 3), got {self.root_translation.shape}")
        for name in ("positions", "rotations", "root_translation"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def num_frames(self):
        return self.positions.shape[0]

    @property
    def num_joints(self):
        return self.positions.shape[1]

    @property
    def feature_width(self):
        return human_feature_width(self.num_joints)

    def to_features(self):
        """Flatten to (T, 9*J + 3)."""
        T, J = self.positions.shape[:2]
        return np.concatenate(
            [
                self.positions.reshape(T, J * 3),
                self.rotations.reshape(T, J * 6),
                self.root_translation,
            ],
            axis=1,
        )

    @classmethod
    def from_features(cls, feats, num_joints, fps=20.0):
        feats = np.asarray(feats)
        T = feats.shape[0]
        J = num_joints
        if feats.shape[1] != human_feature_width(J):
            raise ValueError(
                f"feature width {feats.shape[1]} != expected {human_feature_width(J)} for J={J}"
            )
        pos = feats[:, : 3 * J].reshape(T, J, 3)
        rot = feats[:, 3 * J : 9 * J].reshape(T, J, 6)
        root = feats[:, 9 * J :]
        return cls(pos, rot, root, fps=fps)


@dataclass
class ObjectGeometry:
    """Mesh, surface samples and BPS code of one rigid object (input frame).

    ``bps_code[i]`` is the vector from the nearest basis point to normalized
    sample i; ``norm_center``/``norm_scale`` map input-frame points into the
    unit ball the basis lives in: ``x_norm = (x - norm_center) / norm_scale``.
    """

    mesh_vertices: np.ndarray
    mesh_faces: np.ndarray
    surface_samples: np.ndarray
    bps_code: np.ndarray
    norm_center: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.float32))
    norm_scale: float = 1.0
    name: str = ""

    def __post_init__(self):
        self.mesh_vertices = np.asarray(self.mesh_vertices, dtype=np.float32)
        self.mesh_faces = np.asarray(self.mesh_faces, dtype=np.int64)
        self.surface_samples = np.asarray(self.surface_samples, dtype=np.float32)
        self.bps_code = np.asarray(self.bps_code, dtype=np.float32)
        self.norm_center = np.asarray(self.norm_center, dtype=np.float32)
        if self.mesh_vertices.ndim != 2 or self.mesh_vertices.shape[1] != 3:
            raise ValueError("mesh_vertices must be (V, 3)")
        if self.mesh_faces.ndim != 2 or self.mesh_faces.shape[1] != 3:
            raise ValueError("mesh_faces must be (F, 3)")
        if self.surface_samples.shape[0] != self.bps_code.shape[0]:
            raise ValueError("surface_samples and bps_code must have one row per sample")


@dataclass
class ObjectTrack:
    """One object's motion: (T, 6) relative rotation + (T, 3) translation."""

    rotation: np.ndarray
    translation: np.ndarray
    geometry: ObjectGeometry

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float32)
        self.translation = np.asarray(self.translation, dtype=np.float32)
        if self.rotation.ndim != 2 or self.rotation.shape[1] != 6:
            raise ValueError(f"rotation must be (T, 6), got {self.rotation.shape}")
        if self.translation.shape != (self.rotation.shape[0], 3):
            raise ValueError("translation must be (T, 3) matching rotation")
        first = rot6d_to_matrix(self.rotation[0].astype(np.float64))
        if np.abs(first - np.eye(3)).max() > 1e-5:
            raise ValueError("rotation at frame 0 must decode to the identity")

    @property
    def num_frames(self):
        return self.rotation.shape[0]

    def to_features(self):
        return np.concatenate([self.rotation, self.translation], axis=1)

    @classmethod
    def from_features(cls, feats, geometry):
        feats = np.asarray(feats)
        if feats.shape[1] != OBJECT_FEATURE_WIDTH:
            raise ValueError(f"object feature width must be {OBJECT_FEATURE_WIDTH}")
        return cls(feats[:, :6], feats[:, 6:], geometry)

    def world_points(self, points=None):
        """Transform input-frame points to world space per frame -> (T, S, 3)."""
        pts = self.geometry.surface_samples if points is None else np.asarray(points)
        R = rot6d_to_matrix(self.rotation.astype(np.float64))  # (T, 3, 3)
        return np.einsum("tij,sj->tsi", R, pts.astype(np.float64)) + self.translation[:, None, :]


def validate_segments(segments, num_frames):
    """Segments must be contiguous, non-overlapping, ordered, tiling [0, T)."""
    if not segments:
        raise ValueError("need at least one segment")
    expect = 0
    for i, (start, end, text) in enumerate(segments):
        if start != expect:
            raise ValueError(f"segment {i} starts at {start}, expected {expect}")
        if end <= start:
            raise ValueError(f"segment {i} is empty or reversed")
        if not isinstance(text, str):
            raise ValueError(f"segment {i} text must be a string")
        expect = end
    if expect != num_frames:
        raise ValueError(f"segments tile [0, {expect}) but sequence has {num_frames} frames")


@dataclass
class HoiSequence:
    """Synchronized human motion, N_o object tracks, text, temporal segments."""

    human: HumanMotion
    objects: list
    text: str
    segments: list
    seq_id: str = ""

    def __post_init__(self):
        T = self.human.num_frames
        for k, obj in enumerate(self.objects):
            if obj.num_frames != T:
                raise ValueError(f"object {k} has {obj.num_frames} frames, human has {T}")
        self.segments = [(int(s), int(e), str(t)) for s, e, t in self.segments]
        validate_segments(self.segments, T)

    @property
    def num_frames(self):
        return self.human.num_frames

    @property
    def num_objects(self):
        return len(self.objects)

    def object_features(self):
        """Stack object features -> (T, N_o, 9)."""
        return np.stack([o.to_features() for o in self.objects], axis=1)
