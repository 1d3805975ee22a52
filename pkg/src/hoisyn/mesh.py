"""Primitive triangle meshes, area-weighted surface sampling, tiny OBJ I/O."""

import numpy as np


class DegenerateMeshError(ValueError):
    """Mesh with no positive-area faces."""


def make_box(size=(0.1, 0.1, 0.1)):
    """Axis-aligned box centered at the origin; size = full extents (x, y, z)."""
    sx, sy, sz = np.asarray(size, dtype=np.float64) / 2.0
    verts = np.array(
        [
            [-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
            [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz],
        ]
    )
    faces = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom
            [4, 5, 6], [4, 6, 7],  # top
            [0, 1, 5], [0, 5, 4],  # front
            [2, 3, 7], [2, 7, 6],  # back
            [1, 2, 6], [1, 6, 5],  # right
            [3, 0, 4], [3, 4, 7],  # left
        ],
        dtype=np.int64,
    )
    return verts, faces


def make_cylinder(radius=0.04, height=0.12, segments=16):
    """Closed cylinder along z, centered at the origin."""
    ang = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.concatenate([ring, np.full((segments, 1), -height / 2)], axis=1)
    top = np.concatenate([ring, np.full((segments, 1), height / 2)], axis=1)
    verts = np.concatenate([bottom, top, [[0, 0, -height / 2]], [[0, 0, height / 2]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces.append([i, j, segments + i])
        faces.append([j, segments + j, segments + i])
        faces.append([cb, j, i])
        faces.append([ct, segments + i, segments + j])
    return verts, np.array(faces, dtype=np.int64)


def make_sphere(radius=0.05, subdivisions=2):
    """Icosphere centered at the origin."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        verts, faces = _subdivide(verts, faces)
        verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    return verts * radius, faces


def _subdivide(verts, faces):
    verts = list(verts)
    cache = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in cache:
            verts.append((np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0)
            cache[key] = len(verts) - 1
        return cache[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts), np.array(out, dtype=np.int64)


def face_areas(verts, faces):
    v = np.asarray(verts, dtype=np.float64)
    a, b, c = v[faces[:, 0]], v[faces[:, 1]], v[faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def sample_surface_points(verts, faces, count, seed=0, return_details=False):
    """Area-weighted uniform sampling of a triangle mesh surface.

    Deterministic given ``seed``. With ``return_details`` also returns the
    face index and barycentric weights of each sample.
    """
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    areas = face_areas(verts, faces)
    total = areas.sum()
    if faces.shape[0] == 0 or total <= 0.0:
        raise DegenerateMeshError("mesh has no positive-area faces")
    rng = np.random.default_rng(seed)
    probs = areas / total
    face_idx = rng.choice(len(faces), size=count, p=probs)
    u = rng.random(count)
    v = rng.random(count)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    w = np.stack([1.0 - u - v, u, v], axis=1)  # (count, 3) barycentric
    tri = verts[faces[face_idx]]  # (count, 3, 3)
    points = np.einsum("sk,ski->si", w, tri)
    if return_details:
        return points, face_idx, w
    return points


def load_obj(path):
    """Minimal OBJ reader: ``v`` and ``f`` records only, fan-triangulated."""
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not faces:
        raise ValueError(f"{path}: no usable v/f records")
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def save_obj(path, verts, faces):
    with open(path, "w", encoding="utf-8") as fh:
        for v in np.asarray(verts):
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in np.asarray(faces):
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
