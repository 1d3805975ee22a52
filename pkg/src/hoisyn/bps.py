"""Basis point set encoding of object geometry.

A fixed basis of points sampled uniformly in the unit ball is shared by the
whole corpus. Objects are normalized into that ball (centered on the vertex
centroid, scaled by the max radius) before encoding. The code stores, for
each surface sample, the vector from its nearest basis point to the sample:

    code[i] = samples[i] - basis[argmin_j ||samples[i] - basis[j]||]

Ties pick the lowest basis index.
"""

import numpy as np

from .mesh import sample_surface_points
from .motion import ObjectGeometry

DEFAULT_BASIS_SIZE = 1024
DEFAULT_BASIS_SEED = 8231
DEFAULT_SAMPLE_COUNT = 1024


def unit_ball_basis(count=DEFAULT_BASIS_SIZE, seed=DEFAULT_BASIS_SEED):
    """Uniform points in the unit ball; deterministic given seed."""
    rng = np.random.default_rng(seed)
    direc = rng.normal(size=(count, 3))
    direc /= np.linalg.norm(direc, axis=1, keepdims=True)
    radii = rng.random(count) ** (1.0 / 3.0)
    return direc * radii[:, None]


def bps_encode(samples, basis):
    """Nearest-basis directional code, (S, 3) -> (S, 3). Ties -> lowest index."""
    samples = np.asarray(samples, dtype=np.float64)
    basis = np.asarray(basis, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 3 or samples.shape[0] < 1:
        raise ValueError("samples must be (S>=1, 3)")
    if basis.ndim != 2 or basis.shape[1] != 3 or basis.shape[0] < 1:
        raise ValueError("basis must be (B>=1, 3)")
    if not (np.all(np.isfinite(samples)) and np.all(np.isfinite(basis))):
        raise ValueError("non-finite input")
    # Chunk over samples; argmin returns the first (lowest) index on ties.
    out = np.empty_like(samples)
    step = 2048
    for s in range(0, samples.shape[0], step):
        block = samples[s : s + step]
        d2 = ((block[:, None, :] - basis[None, :, :]) ** 2).sum(-1)  # (s, B)
        nearest = np.argmin(d2, axis=1)
        out[s : s + step] = block - basis[nearest]
    return out


def normalize_points(points, center, scale):
    return (np.asarray(points, dtype=np.float64) - np.asarray(center)) / float(scale)


def build_object_geometry(verts, faces, name="", sample_count=DEFAULT_SAMPLE_COUNT,
                          sample_seed=0, basis=None):
    """Sample the surface and encode it against the shared basis.

    The mesh is first recentred so its vertex centroid sits at the origin
    (the object's input frame). The stored normalization maps input-frame
    points into the basis ball.
    """
    verts = np.asarray(verts, dtype=np.float64)
    centroid = verts.mean(axis=0)
    verts = verts - centroid
    samples = sample_surface_points(verts, faces, sample_count, seed=sample_seed)
    center = np.zeros(3)
    scale = float(np.linalg.norm(verts, axis=1).max())
    if scale <= 0.0:
        raise ValueError("degenerate geometry: all vertices at the centroid")
    if basis is None:
        basis = unit_ball_basis()
    code = bps_encode(normalize_points(samples, center, scale), basis)
    return ObjectGeometry(
        mesh_vertices=verts,
        mesh_faces=faces,
        surface_samples=samples,
        bps_code=code,
        norm_center=center,
        norm_scale=scale,
        name=name,
    )
