import numpy as np
import pytest

from hoisyn.bps import bps_encode, build_object_geometry, unit_ball_basis
from hoisyn.mesh import (
    DegenerateMeshError,
    face_areas,
    load_obj,
    make_box,
    make_cylinder,
    make_sphere,
    sample_surface_points,
    save_obj,
)


def brute_force_bps(samples, basis):
    out = np.empty_like(samples)
    for i, s in enumerate(samples):
        d = np.linalg.norm(basis - s, axis=1)
        out[i] = s - basis[np.argmin(d)]
    return out


def test_unit_square_samples_stay_in_plane():
    verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    pts = sample_surface_points(verts, faces, 4, seed=11)
    assert pts.shape == (4, 3)
    assert np.all(pts[:, 2] == 0)
    assert np.all((pts[:, :2] >= 0) & (pts[:, :2] <= 1))


def test_cube_face_shares_follow_area_fractions():
    verts, faces = make_box((1.0, 1.0, 1.0))
    n = 10000
    pts, face_idx, _ = sample_surface_points(verts, faces, n, seed=3, return_details=True)
    # Pairs of triangles 2k, 2k+1 form cube face k, each with area share 1/6.
    sides = face_idx // 2
    p = 1.0 / 6.0
    sigma = np.sqrt(p * (1 - p) * n)
    for side in range(6):
        count = np.sum(sides == side)
        assert abs(count - n * p) < 3 * sigma


def test_sampling_is_deterministic_given_seed():
    verts, faces = make_cylinder()
    a = sample_surface_points(verts, faces, 100, seed=7)
    b = sample_surface_points(verts, faces, 100, seed=7)
    assert np.array_equal(a, b)
    c = sample_surface_points(verts, faces, 100, seed=8)
    assert not np.array_equal(a, c)


def test_samples_lie_on_surface():
    verts, faces = make_sphere(radius=0.25, subdivisions=2)
    pts, face_idx, w = sample_surface_points(verts, faces, 500, seed=1, return_details=True)
    tri = verts[faces[face_idx]]
    recon = np.einsum("sk,ski->si", w, tri)
    assert np.abs(recon - pts).max() < 1e-9
    # Barycentric point-in-triangle: distance to the face plane is zero.
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    plane_dist = np.abs(np.sum((pts - tri[:, 0]) * n, axis=1))
    assert plane_dist.max() < 1e-9


def test_degenerate_mesh_raises():
    verts = np.zeros((3, 3))
    faces = np.array([[0, 1, 2]])
    with pytest.raises(DegenerateMeshError):
        sample_surface_points(verts, faces, 4, seed=0)


def test_box_area_is_analytic():
    verts, faces = make_box((2.0, 3.0, 4.0))
    total = face_areas(verts, faces).sum()
    assert abs(total - 2 * (2 * 3 + 3 * 4 + 2 * 4)) < 1e-9


def test_bps_zero_vector_when_sample_hits_basis_point():
    basis = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    code = bps_encode(np.array([[1.0, 0.0, 0.0]]), basis)
    assert np.allclose(code, 0.0)


def test_bps_directional_vector_hand_case():
    basis = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    code = bps_encode(np.array([[0.6, 0.0, 0.0]]), basis)
    assert np.allclose(code, [[-0.4, 0.0, 0.0]])


def test_bps_tie_breaks_to_lowest_index():
    basis = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    code = bps_encode(np.array([[0.5, 0.0, 0.0]]), basis)
    assert np.allclose(code, [[0.5, 0.0, 0.0]])


def test_bps_matches_brute_force_oracle():
    rng = np.random.default_rng(9)
    samples = rng.normal(size=(256, 3))
    basis = rng.normal(size=(256, 3))
    assert np.array_equal(bps_encode(samples, basis), brute_force_bps(samples, basis))


def test_unit_ball_basis_properties():
    basis = unit_ball_basis(1024, seed=5)
    assert basis.shape == (1024, 3)
    assert np.linalg.norm(basis, axis=1).max() <= 1.0
    assert np.array_equal(basis, unit_ball_basis(1024, seed=5))


def test_build_object_geometry_normalization_and_code():
    verts, faces = make_box((0.2, 0.1, 0.3))
    geom = build_object_geometry(verts + 5.0, faces, name="box", sample_count=128, sample_seed=2)
    # Input frame recentres the mesh on its vertex centroid.
    assert np.abs(geom.mesh_vertices.mean(axis=0)).max() < 1e-6
    norm_samples = (geom.surface_samples - geom.norm_center) / geom.norm_scale
    assert np.linalg.norm(norm_samples, axis=1).max() <= 1.0 + 1e-6
    basis = unit_ball_basis()
    expected = brute_force_bps(norm_samples.astype(np.float64), basis)
    assert np.abs(geom.bps_code - expected).max() < 1e-6


def test_obj_round_trip(tmp_path):
    verts, faces = make_cylinder(segments=8)
    path = tmp_path / "cyl.obj"
    save_obj(path, verts, faces)
    v2, f2 = load_obj(path)
    assert np.abs(v2 - verts).max() < 1e-8
    assert np.array_equal(f2, faces)
