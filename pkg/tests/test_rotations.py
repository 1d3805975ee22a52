import numpy as np
import pytest
import torch

from hoisyn.rotations import (
    DegenerateRotationError,
    axis_angle_to_matrix,
    axis_angle_to_matrix_t,
    canonicalize_axis_angle,
    matrix_to_axis_angle,
    matrix_to_rot6d,
    random_rotation,
    rot6d_to_matrix,
    rot6d_to_matrix_t,
)


def test_identity_6d_decodes_to_identity():
    assert np.allclose(rot6d_to_matrix([1, 0, 0, 0, 1, 0]), np.eye(3))


def test_gram_schmidt_is_scale_invariant():
    assert np.allclose(rot6d_to_matrix([2, 0, 0, 0, 3, 0]), np.eye(3))


def test_identity_matrix_encodes_to_identity_6d():
    assert np.allclose(matrix_to_rot6d(np.eye(3)), [1, 0, 0, 0, 1, 0])


def test_rz90_encoding_matches_hand_evaluation():
    # Rz(90 deg) columns: (0, 1, 0) and (-1, 0, 0).
    rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(matrix_to_rot6d(rz), [0, 1, 0, -1, 0, 0], atol=1e-12)


def test_round_trip_over_random_rotations():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        R = random_rotation(rng)
        back = rot6d_to_matrix(matrix_to_rot6d(R))
        assert np.abs(back - R).max() < 1e-9


def test_decoded_matrix_is_orthonormal_det_plus_one():
    rng = np.random.default_rng(1)
    r6 = rng.normal(size=(64, 6))
    M = rot6d_to_matrix(r6)
    eye = np.einsum("bij,bik->bjk", M, M)
    assert np.abs(eye - np.eye(3)).max() < 1e-6
    assert np.allclose(np.linalg.det(M), 1.0, atol=1e-6)


def test_encode_decode_idempotent_on_valid_6d():
    rng = np.random.default_rng(2)
    r6 = matrix_to_rot6d(np.stack([random_rotation(rng) for _ in range(50)]))
    again = matrix_to_rot6d(rot6d_to_matrix(r6))
    assert np.abs(again - r6).max() < 1e-6


def test_degenerate_inputs_raise():
    with pytest.raises(DegenerateRotationError):
        rot6d_to_matrix([0, 0, 0, 0, 1, 0])
    with pytest.raises(DegenerateRotationError):
        rot6d_to_matrix([1, 0, 0, 2, 0, 0])  # parallel columns
    with pytest.raises(DegenerateRotationError):
        rot6d_to_matrix([np.nan, 0, 0, 0, 1, 0])


def test_non_orthonormal_matrix_rejected():
    with pytest.raises(ValueError):
        matrix_to_rot6d(np.eye(3) * 1.5)


def test_torch_6d_matches_numpy():
    rng = np.random.default_rng(3)
    r6 = rng.normal(size=(32, 6))
    ours = rot6d_to_matrix_t(torch.tensor(r6)).numpy()
    ref = rot6d_to_matrix(r6)
    assert np.abs(ours - ref).max() < 1e-12


def test_axis_angle_round_trip():
    rng = np.random.default_rng(4)
    aa = rng.normal(size=(100, 3))
    aa = aa / np.linalg.norm(aa, axis=1, keepdims=True) * rng.uniform(0.01, np.pi - 0.01, (100, 1))
    back = matrix_to_axis_angle(axis_angle_to_matrix(aa))
    assert np.abs(back - aa).max() < 1e-8


def test_axis_angle_torch_matches_numpy_and_handles_zero():
    rng = np.random.default_rng(5)
    aa = rng.normal(size=(16, 3))
    ref = axis_angle_to_matrix(aa)
    ours = axis_angle_to_matrix_t(torch.tensor(aa)).numpy()
    assert np.abs(ours - ref).max() < 1e-9
    zero = torch.zeros(1, 3, dtype=torch.float64, requires_grad=True)
    M = axis_angle_to_matrix_t(zero)
    assert np.allclose(M.detach().numpy()[0], np.eye(3))
    M.sum().backward()
    assert torch.isfinite(zero.grad).all()


def test_canonicalize_wraps_into_half_turn():
    aa = np.array([[0.0, 0.0, 3.5], [0.0, 0.0, -4.0]])
    out = canonicalize_axis_angle(aa)
    norms = np.linalg.norm(out, axis=1)
    assert np.all(norms < np.pi)
    for a, b in zip(aa, out):
        assert np.abs(axis_angle_to_matrix(a) - axis_angle_to_matrix(b)).max() < 1e-9
