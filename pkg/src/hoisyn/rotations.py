"""Rotation parameterizations: 6D (first two matrix columns), matrices, axis-angle.

The 6D format stores the first two columns of a rotation matrix as a flat
6-vector (column-major: [c0x, c0y, c0z, c1x, c1y, c1z]). Decoding runs
Gram-Schmidt: normalize column 1, orthogonalize column 2 against it, take
the cross product for column 3.

numpy functions operate on (..., D) arrays; torch twins (suffix ``_t``)
are provided where gradients need to flow through the conversion.
"""

import numpy as np
import torch

ROT6D_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


class DegenerateRotationError(ValueError):
    """6D input whose columns are near zero or near parallel."""


def rot6d_to_matrix(r6, eps=1e-9):
    """Decode 6D rotations (..., 6) to rotation matrices (..., 3, 3).

    Raises DegenerateRotationError when the first column is near zero or
    the two columns are near parallel.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape[-1] != 6:
        raise ValueError(f"expected trailing dim 6, got {r6.shape}")
    if not np.all(np.isfinite(r6)):
        raise DegenerateRotationError("non-finite 6D rotation input")
    a1 = r6[..., 0:3]
    a2 = r6[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= eps):
        raise DegenerateRotationError("first 6D column has near-zero norm")
    b1 = a1 / n1
    a2_perp = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(a2_perp, axis=-1, keepdims=True)
    if np.any(n2 <= eps):
        raise DegenerateRotationError("6D columns are near parallel")
    b2 = a2_perp / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(mat, tol=1e-4):
    """Encode rotation matrices (..., 3, 3) as 6D vectors (..., 6).

    Input must be orthonormal with det +1 within ``tol``.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape[-2:] != (3, 3):
        raise ValueError(f"expected trailing shape (3, 3), got {mat.shape}")
    ident = np.eye(3)
    err = np.abs(np.swapaxes(mat, -1, -2) @ mat - ident).max()
    if err > tol:
        raise ValueError(f"matrix not orthonormal within {tol} (residual {err:.2e})")
    if np.any(np.linalg.det(mat) < 0):
        raise ValueError("matrix has negative determinant")
    return np.concatenate([mat[..., :, 0], mat[..., :, 1]], axis=-1)


def rot6d_to_matrix_t(r6):
    """Torch twin of rot6d_to_matrix; differentiable, no degeneracy checks."""
    a1 = r6[..., 0:3]
    a2 = r6[..., 3:6]
    b1 = torch.nn.functional.normalize(a1, dim=-1)
    a2_perp = a2 - (b1 * a2).sum(-1, keepdim=True) * b1
    b2 = torch.nn.functional.normalize(a2_perp, dim=-1)
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def axis_angle_to_matrix(aa):
    """Rodrigues formula for axis-angle vectors (..., 3) -> (..., 3, 3)."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    small = theta < 1e-12
    axis = np.where(small, 0.0, aa / np.where(small, 1.0, theta))
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    K = np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )
    th = theta[..., None]
    ident = np.broadcast_to(np.eye(3), K.shape)
    return ident + np.sin(th) * K + (1.0 - np.cos(th)) * (K @ K)


def axis_angle_to_matrix_t(aa):
    """Torch twin of axis_angle_to_matrix; differentiable at theta -> 0."""
    theta = torch.linalg.norm(aa, dim=-1, keepdim=True)
    # Taylor guards keep sin(t)/t and (1-cos t)/t^2 differentiable at zero.
    t2 = theta * theta
    small = theta < 1e-4
    sin_over = torch.where(small, 1.0 - t2 / 6.0, torch.sin(theta) / theta.clamp(min=1e-30))
    cos_term = torch.where(small, 0.5 - t2 / 24.0, (1.0 - torch.cos(theta)) / t2.clamp(min=1e-30))
    x, y, z = aa[..., 0], aa[..., 1], aa[..., 2]
    zero = torch.zeros_like(x)
    K = torch.stack(
        [
            torch.stack([zero, -z, y], dim=-1),
            torch.stack([z, zero, -x], dim=-1),
            torch.stack([-y, x, zero], dim=-1),
        ],
        dim=-2,
    )
    ident = torch.eye(3, dtype=aa.dtype, device=aa.device).expand(K.shape)
    return ident + sin_over[..., None] * K + cos_term[..., None] * (K @ K)


def matrix_to_axis_angle(mat):
    """Log map (..., 3, 3) -> axis-angle (..., 3) with angle in [0, pi]."""
    mat = np.asarray(mat, dtype=np.float64)
    tr = np.trace(mat, axis1=-2, axis2=-1)
    cos = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    w = np.stack(
        [
            mat[..., 2, 1] - mat[..., 1, 2],
            mat[..., 0, 2] - mat[..., 2, 0],
            mat[..., 1, 0] - mat[..., 0, 1],
        ],
        axis=-1,
    )
    sin = np.sin(theta)
    near_zero = theta < 1e-7
    near_pi = np.pi - theta < 1e-5
    scale = np.where(near_zero, 0.5, theta / np.where(sin < 1e-12, 1.0, 2.0 * sin))
    aa = w * scale[..., None]
    if np.any(near_pi):
        # At theta = pi the w formula vanishes; recover the axis from M + I.
        flat = np.reshape(mat, (-1, 3, 3))
        out = np.reshape(aa, (-1, 3))
        th = np.reshape(theta, (-1,))
        for i in np.nonzero(np.reshape(near_pi, (-1,))):
            for idx in np.atleast_1d(i):
                B = (flat[idx] + np.eye(3)) / 2.0
                axis = B[:, np.argmax(np.diag(B))]
                axis = axis / np.linalg.norm(axis)
                out[idx] = axis * th[idx]
        aa = out.reshape(aa.shape)
    return aa


def canonicalize_axis_angle(aa):
    """Wrap axis-angle magnitudes into [0, pi)."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    wrapped = np.mod(theta, 2.0 * np.pi)
    flip = wrapped > np.pi
    new_theta = np.where(flip, 2.0 * np.pi - wrapped, wrapped)
    sign = np.where(flip, -1.0, 1.0)
    safe = np.where(theta < 1e-12, 1.0, theta)
    return aa * sign * new_theta / safe


def random_rotation(rng):
    """Uniform-ish random rotation from a random axis and angle."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.pi)
    return axis_angle_to_matrix(axis * angle)
