"""Rigid pose recovery from markers and articulated body fitting.

Marker-based object tracking uses orthogonal Procrustes (SVD) with a
centroid-bias post-calibration: optical systems track the centroid of the
attached marker cloud, not the object centroid, so the recovered
translation needs a rotated offset added.

Body fitting minimizes  alpha*E_joint + lambda*E_smooth + gamma*E_reg
over per-frame pose parameters with a first-order adaptive optimizer;
shape is initialized from stature and held fixed.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .body import BodyParams, ToyBodyModel, shape_from_stature

DEFAULT_FIT_WEIGHTS = (1.0, 0.1, 0.01)  # (alpha, lambda, gamma)


class DegenerateMarkersError(ValueError):
    """Fewer than 3 markers, or a collinear rest configuration."""


def rigid_pose_from_markers(rest_markers, observed):
    """Least-squares rigid transform: observed ~= R @ rest + t.

    Returns (R, t, rms_residual). det(R) = +1 is enforced.
    """
    rest = np.asarray(rest_markers, dtype=np.float64)
    obs = np.asarray(observed, dtype=np.float64)
    if rest.shape != obs.shape or rest.ndim != 2 or rest.shape[1] != 3:
        raise ValueError(f"marker sets must both be (M, 3), got {rest.shape} vs {obs.shape}")
    if rest.shape[0] < 3:
        raise DegenerateMarkersError("need at least 3 markers")
    c_rest = rest.mean(axis=0)
    c_obs = obs.mean(axis=0)
    A = rest - c_rest
    B = obs - c_obs
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[1] < 1e-9 * max(sv[0], 1.0):
        raise DegenerateMarkersError("rest markers are collinear or coincident")
    H = A.T @ B
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = c_obs - R @ c_rest
    residual = float(np.sqrt(np.mean(np.sum((rest @ R.T + t - obs) ** 2, axis=1))))
    return R, t, residual


def calibrate_centroid_bias(marker_rest, object_centroid):
    """Offset from marker-cloud centroid to object centroid (rest frame)."""
    marker_rest = np.asarray(marker_rest, dtype=np.float64)
    return np.asarray(object_centroid, dtype=np.float64) - marker_rest.mean(axis=0)


def apply_centroid_bias(R, marker_translation, bias):
    """Object translation given the tracked marker-centroid translation."""
    return np.asarray(marker_translation) + np.asarray(R) @ np.asarray(bias)


def _joint_energy_t(pred, targets, joint_mask=None):
    diff2 = ((pred - targets) ** 2).sum(-1)  # (N, J)
    if joint_mask is not None:
        diff2 = diff2 * joint_mask
    return diff2.sum()


def _smooth_energy_t(pred):
    if pred.shape[0] < 2:
        return pred.new_zeros(())
    return ((pred[1:] - pred[:-1]) ** 2).sum()


def _reg_energy_t(body_pose, hand_pose):
    return (body_pose**2).sum() + (hand_pose**2).sum()


def joint_energy(model, params, targets, joint_mask=None):
    """Sum over frames and joints of squared distance to target positions."""
    targets = np.asarray(targets, dtype=np.float64)
    pred = model.forward(params)
    if pred.shape != targets.shape:
        raise ValueError(f"targets shape {targets.shape} != predicted {pred.shape}")
    mask = None if joint_mask is None else torch.as_tensor(joint_mask, dtype=torch.float64)
    return float(_joint_energy_t(torch.as_tensor(pred), torch.as_tensor(targets), mask))


def smooth_energy(model, params):
    """Sum of squared per-frame position differences; 0 when N < 2."""
    pred = torch.as_tensor(model.forward(params))
    return float(_smooth_energy_t(pred))


def reg_energy(params):
    """Squared norm of body and hand pose; translation/shape play no part."""
    return float((params.body_pose**2).sum() + (params.hand_pose**2).sum())


@dataclass
class FitResult:
    params: BodyParams
    energies: dict
    converged: bool
    iterations: int


def fit_body(
    targets,
    body_model=None,
    weights=DEFAULT_FIT_WEIGHTS,
    max_iters=500,
    lr=0.05,
    rel_tol=1e-7,
    tol_window=10,
    min_iters=50,
    height_m=1.70,
    weight_kg=70.0,
    init_params=None,
    joint_mask=None,
    shape=None,
):
    """Fit per-frame body parameters to target joint positions (N, J, 3).

    Adaptive first-order descent; stops when the relative improvement of the
    best energy over ``tol_window`` iterations drops below ``rel_tol``.
    Returns the best-so-far parameters with a per-term energy breakdown and
    a ``converged`` flag (False when the iteration budget ran out first).
    """
    model = body_model if body_model is not None else ToyBodyModel()
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 3 or targets.shape[1:] != (model.num_joints, 3):
        raise ValueError(f"targets must be (N, {model.num_joints}, 3), got {targets.shape}")
    N = targets.shape[0]
    alpha, lam, gamma = weights

    if shape is None:
        shape = shape_from_stature(height_m, weight_kg)
    shape_t = torch.as_tensor(np.asarray(shape, dtype=np.float64))

    init = init_params if init_params is not None else BodyParams.zeros(N)
    go = torch.tensor(init.global_orient.reshape(N, 3), requires_grad=True)
    bp = torch.tensor(init.body_pose.reshape(N, -1, 3), requires_grad=True)
    hp = torch.tensor(init.hand_pose.reshape(N, -1, 3), requires_grad=True)
    tr = torch.tensor(init.translation.reshape(N, 3), requires_grad=True)
    opt = torch.optim.Adam([go, bp, hp, tr], lr=lr)

    targets_t = torch.as_tensor(targets)
    mask_t = None if joint_mask is None else torch.as_tensor(joint_mask, dtype=torch.float64)

    def energy_terms():
        pred, _ = model.forward_frames(go, bp, hp, tr, shape_t)
        e_j = _joint_energy_t(pred, targets_t, mask_t)
        e_s = _smooth_energy_t(pred)
        e_r = _reg_energy_t(bp, hp)
        return e_j, e_s, e_r

    best = {"energy": np.inf, "state": None, "terms": None}
    history = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        opt.zero_grad()
        e_j, e_s, e_r = energy_terms()
        total = alpha * e_j + lam * e_s + gamma * e_r
        total.backward()
        val = float(total.detach())
        if val < best["energy"]:
            best["energy"] = val
            best["state"] = [x.detach().clone() for x in (go, bp, hp, tr)]
            best["terms"] = (float(e_j.detach()), float(e_s.detach()), float(e_r.detach()))
        history.append(best["energy"])
        # The window check only arms after the initial transient: Adam's
        # first steps can walk uphill before the moments settle.
        if it >= min_iters and len(history) > tol_window:
            prev = history[-tol_window - 1]
            if prev - best["energy"] < rel_tol * max(abs(prev), 1e-12):
                converged = True
                break
        opt.step()

    go_b, bp_b, hp_b, tr_b = best["state"]
    params = BodyParams(
        go_b.numpy(), bp_b.numpy(), hp_b.numpy(), tr_b.numpy(),
        shape=shape_t.numpy(),
    )
    e_j, e_s, e_r = best["terms"]
    energies = {
        "total": best["energy"],
        "joint": e_j,
        "smooth": e_s,
        "reg": e_r,
        "weights": {"alpha": alpha, "lambda": lam, "gamma": gamma},
    }
    return FitResult(params=params, energies=energies, converged=converged, iterations=it)
