"""Training losses: joint position/velocity, penetration, object-pairwise.

The penetration field phi is -min(SDF, 0) of the body volume (a union of
bone capsules): zero outside the body, penetration depth inside. It is
voxelized per frame on a 32^3 grid covering the body's bounding box padded
by 10 cm, and sampled differentiably by trilinear interpolation. Gradients
flow to the sampled points (object poses); the grid itself is constant.

All losses take an optional per-frame validity mask and average over valid
frames so padded batches and different sequence lengths compare cleanly.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .rotations import rot6d_to_matrix_t

SDF_GRID_RES = 32
SDF_GRID_PAD = 0.10


@dataclass
class LossWeights:
    lambda_vel: float = 1.0
    lambda_pos: float = 1.0
    lambda_pen: float = 1.0
    lambda_dis: float = 0.1

    def __post_init__(self):
        for name in ("lambda_vel", "lambda_pos", "lambda_pen", "lambda_dis"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class SdfGrid:
    """Penetration depths at voxel centers: values[ix, iy, iz] >= 0.

    Voxel (i, j, k) is centered at origin + (i + 0.5) * cell (per axis).
    """

    values: torch.Tensor  # (R, R, R)
    origin: torch.Tensor  # (3,)
    cell: torch.Tensor  # (3,)
    frame_index: int = 0

    @property
    def resolution(self):
        return self.values.shape[0]


def _as_tensor(x, like=None):
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.get_default_dtype()
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def capsule_depth(points, seg_a, seg_b, radius):
    """Penetration depth of points into one capsule: max(r - d(p, segment), 0)."""
    ab = seg_b - seg_a
    denom = (ab * ab).sum().clamp(min=1e-12)
    t = ((points - seg_a) @ ab / denom).clamp(0.0, 1.0)
    closest = seg_a + t[:, None] * ab
    d = torch.linalg.norm(points - closest, dim=-1)
    return (radius - d).clamp(min=0.0)


def body_sdf_grid(joints, capsules, resolution=SDF_GRID_RES, pad=SDF_GRID_PAD,
                  frame_index=0):
    """Voxelize phi for one skeleton frame.

    ``joints`` is (J, 3); ``capsules`` is a list of (parent_idx, child_idx,
    radius). The grid covers the capsule volume's AABB padded by ``pad``.
    """
    joints = _as_tensor(joints)
    if joints.ndim != 2 or joints.shape[1] != 3:
        raise ValueError(f"joints must be (J, 3), got {tuple(joints.shape)}")
    if not capsules:
        raise ValueError("need at least one capsule")
    a_idx = [c[0] for c in capsules]
    b_idx = [c[1] for c in capsules]
    radii = [c[2] for c in capsules]
    seg_a = joints[a_idx]  # (C, 3)
    seg_b = joints[b_idx]
    lengths = torch.linalg.norm(seg_b - seg_a, dim=-1)
    if float(lengths.max()) < 1e-9:
        raise ValueError("degenerate skeleton: all bones have zero length")
    r = torch.as_tensor(radii, dtype=joints.dtype)

    lo = torch.minimum(seg_a, seg_b) - r[:, None]
    hi = torch.maximum(seg_a, seg_b) + r[:, None]
    origin = lo.min(dim=0).values - pad
    top = hi.max(dim=0).values + pad
    cell = (top - origin) / resolution

    axes = [origin[d] + (torch.arange(resolution, dtype=joints.dtype) + 0.5) * cell[d]
            for d in range(3)]
    gx, gy, gz = torch.meshgrid(*axes, indexing="ij")
    centers = torch.stack([gx, gy, gz], dim=-1).reshape(-1, 3)  # (R^3, 3)

    # phi of a capsule union = max over capsules of per-capsule depth.
    ab = seg_b - seg_a  # (C, 3)
    denom = (ab * ab).sum(-1).clamp(min=1e-12)  # (C,)
    rel = centers[:, None, :] - seg_a[None, :, :]  # (P, C, 3)
    t = ((rel * ab[None]).sum(-1) / denom).clamp(0.0, 1.0)  # (P, C)
    closest = seg_a[None] + t[..., None] * ab[None]
    d = torch.linalg.norm(centers[:, None, :] - closest, dim=-1)  # (P, C)
    depth = (r[None] - d).clamp(min=0.0).max(dim=1).values
    values = depth.reshape(resolution, resolution, resolution)
    return SdfGrid(values=values, origin=origin, cell=cell, frame_index=frame_index)


def trilinear_sample(grid, points):
    """Sample the grid at (S, 3) points; differentiable w.r.t. the points.

    Points outside the grid volume return exactly 0 (outside the body means
    no penetration), with zero gradient there.
    """
    points = points if isinstance(points, torch.Tensor) else _as_tensor(points, grid.values)
    vals = grid.values.to(points.dtype)
    res = grid.resolution
    u = (points - grid.origin.to(points.dtype)) / grid.cell.to(points.dtype) - 0.5
    inside = ((points >= grid.origin) & (points <= grid.origin + grid.cell * res)).all(dim=-1)

    uc = u.clamp(torch.zeros(3, dtype=points.dtype), torch.full((3,), res - 1.0, dtype=points.dtype))
    i0 = uc.detach().floor().long().clamp(min=0, max=res - 2)
    frac = uc - i0.to(points.dtype)
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    x1, y1, z1 = x0 + 1, y0 + 1, z0 + 1

    c000 = vals[x0, y0, z0]
    c100 = vals[x1, y0, z0]
    c010 = vals[x0, y1, z0]
    c110 = vals[x1, y1, z0]
    c001 = vals[x0, y0, z1]
    c101 = vals[x1, y0, z1]
    c011 = vals[x0, y1, z1]
    c111 = vals[x1, y1, z1]
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    out = c0 * (1 - fz) + c1 * fz
    return out * inside.to(points.dtype)


def _frame_mask(mask, num_frames, like):
    if mask is None:
        return torch.ones(num_frames, dtype=like.dtype)
    m = _as_tensor(mask, like).to(like.dtype)
    if m.shape[0] != num_frames:
        raise ValueError(f"mask length {m.shape[0]} != frames {num_frames}")
    return m


def loss_pos(pred_joints, gt_joints, mask=None):
    """Masked mean over frames of the per-frame sum of squared joint errors."""
    pred = _as_tensor(pred_joints)
    gt = _as_tensor(gt_joints, pred)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    m = _frame_mask(mask, pred.shape[0], pred)
    per_frame = ((pred - gt) ** 2).sum(dim=(-1, -2))  # (N,)
    denom = m.sum().clamp(min=1.0)
    return (per_frame * m).sum() / denom


def loss_vel(pred_joints, gt_joints, mask=None):
    """Velocity-residual counterpart of loss_pos over N-1 frame pairs."""
    pred = _as_tensor(pred_joints)
    gt = _as_tensor(gt_joints, pred)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    if pred.shape[0] < 2:
        warnings.warn("loss_vel needs at least 2 frames; returning 0")
        return pred.new_zeros(())
    m = _frame_mask(mask, pred.shape[0], pred)
    pair_m = m[1:] * m[:-1]
    v_pred = pred[1:] - pred[:-1]
    v_gt = gt[1:] - gt[:-1]
    per_pair = ((v_pred - v_gt) ** 2).sum(dim=(-1, -2))
    denom = pair_m.sum().clamp(min=1.0)
    return (per_pair * pair_m).sum() / denom


def transform_object_points(poses, samples):
    """Apply (T, 9) rot6d+translation poses to (S, 3) points -> (T, S, 3)."""
    R = rot6d_to_matrix_t(poses[..., :6])  # (T, 3, 3)
    t = poses[..., 6:9]
    return torch.einsum("tij,sj->tsi", R, samples) + t[:, None, :]


def loss_pen(pred_object_poses, object_samples, sdf_grids, mask=None):
    """Penetration loss: summed phi over object samples, averaged over frames.

    ``pred_object_poses`` is (T, N_o, 9); ``object_samples`` a list of
    (S_o, 3) input-frame point sets; ``sdf_grids`` a length-T sequence of
    SdfGrid (an entry of None raises). Gradients reach the poses only.
    """
    poses = pred_object_poses
    T, n_obj = poses.shape[0], poses.shape[1]
    if len(object_samples) != n_obj:
        raise ValueError(f"{len(object_samples)} sample sets for {n_obj} objects")
    if len(sdf_grids) != T:
        raise ValueError(f"{len(sdf_grids)} grids for {T} frames")
    m = _frame_mask(mask, T, poses)
    total = poses.new_zeros(())
    valid = poses.new_zeros(())
    for f in range(T):
        if float(m[f]) == 0.0:
            continue
        grid = sdf_grids[f]
        if grid is None:
            raise ValueError(f"missing SDF grid for frame {f}")
        frame_sum = poses.new_zeros(())
        for o in range(n_obj):
            samples = _as_tensor(object_samples[o], poses)
            world = transform_object_points(poses[f : f + 1, o], samples)[0]
            frame_sum = frame_sum + trilinear_sample(grid, world).sum()
        total = total + frame_sum * m[f]
        valid = valid + m[f]
    return total / valid.clamp(min=1.0)


def loss_dis(pred_object_poses, gt_object_poses, object_samples, mask=None):
    """Object-pairwise consistency of squared inter-object sample distances.

    For each pair (i < j), frame and sample index k the squared distance
    between the objects' k-th world points is matched to ground truth with
    a squared penalty; the result is the mean over pairs, valid frames and
    samples.
    """
    pred = pred_object_poses
    gt = _as_tensor(gt_object_poses, pred)
    T, n_obj = pred.shape[0], pred.shape[1]
    if n_obj < 2:
        raise ValueError("need at least two objects for the pairwise loss")
    counts = {np.asarray(s).shape[0] for s in object_samples}
    if len(counts) != 1:
        raise ValueError(f"sample counts differ across objects: {sorted(counts)}; "
                         "resample to a common size first")
    m = _frame_mask(mask, T, pred)
    world_pred = []
    world_gt = []
    for o in range(n_obj):
        samples = _as_tensor(object_samples[o], pred)
        world_pred.append(transform_object_points(pred[:, o], samples))
        world_gt.append(transform_object_points(gt[:, o], samples))
    total = pred.new_zeros(())
    pairs = 0
    for i in range(n_obj):
        for j in range(i + 1, n_obj):
            d_pred = ((world_pred[i] - world_pred[j]) ** 2).sum(-1)  # (T, S)
            d_gt = ((world_gt[i] - world_gt[j]) ** 2).sum(-1)
            per_frame = ((d_pred - d_gt) ** 2).mean(dim=1)  # (T,)
            total = total + (per_frame * m).sum() / m.sum().clamp(min=1.0)
            pairs += 1
    return total / pairs


def total_loss(parts, weights=None):
    """Weighted aggregate of (vel, pos, pen, dis) parts."""
    w = weights if weights is not None else LossWeights()
    if isinstance(parts, dict):
        vel, pos, pen, dis = parts["vel"], parts["pos"], parts["pen"], parts["dis"]
    else:
        vel, pos, pen, dis = parts
    return (
        w.lambda_vel * vel
        + w.lambda_pos * pos
        + w.lambda_pen * pen
        + w.lambda_dis * dis
    )
