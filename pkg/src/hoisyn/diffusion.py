"""Noise schedule, forward corruption, condition masking and ancestral sampling.

The denoiser predicts the clean signal x0 at every step; the reverse step
uses the DDPM posterior q(x_{t-1} | x_t, x0_hat). Conditioning is
input-side: the initial frames ride along as a zero-padded channel block
with a 0/1 indicator row marking which frames are given. After the final
step the conditioned frames are overwritten with the raw condition values,
so composed clips join seamlessly.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .dataset import denormalize_human, denormalize_objects, normalize_human, normalize_objects
from .motion import HumanMotion, ObjectTrack


@dataclass
class DiffusionSchedule:
    betas: np.ndarray
    kind: str

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ValueError("betas must lie strictly inside (0, 1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")

    @property
    def num_steps(self):
        return len(self.betas)


def make_schedule(kind="cosine", timesteps=1000, beta_start=1e-4, beta_end=2e-2):
    """Cosine (default) or linear beta schedule."""
    if timesteps < 2:
        raise ValueError("need at least 2 diffusion steps")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, timesteps)
    elif kind == "cosine":
        s = 0.008

        def f(u):
            return math.cos((u + s) / (1.0 + s) * math.pi / 2.0) ** 2

        betas = np.array(
            [
                min(1.0 - f((i + 1) / timesteps) / f(i / timesteps), 0.999)
                for i in range(timesteps)
            ]
        )
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return DiffusionSchedule(betas=betas, kind=kind)


def q_sample(x0, t, noise, schedule):
    """Forward corruption: sqrt(a_bar_t) x0 + sqrt(1 - a_bar_t) noise.

    ``t`` may be an int or a (B,) tensor indexing per-sample timesteps; x0
    and noise share shape (..., ) with the batch on the first axis.
    """
    is_tensor = isinstance(x0, torch.Tensor)
    abar = schedule.alpha_bars
    if isinstance(t, (int, np.integer)):
        if not 0 <= t < schedule.num_steps:
            raise ValueError(f"timestep {t} outside [0, {schedule.num_steps})")
        a = abar[int(t)]
        if is_tensor:
            a = torch.as_tensor(a, dtype=x0.dtype, device=x0.device)
            return torch.sqrt(a) * x0 + torch.sqrt(1.0 - a) * noise
        return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * noise
    t_arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr >= schedule.num_steps):
        raise ValueError(f"timesteps outside [0, {schedule.num_steps})")
    a = abar[t_arr].reshape((-1,) + (1,) * (x0.ndim - 1))
    if is_tensor:
        a = torch.as_tensor(a, dtype=x0.dtype, device=x0.device)
        return torch.sqrt(a) * x0 + torch.sqrt(1.0 - a) * noise
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * noise


def build_condition_mask(seq_len, k, init_frames):
    """Masked condition block: (T, D+1) with init frames in rows [0, k).

    Rows [k, T) are zeros; the final channel is an indicator that is 1 on
    conditioned rows.
    """
    init = torch.as_tensor(init_frames)
    if init.ndim != 2:
        raise ValueError(f"init_frames must be (k, D), got {tuple(init.shape)}")
    if k != init.shape[0]:
        raise ValueError(f"k={k} but init_frames has {init.shape[0]} rows")
    if k > seq_len:
        raise ValueError(f"k={k} exceeds sequence length {seq_len}")
    if k < 1:
        raise ValueError("need at least one conditioning frame")
    out = init.new_zeros((seq_len, init.shape[1] + 1))
    out[:k, : init.shape[1]] = init
    out[:k, -1] = 1.0
    return out


@dataclass
class ConditionPack:
    """Everything the denoiser is conditioned on, in raw (unnormalized) units."""

    text_tokens: np.ndarray  # (L,) int64
    human_init: np.ndarray  # (k, D_h)
    object_init: np.ndarray  # (k, N_o, 9)
    geometry: np.ndarray  # (N_o, P, 3) BPS codes
    k: int
    length: int  # frames to generate (T)
    text: str = ""

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.k > self.length:
            raise ValueError(f"k={self.k} exceeds clip length {self.length}")
        if self.human_init.shape[0] != self.k or self.object_init.shape[0] != self.k:
            raise ValueError("init frames must have k rows")


def _posterior_step(x_t, x0_hat, t, schedule, noise):
    abar_t = schedule.alpha_bars[t]
    abar_prev = schedule.alpha_bars[t - 1] if t > 0 else 1.0
    beta_t = schedule.betas[t]
    alpha_t = schedule.alphas[t]
    coef_x0 = math.sqrt(abar_prev) * beta_t / (1.0 - abar_t)
    coef_xt = math.sqrt(alpha_t) * (1.0 - abar_prev) / (1.0 - abar_t)
    mean = coef_x0 * x0_hat + coef_xt * x_t
    if t == 0:
        return mean
    var = beta_t * (1.0 - abar_prev) / (1.0 - abar_t)
    return mean + math.sqrt(var) * noise


def sample_features(denoiser, condition, schedule, seed=0, guidance_scale=1.0):
    """Ancestral sampling loop; returns raw-unit (human, object) features.

    Runs exactly ``num_steps`` denoiser calls, or twice that when
    classifier-free guidance is enabled (guidance_scale != 1). The first k
    output frames are overwritten with the condition verbatim.
    """
    cfg = denoiser.config
    if condition.geometry.shape[0] != cfg.num_objects:
        raise ValueError(
            f"condition has {condition.geometry.shape[0]} objects, model expects {cfg.num_objects}"
        )
    if condition.human_init.shape[1] != cfg.human_width:
        raise ValueError(
            f"human condition width {condition.human_init.shape[1]} != model {cfg.human_width}"
        )
    stats = denoiser.norm_stats()
    T = condition.length
    device = next(denoiser.parameters()).device
    dtype = next(denoiser.parameters()).dtype
    gen = torch.Generator(device="cpu").manual_seed(seed)

    h_init = normalize_human(np.asarray(condition.human_init, dtype=np.float64), stats)
    o_init = normalize_objects(np.asarray(condition.object_init, dtype=np.float64), stats)
    h_cond = build_condition_mask(T, condition.k, torch.as_tensor(h_init, dtype=dtype))
    o_cond = build_condition_mask(
        T, condition.k, torch.as_tensor(o_init.reshape(condition.k, -1), dtype=dtype)
    )
    tokens = torch.as_tensor(condition.text_tokens, dtype=torch.long).unsqueeze(0)
    geom = torch.as_tensor(condition.geometry, dtype=dtype).unsqueeze(0)
    frame_mask = torch.ones(1, T, dtype=dtype)

    x_h = torch.randn(1, T, cfg.human_width, generator=gen).to(dtype)
    x_o = torch.randn(1, T, cfg.num_objects * cfg.object_width, generator=gen).to(dtype)

    denoiser.eval()
    with torch.no_grad():
        for t in reversed(range(schedule.num_steps)):
            t_b = torch.full((1,), t, dtype=torch.long, device=device)
            h0, o0 = denoiser(
                x_h, x_o, t_b,
                human_cond=h_cond.unsqueeze(0),
                object_cond=o_cond.unsqueeze(0),
                geometry=geom,
                tokens=tokens,
                frame_mask=frame_mask,
            )
            if guidance_scale != 1.0:
                h0_u, o0_u = denoiser(
                    x_h, x_o, t_b,
                    human_cond=h_cond.unsqueeze(0),
                    object_cond=o_cond.unsqueeze(0),
                    geometry=geom,
                    tokens=tokens,
                    frame_mask=frame_mask,
                    drop_text=True,
                )
                h0 = h0_u + guidance_scale * (h0 - h0_u)
                o0 = o0_u + guidance_scale * (o0 - o0_u)
            noise_h = torch.randn(x_h.shape, generator=gen).to(dtype) if t > 0 else None
            noise_o = torch.randn(x_o.shape, generator=gen).to(dtype) if t > 0 else None
            x_h = _posterior_step(x_h, h0, t, schedule, noise_h)
            x_o = _posterior_step(x_o, o0, t, schedule, noise_o)

    human = denormalize_human(x_h[0].double().numpy(), stats)
    objects = denormalize_objects(
        x_o[0].double().numpy().reshape(T, cfg.num_objects, cfg.object_width), stats
    )
    # Exact overwrite of the conditioned frames (seam-free composition).
    human[: condition.k] = condition.human_init
    objects[: condition.k] = condition.object_init
    return human.astype(np.float32), objects.astype(np.float32)


def sample(denoiser, condition, schedule, seed=0, guidance_scale=1.0,
           geometries=None, fps=20.0):
    """Sample and decode into motion containers.

    ``geometries`` (list of ObjectGeometry) attaches shape data to the
    returned tracks; required because features carry only poses.
    """
    human_feats, obj_feats = sample_features(
        denoiser, condition, schedule, seed=seed, guidance_scale=guidance_scale
    )
    num_joints = (denoiser.config.human_width - 3) // 9
    human = HumanMotion.from_features(human_feats, num_joints=num_joints, fps=fps)
    tracks = []
    if geometries is not None:
        for o, geom in enumerate(geometries):
            tracks.append(ObjectTrack.from_features(obj_feats[:, o], geom))
    return human, tracks, obj_feats
