"""Flat, typed run configuration shared by training, sampling and eval.

Every artifact (checkpoint, report, archive produced by a run) embeds the
exact config that produced it. Loading rejects unknown keys so stale or
misspelled configs fail loudly.
"""

import json
from dataclasses import asdict, dataclass, field


@dataclass
class RunConfig:
    # data
    corpus_dir: str = "corpus"
    mode: str = "gen"  # gen: whole sequences; seg: per-segment clips
    batch_size: int = 16
    k_max: int = 10
    max_len: int = 0  # 0: per-mode default (300 gen / 100 seg)
    max_text_len: int = 0  # 0: per-mode default (40 gen / 15 seg)
    # model
    width: int = 512
    blocks: int = 8
    heads: int = 4
    ff_mult: int = 4
    dropout: float = 0.1
    geom_embed: int = 64
    text_encoder: str = "trainable"  # or frozen:<path to embedding file>
    # diffusion
    timesteps: int = 1000
    schedule: str = "cosine"
    guidance_scale: float = 2.5
    cond_dropout: float = 0.1
    # losses
    lambda_vel: float = 1.0
    lambda_pos: float = 1.0
    lambda_pen: float = 1.0
    lambda_dis: float = 0.1
    lambda_rec: float = 1.0
    pen_frames: int = 2  # frames per sample carrying the penetration loss
    pen_sample_points: int = 256  # object surface points used by L_pen
    # optimization
    lr: float = 1e-4
    lr_decay: float = 0.99  # per-epoch multiplicative decay
    weight_decay: float = 0.0  # literal decoupled weight decay, off by default
    epochs: int = 50
    max_steps: int = 0  # 0: no cap; otherwise stop after this many steps
    overfit: bool = False  # repeat the first train batch every step
    save_every: int = 10  # checkpoint every E epochs (plus best-val)
    seed: int = 7

    def scoped(self, **overrides):
        cfg = RunConfig(**{**asdict(self), **overrides})
        return cfg

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, payload):
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged = {**asdict(cls()), **payload}
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    def validate(self):
        if self.mode not in ("gen", "seg"):
            raise ValueError(f"mode must be gen or seg, got {self.mode!r}")
        if self.timesteps < 2:
            raise ValueError("timesteps must be >= 2")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ValueError("cond_dropout must be in [0, 1)")
        for name in ("lambda_vel", "lambda_pos", "lambda_pen", "lambda_dis", "lambda_rec"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        return self

    def effective_lr(self, epoch):
        """Paper-faithful decay: lr * 0.99^epoch."""
        return self.lr * (self.lr_decay**epoch)


def desk_profile(**overrides):
    """Small configuration that runs the full pipeline in minutes on a CPU."""
    base = dict(
        width=128,
        blocks=4,
        timesteps=50,
        batch_size=8,
        epochs=20,
        lr=1e-3,
        pen_frames=1,
        pen_sample_points=128,
        geom_embed=32,
    )
    base.update(overrides)
    return RunConfig(**base)


def fidelity_profile(**overrides):
    """Mirrors the reported training setup (heavy; needs real accelerators)."""
    base = dict(
        width=512,
        blocks=8,
        timesteps=1000,
        batch_size=128,
        epochs=300,
        lr=1e-4,
    )
    base.update(overrides)
    return RunConfig(**base)
