"""Dual-branch transformer denoiser with mutual attention.

Two weight-disjoint branches process the human and object streams. Each
block runs self-attention per branch, then a mutual layer where queries
come from the branch's self-attention output while keys and values come
from the *other branch's block input*, scaled by 1/sqrt(C):

    H_next = FF(softmax(Q_h K_o^T / sqrt(C)) V_o)   (and symmetrically)

Residual connections and pre-layer-norm wrap every sublayer; the mutual
sublayer itself is kept literal (bias-free projections, no output
projection) so it matches the closed form exactly when heads=1.

Conditioning: a single token prepended to both streams carrying the text
embedding fused with sinusoidal timestep features. Initial-state frames
enter input-side as zero-padded condition channels with an indicator.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataset import NormStats
from .text import PAD_ID


@dataclass
class DenoiserConfig:
    num_joints: int = 24
    num_objects: int = 2
    width: int = 128
    blocks: int = 8
    heads: int = 4
    ff_mult: int = 4
    dropout: float = 0.1
    geom_embed: int = 64
    bps_points: int = 1024
    vocab_size: int = 128
    max_text_len: int = 40
    max_seq_len: int = 512
    object_width: int = 9

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.blocks < 1:
            raise ValueError("need at least one block")

    @property
    def human_width(self):
        return 9 * self.num_joints + 3

    def to_json(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, payload):
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown denoiser config keys: {sorted(unknown)}")
        return cls(**payload)


def sinusoidal_embedding(positions, dim):
    """Fixed sin/cos features: (N,) int tensor -> (N, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    )
    args = positions.double().unsqueeze(1) * freqs.unsqueeze(0)
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class TrainableTextEncoder(nn.Module):
    """Fallback text encoder: embedding table + masked mean pool + MLP."""

    def __init__(self, vocab_size, width):
        super().__init__()
        self.vocab_size = vocab_size
        self.embed = nn.Embedding(vocab_size, width)
        self.mlp = nn.Sequential(nn.Linear(width, width), nn.GELU(), nn.Linear(width, width))

    def forward(self, tokens):
        if int(tokens.max()) >= self.vocab_size or int(tokens.min()) < 0:
            raise ValueError(
                f"token id out of range [0, {self.vocab_size}): {int(tokens.max())}"
            )
        emb = self.embed(tokens)  # (B, L, C)
        keep = (tokens != PAD_ID).to(emb.dtype).unsqueeze(-1)
        count = keep.sum(dim=1)
        pooled = (emb * keep).sum(dim=1) / count.clamp(min=1.0)
        # Empty text: fall back to the learned pad embedding itself.
        pad_row = self.embed.weight[PAD_ID].unsqueeze(0).to(emb.dtype)
        pooled = torch.where(count > 0, pooled, pad_row)
        return self.mlp(pooled)


class FrozenTextEncoder(nn.Module):
    """Looks up precomputed embeddings exported by any external encoder.

    File format: the tensor container with ``embeddings`` (N, E) float32
    plus ``texts_json`` (UTF-8 JSON list of N strings, stored as int64
    codepoints). A trainable linear maps E to the model width.
    """

    def __init__(self, path, width):
        super().__init__()
        from .archive import read_container

        tensors = read_container(path)
        table = torch.as_tensor(tensors["embeddings"], dtype=torch.float32)
        texts = json.loads(bytes(tensors["texts_json"].astype(np.uint8)).decode("utf-8"))
        if len(texts) != table.shape[0]:
            raise ValueError("embedding row count does not match text count")
        self.register_buffer("table", table)
        self.index = {t: i for i, t in enumerate(texts)}
        self.proj = nn.Linear(table.shape[1], width)

    def encode_texts(self, texts):
        rows = []
        for t in texts:
            if t not in self.index:
                raise KeyError(f"text not present in frozen embedding file: {t!r}")
            rows.append(self.index[t])
        return self.proj(self.table[rows])


class ConditionEmbed(nn.Module):
    """timestep -> sinusoid -> 2-layer MLP, concatenated with the text embedding."""

    def __init__(self, width):
        super().__init__()
        self.width = width
        self.time_mlp = nn.Sequential(nn.Linear(width, width), nn.GELU(), nn.Linear(width, width))
        self.fuse = nn.Linear(2 * width, width)

    def forward(self, text_emb, t):
        sin = sinusoidal_embedding(t, self.width).to(text_emb.dtype)
        time_feat = self.time_mlp(sin)
        return self.fuse(torch.cat([text_emb, time_feat], dim=-1))


class SelfAttention(nn.Module):
    def __init__(self, width, heads, dropout=0.0):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_mask=None):
        B, T, C = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)

        def split(z):
            return z.view(B, T, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        attn = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if key_mask is not None:
            bad = (key_mask == 0).view(B, 1, 1, T)
            attn = attn.masked_fill(bad, float("-inf"))
        attn = torch.softmax(attn, dim=-1)
        attn = self.drop(attn)
        out = (attn @ v).transpose(1, 2).reshape(B, T, C)
        return self.out(out)


class MutualAttention(nn.Module):
    """Literal cross-branch attention: softmax(Q K^T / sqrt(C)) V.

    Bias-free projections and no output projection keep the sublayer equal
    to the closed form (exactly so for heads=1; per-head otherwise, still
    scaled by 1/sqrt(C)).
    """

    def __init__(self, width, heads):
        super().__init__()
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.w_q = nn.Linear(width, width, bias=False)
        self.w_k = nn.Linear(width, width, bias=False)
        self.w_v = nn.Linear(width, width, bias=False)

    def forward(self, query_in, kv_in, key_mask=None, return_attn=False):
        B, T, C = query_in.shape
        S = kv_in.shape[1]
        q = self.w_q(query_in).view(B, T, self.heads, self.head_dim).transpose(1, 2)
        k = self.w_k(kv_in).view(B, S, self.heads, self.head_dim).transpose(1, 2)
        v = self.w_v(kv_in).view(B, S, self.heads, self.head_dim).transpose(1, 2)
        attn = q @ k.transpose(-1, -2) / math.sqrt(self.width)
        if key_mask is not None:
            bad = (key_mask == 0).view(B, 1, 1, S)
            attn = attn.masked_fill(bad, float("-inf"))
        attn = torch.softmax(attn, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, T, C)
        if return_attn:
            return out, attn
        return out


class FeedForward(nn.Module):
    def __init__(self, width, mult, dropout=0.0):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(width, mult * width),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(mult * width, width),
        )

    def forward(self, x):
        return self.net(x)


class BranchHalf(nn.Module):
    """One branch's sublayers inside a mutual block."""

    def __init__(self, cfg):
        super().__init__()
        C = cfg.width
        self.ln_self = nn.LayerNorm(C)
        self.self_attn = SelfAttention(C, cfg.heads, cfg.dropout)
        self.ln_query = nn.LayerNorm(C)
        self.ln_cross_src = nn.LayerNorm(C)
        self.cross = MutualAttention(C, cfg.heads)
        self.ln_ff = nn.LayerNorm(C)
        self.ff = FeedForward(C, cfg.ff_mult, cfg.dropout)


class MutualBlock(nn.Module):
    """Self-attention per branch, cross-branch mutual attention, feed-forward.

    Keys/values of the mutual layer come from the other branch's *block
    input*, not its self-attention output.
    """

    def __init__(self, cfg):
        super().__init__()
        self.human = BranchHalf(cfg)
        self.object = BranchHalf(cfg)

    def forward(self, h, o, h_mask=None, o_mask=None):
        hb, ob = self.human, self.object
        e_h = h + hb.self_attn(hb.ln_self(h), key_mask=h_mask)
        e_o = o + ob.self_attn(ob.ln_self(o), key_mask=o_mask)
        h2 = e_h + hb.cross(hb.ln_query(e_h), hb.ln_cross_src(o), key_mask=o_mask)
        o2 = e_o + ob.cross(ob.ln_query(e_o), ob.ln_cross_src(h), key_mask=h_mask)
        h3 = h2 + hb.ff(hb.ln_ff(h2))
        o3 = o2 + ob.ff(ob.ln_ff(o2))
        return h3, o3


class DualBranchDenoiser(nn.Module):
    """Predicts clean human/object features from their noised versions."""

    def __init__(self, config, text_encoder=None):
        super().__init__()
        self.config = config
        C = config.width
        d_h = config.human_width
        d_o = config.num_objects * config.object_width
        self.text_encoder = (
            text_encoder if text_encoder is not None
            else TrainableTextEncoder(config.vocab_size, C)
        )
        self.null_text = nn.Parameter(torch.zeros(C))
        self.cond_embed = ConditionEmbed(C)
        self.geom_proj = nn.Linear(3 * config.bps_points, config.geom_embed)
        self.human_in = nn.Linear(2 * d_h + 1, C)
        self.object_in = nn.Linear(
            2 * d_o + 1 + config.num_objects * config.geom_embed, C
        )
        pe = sinusoidal_embedding(
            torch.arange(config.max_seq_len + 1), C
        ).to(torch.float32)
        self.register_buffer("pos_enc", pe)
        self.blocks = nn.ModuleList(MutualBlock(config) for _ in range(config.blocks))
        self.ln_h_final = nn.LayerNorm(C)
        self.ln_o_final = nn.LayerNorm(C)
        self.human_out = nn.Linear(C, d_h)
        self.object_out = nn.Linear(C, d_o)
        for name in ("human_mean", "object_mean"):
            self.register_buffer(
                f"stats_{name}", torch.zeros(d_h if "human" in name else config.object_width)
            )
        for name in ("human_std", "object_std"):
            self.register_buffer(
                f"stats_{name}", torch.ones(d_h if "human" in name else config.object_width)
            )

    def set_norm_stats(self, stats):
        self.stats_human_mean.copy_(torch.as_tensor(stats.human_mean, dtype=torch.float32))
        self.stats_human_std.copy_(torch.as_tensor(stats.human_std, dtype=torch.float32))
        self.stats_object_mean.copy_(torch.as_tensor(stats.object_mean, dtype=torch.float32))
        self.stats_object_std.copy_(torch.as_tensor(stats.object_std, dtype=torch.float32))

    def norm_stats(self):
        return NormStats(
            human_mean=self.stats_human_mean.double().numpy(),
            human_std=self.stats_human_std.double().numpy(),
            object_mean=self.stats_object_mean.double().numpy(),
            object_std=self.stats_object_std.double().numpy(),
        )

    def encode_text(self, tokens):
        """(B, L) token ids -> (B, C) embedding."""
        return self.text_encoder(tokens)

    def forward(self, noised_human, noised_objects, t, human_cond, object_cond,
                geometry, tokens=None, text_emb=None, frame_mask=None, drop_text=False):
        """One denoising pass.

        noised_human: (B, T, D_h); noised_objects: (B, T, N_o * 9)
        human_cond: (B, T, D_h + 1); object_cond: (B, T, N_o * 9 + 1)
        geometry: (B, N_o, P, 3); tokens: (B, L) or text_emb: (B, C)
        drop_text: bool or (B,) bool tensor replacing text with the learned
        null embedding (condition dropout / unconditional branch).
        """
        cfg = self.config
        B, T, d_h = noised_human.shape
        if d_h != cfg.human_width:
            raise ValueError(
                f"human stream width {d_h} != configured {cfg.human_width}"
            )
        d_o = cfg.num_objects * cfg.object_width
        if noised_objects.shape != (B, T, d_o):
            raise ValueError(
                f"object stream shape {tuple(noised_objects.shape)} != {(B, T, d_o)}"
            )
        if human_cond.shape != (B, T, d_h + 1):
            raise ValueError(
                f"human condition shape {tuple(human_cond.shape)} != {(B, T, d_h + 1)}"
            )
        if object_cond.shape != (B, T, d_o + 1):
            raise ValueError(
                f"object condition shape {tuple(object_cond.shape)} != {(B, T, d_o + 1)}"
            )
        if geometry.shape[1] != cfg.num_objects:
            raise ValueError(
                f"geometry has {geometry.shape[1]} objects, expected {cfg.num_objects}"
            )

        if text_emb is None:
            if tokens is None:
                raise ValueError("provide tokens or text_emb")
            text_emb = self.encode_text(tokens)
        if isinstance(drop_text, bool):
            if drop_text:
                text_emb = self.null_text.unsqueeze(0).expand(B, -1).to(text_emb.dtype)
        else:
            keep = (~drop_text).to(text_emb.dtype).unsqueeze(-1)
            text_emb = keep * text_emb + (1.0 - keep) * self.null_text.to(text_emb.dtype)
        cond_token = self.cond_embed(text_emb, t)  # (B, C)

        geom_flat = geometry.reshape(B, cfg.num_objects, -1)
        geom_emb = self.geom_proj(geom_flat).reshape(B, 1, -1).expand(B, T, -1)

        h_in = torch.cat([noised_human, human_cond], dim=-1)
        o_in = torch.cat([noised_objects, object_cond, geom_emb], dim=-1)
        h = self.human_in(h_in)
        o = self.object_in(o_in)

        h = torch.cat([cond_token.unsqueeze(1), h], dim=1)
        o = torch.cat([cond_token.unsqueeze(1), o], dim=1)
        pe = self.pos_enc[: T + 1].to(h.dtype)
        h = h + pe
        o = o + pe

        if frame_mask is not None:
            tok_mask = torch.cat(
                [frame_mask.new_ones(B, 1), frame_mask], dim=1
            )
        else:
            tok_mask = None
        for block in self.blocks:
            h, o = block(h, o, h_mask=tok_mask, o_mask=tok_mask)
        h = self.ln_h_final(h[:, 1:])
        o = self.ln_o_final(o[:, 1:])
        return self.human_out(h), self.object_out(o)


def reference_self_attention_block(branch_half, x, key_mask=None):
    """Plain pre-LN self-attention block sharing one branch's weights.

    With the mutual sublayer's projections zeroed, a branch must reduce to
    exactly this computation.
    """
    e = x + branch_half.self_attn(branch_half.ln_self(x), key_mask=key_mask)
    return e + branch_half.ff(branch_half.ln_ff(e))
