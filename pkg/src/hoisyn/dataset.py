"""Corpus manifest, dataset splits, normalization stats and batch loading.

Splits use seeded-permutation contiguous assignment with largest-remainder
rounding (ties resolved toward the later split, so 10 sequences at the
default ratios give 8/1/1). Normalization statistics come from the train
split only; features are z-normalized and padded with zeros after
normalization, with a validity mask carried alongside.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .archive import SCHEMA_VERSION, SchemaMismatchError, read_archive
from .motion import OBJECT_FEATURE_WIDTH
from .text import Vocabulary

DEFAULT_SPLIT_RATIOS = (0.8, 0.15, 0.05)
SPLIT_NAMES = ("train", "test", "val")
MAX_MOTION_LEN_GEN = 300
MAX_MOTION_LEN_SEG = 100
MAX_TEXT_LEN_GEN = 40
MAX_TEXT_LEN_SEG = 15
STD_FLOOR = 1e-6


@dataclass
class CorpusManifest:
    sequences: list  # dicts: {id, num_frames, num_objects, num_segments, split?}
    object_vocabulary: list
    fps: float
    num_objects: int
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        ids = [s["id"] for s in self.sequences]
        if len(set(ids)) != len(ids):
            raise ValueError("sequence ids must be unique")

    def ids_for_split(self, split):
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}; expected one of {SPLIT_NAMES}")
        return [s["id"] for s in self.sequences if s.get("split") == split]

    def save(self, path):
        payload = {
            "schema_version": self.schema_version,
            "fps": self.fps,
            "num_objects": self.num_objects,
            "object_vocabulary": self.object_vocabulary,
            "sequences": self.sequences,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("schema_version") != SCHEMA_VERSION:
            raise SchemaMismatchError(
                f"manifest schema_version {payload.get('schema_version')}, "
                f"expected {SCHEMA_VERSION}"
            )
        return cls(
            sequences=payload["sequences"],
            object_vocabulary=payload["object_vocabulary"],
            fps=payload["fps"],
            num_objects=payload["num_objects"],
        )


def split_counts(n, ratios):
    """Largest-remainder apportionment; remainder ties go to later splits."""
    exact = [n * r for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    leftover = n - sum(counts)
    fracs = [e - c for e, c in zip(exact, counts)]
    # Sort by fractional part descending; later splits win ties.
    order = sorted(range(len(ratios)), key=lambda i: (fracs[i], i), reverse=True)
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def split_dataset(manifest, ratios=DEFAULT_SPLIT_RATIOS, seed=0):
    """Assign splits by seeded permutation and contiguous slicing."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(manifest.sequences)
    if n < len(ratios):
        raise ValueError(f"need at least {len(ratios)} sequences to split, have {n}")
    counts = split_counts(n, ratios)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    assignment = {}
    pos = 0
    for name, count in zip(SPLIT_NAMES, counts):
        for idx in order[pos : pos + count]:
            assignment[int(idx)] = name
        pos += count
    for i, entry in enumerate(manifest.sequences):
        entry["split"] = assignment[i]
    return manifest


@dataclass
class NormStats:
    """Per-feature z-normalization statistics (train split only)."""

    human_mean: np.ndarray
    human_std: np.ndarray
    object_mean: np.ndarray
    object_std: np.ndarray

    def __post_init__(self):
        self.human_mean = np.asarray(self.human_mean, dtype=np.float64)
        self.object_mean = np.asarray(self.object_mean, dtype=np.float64)
        # The floor is part of the invariant; re-apply it here so float32
        # round trips (checkpoint buffers) cannot sneak below it.
        self.human_std = np.maximum(np.asarray(self.human_std, dtype=np.float64), STD_FLOOR)
        self.object_std = np.maximum(np.asarray(self.object_std, dtype=np.float64), STD_FLOOR)

    def to_tensors(self, prefix="norm"):
        return {
            f"{prefix}.human_mean": self.human_mean.astype(np.float32),
            f"{prefix}.human_std": self.human_std.astype(np.float32),
            f"{prefix}.object_mean": self.object_mean.astype(np.float32),
            f"{prefix}.object_std": self.object_std.astype(np.float32),
        }

    @classmethod
    def from_tensors(cls, tensors, prefix="norm"):
        return cls(
            tensors[f"{prefix}.human_mean"],
            tensors[f"{prefix}.human_std"],
            tensors[f"{prefix}.object_mean"],
            tensors[f"{prefix}.object_std"],
        )


def compute_norm_stats(sequences):
    """Mean/std of human (D_h) and object (9) features over given sequences."""
    human_rows = [seq.human.to_features().astype(np.float64) for seq in sequences]
    obj_rows = [seq.object_features().reshape(-1, OBJECT_FEATURE_WIDTH).astype(np.float64)
                for seq in sequences]
    human = np.concatenate(human_rows, axis=0)
    objs = np.concatenate(obj_rows, axis=0)
    return NormStats(
        human_mean=human.mean(axis=0),
        human_std=np.maximum(human.std(axis=0), STD_FLOOR),
        object_mean=objs.mean(axis=0),
        object_std=np.maximum(objs.std(axis=0), STD_FLOOR),
    )


@dataclass
class Batch:
    """Padded, normalized training batch. All tensors are torch."""

    human: torch.Tensor  # (B, T, D_h) normalized
    objects: torch.Tensor  # (B, T, N_o, 9) normalized
    mask: torch.Tensor  # (B, T) 1 = valid frame
    tokens: torch.Tensor  # (B, L) int64
    geometry: torch.Tensor  # (B, N_o, S, 3) BPS codes
    samples: torch.Tensor  # (B, N_o, S, 3) object surface samples (input frame)
    cond_k: torch.Tensor  # (B,) conditioning frame counts
    lengths: torch.Tensor  # (B,) valid frame counts
    texts: list
    seq_ids: list


class CorpusLoader:
    """Reads a generated corpus directory and serves shuffled batches.

    ``mode`` selects full-sequence samples ("gen", conditioned on the first
    frame) or per-segment clips ("seg", conditioned on up to ``k_max`` past
    frames drawn uniformly per sample). Object slot order is shuffled per
    sample per epoch.
    """

    def __init__(self, corpus_dir, mode="gen", max_len=None, max_text_len=None,
                 k_max=10, vocab=None, norm_stats=None):
        if mode not in ("gen", "seg"):
            raise ValueError(f"unknown mode {mode!r}")
        self.corpus_dir = corpus_dir
        self.mode = mode
        self.manifest = CorpusManifest.load(os.path.join(corpus_dir, "manifest.json"))
        self.max_len = max_len or (MAX_MOTION_LEN_GEN if mode == "gen" else MAX_MOTION_LEN_SEG)
        self.max_text_len = max_text_len or (
            MAX_TEXT_LEN_GEN if mode == "gen" else MAX_TEXT_LEN_SEG
        )
        self.k_max = k_max
        self._cache = {}
        self.vocab = vocab if vocab is not None else self.build_vocabulary()
        self.norm_stats = norm_stats if norm_stats is not None else self.compute_train_stats()

    def sequence(self, seq_id):
        if seq_id not in self._cache:
            self._cache[seq_id] = read_archive(os.path.join(self.corpus_dir, seq_id))
        return self._cache[seq_id]

    def split_sequences(self, split):
        ids = self.manifest.ids_for_split(split)
        if not ids:
            raise ValueError(f"split {split!r} is empty")
        return [self.sequence(i) for i in ids]

    def build_vocabulary(self):
        texts = []
        for seq in self.split_sequences("train"):
            texts.append(seq.text)
            texts.extend(t for _, _, t in seq.segments)
        return Vocabulary.from_texts(texts)

    def compute_train_stats(self):
        return compute_norm_stats(self.split_sequences("train"))

    def items(self, split):
        """Sample units: sequence ids in gen mode, (id, segment) pairs in seg."""
        out = []
        for seq_id in self.manifest.ids_for_split(split):
            if self.mode == "gen":
                out.append((seq_id, -1))
            else:
                seq = self.sequence(seq_id)
                out.extend((seq_id, s) for s in range(len(seq.segments)))
        if not out:
            raise ValueError(f"split {split!r} is empty")
        return out

    def _clip(self, seq_id, seg_idx, rng):
        """Frames, text and conditioning count for one sample."""
        seq = self.sequence(seq_id)
        if seg_idx < 0:
            lo, hi = 0, min(seq.num_frames, self.max_len)
            return seq, lo, hi, seq.text, 1
        start, end, seg_text = seq.segments[seg_idx]
        if start == 0:
            # Sequence-initial segment: its own first frame is the context.
            k, lo = 1, 0
        else:
            k = min(int(rng.integers(1, self.k_max + 1)), start)
            lo = start - k
        hi = min(end, lo + self.max_len)
        return seq, lo, hi, seg_text, k

    def batches(self, split, batch_size, seed, epoch=0):
        """Deterministic shuffled minibatches for one epoch."""
        items = self.items(split)
        order = np.random.default_rng([seed, epoch, 17]).permutation(len(items))
        for b in range(0, len(items), batch_size):
            chosen = [items[i] for i in order[b : b + batch_size]]
            yield self.assemble(chosen, seed=seed, epoch=epoch, batch_index=b)

    def load_batch(self, split, batch_size, seed, epoch=0):
        """First batch of an epoch; convenience for tests and sampling."""
        return next(self.batches(split, batch_size, seed, epoch))

    def assemble(self, chosen, seed=0, epoch=0, batch_index=0):
        rng = np.random.default_rng([seed, epoch, batch_index, 29])
        stats = self.norm_stats
        n_obj = self.manifest.num_objects
        clips = [self._clip(seq_id, seg_idx, rng) for seq_id, seg_idx in chosen]
        T = max(hi - lo for _, lo, hi, _, _ in clips)
        B = len(clips)
        seq0 = clips[0][0]
        d_h = seq0.human.feature_width
        S = seq0.objects[0].geometry.surface_samples.shape[0]

        human = np.zeros((B, T, d_h), dtype=np.float32)
        objects = np.zeros((B, T, n_obj, OBJECT_FEATURE_WIDTH), dtype=np.float32)
        mask = np.zeros((B, T), dtype=np.float32)
        tokens = np.zeros((B, self.max_text_len), dtype=np.int64)
        n_bps = seq0.objects[0].geometry.bps_code.shape[0]
        geometry = np.zeros((B, n_obj, n_bps, 3), dtype=np.float32)
        samples = np.zeros((B, n_obj, S, 3), dtype=np.float32)
        cond_k = np.zeros(B, dtype=np.int64)
        lengths = np.zeros(B, dtype=np.int64)
        texts, seq_ids = [], []

        for i, (seq, lo, hi, text, k) in enumerate(clips):
            L = hi - lo
            perm = rng.permutation(n_obj)  # object order shuffle per sample
            hf = seq.human.to_features()[lo:hi]
            human[i, :L] = (hf - stats.human_mean) / stats.human_std
            of = seq.object_features()[lo:hi]  # (L, N_o, 9)
            of = (of - stats.object_mean) / stats.object_std
            objects[i, :L] = of[:, perm]
            for slot, o in enumerate(perm):
                geometry[i, slot] = seq.objects[o].geometry.bps_code
                samples[i, slot] = seq.objects[o].geometry.surface_samples
            mask[i, :L] = 1.0
            tokens[i] = self.vocab.encode(text, self.max_text_len)
            cond_k[i] = k
            lengths[i] = L
            texts.append(text)
            seq_ids.append(seq.seq_id)

        return Batch(
            human=torch.from_numpy(human),
            objects=torch.from_numpy(objects),
            mask=torch.from_numpy(mask),
            tokens=torch.from_numpy(tokens),
            geometry=torch.from_numpy(geometry),
            samples=torch.from_numpy(samples),
            cond_k=torch.from_numpy(cond_k),
            lengths=torch.from_numpy(lengths),
            texts=texts,
            seq_ids=seq_ids,
        )


def _pair(features, mean, std):
    if isinstance(features, torch.Tensor):
        mean = torch.as_tensor(mean, dtype=features.dtype, device=features.device)
        std = torch.as_tensor(std, dtype=features.dtype, device=features.device)
    return mean, std


def normalize_human(features, stats):
    mean, std = _pair(features, stats.human_mean, stats.human_std)
    return (features - mean) / std


def denormalize_human(features, stats):
    mean, std = _pair(features, stats.human_mean, stats.human_std)
    return features * std + mean


def normalize_objects(features, stats):
    mean, std = _pair(features, stats.object_mean, stats.object_std)
    return (features - mean) / std


def denormalize_objects(features, stats):
    mean, std = _pair(features, stats.object_mean, stats.object_std)
    return features * std + mean
