import filecmp
import os

import numpy as np
import pytest
import torch

from hoisyn.body import ToyBodyModel
from hoisyn.dataset import (
    CorpusLoader,
    CorpusManifest,
    compute_norm_stats,
    denormalize_human,
    normalize_human,
    split_counts,
    split_dataset,
)
from hoisyn.fitting import rigid_pose_from_markers
from hoisyn.motion import validate_segments
from hoisyn.rotations import rot6d_to_matrix
from hoisyn.synthgen import CorpusConfigError, GenConfig, generate_synthetic_corpus

SMALL = GenConfig(num_sequences=6, num_objects=2, seg_count_range=(2, 3),
                  seg_len_range=(16, 22), surface_samples=64)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    manifest, scripts = generate_synthetic_corpus(out, SMALL, seed=7)
    return out, manifest, scripts


def dir_fingerprint(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


class TestGeneration:
    def test_determinism_byte_identical(self, tmp_path):
        cfg = GenConfig(num_sequences=3, num_objects=2, seg_count_range=(2, 3),
                        seg_len_range=(16, 20), surface_samples=32)
        a, b = tmp_path / "a", tmp_path / "b"
        generate_synthetic_corpus(a, cfg, seed=7)
        generate_synthetic_corpus(b, cfg, seed=7)
        fa, fb = dir_fingerprint(a), dir_fingerprint(b)
        assert fa.keys() == fb.keys()
        for name in fa:
            assert fa[name] == fb[name], f"{name} differs between runs"

    def test_segments_tile_every_sequence(self, corpus):
        out, manifest, _ = corpus
        loader = CorpusLoader(out)
        for entry in manifest.sequences:
            seq = loader.sequence(entry["id"])
            validate_segments(seq.segments, seq.num_frames)

    def test_welded_objects_move_rigidly_with_hand(self, corpus):
        """Kabsch oracle: while held, object samples are rigid in the hand frame."""
        out, manifest, scripts = corpus
        loader = CorpusLoader(out)
        model = ToyBodyModel()
        from hoisyn.body import LEFT_HAND, RIGHT_HAND

        hand_joint = {"left": LEFT_HAND, "right": RIGHT_HAND}
        checked = 0
        for entry in manifest.sequences:
            seq = loader.sequence(entry["id"])
            script = scripts[entry["id"]]
            for (start, end, _), step in zip(seq.segments, script):
                if step["action"] not in ("move", "place"):
                    continue
                j = hand_joint[step["hand"]]
                track = seq.objects[step["object"]]
                world = track.world_points(track.geometry.surface_samples[:16])
                hand_R = rot6d_to_matrix(seq.human.rotations[:, j].astype(np.float64))
                hand_p = seq.human.positions[:, j].astype(np.float64)
                # Express the object's points in the hand frame per frame.
                local = np.einsum("tji,tsj->tsi", hand_R, world - hand_p[:, None, :])
                ref = local[start]
                for f in range(start, end):
                    _, _, res = rigid_pose_from_markers(ref, local[f])
                    assert res < 1e-6
                    checked += 1
        assert checked > 0

    def test_object_tracks_start_at_identity(self, corpus):
        out, manifest, _ = corpus
        loader = CorpusLoader(out)
        for entry in manifest.sequences:
            seq = loader.sequence(entry["id"])
            for track in seq.objects:
                M = rot6d_to_matrix(track.rotation[0].astype(np.float64))
                assert np.abs(M - np.eye(3)).max() < 1e-5

    def test_texts_are_joined_from_segments(self, corpus):
        out, manifest, _ = corpus
        loader = CorpusLoader(out)
        seq = loader.sequence(manifest.sequences[0]["id"])
        assert seq.text.startswith("First, ")
        for _, _, seg_text in seq.segments:
            assert seg_text in seq.text

    def test_bad_config_rejected(self):
        with pytest.raises(CorpusConfigError):
            GenConfig(num_objects=5).validate()
        with pytest.raises(CorpusConfigError):
            GenConfig(seg_len_range=(4, 8)).validate()


class TestSplit:
    def manifest(self, n):
        return CorpusManifest(
            sequences=[{"id": f"s{i}", "num_frames": 10, "num_objects": 2,
                        "num_segments": 2} for i in range(n)],
            object_vocabulary=["box"], fps=20.0, num_objects=2,
        )

    def test_100_sequences_exact(self):
        m = split_dataset(self.manifest(100), seed=1)
        counts = {s: len(m.ids_for_split(s)) for s in ("train", "test", "val")}
        assert counts == {"train": 80, "test": 15, "val": 5}

    def test_10_sequences_rounding(self):
        m = split_dataset(self.manifest(10), seed=1)
        counts = [len(m.ids_for_split(s)) for s in ("train", "test", "val")]
        assert counts == [8, 1, 1]

    def test_counts_within_one_of_exact(self):
        for n in (3, 7, 13, 29, 64):
            counts = split_counts(n, (0.8, 0.15, 0.05))
            assert sum(counts) == n
            for c, r in zip(counts, (0.8, 0.15, 0.05)):
                assert abs(c - n * r) < 1.0

    def test_same_seed_same_assignment(self):
        m1 = split_dataset(self.manifest(20), seed=3)
        m2 = split_dataset(self.manifest(20), seed=3)
        assert [s["split"] for s in m1.sequences] == [s["split"] for s in m2.sequences]
        m3 = split_dataset(self.manifest(20), seed=4)
        assert [s["split"] for s in m1.sequences] != [s["split"] for s in m3.sequences]

    def test_too_few_sequences(self):
        with pytest.raises(ValueError):
            split_dataset(self.manifest(2))

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            split_dataset(self.manifest(10), ratios=(0.5, 0.2, 0.2))

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            CorpusManifest(
                sequences=[{"id": "a"}, {"id": "a"}],
                object_vocabulary=[], fps=20.0, num_objects=2,
            )


class TestLoader:
    def test_norm_stats_from_train_split_only(self, corpus):
        out, manifest, _ = corpus
        loader = CorpusLoader(out)
        train_seqs = loader.split_sequences("train")
        stats = compute_norm_stats(train_seqs)
        feats = np.concatenate([s.human.to_features() for s in train_seqs]).astype(np.float64)
        z = (feats - stats.human_mean) / stats.human_std
        assert np.abs(z.mean(axis=0)).max() < 1e-6
        varying = feats.std(axis=0) > 1e-6
        assert np.abs(z[:, varying].std(axis=0) - 1.0).max() < 1e-6

    def test_batch_shapes_and_mask(self, corpus):
        out, _, _ = corpus
        loader = CorpusLoader(out)
        batch = loader.load_batch("train", batch_size=3, seed=5)
        B, T, Dh = batch.human.shape
        assert B == 3
        assert Dh == 9 * 24 + 3
        assert batch.objects.shape == (B, T, 2, 9)
        assert batch.mask.shape == (B, T)
        for i in range(B):
            L = int(batch.lengths[i])
            assert batch.mask[i, :L].all()
            assert not batch.mask[i, L:].any()
            # Padded rows are zero after normalization.
            assert torch.all(batch.human[i, L:] == 0)
        assert batch.cond_k.tolist() == [1] * B

    def test_object_shuffle_preserves_track_set(self, corpus):
        out, _, _ = corpus
        loader = CorpusLoader(out)
        b1 = loader.load_batch("train", batch_size=2, seed=5, epoch=0)
        b2 = loader.load_batch("train", batch_size=2, seed=5, epoch=1)
        # Same epoch order seeding may differ, so align by sequence id.
        common = set(b1.seq_ids) & set(b2.seq_ids)
        found_any = False
        for sid in common:
            i1, i2 = b1.seq_ids.index(sid), b2.seq_ids.index(sid)
            L = min(int(b1.lengths[i1]), int(b2.lengths[i2]))
            s1 = {b1.objects[i1, :L, o].numpy().tobytes() for o in range(2)}
            s2 = {b2.objects[i2, :L, o].numpy().tobytes() for o in range(2)}
            assert s1 == s2  # the set of tracks is permutation-invariant
            found_any = True
        assert found_any

    def test_load_batch_deterministic(self, corpus):
        out, _, _ = corpus
        loader = CorpusLoader(out)
        a = loader.load_batch("train", 4, seed=9)
        b = loader.load_batch("train", 4, seed=9)
        assert torch.equal(a.human, b.human)
        assert torch.equal(a.objects, b.objects)
        assert torch.equal(a.tokens, b.tokens)
        assert a.seq_ids == b.seq_ids

    def test_seg_mode_conditioning_counts(self, corpus):
        out, _, _ = corpus
        loader = CorpusLoader(out, mode="seg", k_max=5)
        batch = loader.load_batch("train", batch_size=8, seed=3)
        assert torch.all(batch.cond_k >= 1)
        assert torch.all(batch.cond_k <= 5)

    def test_unknown_split_raises(self, corpus):
        out, _, _ = corpus
        loader = CorpusLoader(out)
        with pytest.raises(ValueError):
            loader.load_batch("nope", 2, seed=0)

    def test_normalize_denormalize_round_trip(self, corpus):
        out, _, _ = corpus
        loader = CorpusLoader(out)
        seq = loader.split_sequences("train")[0]
        feats = seq.human.to_features()
        z = normalize_human(feats, loader.norm_stats)
        back = denormalize_human(z, loader.norm_stats)
        assert np.abs(back - feats).max() < 1e-4
