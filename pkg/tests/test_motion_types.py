import numpy as np
import pytest

from hoisyn.bps import build_object_geometry
from hoisyn.mesh import make_box
from hoisyn.motion import (
    HoiSequence,
    HumanMotion,
    ObjectTrack,
    human_feature_width,
    validate_segments,
)
from hoisyn.rotations import ROT6D_IDENTITY


def make_human(T=5, J=4, seed=0):
    rng = np.random.default_rng(seed)
    return HumanMotion(
        positions=rng.normal(size=(T, J, 3)),
        rotations=np.tile(ROT6D_IDENTITY, (T, J, 1)),
        root_translation=rng.normal(size=(T, 3)),
    )


def make_track(T=5, seed=1):
    rng = np.random.default_rng(seed)
    verts, faces = make_box((0.1, 0.1, 0.1))
    geom = build_object_geometry(verts, faces, sample_count=16, sample_seed=seed)
    rot = np.tile(ROT6D_IDENTITY, (T, 1))
    return ObjectTrack(rot, rng.normal(size=(T, 3)), geom)


def test_feature_width_matches_spec():
    assert human_feature_width(52) == 471
    assert human_feature_width(24) == 219


def test_flatten_unflatten_round_trip():
    h = make_human(T=7, J=6)
    feats = h.to_features()
    assert feats.shape == (7, human_feature_width(6))
    back = HumanMotion.from_features(feats, num_joints=6, fps=h.fps)
    assert np.array_equal(back.positions, h.positions)
    assert np.array_equal(back.rotations, h.rotations)
    assert np.array_equal(back.root_translation, h.root_translation)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        HumanMotion(
            positions=np.full((2, 3, 3), np.nan),
            rotations=np.tile(ROT6D_IDENTITY, (2, 3, 1)),
            root_translation=np.zeros((2, 3)),
        )


def test_object_track_requires_identity_first_frame():
    track = make_track()
    assert track.to_features().shape == (5, 9)
    rot = track.rotation.copy()
    rot[0] = [0, 1, 0, -1, 0, 0]
    with pytest.raises(ValueError):
        ObjectTrack(rot, track.translation, track.geometry)


def test_world_points_rigid_transform():
    track = make_track()
    pts = track.world_points()
    # Identity rotations: world points are samples plus translation.
    expected = track.geometry.surface_samples[None] + track.translation[:, None, :]
    assert np.abs(pts - expected).max() < 1e-5


def test_segment_tiling_validation():
    validate_segments([(0, 3, "a"), (3, 5, "b")], 5)
    with pytest.raises(ValueError):
        validate_segments([(0, 3, "a"), (4, 5, "b")], 5)  # gap
    with pytest.raises(ValueError):
        validate_segments([(0, 3, "a"), (2, 5, "b")], 5)  # overlap
    with pytest.raises(ValueError):
        validate_segments([(0, 3, "a")], 5)  # does not reach T


def test_hoi_sequence_checks_lengths():
    human = make_human(T=5)
    objs = [make_track(T=5), make_track(T=5, seed=2)]
    seq = HoiSequence(human, objs, "hello", [(0, 2, "x"), (2, 5, "y")], seq_id="s0")
    assert seq.num_objects == 2
    assert seq.object_features().shape == (5, 2, 9)
    with pytest.raises(ValueError):
        HoiSequence(human, [make_track(T=4)], "t", [(0, 5, "x")])
