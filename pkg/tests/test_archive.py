import struct

import numpy as np
import pytest

from hoisyn.archive import (
    BadMagicError,
    FormatError,
    SchemaMismatchError,
    TruncatedArchiveError,
    VersionMismatchError,
    pack_tensors,
    read_archive,
    read_container,
    unpack_tensors,
    write_archive,
    write_container,
)
from hoisyn.bps import build_object_geometry
from hoisyn.mesh import make_box, make_sphere
from hoisyn.motion import HoiSequence, HumanMotion, ObjectTrack
from hoisyn.rotations import ROT6D_IDENTITY


def sample_tensors():
    rng = np.random.default_rng(0)
    return {
        "a.float": rng.normal(size=(3, 4)).astype(np.float32),
        "b.int": rng.integers(-5, 5, size=(2, 2, 2)).astype(np.int64),
        "c.scalar": np.array(1.5, dtype=np.float32),
    }


def sample_sequence(T=6, n_obj=2):
    rng = np.random.default_rng(1)
    J = 4
    human = HumanMotion(
        positions=rng.normal(size=(T, J, 3)),
        rotations=np.tile(ROT6D_IDENTITY, (T, J, 1)),
        root_translation=rng.normal(size=(T, 3)),
        fps=20.0,
    )
    objects = []
    for k in range(n_obj):
        verts, faces = make_box((0.1, 0.2, 0.1)) if k == 0 else make_sphere(0.05, 1)
        geom = build_object_geometry(verts, faces, name=f"obj{k}", sample_count=32, sample_seed=k)
        objects.append(
            ObjectTrack(np.tile(ROT6D_IDENTITY, (T, 1)), rng.normal(size=(T, 3)), geom)
        )
    return HoiSequence(
        human, objects, "pick up the box, then put it down é",
        [(0, 3, "pick up the box"), (3, T, "put it down")], seq_id="seq-0",
    )


def test_container_round_trip_bit_exact():
    tensors = sample_tensors()
    back = unpack_tensors(pack_tensors(tensors))
    assert list(back) == list(tensors)
    for name in tensors:
        assert back[name].dtype == tensors[name].dtype
        assert np.array_equal(back[name], tensors[name])


def test_container_file_round_trip(tmp_path):
    path = tmp_path / "t.bin"
    write_container(path, sample_tensors())
    twice = tmp_path / "t2.bin"
    write_container(twice, read_container(path))
    assert path.read_bytes() == twice.read_bytes()


def test_bad_magic():
    blob = bytearray(pack_tensors(sample_tensors()))
    blob[:4] = b"NOPE"
    with pytest.raises(BadMagicError):
        unpack_tensors(bytes(blob))


def test_version_mismatch():
    blob = bytearray(pack_tensors(sample_tensors()))
    blob[4] = 9
    with pytest.raises(VersionMismatchError):
        unpack_tensors(bytes(blob))


def test_truncated_blob():
    blob = pack_tensors(sample_tensors())
    with pytest.raises(TruncatedArchiveError):
        unpack_tensors(blob[: len(blob) - 3])
    with pytest.raises(TruncatedArchiveError):
        unpack_tensors(blob[:6])


def test_zero_tensor_count_with_payload_is_format_error():
    empty = pack_tensors({})
    assert unpack_tensors(empty) == {}
    with pytest.raises(FormatError):
        unpack_tensors(empty + b"extra")


def test_trailing_garbage_is_format_error():
    blob = pack_tensors(sample_tensors())
    with pytest.raises(FormatError):
        unpack_tensors(blob + b"\x00")


def test_error_codes_are_distinct():
    codes = {
        BadMagicError.code,
        VersionMismatchError.code,
        TruncatedArchiveError.code,
        FormatError.code,
        SchemaMismatchError.code,
    }
    assert len(codes) == 5


def test_archive_round_trip_identity(tmp_path):
    seq = sample_sequence()
    path = tmp_path / "seq0"
    write_archive(path, seq)
    back = read_archive(path)
    assert back.seq_id == seq.seq_id
    assert back.text == seq.text
    assert back.segments == seq.segments
    assert np.array_equal(back.human.positions, seq.human.positions)
    assert np.array_equal(back.human.rotations, seq.human.rotations)
    assert np.array_equal(back.human.root_translation, seq.human.root_translation)
    for a, b in zip(back.objects, seq.objects):
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)
        assert np.array_equal(a.geometry.surface_samples, b.geometry.surface_samples)
        assert np.array_equal(a.geometry.bps_code, b.geometry.bps_code)
        assert np.array_equal(a.geometry.mesh_vertices, b.geometry.mesh_vertices)
        assert np.array_equal(a.geometry.mesh_faces, b.geometry.mesh_faces)
        assert a.geometry.name == b.geometry.name
        assert abs(a.geometry.norm_scale - b.geometry.norm_scale) < 1e-7


def test_archive_rewrite_is_byte_identical(tmp_path):
    seq = sample_sequence()
    p1, p2 = tmp_path / "a", tmp_path / "b"
    write_archive(p1, seq)
    write_archive(p2, read_archive(p1))
    assert (p1 / "tensors.bin").read_bytes() == (p2 / "tensors.bin").read_bytes()
    assert (p1 / "meta.json").read_bytes() == (p2 / "meta.json").read_bytes()


def test_missing_required_tensor_is_schema_error(tmp_path):
    seq = sample_sequence()
    path = tmp_path / "seq"
    write_archive(path, seq)
    tensors = read_container(path / "tensors.bin")
    del tensors["human.root"]
    write_container(path / "tensors.bin", tensors)
    with pytest.raises(SchemaMismatchError):
        read_archive(path)


def test_unknown_dtype_code_is_format_error():
    blob = bytearray(pack_tensors({"x": np.zeros(2, np.float32)}))
    # dtype byte sits right after magic(4) + version(1) + count(4) + namelen(2) + name(1).
    blob[4 + 1 + 4 + 2 + 1] = 7
    with pytest.raises(FormatError):
        unpack_tensors(bytes(blob))
