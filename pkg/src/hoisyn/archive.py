"""On-disk archive: a binary tensor container plus a JSON sidecar.

Container layout (little-endian):
    magic ``HIMO`` | version u8 (0x01) | tensor count u32 | entries...
    entry: name length u16 | name UTF-8 | dtype u8 | ndim u8 | dims u32 * ndim | raw data

dtype codes: 0 = float32, 1 = int64. Data is row-major.

A sequence archive is one directory holding ``meta.json`` and ``tensors.bin``.
Every error carries a distinct ``code`` so callers can react precisely.
"""

import json
import os
import struct

import numpy as np

from .motion import HoiSequence, HumanMotion, ObjectGeometry, ObjectTrack

MAGIC = b"HIMO"
VERSION = 1
SCHEMA_VERSION = 1

_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.int64): 1}
_CODE_TO_DTYPE = {0: np.dtype(np.float32), 1: np.dtype(np.int64)}


class ArchiveError(Exception):
    code = "archive"


class BadMagicError(ArchiveError):
    code = "bad_magic"


class VersionMismatchError(ArchiveError):
    code = "version_mismatch"


class TruncatedArchiveError(ArchiveError):
    code = "truncated"


class FormatError(ArchiveError):
    code = "format"


class SchemaMismatchError(ArchiveError):
    code = "schema_mismatch"


def pack_tensors(tensors):
    """Serialize an ordered {name: array} mapping to container bytes."""
    chunks = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)  # tobytes(order="C") below handles contiguity
        if arr.dtype not in _DTYPE_TO_CODE:
            if np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(np.float32)
            elif np.issubdtype(arr.dtype, np.integer):
                arr = arr.astype(np.int64)
            else:
                raise FormatError(f"unsupported dtype {arr.dtype} for tensor '{name}'")
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name!r}")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<BB", _DTYPE_TO_CODE[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def unpack_tensors(blob):
    """Parse container bytes back into an ordered {name: array} mapping."""
    view = memoryview(blob)
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(view):
            raise TruncatedArchiveError(f"truncated while reading {what}")
        out = view[off : off + n]
        off += n
        return out

    if bytes(take(4, "magic")) != MAGIC:
        raise BadMagicError("bad magic bytes")
    (version,) = struct.unpack("<B", take(1, "version"))
    if version != VERSION:
        raise VersionMismatchError(f"container version {version}, expected {VERSION}")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"tensor {i} name length"))
        name = bytes(take(name_len, f"tensor {i} name")).decode("utf-8")
        dcode, ndim = struct.unpack("<BB", take(2, f"tensor '{name}' header"))
        if dcode not in _CODE_TO_DTYPE:
            raise FormatError(f"tensor '{name}': unknown dtype code {dcode}")
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, f"tensor '{name}' dims"))
        dtype = _CODE_TO_DTYPE[dcode]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        data = take(nbytes, f"tensor '{name}' data")
        arr = np.frombuffer(data, dtype=dtype)
        tensors[name] = arr.reshape(dims).copy()
    if off != len(view):
        raise FormatError(f"{len(view) - off} trailing bytes after {count} tensors")
    return tensors


def write_container(path, tensors):
    with open(path, "wb") as fh:
        fh.write(pack_tensors(tensors))


def read_container(path):
    with open(path, "rb") as fh:
        return unpack_tensors(fh.read())


REQUIRED_HUMAN = ("human.positions", "human.rotations", "human.root")
REQUIRED_OBJECT = ("rotation", "translation", "bps", "samples")


def write_archive(path, seq):
    """Write one HoiSequence as a directory archive (meta.json + tensors.bin)."""
    os.makedirs(path, exist_ok=True)
    meta = {
        "id": seq.seq_id,
        "fps": seq.human.fps,
        "text": seq.text,
        "segments": [{"start": s, "end": e, "text": t} for s, e, t in seq.segments],
        "objects": [o.geometry.name for o in seq.objects],
        "schema_version": SCHEMA_VERSION,
    }
    tensors = {
        "human.positions": seq.human.positions,
        "human.rotations": seq.human.rotations,
        "human.root": seq.human.root_translation,
    }
    for k, obj in enumerate(seq.objects):
        g = obj.geometry
        tensors[f"obj{k}.rotation"] = obj.rotation
        tensors[f"obj{k}.translation"] = obj.translation
        tensors[f"obj{k}.bps"] = g.bps_code
        tensors[f"obj{k}.samples"] = g.surface_samples
        tensors[f"obj{k}.mesh_verts"] = g.mesh_vertices
        tensors[f"obj{k}.mesh_faces"] = g.mesh_faces
        tensors[f"obj{k}.norm"] = np.concatenate(
            [g.norm_center.astype(np.float32), [np.float32(g.norm_scale)]]
        )
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, ensure_ascii=False, sort_keys=True, indent=1)
        fh.write("\n")
    write_container(os.path.join(path, "tensors.bin"), tensors)


def read_archive(path):
    """Read a directory archive back into a HoiSequence."""
    meta_path = os.path.join(path, "meta.json")
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise SchemaMismatchError(f"missing meta.json under {path}")
    except json.JSONDecodeError as exc:
        raise FormatError(f"meta.json is not valid JSON: {exc}")
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatchError(
            f"archive schema_version {meta.get('schema_version')}, expected {SCHEMA_VERSION}"
        )
    tensors = read_container(os.path.join(path, "tensors.bin"))

    for name in REQUIRED_HUMAN:
        if name not in tensors:
            raise SchemaMismatchError(f"missing required tensor '{name}'")
    if tensors["human.positions"].dtype != np.float32:
        raise SchemaMismatchError("human.positions must be float32")
    human = HumanMotion(
        tensors["human.positions"],
        tensors["human.rotations"],
        tensors["human.root"],
        fps=float(meta["fps"]),
    )
    objects = []
    for k, name in enumerate(meta["objects"]):
        for part in REQUIRED_OBJECT:
            if f"obj{k}.{part}" not in tensors:
                raise SchemaMismatchError(f"missing required tensor 'obj{k}.{part}'")
        norm = tensors.get(f"obj{k}.norm", np.array([0, 0, 0, 1], dtype=np.float32))
        geom = ObjectGeometry(
            mesh_vertices=tensors.get(f"obj{k}.mesh_verts", np.zeros((0, 3), np.float32)),
            mesh_faces=tensors.get(f"obj{k}.mesh_faces", np.zeros((0, 3), np.int64)),
            surface_samples=tensors[f"obj{k}.samples"],
            bps_code=tensors[f"obj{k}.bps"],
            norm_center=norm[:3],
            norm_scale=float(norm[3]),
            name=name,
        )
        objects.append(
            ObjectTrack(tensors[f"obj{k}.rotation"], tensors[f"obj{k}.translation"], geom)
        )
    segments = [(s["start"], s["end"], s["text"]) for s in meta["segments"]]
    return HoiSequence(
        human=human,
        objects=objects,
        text=meta["text"],
        segments=segments,
        seq_id=meta["id"],
    )
