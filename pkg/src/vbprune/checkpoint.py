"""Binary checkpoints.

Layout, all integers little-endian::

    b"VBPRCKPT"  u32 version  u32 meta_len  meta (UTF-8 JSON)
    u32 n_arrays, then per array:
        u16 name_len  name  u8 kind ('f' = f8, 'b' = bool as u8)  u64 count  data
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .sim import SnapshotEnsemble

MAGIC = b"VBPRCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _encode_array(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim != 1:
        raise CheckpointError(f"array {name!r} must be one-dimensional")
    if arr.dtype == np.bool_:
        kind, data = b"b", arr.astype("u1").tobytes()
    else:
        kind, data = b"f", arr.astype("<f8").tobytes()
    key = name.encode()
    return struct.pack("<H", len(key)) + key + kind + struct.pack("<Q", arr.size) + data


def write_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps({"format_version": VERSION, **(meta or {})}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(arrays))]
    parts += [_encode_array(name, arr) for name, arr in arrays.items()]
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(raw) < len(MAGIC) + 12:
        raise ChecksumError(f"{path}: file is truncated")
    (version,) = struct.unpack_from("<I", raw, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"{path}: format version {version}, expected {VERSION}")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError(f"{path}: checksum mismatch (truncated or corrupt)")

    pos = len(MAGIC) + 4
    (meta_len,) = struct.unpack_from("<I", body, pos)
    pos += 4
    meta = json.loads(body[pos : pos + meta_len])
    pos += meta_len
    (n_arrays,) = struct.unpack_from("<I", body, pos)
    pos += 4
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos : pos + name_len].decode()
        pos += name_len
        kind = body[pos : pos + 1]
        (count,) = struct.unpack_from("<Q", body, pos + 1)
        pos += 9
        if kind == b"f":
            arrays[name] = np.frombuffer(body, "<f8", count, pos).astype(np.float64)
            pos += 8 * count
        elif kind == b"b":
            arrays[name] = np.frombuffer(body, "u1", count, pos).astype(bool)
            pos += count
        else:
            raise CheckpointError(f"{path}: unknown array kind {kind!r}")
    if pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after the last array")
    return Checkpoint(arrays, meta)


def spec_to_dict(spec: nn.NetworkSpec) -> dict:
    return {"layer_sizes": list(spec.layer_sizes), "activations": list(spec.activations),
            "output_kind": spec.output_kind, "include_bias": list(spec.include_bias)}


def spec_from_dict(d: dict) -> nn.NetworkSpec:
    return nn.NetworkSpec(tuple(d["layer_sizes"]), tuple(d["activations"]), d["output_kind"],
                          tuple(d["include_bias"]))


def save_result(path, result, meta: dict | None = None) -> None:
    """Persist a ``TrainResult``: weights, velocity, dual scales, masks and snapshots."""
    arrays = {"w": result.w, "rho": result.rho}
    if result.v is not None:
        arrays["v"] = result.v
    if result.masks is not None:
        arrays["mask.alive"] = result.masks.alive
        arrays["mask.soft"] = result.masks.soft
        for i, h in enumerate(result.masks.hard):
            arrays[f"mask.hard{i}"] = h
    for i, member in enumerate(result.ensemble.members):
        arrays[f"snapshot{i}"] = member
    info = {"spec": spec_to_dict(result.config.spec), "seed": result.config.seed,
            "iteration": result.iterations, "optimizer": result.config.optimizer,
            "snapshot_tags": [list(t) for t in result.ensemble.tags], **(meta or {})}
    write_checkpoint(path, arrays, info)


def load_model(path) -> tuple[nn.NetworkSpec, np.ndarray, SnapshotEnsemble, Checkpoint]:
    """Spec, effective weights (masked) and snapshot ensemble stored in ``path``."""
    ck = read_checkpoint(path)
    spec = spec_from_dict(ck.meta["spec"])
    w = ck.arrays["w"]
    if "mask.alive" in ck.arrays:
        w = np.where(ck.arrays["mask.alive"], w, 0.0)
    ens = SnapshotEnsemble()
    for i, tag in enumerate(ck.meta.get("snapshot_tags", [])):
        ens.add(ck.arrays[f"snapshot{i}"], *tag)
    return spec, w, ens, ck
