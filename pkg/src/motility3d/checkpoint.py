"""Bit-exact model checkpoints.

Layout: magic ``M3DC`` | u16 format version (little endian) | u32 metadata
length | UTF-8 JSON metadata | raw little-endian float32 tensor payload.
The metadata carries the architecture id, training metadata, and a tensor
manifest of (name, shape, byte offset into the payload) covering every
learnable parameter and batch-norm running buffer in canonical order.
Writes are atomic (temp file + rename); load(save(m)) is bit-exact.
"""

import json
import os
import struct
import tempfile

import numpy as np

from .errors import CheckpointError
from .models import build_model

MAGIC = b"M3DC"
VERSION = 1

_HEADER = struct.Struct("<4sHI")


def _entries(model):
    for name, tensor in model.named_parameters():
        yield name, tensor.data
    for name, buf in model.named_buffers():
        yield name, buf


def save_checkpoint(model, meta, path):
    """Serialize ``model`` with the given metadata dict; returns ``path``."""
    if model.dtype != np.float32:
        raise CheckpointError(f"only float32 models are serialized, got {model.dtype}")
    entries = list(_entries(model))
    manifest = []
    offset = 0
    for name, arr in entries:
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 4
    meta = dict(meta)
    meta["arch"] = model.spec.arch_id
    meta["tensors"] = manifest
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    out_dir = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, len(meta_bytes)))
            fh.write(meta_bytes)
            for _, arr in entries:
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _read_header(path):
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    with fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise CheckpointError(f"{path}: file too short for a checkpoint header")
        magic, version, meta_len = _HEADER.unpack(head)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise CheckpointError(
                f"{path}: unsupported format version {version}, expected {VERSION}"
            )
        meta_bytes = fh.read(meta_len)
    if len(meta_bytes) < meta_len:
        raise CheckpointError(f"{path}: truncated metadata block")
    try:
        meta = json.loads(meta_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed metadata: {exc}") from None
    if "arch" not in meta or "tensors" not in meta:
        raise CheckpointError(f"{path}: metadata lacks required keys 'arch'/'tensors'")
    return meta, _HEADER.size + meta_len


def read_meta(path):
    """Parse and validate the header + metadata block only."""
    return _read_header(path)[0]


def load_checkpoint(path):
    """Rebuild the model from a checkpoint; returns (model, meta)."""
    meta, payload_start = _read_header(path)
    manifest = meta["tensors"]

    expected = 0
    for entry in manifest:
        size = 4 * int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 4
        if entry["offset"] != expected:
            raise CheckpointError(
                f"{path}: tensor {entry['name']!r} at offset {entry['offset']}, "
                f"expected contiguous {expected}"
            )
        expected += size

    actual = os.path.getsize(path)
    if actual != payload_start + expected:
        raise CheckpointError(
            f"{path}: payload length mismatch (file {actual} bytes, "
            f"expected {payload_start + expected})"
        )

    seeds = meta.get("seeds") or {}
    model = build_model(meta["arch"], seed=int(seeds.get("init", 0)))
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())

    stored = [e["name"] for e in manifest]
    expected_names = list(params) + list(buffers)
    if stored != expected_names:
        missing = sorted(set(expected_names) - set(stored))
        extra = sorted(set(stored) - set(expected_names))
        raise CheckpointError(
            f"{path}: tensor manifest mismatch (missing {missing}, unexpected {extra})"
        )

    with open(path, "rb") as fh:
        fh.seek(payload_start)
        payload = fh.read(expected)
    if len(payload) != expected:
        raise CheckpointError(f"{path}: truncated payload")

    for entry in manifest:
        name = entry["name"]
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=size, offset=start).reshape(shape)
        dest = params[name].data if name in params else buffers[name]
        if dest.shape != shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {shape}, model expects {dest.shape}"
            )
        dest[...] = arr
    return model, meta
