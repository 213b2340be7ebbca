"""Binary weight container.

Layout (all integers little-endian)::

    magic      8 bytes   b"PLOCOWT\\0"
    version    uint32
    header_len uint32
    header     JSON: {"dims": {...}, "tensors": [[name, shape, offset], ...]}
    payload    float32 little-endian, tensors concatenated; offsets count floats
    checksum   8 bytes   blake2b-64 over everything before it
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, SpecificationError
from .network import PolicyDims, PolicyParams, param_shapes

MAGIC = b"PLOCOWT\0"
VERSION = 1
_CHECKSUM_BYTES = 8


def _digest(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=_CHECKSUM_BYTES).digest()


def encode_params(params: PolicyParams) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in params.items():
        as32 = arr.astype("<f4")
        if not np.array_equal(as32.astype(arr.dtype), arr):
            raise SpecificationError(f"{name} is not representable in float32; the container would not round-trip")
        manifest.append([name, list(arr.shape), offset])
        chunks.append(as32.tobytes())
        offset += arr.size
    header = json.dumps({"dims": params.dims.to_dict(), "tensors": manifest}, sort_keys=True).encode()
    body = MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(chunks)
    return body + _digest(body)


def decode_params(blob: bytes, dtype=np.float64) -> PolicyParams:
    fixed = len(MAGIC) + 8
    if len(blob) < fixed + _CHECKSUM_BYTES:
        raise FormatError("weight container is truncated")
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic; not a weight container")
    body, checksum = blob[:-_CHECKSUM_BYTES], blob[-_CHECKSUM_BYTES:]
    if _digest(body) != checksum:
        raise FormatError("checksum mismatch; container is corrupted or truncated")
    version, header_len = struct.unpack("<II", body[len(MAGIC) : fixed])
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    try:
        header = json.loads(body[fixed : fixed + header_len].decode())
        dims = PolicyDims.from_dict(header["dims"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed container header: {exc}") from exc
    raw = body[fixed + header_len :]
    if len(raw) % 4:
        raise FormatError("payload is not a whole number of float32 values")
    payload = np.frombuffer(raw, dtype="<f4")
    expected = param_shapes(dims)
    if [m[0] for m in manifest] != list(expected):
        raise FormatError("manifest tensor names do not match the declared dims")
    tensors = {}
    end = 0
    for name, shape, offset in manifest:
        shape = tuple(shape)
        if shape != expected[name]:
            raise FormatError(f"{name}: manifest shape {shape} does not match dims {expected[name]}")
        size = int(np.prod(shape))
        if offset != end or offset + size > payload.size:
            raise FormatError(f"{name}: offset {offset} inconsistent with payload")
        tensors[name] = payload[offset : offset + size].reshape(shape)
        end = offset + size
    if end != payload.size:
        raise FormatError("payload has trailing data")
    try:
        return PolicyParams(dims, tensors, dtype)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def save_params(params: PolicyParams, path) -> None:
    Path(path).write_bytes(encode_params(params))


def load_params(path, dtype=np.float64) -> PolicyParams:
    return decode_params(Path(path).read_bytes(), dtype)
