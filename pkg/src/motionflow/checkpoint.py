"""Binary checkpoint format for model and optimizer state.

Layout (all integers little-endian):

    bytes 0-3   magic "UMFW"
    bytes 4-7   format version (u32)
    bytes 8-11  entry count (u32)
    per entry:  name length (u16), name (utf-8),
                ndim (u8), shape (u32 per axis),
                data (row-major float32, little-endian)

Every array is stored as 32-bit floats, so save -> load is bit-exact for
float32 state.  Writes are atomic (temp file + rename).  Scalar metadata
(step counters and the like) rides along as zero-dimensional entries;
float32 holds integers exactly up to 2^24.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from .errors import DataFormatError
from .utils import atomic_write_bytes, sha256_hex

__all__ = [
    "MAGIC",
    "VERSION",
    "save_checkpoint",
    "load_checkpoint",
    "state_arrays",
    "load_state_arrays",
    "checkpoint_checksum",
]

MAGIC = b"UMFW"
VERSION = 1


def _encode(arrays: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, array in arrays.items():
        # ascontiguousarray would promote 0-d entries to shape (1,); scalar
        # metadata must round-trip with its dimensionality intact.
        data = np.asarray(array, dtype="<f4")
        if data.ndim:
            data = np.ascontiguousarray(data, dtype="<f4")
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise DataFormatError(f"entry name too long: {name[:40]}...")
        if data.ndim > 0xFF:
            raise DataFormatError(f"entry {name} has too many axes: {data.ndim}")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    return b"".join(chunks)


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray | torch.Tensor]) -> str:
    """Write named float32 arrays to path atomically; returns the sha256."""
    converted: dict[str, np.ndarray] = {}
    for name, value in arrays.items():
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        converted[name] = np.asarray(value, dtype=np.float32)
    payload = _encode(converted)
    atomic_write_bytes(path, payload)
    return sha256_hex(payload)


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into a name -> float32 array mapping."""
    payload = Path(path).read_bytes()
    if payload[:4] != MAGIC:
        raise DataFormatError(f"{path}: bad checkpoint magic {payload[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", payload, 4)
        if version != VERSION:
            raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
        offset = 12
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", payload, offset)
            offset += 4 * ndim
            n_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            end = offset + 4 * n_items
            if end > len(payload):
                raise DataFormatError(f"{path}: truncated data for entry {name}")
            arrays[name] = np.frombuffer(payload[offset:end], dtype="<f4").reshape(shape).copy()
            offset = end
        if offset != len(payload):
            raise DataFormatError(f"{path}: {len(payload) - offset} trailing bytes")
        return arrays
    except struct.error as exc:
        raise DataFormatError(f"{path}: truncated checkpoint ({exc})") from exc


def state_arrays(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    """Flatten a module's state dict to named float32 arrays."""
    out: dict[str, np.ndarray] = {}
    for name, tensor in module.state_dict().items():
        out[prefix + name] = tensor.detach().cpu().to(torch.float32).numpy()
    return out


def load_state_arrays(
    module: torch.nn.Module, arrays: dict[str, np.ndarray], prefix: str = ""
) -> None:
    """Load named arrays produced by :func:`state_arrays` back into a module."""
    state = module.state_dict()
    tensors: dict[str, torch.Tensor] = {}
    for name, reference in state.items():
        key = prefix + name
        if key not in arrays:
            raise DataFormatError(f"checkpoint misses parameter {key}")
        value = torch.from_numpy(np.asarray(arrays[key]))
        if tuple(value.shape) != tuple(reference.shape):
            raise DataFormatError(
                f"parameter {key}: shape {tuple(value.shape)} != {tuple(reference.shape)}"
            )
        tensors[name] = value.to(reference.dtype)
    module.load_state_dict(tensors)


def checkpoint_checksum(path: str | Path) -> str:
    return sha256_hex(Path(path).read_bytes())
