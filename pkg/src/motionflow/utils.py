"""Small shared helpers: stable seed derivation and atomic file writes."""

from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path

import torch

MAX_SEED = 2**63 - 1


def stable_seed(*parts: object) -> int:
    """Derive a deterministic 63-bit seed from a tuple of hashable parts.

    The derivation is independent of Python's randomized string hashing,
    so the same parts give the same seed across processes and platforms.
    Used to hand out independent RNG streams (per scene, per training
    step) without serializing generator state.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & MAX_SEED


def make_generator(*parts: object) -> torch.Generator:
    """CPU torch generator seeded from :func:`stable_seed` of the parts."""
    g = torch.Generator()
    g.manual_seed(stable_seed(*parts))
    return g


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write payload to path via a temp file + rename in the same directory.

    Readers never observe a partially written artifact; on failure the
    original file (if any) is left untouched.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=target.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_hex(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()
