"""Artifact wiring: load trained checkpoints into a runnable bundle, and
read/write generated-sample files.

Sample files carry magic ``UMFS``, explicit dimensions, the normalization
stats the motions were denormalized with, per-scene labels, float32
little-endian frame data, and a JSON metadata blob (seeds, step counts,
checkpoint checksums, tool version) sufficient to reproduce the draw.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import checkpoint_checksum, load_checkpoint, load_state_arrays
from .config import RunConfig
from .errors import ConfigError, DataFormatError
from .motion_vae import MotionVae, build_motion_vae
from .sampling import ContextAdapter, build_context_adapter, generate_scene
from .schedule import PyramidSchedule
from .utils import atomic_write_bytes, make_generator
from .velocity_model import VelocityNet, build_velocity_net

__all__ = [
    "ModelBundle",
    "load_bundle",
    "save_samples",
    "load_samples",
    "generate_samples",
]

SAMPLES_MAGIC = b"UMFS"
SAMPLES_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


@dataclass
class ModelBundle:
    """Everything needed to generate scenes from a trained workdir."""

    vae: MotionVae
    prior: VelocityNet
    reaction: VelocityNet
    adapter: ContextAdapter
    schedule: PyramidSchedule
    cfg: RunConfig
    norm_mean: torch.Tensor
    norm_std: torch.Tensor
    checksums: dict[str, str]


def load_bundle(workdir: str | Path, cfg: RunConfig, reaction_stage: str = "reaction") -> ModelBundle:
    """Load vae/prior/reaction checkpoints from a training workdir.

    ``reaction_stage`` selects the reaction checkpoint file stem, so
    ablation variants trained under a different stem (e.g. a separate
    workdir copy) can be assembled the same way.
    """
    workdir = Path(workdir)
    paths = {
        "vae": workdir / "vae.umfw",
        "prior": workdir / "prior.umfw",
        "reaction": workdir / f"{reaction_stage}.umfw",
    }
    for stage, path in paths.items():
        if not path.exists():
            raise ConfigError(f"missing {stage} checkpoint at {path}; train that stage first")

    vae = build_motion_vae(cfg.vae, cfg.seed)
    vae_arrays = load_checkpoint(paths["vae"])
    load_state_arrays(vae, vae_arrays, prefix="model.")
    vae.eval()

    prior = build_velocity_net(cfg.prior_model, cfg.seed)
    load_state_arrays(prior, load_checkpoint(paths["prior"]), prefix="model.")
    prior.eval()

    reaction = build_velocity_net(cfg.reaction_model, cfg.seed)
    adapter = build_context_adapter(cfg.adapter, cfg.seed)
    reaction_arrays = load_checkpoint(paths["reaction"])
    load_state_arrays(reaction, reaction_arrays, prefix="model.")
    load_state_arrays(adapter, reaction_arrays, prefix="adapter.")
    reaction.eval()
    adapter.eval()

    if "norm.mean" not in vae_arrays or "norm.std" not in vae_arrays:
        raise DataFormatError(f"{paths['vae']} lacks normalization stats")
    return ModelBundle(
        vae=vae,
        prior=prior,
        reaction=reaction,
        adapter=adapter,
        schedule=cfg.schedule.build(),
        cfg=cfg,
        norm_mean=torch.from_numpy(vae_arrays["norm.mean"].copy()),
        norm_std=torch.from_numpy(vae_arrays["norm.std"].copy()),
        checksums={stage: checkpoint_checksum(path) for stage, path in paths.items()},
    )


def save_samples(
    path: str | Path,
    data: np.ndarray,
    labels: np.ndarray,
    mean: np.ndarray,
    std: np.ndarray,
    metadata: dict,
) -> None:
    """Write generated scenes (S, A, F, D) with labels, stats, and metadata."""
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 4:
        raise ConfigError(f"samples must be (scenes, agents, frames, dim), got {data.shape}")
    s, a, f, d = data.shape
    labels = np.ascontiguousarray(labels, dtype="<u2")
    if labels.shape != (s,):
        raise ConfigError(f"labels shape {labels.shape} != ({s},)")
    mean = np.ascontiguousarray(mean, dtype="<f4")
    std = np.ascontiguousarray(std, dtype="<f4")
    if mean.shape != (d,) or std.shape != (d,):
        raise ConfigError(f"stats must be ({d},), got {mean.shape} and {std.shape}")
    meta_blob = json.dumps(metadata, sort_keys=True).encode("utf-8")
    payload = b"".join(
        [
            _HEADER.pack(SAMPLES_MAGIC, SAMPLES_VERSION, s, a, f, d),
            mean.tobytes(),
            std.tobytes(),
            labels.tobytes(),
            data.tobytes(),
            struct.pack("<I", len(meta_blob)),
            meta_blob,
        ]
    )
    atomic_write_bytes(path, payload)


def load_samples(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, dict]:
    """Read a samples file; returns (data, labels, mean, std, metadata)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, s, a, f, d = _HEADER.unpack_from(raw, 0)
    if magic != SAMPLES_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {SAMPLES_MAGIC!r}")
    if version != SAMPLES_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    need = off + 4 * d * 2 + 2 * s + 4 * s * a * f * d + 4
    if len(raw) < need:
        raise DataFormatError(f"{path}: truncated payload ({len(raw)} < {need} bytes)")
    mean = np.frombuffer(raw, dtype="<f4", count=d, offset=off).copy()
    off += 4 * d
    std = np.frombuffer(raw, dtype="<f4", count=d, offset=off).copy()
    off += 4 * d
    labels = np.frombuffer(raw, dtype="<u2", count=s, offset=off).copy()
    off += 2 * s
    data = np.frombuffer(raw, dtype="<f4", count=s * a * f * d, offset=off).copy()
    off += 4 * s * a * f * d
    (meta_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    if len(raw) != off + meta_len:
        raise DataFormatError(
            f"{path}: size mismatch (expected {off + meta_len} bytes, found {len(raw)})"
        )
    try:
        metadata = json.loads(raw[off:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: corrupt metadata block: {exc}") from exc
    return data.reshape(s, a, f, d), labels, mean, std, metadata


def generate_samples(
    bundle: ModelBundle,
    n_scenes: int,
    n_agents: int,
    seed: int,
    labels: np.ndarray | None = None,
    chunk_size: int = 256,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Generate scenes in chunks; returns (data, labels, metadata).

    Labels default to cycling through the classes.  The metadata block
    records the seed, sizes, per-scene sampler call counts, checkpoint
    checksums, and tool version.
    """
    if n_scenes < 1:
        raise ConfigError(f"need at least one scene, got {n_scenes}")
    n_classes = bundle.cfg.data.n_classes
    if labels is None:
        labels = (np.arange(n_scenes) % n_classes).astype(np.uint16)
    labels = np.asarray(labels, dtype=np.uint16)
    if labels.shape != (n_scenes,):
        raise ConfigError(f"labels shape {labels.shape} != ({n_scenes},)")
    if labels.max(initial=0) >= n_classes:
        raise ConfigError(f"labels must lie in [0, {n_classes})")
    chunks = []
    audit = {"prior_calls": 0, "reaction_calls": 0}
    for start in range(0, n_scenes, chunk_size):
        cond = torch.from_numpy(labels[start : start + chunk_size].astype(np.int64))
        result = generate_scene(
            bundle.vae,
            bundle.prior,
            bundle.reaction,
            bundle.adapter,
            bundle.schedule,
            bundle.cfg.sampling,
            bundle.norm_mean,
            bundle.norm_std,
            n_agents,
            cond,
            make_generator("generate", seed, start),
        )
        audit["prior_calls"] += result.audit["prior_calls"]
        audit["reaction_calls"] += result.audit["reaction_calls"]
        chunks.append(result.motions.numpy())
    data = np.concatenate(chunks, axis=0).astype(np.float32)
    metadata = {
        "tool_version": __version__,
        "seed": seed,
        "n_scenes": n_scenes,
        "n_agents": n_agents,
        "reaction_steps": bundle.cfg.sampling.reaction_steps,
        "start_noise_std": bundle.cfg.sampling.start_noise_std,
        "prior_calls_per_scene": 1,
        "reaction_calls_per_scene": n_agents - 1,
        "sampler_invocations": audit,
        "checkpoints": bundle.checksums,
    }
    return data, labels, metadata
