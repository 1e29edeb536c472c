"""Synthetic interacting-agents motion corpus with a closed-form reaction rule.

Each scene holds n_agents motion sequences of n_frames poses.  A pose is
a 2-d skeleton of n_joints joints (root plus four limb joints at fixed
offsets, rotated by the root's heading), flattened to 2 * n_joints
coordinates.  Agent 1 follows one of four parametric root curves
(circle, zigzag, figure eight, straight walk) with per-scene random
phase/amplitude; agent i+1 reacts to agent i through the rule

    R(p)(f) = reflect_y(p(max(f - delay, 0))) + offset

with delay 8 frames and offset (1.5, 0): the reactor mirrors the
previous agent across the x-axis, shifted right, holding its initial
pose for the first ``delay`` frames.  Generated reactors additionally
carry per-frame rigid translation noise, N(0, noise_std^2) per
translation coordinate, applied to all joints of a frame; rigid noise
keeps bone lengths exactly constant while giving the reactor an RMS
deviation of noise_std * sqrt(2) per coordinate pair from the noiseless
rule.  :func:`reaction_oracle` applies R without noise and is the ground
truth that evaluation compares generated reactions against.

Datasets are written as a single binary file:

    magic "UMFD" | version u32 | n_scenes u32 | n_agents u32 |
    n_frames u32 | dims u32 | n_classes u32 | reaction_delay u32 |
    offset_x f64 | offset_y f64 | noise_std f64 |
    mean f32[dims] | std f32[dims] |
    labels u16[n_scenes] | data f32[n_scenes, n_agents, n_frames, dims]

(little-endian, row-major).  The stored mean/std are the per-dimension
dataset statistics used for normalization; the rule parameters travel
with the file so downstream oracles never fall back to defaults.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .utils import atomic_write_bytes, stable_seed

__all__ = [
    "ToyDataConfig",
    "Scene",
    "Dataset",
    "CLASS_NAMES",
    "SKELETON_EDGES",
    "synthesize_dataset",
    "reaction_oracle",
    "save_dataset",
    "load_dataset",
    "split_indices",
    "normalize",
    "denormalize",
]

MAGIC = b"UMFD"
VERSION = 2

CLASS_NAMES = ("circle", "zigzag", "figure_eight", "straight")

# Limb joint offsets in the root frame; rotated by the heading each frame.
LIMB_OFFSETS = np.array(
    [[0.20, 0.12], [-0.20, 0.12], [0.12, -0.18], [-0.12, -0.18]], dtype=np.float64
)

# Bones connect the root (joint 0) to each limb joint.
SKELETON_EDGES = ((0, 1), (0, 2), (0, 3), (0, 4))

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class ToyDataConfig:
    n_scenes: int = 2048
    n_agents: int = 2
    n_frames: int = 64
    n_classes: int = 4
    reaction_delay: int = 8
    reaction_offset: tuple[float, float] = (1.5, 0.0)
    noise_std: float = 0.01

    def __post_init__(self):
        if self.n_scenes < 0 or self.n_agents < 1 or self.n_frames < 2:
            raise ConfigError(f"invalid dataset shape: {self}")
        if not 1 <= self.n_classes <= len(CLASS_NAMES):
            raise ConfigError(f"n_classes must be in 1..{len(CLASS_NAMES)}")
        if not 0 <= self.reaction_delay < self.n_frames:
            raise ConfigError(
                f"reaction delay {self.reaction_delay} outside 0..{self.n_frames - 1}"
            )
        if self.noise_std < 0.0:
            raise ConfigError(f"noise std must be non-negative, got {self.noise_std}")

    @property
    def n_joints(self) -> int:
        return 1 + len(LIMB_OFFSETS)

    @property
    def frame_dim(self) -> int:
        return 2 * self.n_joints


@dataclass
class Scene:
    agents: np.ndarray  # (n_agents, n_frames, frame_dim) float32
    label: int


@dataclass
class Dataset:
    scenes: list[Scene]
    mean: np.ndarray  # (frame_dim,) float32
    std: np.ndarray  # (frame_dim,) float32
    config: ToyDataConfig = field(default_factory=ToyDataConfig)

    def as_array(self) -> np.ndarray:
        """All scenes stacked to (n_scenes, n_agents, n_frames, frame_dim)."""
        if not self.scenes:
            cfg = self.config
            return np.zeros((0, cfg.n_agents, cfg.n_frames, cfg.frame_dim), dtype=np.float32)
        return np.stack([scene.agents for scene in self.scenes])

    def labels(self) -> np.ndarray:
        return np.array([scene.label for scene in self.scenes], dtype=np.uint16)


def _triangle(s: np.ndarray) -> np.ndarray:
    """Unit triangular wave: period 1, range [-1, 1], peak at integer s."""
    frac = s - np.floor(s)
    return 4.0 * np.abs(frac - 0.5) - 1.0


def _root_curve(label: int, tau: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Root trajectory of one class over normalized time tau in [0, 1]."""
    u = rng.uniform(size=4)
    if label == 0:  # circle
        radius = 0.9 + 0.3 * u[0]
        phase = 2.0 * np.pi * u[1]
        angle = phase + 2.0 * np.pi * tau
        return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
    if label == 1:  # zigzag
        amp = 0.4 + 0.2 * u[0]
        x = -1.5 + 3.0 * tau
        y = amp * _triangle(3.0 * tau + u[1])
        return np.stack([x, y], axis=-1)
    if label == 2:  # figure eight
        scale = 0.9 + 0.3 * u[0]
        angle = 2.0 * np.pi * (tau + u[1])
        return np.stack(
            [scale * np.sin(angle), 0.5 * scale * np.sin(2.0 * angle)], axis=-1
        )
    if label == 3:  # straight walk
        speed = 2.0 + 1.0 * u[0]
        direction = 2.0 * np.pi * u[1]
        step = np.stack([np.cos(direction), np.sin(direction)], axis=-1)
        return (tau[:, None] - 0.5) * speed * step
    raise ConfigError(f"unknown motion class {label}")


def _attach_limbs(root: np.ndarray) -> np.ndarray:
    """Build full poses from a root trajectory: limbs rotate with heading.

    Returns (n_frames, 2 * n_joints) float64 poses whose bone lengths are
    constant by construction (rotations preserve the offset norms).
    """
    velocity = np.diff(root, axis=0)
    velocity = np.concatenate([velocity, velocity[-1:]], axis=0)
    heading = np.zeros(len(root))
    angle = 0.0
    for f, v in enumerate(velocity):
        if np.hypot(v[0], v[1]) > 1e-9:
            angle = np.arctan2(v[1], v[0])
        heading[f] = angle
    cos, sin = np.cos(heading), np.sin(heading)
    rot = np.stack([np.stack([cos, -sin], -1), np.stack([sin, cos], -1)], -2)
    limbs = root[:, None, :] + np.einsum("fij,lj->fli", rot, LIMB_OFFSETS)
    joints = np.concatenate([root[:, None, :], limbs], axis=1)
    return joints.reshape(len(root), -1)


def _apply_rule(agent: np.ndarray, delay: int, offset: tuple[float, float]) -> np.ndarray:
    """Noiseless reaction rule on one (n_frames, frame_dim) sequence."""
    frames, dim = agent.shape
    indices = np.maximum(np.arange(frames) - delay, 0)
    shifted = agent[indices].copy()
    shifted[:, 1::2] *= -1.0  # mirror across the x-axis (negate y of all joints)
    shifted[:, 0::2] += offset[0]
    shifted[:, 1::2] += offset[1]
    return shifted


def reaction_oracle(agent: np.ndarray, config: ToyDataConfig) -> np.ndarray:
    """Ground-truth reaction to a (n_frames, frame_dim) sequence.

    Applying the oracle twice cancels the mirroring while composing the
    delays and offsets.
    """
    agent = np.asarray(agent)
    if agent.ndim != 2 or agent.shape[1] % 2 != 0:
        raise ConfigError(f"expected (n_frames, 2 * n_joints) sequence, got {agent.shape}")
    return _apply_rule(agent, config.reaction_delay, config.reaction_offset)


def synthesize_dataset(config: ToyDataConfig, seed: int) -> Dataset:
    """Deterministically generate a dataset: same (config, seed) -> same bytes.

    Scene i uses label i mod n_classes and an RNG stream derived from
    (seed, i), so scenes are independent of each other and of n_scenes.
    """
    scenes: list[Scene] = []
    tau = np.arange(config.n_frames, dtype=np.float64) / (config.n_frames - 1)
    for index in range(config.n_scenes):
        rng = np.random.default_rng(stable_seed(seed, "scene", index))
        label = index % config.n_classes
        agents = [_attach_limbs(_root_curve(label, tau, rng))]
        for _ in range(config.n_agents - 1):
            reaction = _apply_rule(agents[-1], config.reaction_delay, config.reaction_offset)
            if config.noise_std > 0.0:
                shift = rng.normal(0.0, config.noise_std, size=(config.n_frames, 2))
                reaction = reaction + np.tile(shift, config.n_joints)
            agents.append(reaction)
        scenes.append(Scene(agents=np.stack(agents).astype(np.float32), label=label))
    if scenes:
        stacked = np.stack([s.agents for s in scenes]).astype(np.float64)
        mean = stacked.mean(axis=(0, 1, 2))
        std = np.maximum(stacked.std(axis=(0, 1, 2)), STD_FLOOR)
    else:
        mean = np.zeros(config.frame_dim)
        std = np.ones(config.frame_dim)
    return Dataset(
        scenes=scenes,
        mean=mean.astype(np.float32),
        std=std.astype(np.float32),
        config=config,
    )


def normalize(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (x - mean) / std


def denormalize(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return x * std + mean


def split_indices(
    n_scenes: int, train_fraction: float, seed: int
) -> tuple[list[int], list[int]]:
    """Disjoint, exhaustive train/validation split by seed-stable hashing.

    A scene's side depends only on (seed, index), so growing the dataset
    never reshuffles existing scenes.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction must be in (0, 1), got {train_fraction}")
    threshold = int(train_fraction * 2**32)
    train, val = [], []
    for index in range(n_scenes):
        bucket = stable_seed(seed, "split", index) % 2**32
        (train if bucket < threshold else val).append(index)
    return train, val


def save_dataset(dataset: Dataset, path: str | Path) -> str:
    """Serialize to the binary layout above, atomically; returns the path."""
    cfg = dataset.config
    data = dataset.as_array()
    labels = dataset.labels()
    header = struct.pack(
        "<4sIIIIIIIddd",
        MAGIC,
        VERSION,
        len(dataset.scenes),
        cfg.n_agents,
        cfg.n_frames,
        cfg.frame_dim,
        cfg.n_classes,
        cfg.reaction_delay,
        cfg.reaction_offset[0],
        cfg.reaction_offset[1],
        cfg.noise_std,
    )
    payload = b"".join(
        [
            header,
            np.ascontiguousarray(dataset.mean, dtype="<f4").tobytes(),
            np.ascontiguousarray(dataset.std, dtype="<f4").tobytes(),
            np.ascontiguousarray(labels, dtype="<u2").tobytes(),
            np.ascontiguousarray(data, dtype="<f4").tobytes(),
        ]
    )
    atomic_write_bytes(path, payload)
    return str(path)


def load_dataset(path: str | Path, config: ToyDataConfig | None = None) -> Dataset:
    """Read a dataset file written by :func:`save_dataset`.

    Every config field, including the reaction-rule parameters the
    oracles need, is restored from the file header.  The optional config
    is a cross-check only: when given, its fields must agree with the
    stored ones.
    """
    payload = Path(path).read_bytes()
    if payload[:4] != MAGIC:
        raise DataFormatError(f"{path}: bad dataset magic {payload[:4]!r}")
    try:
        (
            version,
            n_scenes,
            n_agents,
            n_frames,
            dims,
            n_classes,
            delay,
            offset_x,
            offset_y,
            noise_std,
        ) = struct.unpack_from("<IIIIIIIddd", payload, 4)
    except struct.error as exc:
        raise DataFormatError(f"{path}: truncated header") from exc
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported dataset version {version}")
    offset = 56
    expected = offset + 4 * dims * 2 + 2 * n_scenes + 4 * n_scenes * n_agents * n_frames * dims
    if len(payload) != expected:
        raise DataFormatError(
            f"{path}: size {len(payload)} does not match header (expected {expected})"
        )
    mean = np.frombuffer(payload, dtype="<f4", count=dims, offset=offset).copy()
    offset += 4 * dims
    std = np.frombuffer(payload, dtype="<f4", count=dims, offset=offset).copy()
    offset += 4 * dims
    labels = np.frombuffer(payload, dtype="<u2", count=n_scenes, offset=offset).copy()
    offset += 2 * n_scenes
    data = (
        np.frombuffer(payload, dtype="<f4", offset=offset)
        .reshape(n_scenes, n_agents, n_frames, dims)
        .copy()
    )
    try:
        cfg = ToyDataConfig(
            n_scenes=n_scenes,
            n_agents=n_agents,
            n_frames=n_frames,
            n_classes=n_classes,
            reaction_delay=delay,
            reaction_offset=(offset_x, offset_y),
            noise_std=noise_std,
        )
    except ConfigError as exc:
        raise DataFormatError(f"{path}: stored config is invalid: {exc}") from exc
    if dims != cfg.frame_dim:
        raise DataFormatError(f"{path}: frame width {dims} does not match the skeleton")
    if config is not None and replace(config, n_scenes=n_scenes) != cfg:
        raise DataFormatError(
            f"{path}: stored config {cfg} does not match the expected {config}"
        )
    scenes = [Scene(agents=data[i], label=int(labels[i])) for i in range(n_scenes)]
    return Dataset(scenes=scenes, mean=mean, std=std, config=cfg)
