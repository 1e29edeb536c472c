"""Multi-token variational autoencoder for fixed-length motion sequences.

A sequence of n_frames pose vectors is cut into token_count equal
temporal patches, embedded at an internal width (internal_dim), and
processed by pre-norm attention blocks.  Gaussian heads produce mean and
log-variance at internal width; a latent adapter (one linear map per
direction) decouples that internal width from the compact latent width
token_dim, giving latents of shape (token_count, token_dim).  The decoder
mirrors the encoder.

The training loss combines frame reconstruction, a geometric term, and a
KL penalty:

    total = geometric + recon + lambda_kl * kl

The geometric term is a stand-in for the usual kinematic losses, chosen
to be exactly computable on the toy skeleton: mean squared error of
first-difference frame velocities plus mean squared error of bone
lengths (computed in physical coordinates, i.e. after undoing the
dataset normalization).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError
from .layers import TransformerBlock, init_transformer_params, sinusoidal_features
from .utils import make_generator

__all__ = ["VaeDims", "MotionVae", "build_motion_vae", "vae_loss_terms", "LOGVAR_RANGE"]

LOGVAR_RANGE = 10.0  # log-variance clamped to [-LOGVAR_RANGE, LOGVAR_RANGE]


@dataclass(frozen=True)
class VaeDims:
    """Shape of the autoencoder.

    token_count x token_dim is the latent grid; internal_dim the width the
    attention blocks run at.  With use_adapter False the adapter linears
    are dropped and token_dim must equal internal_dim.
    """

    n_frames: int = 64
    frame_dim: int = 10
    token_count: int = 4
    token_dim: int = 16
    internal_dim: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    use_adapter: bool = True

    def __post_init__(self):
        if min(self.n_frames, self.frame_dim, self.token_count, self.token_dim,
               self.internal_dim, self.n_heads, self.n_blocks) < 1:
            raise ConfigError(f"all autoencoder dimensions must be positive: {self}")
        if self.n_frames % self.token_count != 0:
            raise ConfigError(
                f"frame count {self.n_frames} not divisible by token count {self.token_count}"
            )
        if self.internal_dim % self.n_heads != 0:
            raise ConfigError(
                f"internal width {self.internal_dim} not divisible by {self.n_heads} heads"
            )
        if self.internal_dim % 2 != 0:
            raise ConfigError("internal width must be even for sinusoidal features")
        if not self.use_adapter and self.token_dim != self.internal_dim:
            raise ConfigError(
                "with the adapter disabled the latent width must equal the internal width"
            )

    @property
    def patch_dim(self) -> int:
        return (self.n_frames // self.token_count) * self.frame_dim


class MotionVae(nn.Module):
    """Encoder/decoder pair over (batch, n_frames, frame_dim) sequences."""

    def __init__(self, dims: VaeDims):
        super().__init__()
        self.dims = dims
        wide = dims.internal_dim
        self.patch_embed = nn.Linear(dims.patch_dim, wide)
        self.enc_blocks = nn.ModuleList(
            TransformerBlock(wide, dims.n_heads) for _ in range(dims.n_blocks)
        )
        self.enc_norm = nn.LayerNorm(wide)
        self.head_mu = nn.Linear(wide, wide)
        self.head_logvar = nn.Linear(wide, wide)
        if dims.use_adapter:
            self.adapter_down = nn.Linear(wide, dims.token_dim)
            self.adapter_up = nn.Linear(dims.token_dim, wide)
        else:
            self.adapter_down = nn.Identity()
            self.adapter_up = nn.Identity()
        self.dec_blocks = nn.ModuleList(
            TransformerBlock(wide, dims.n_heads) for _ in range(dims.n_blocks)
        )
        self.dec_norm = nn.LayerNorm(wide)
        self.unpatch = nn.Linear(wide, dims.patch_dim)

    def _check_frames(self, x: torch.Tensor) -> None:
        if x.ndim != 3 or x.shape[1:] != (self.dims.n_frames, self.dims.frame_dim):
            raise ConfigError(
                f"expected (batch, {self.dims.n_frames}, {self.dims.frame_dim}) input, "
                f"got {tuple(x.shape)}"
            )

    def _positions(self, dtype: torch.dtype) -> torch.Tensor:
        pos = torch.arange(self.dims.token_count, dtype=dtype) / self.dims.token_count
        return sinusoidal_features(pos, self.dims.internal_dim)

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Posterior parameters of a batch of sequences.

        Returns:
            (mu, logvar), each (batch, token_count, token_dim); logvar is
            clamped to [-10, 10].
        """
        self._check_frames(x)
        if not torch.isfinite(x).all():
            raise ConfigError("encoder input contains non-finite values")
        b = x.shape[0]
        patches = x.reshape(b, self.dims.token_count, self.dims.patch_dim)
        h = self.patch_embed(patches) + self._positions(x.dtype)
        for block in self.enc_blocks:
            h = block(h)
        h = self.enc_norm(h)
        mu = self.adapter_down(self.head_mu(h))
        logvar = self.adapter_down(self.head_logvar(h))
        return mu, logvar.clamp(-LOGVAR_RANGE, LOGVAR_RANGE)

    def reparameterize(
        self, mu: torch.Tensor, logvar: torch.Tensor, generator: torch.Generator
    ) -> torch.Tensor:
        noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        return mu + torch.exp(0.5 * logvar) * noise

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """Map (batch, token_count, token_dim) latents back to sequences."""
        if z.ndim != 3 or z.shape[1:] != (self.dims.token_count, self.dims.token_dim):
            raise ConfigError(
                f"expected (batch, {self.dims.token_count}, {self.dims.token_dim}) latents, "
                f"got {tuple(z.shape)}"
            )
        h = self.adapter_up(z) + self._positions(z.dtype)
        for block in self.dec_blocks:
            h = block(h)
        patches = self.unpatch(self.dec_norm(h))
        return patches.reshape(z.shape[0], self.dims.n_frames, self.dims.frame_dim)


def build_motion_vae(dims: VaeDims, seed: int) -> MotionVae:
    """Construct an autoencoder whose weights are a pure function of the seed."""
    vae = MotionVae(dims)
    init_transformer_params(vae, make_generator("motion_vae", seed))
    return vae


def kl_divergence(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, exp(logvar)) || N(0, 1)), averaged per token dimension.

    The analytic value is non-negative; float rounding of exp(logvar)
    near logvar = 0 can report a tiny negative mean, so the scalar is
    floored at zero (the gradient is unaffected whenever the true value
    is positive).
    """
    return 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).mean().clamp_min(0.0)


def bone_lengths(
    frames: torch.Tensor, skeleton_edges: tuple[tuple[int, int], ...]
) -> torch.Tensor:
    """Per-frame bone lengths of flattened 2-d poses.

    Args:
        frames: (batch, n_frames, 2 * n_joints) physical-coordinate poses.
        skeleton_edges: (parent, child) joint index pairs.

    Returns:
        (batch, n_frames, n_edges) Euclidean lengths.
    """
    b, f, d = frames.shape
    if d % 2 != 0:
        raise ConfigError(f"pose width must be even (x, y per joint), got {d}")
    joints = frames.reshape(b, f, d // 2, 2)
    lengths = []
    for parent, child in skeleton_edges:
        delta = joints[:, :, child, :] - joints[:, :, parent, :]
        lengths.append(delta.pow(2).sum(-1).add(1e-12).sqrt())
    return torch.stack(lengths, dim=-1)


def vae_loss_terms(
    vae: MotionVae,
    batch: torch.Tensor,
    generator: torch.Generator,
    lambda_kl: float,
    norm_mean: torch.Tensor,
    norm_std: torch.Tensor,
    skeleton_edges: tuple[tuple[int, int], ...],
) -> dict[str, torch.Tensor]:
    """Total loss and its parts for one batch of normalized sequences.

    Args:
        batch: (batch, n_frames, frame_dim) normalized sequences.
        norm_mean / norm_std: per-dimension statistics that undo the
            normalization; the bone-length part of the geometric term is
            computed in physical coordinates.

    Returns:
        dict with "total", "recon", "kl", "geometric" scalar tensors,
        where total = geometric + recon + lambda_kl * kl.
    """
    if lambda_kl < 0.0:
        raise ConfigError(f"lambda_kl must be non-negative, got {lambda_kl}")
    mu, logvar = vae.encode(batch)
    z = vae.reparameterize(mu, logvar, generator)
    recon_x = vae.decode(z)

    recon = (recon_x - batch).pow(2).mean()
    kl = kl_divergence(mu, logvar)

    velocity_err = (recon_x.diff(dim=1) - batch.diff(dim=1)).pow(2).mean()
    mean = norm_mean.to(batch.dtype)
    std = norm_std.to(batch.dtype)
    phys_recon = recon_x * std + mean
    phys_target = batch * std + mean
    bone_err = (
        bone_lengths(phys_recon, skeleton_edges) - bone_lengths(phys_target, skeleton_edges)
    ).pow(2).mean()
    geometric = velocity_err + bone_err

    total = geometric + recon + lambda_kl * kl
    return {"total": total, "recon": recon, "kl": kl, "geometric": geometric}
