"""Temporal resampling operators and the block-correlated jump noise.

Downsampling is average pooling over non-overlapping windows along the
token axis; upsampling is nearest-neighbor duplication.  With these
conventions ``downsample(upsample(x, f), f) == x`` exactly, while the
reverse composition is lossy.

The corrective noise injected at a stage jump is drawn from N(0, Sigma')
per temporal block of size ell, where

    Sigma' = (4/3) I - (1/3) J     (unit diagonal, off-diagonal -1/3)

and J is the all-ones matrix.  The -1/3 off-diagonal exactly cancels the
within-block correlation introduced by duplicating the upsampled noise,
so the jump output matches the white-noise covariance of the receiving
stage.  Sigma' is positive semi-definite only for ell <= 4 (its smallest
eigenvalue is (4 - ell)/3), so larger blocks are rejected.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .errors import ConfigError

__all__ = [
    "downsample",
    "upsample",
    "block_covariance",
    "block_cholesky",
    "sample_correlated_noise",
]

MAX_BLOCK_SIZE = 4


def _check_factor(factor: int) -> None:
    if factor < 1 or (factor & (factor - 1)) != 0:
        raise ConfigError(f"resampling factor must be a positive power of two, got {factor}")


def downsample(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Average-pool a (..., length, dim) tensor along the token axis."""
    _check_factor(factor)
    if x.ndim < 2:
        raise ConfigError(f"expected at least (length, dim) shaped input, got {tuple(x.shape)}")
    length = x.shape[-2]
    if length % factor != 0:
        raise ConfigError(f"length {length} not divisible by factor {factor}")
    pooled_shape = x.shape[:-2] + (length // factor, factor, x.shape[-1])
    return x.reshape(pooled_shape).mean(dim=-2)


def upsample(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Duplicate each token of a (..., length, dim) tensor factor times."""
    _check_factor(factor)
    if x.ndim < 2:
        raise ConfigError(f"expected at least (length, dim) shaped input, got {tuple(x.shape)}")
    if factor == 1:
        return x.clone()
    return x.repeat_interleave(factor, dim=-2)


def block_covariance(block_size: int) -> np.ndarray:
    """Target covariance Sigma' = (4/3) I - (1/3) J of one temporal block."""
    if not 1 <= block_size <= MAX_BLOCK_SIZE:
        raise ConfigError(
            f"block size must be in 1..{MAX_BLOCK_SIZE} (Sigma' is not PSD beyond), "
            f"got {block_size}"
        )
    eye = np.eye(block_size)
    ones = np.ones((block_size, block_size))
    return (4.0 / 3.0) * eye - (1.0 / 3.0) * ones


def block_cholesky(block_size: int) -> np.ndarray:
    """Lower-triangular L with L @ L.T = Sigma', tolerating the PSD boundary.

    At block_size = 4 the final pivot of Sigma' is exactly zero, which
    stock Cholesky routines reject, so the factorization is done manually
    with a zero-pivot tolerance.
    """
    sigma = block_covariance(block_size)
    n = block_size
    lower = np.zeros((n, n))
    for i in range(n):
        pivot = sigma[i, i] - lower[i, :i] @ lower[i, :i]
        if pivot < -1e-12:
            raise ConfigError(f"covariance block of size {block_size} is not PSD")
        lower[i, i] = math.sqrt(max(pivot, 0.0))
        for j in range(i + 1, n):
            off = sigma[j, i] - lower[j, :i] @ lower[i, :i]
            if lower[i, i] > 0.0:
                lower[j, i] = off / lower[i, i]
            elif abs(off) > 1e-12:
                raise ConfigError(f"covariance block of size {block_size} is not PSD")
    return lower


def sample_correlated_noise(
    length: int,
    dim: int,
    block_size: int,
    generator: torch.Generator,
    batch: int | None = None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Draw N(0, Sigma') noise per temporal block, channels independent.

    Args:
        length: token count; must be divisible by block_size.
        dim: channels per token.
        block_size: temporal block size ell (1..4); ell = 1 degenerates
            to iid standard normal.
        generator: torch CPU generator supplying the iid draws.
        batch: optional leading batch dimension.

    Returns:
        (length, dim) tensor, or (batch, length, dim) when batch is given,
        with unit marginal variance and within-block covariance -1/3.
    """
    if length < 1 or dim < 1:
        raise ConfigError(f"length and dim must be positive, got {length}, {dim}")
    if length % block_size != 0:
        raise ConfigError(f"length {length} not divisible by block size {block_size}")
    lower = torch.from_numpy(block_cholesky(block_size)).to(dtype)
    n_blocks = length // block_size
    lead = () if batch is None else (batch,)
    iid = torch.randn(*lead, n_blocks, block_size, dim, generator=generator, dtype=dtype)
    mixed = torch.einsum("ij,...jd->...id", lower, iid)
    return mixed.reshape(*lead, length, dim)
