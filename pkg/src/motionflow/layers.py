"""Transformer building blocks shared by the velocity nets, the motion
autoencoder, and the context adapter.

All blocks are pre-norm residual (x + Attn(LN(x)), x + FF(LN(x))) with
multi-head self-attention written out explicitly so every operation
follows the input dtype (the gradient checks run the same modules in
double precision).  Parameter initialization is driven by an explicit
torch generator so that a seed fully determines the weights.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ConfigError

__all__ = [
    "sinusoidal_features",
    "SelfAttention",
    "FeedForward",
    "TransformerBlock",
    "init_transformer_params",
]

FF_MULT = 4
_MAX_FREQ = 10000.0


def sinusoidal_features(u: torch.Tensor, width: int) -> torch.Tensor:
    """Sin/cos features of a coordinate normalized to [0, 1].

    Frequencies are geometrically spaced in [1, 10000], so the encoding of
    a token position i/length depends only on the normalized position and
    is therefore resolution invariant.

    Args:
        u: (...,) tensor of normalized coordinates.
        width: even feature width.

    Returns:
        (..., width) tensor, first half sines, second half cosines.
    """
    if width % 2 != 0:
        raise ConfigError(f"sinusoidal feature width must be even, got {width}")
    half = width // 2
    exponents = torch.arange(half, dtype=u.dtype) / max(half - 1, 1)
    freqs = _MAX_FREQ**exponents
    angles = u.unsqueeze(-1) * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class SelfAttention(nn.Module):
    """Multi-head self-attention over (batch, length, d_model) tokens."""

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, length, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.reshape(b, length, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.reshape(b, length, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.reshape(b, length, self.n_heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        out = torch.softmax(scores, dim=-1) @ v
        out = out.transpose(1, 2).reshape(b, length, d)
        return self.proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int):
        super().__init__()
        self.up = nn.Linear(d_model, FF_MULT * d_model)
        self.down = nn.Linear(FF_MULT * d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.down(torch.nn.functional.gelu(self.up(x)))


class TransformerBlock(nn.Module):
    """Pre-norm residual block.

    ``branch_bias`` (e.g. agent-id embeddings) is added to the normalized
    input of both branches rather than to the residual stream, so a block
    whose output projections are zero-initialized stays an exact identity
    regardless of the bias.
    """

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = FeedForward(d_model)

    def forward(self, x: torch.Tensor, branch_bias: torch.Tensor | None = None) -> torch.Tensor:
        h = self.norm1(x)
        if branch_bias is not None:
            h = h + branch_bias
        x = x + self.attn(h)
        h = self.norm2(x)
        if branch_bias is not None:
            h = h + branch_bias
        return x + self.ff(h)


def init_transformer_params(
    module: nn.Module,
    generator: torch.Generator,
    zero_residual: bool = False,
) -> None:
    """Deterministically (re)initialize every parameter of a module tree.

    Linear weights get Xavier-normal draws from the supplied generator and
    zero biases; LayerNorms are reset to identity; embeddings get
    N(0, 0.02) rows.  With ``zero_residual`` the output projection of each
    attention and feed-forward branch is zeroed, turning every
    :class:`TransformerBlock` into an identity at initialization.
    """
    for _, child in module.named_modules():
        if isinstance(child, nn.Linear):
            fan_in, fan_out = child.in_features, child.out_features
            std = math.sqrt(2.0 / (fan_in + fan_out))
            with torch.no_grad():
                child.weight.normal_(0.0, std, generator=generator)
                if child.bias is not None:
                    child.bias.zero_()
        elif isinstance(child, nn.LayerNorm):
            with torch.no_grad():
                child.weight.fill_(1.0)
                child.bias.zero_()
        elif isinstance(child, nn.Embedding):
            with torch.no_grad():
                child.weight.normal_(0.0, 0.02, generator=generator)
    if zero_residual:
        for _, child in module.named_modules():
            if isinstance(child, SelfAttention):
                with torch.no_grad():
                    child.proj.weight.zero_()
                    child.proj.bias.zero_()
            elif isinstance(child, FeedForward):
                with torch.no_grad():
                    child.down.weight.zero_()
                    child.down.bias.zero_()
