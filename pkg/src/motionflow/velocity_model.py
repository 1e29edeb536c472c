"""Token-sequence velocity field with timestep and class conditioning.

The same architecture serves both flow models: input tokens are projected
to model width, tagged with resolution-invariant positional features
(normalized position i/length), and processed by pre-norm attention
blocks after prepending one timestep token and one condition token.  The
two conditioning tokens are stripped from the output, and the output
projection is zero-initialized so an untrained model is the zero
velocity field.

``flops_estimate`` is the analytic cost model used by the efficiency
report.  Per block it counts

    attention: 4 * L^2 * d_model + 8 * L * d_model^2
    feed-forward: 16 * L * d_model^2

(one multiply-add = 2 FLOPs, feed-forward hidden width 4 * d_model) plus
the input/output token projections.  L is the latent token count; the
two prepended conditioning tokens are a constant per-call overhead and
are excluded from the documented formula.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError
from .layers import TransformerBlock, init_transformer_params, sinusoidal_features
from .utils import make_generator

__all__ = ["ModelDims", "VelocityNet", "build_velocity_net", "flops_estimate"]


@dataclass(frozen=True)
class ModelDims:
    """Width/depth of a velocity net.

    token_dim is the channel width of the latent tokens it transports;
    n_classes the size of the condition vocabulary.
    """

    token_dim: int = 16
    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 4
    n_classes: int = 4

    def __post_init__(self):
        if min(self.token_dim, self.d_model, self.n_heads, self.n_blocks, self.n_classes) < 1:
            raise ConfigError(f"all model dimensions must be positive: {self}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be even for sinusoidal features, got {self.d_model}")


class VelocityNet(nn.Module):
    """Velocity field v(x, t, c) over (batch, length, token_dim) tokens."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        d = dims.d_model
        self.token_in = nn.Linear(dims.token_dim, d)
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, d))
        self.cond_embed = nn.Embedding(dims.n_classes, d)
        self.blocks = nn.ModuleList(
            TransformerBlock(d, dims.n_heads) for _ in range(dims.n_blocks)
        )
        self.final_norm = nn.LayerNorm(d)
        self.token_out = nn.Linear(d, dims.token_dim)

    def forward(
        self,
        x: torch.Tensor,
        t: float | torch.Tensor,
        cond: int | torch.Tensor,
    ) -> torch.Tensor:
        """Evaluate the field at tokens x, time t, condition label cond.

        Args:
            x: (batch, length, token_dim) tokens; any length >= 1.
            t: scalar or (batch,) flow time in [0, 1].
            cond: scalar or (batch,) integer class label.

        Returns:
            (batch, length, token_dim) velocity.
        """
        if x.ndim != 3 or x.shape[-1] != self.dims.token_dim:
            raise ConfigError(
                f"expected (batch, length, {self.dims.token_dim}) input, got {tuple(x.shape)}"
            )
        if not torch.isfinite(x).all():
            raise ConfigError("velocity model input contains non-finite values")
        b, length, _ = x.shape
        t = torch.as_tensor(t, dtype=x.dtype)
        if not torch.isfinite(t).all():
            raise ConfigError("flow time contains non-finite values")
        t = t.expand(b) if t.ndim == 0 else t
        if t.shape != (b,):
            raise ConfigError(f"time must be scalar or ({b},), got {tuple(t.shape)}")
        cond = torch.as_tensor(cond, dtype=torch.long)
        cond = cond.expand(b) if cond.ndim == 0 else cond
        if cond.shape != (b,):
            raise ConfigError(f"condition must be scalar or ({b},), got {tuple(cond.shape)}")
        if cond.min() < 0 or cond.max() >= self.dims.n_classes:
            raise ConfigError(
                f"condition labels must lie in 0..{self.dims.n_classes - 1}, "
                f"got range [{int(cond.min())}, {int(cond.max())}]"
            )

        positions = torch.arange(length, dtype=x.dtype) / length
        pos_feat = sinusoidal_features(positions, self.dims.d_model)
        tokens = self.token_in(x) + pos_feat
        t_token = self.time_mlp(sinusoidal_features(t, self.dims.d_model))
        c_token = self.cond_embed(cond).to(x.dtype)
        seq = torch.cat([t_token.unsqueeze(1), c_token.unsqueeze(1), tokens], dim=1)
        for block in self.blocks:
            seq = block(seq)
        out = self.token_out(self.final_norm(seq))
        return out[:, 2:, :]


def build_velocity_net(dims: ModelDims, seed: int) -> VelocityNet:
    """Construct a net whose parameters are a pure function of (dims, seed).

    The output projection is zeroed so the freshly built net is the zero
    velocity field.
    """
    net = VelocityNet(dims)
    init_transformer_params(net, make_generator("velocity_net", seed))
    with torch.no_grad():
        net.token_out.weight.zero_()
        net.token_out.bias.zero_()
    return net


def flops_estimate(seq_len: int, dims: ModelDims) -> float:
    """Analytic FLOPs of one forward evaluation at seq_len latent tokens.

    Counts attention (4 L^2 d + 8 L d^2) and feed-forward (16 L d^2) per
    block plus the token input/output projections (2 L r d each), with one
    multiply-add counted as two FLOPs.  Constant per-call work (the two
    conditioning tokens, norms, embeddings) is excluded.
    """
    if seq_len < 1:
        raise ConfigError(f"sequence length must be positive, got {seq_len}")
    d = dims.d_model
    per_block = 4.0 * seq_len**2 * d + 8.0 * seq_len * d**2 + 16.0 * seq_len * d**2
    projections = 2 * (2.0 * seq_len * dims.token_dim * d)
    return dims.n_blocks * per_block + projections
