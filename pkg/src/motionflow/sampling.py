"""Sampling: Euler ODE integration, staged prior sampling, context
aggregation, and autoregressive scene generation.

The prior sampler walks the pyramid coarse to fine: integrate the learned
velocity field across each stage's time window, then apply the resolution
jump (deterministic upsample plus correlated noise) to enter the next
stage.  With a single stage this collapses exactly to plain rectified-flow
sampling: same draws, same trajectory, bit for bit.

Reaction sampling starts the solver *at the context summary itself* (an
optional noise bump is off by default) and integrates the reaction field
over [0, 1] in a small number of steps.

RNG consumption order in ``sample_prior`` (fixed; mirrored by the
degeneracy oracle): the initial noise draw, then one correlated-noise draw
per resolution jump, coarse to fine.  Noise-free reaction sampling
consumes no randomness at all, so two variants seeded identically share
bitwise-identical first agents.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch
from torch import Tensor, nn

from .config import AdapterDims, SamplingConfig
from .errors import ConfigError, SolverError
from .flow_paths import jump_update
from .layers import TransformerBlock, init_transformer_params
from .schedule import PyramidSchedule
from .utils import make_generator
from .velocity_model import VelocityNet

__all__ = [
    "euler_solve",
    "sample_prior",
    "ContextAdapter",
    "build_context_adapter",
    "build_context",
    "sample_reaction",
    "GenerationResult",
    "generate_scene",
]


def euler_solve(
    field: Callable[[Tensor, Tensor], Tensor],
    x_start: Tensor,
    t_start: float,
    t_end: float,
    steps: int,
) -> Tensor:
    """Fixed-step explicit Euler integration of dx/dt = field(x, t).

    The field is evaluated at the left endpoint of each step.  Times are
    accumulated as ``t_start + m * dt`` in double precision, so a zero
    field leaves the state untouched and power-of-two step counts keep
    constant fields exact.  Non-finite field values or states raise
    ``SolverError`` carrying the failing step index.
    """
    if steps < 1:
        raise ConfigError(f"solver needs at least one step, got {steps}")
    if not t_end > t_start:
        raise ConfigError(f"solver needs t_end > t_start, got [{t_start}, {t_end}]")
    dt = (t_end - t_start) / steps
    x = x_start
    for m in range(steps):
        t_m = t_start + m * dt
        t = torch.full((x.shape[0],), t_m, dtype=x.dtype)
        v = field(x, t)
        if v.shape != x.shape:
            raise SolverError(
                f"field returned shape {tuple(v.shape)}, expected {tuple(x.shape)}", step=m
            )
        if not torch.isfinite(v).all():
            raise SolverError("velocity field produced non-finite values", step=m)
        x = x + dt * v
        if not torch.isfinite(x).all():
            raise SolverError("solver state became non-finite", step=m)
    return x


def sample_prior(
    model: VelocityNet,
    schedule: PyramidSchedule,
    cond: Tensor,
    generator: torch.Generator,
    batch: int,
) -> Tensor:
    """Draw clean latents (batch, base_length, token_dim) by integrating
    the staged prior field coarse to fine with jumps in between.

    Each stage is integrated in its rescaled time t' in [0, 1] (step size
    1/M) while the model is fed the corresponding global time
    s_k + (e_k - s_k) t'.  The trained field regresses the local-time
    derivative end - start of the stage path, so unit-time integration is
    the consistent discretization; stepping the raw global window would
    shrink every stage's displacement by its width e_k - s_k.  A
    single-stage schedule has width one, where both forms coincide
    bitwise.
    """
    if cond.shape != (batch,):
        raise ConfigError(f"condition shape {tuple(cond.shape)} != ({batch},)")
    token_dim = model.dims.token_dim
    coarsest = schedule.stage_count
    x = torch.randn(
        batch, schedule.length_at(coarsest), token_dim, generator=generator
    )
    with torch.no_grad():
        for k in range(coarsest, 0, -1):
            start, end = schedule.window(k)
            width = end - start

            def stage_field(xx: Tensor, tt: Tensor, _s=start, _w=width) -> Tensor:
                return model(xx, _s + _w * tt, cond)

            x = euler_solve(stage_field, x, 0.0, 1.0, schedule.steps_at(k))
            if k > 1:
                next_start = schedule.window(k - 1)[0]
                x = jump_update(x, next_start, end, generator)
    return x


# --- context adapter ---------------------------------------------------------


class ContextAdapter(nn.Module):
    """Aggregates a variable number of agent latents into one context
    summary of the same shape as a single agent's latent.

    Agent latents are concatenated along the token axis, attention blocks
    mix them, and the output is averaged back over agents.  Optional
    learned agent-slot embeddings enter as a per-token bias inside each
    block; with them disabled the adapter is invariant to agent order.
    With residual branches zero-initialized and ids disabled, the adapter
    is exactly the mean over agents of the input latents.
    """

    def __init__(self, dims: AdapterDims):
        super().__init__()
        self.dims = dims
        self.agent_embed = nn.Embedding(dims.max_agents, dims.token_dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(dims.token_dim, dims.n_heads) for _ in range(dims.n_blocks)
        )

    def forward(self, latents: Tensor) -> Tensor:
        if latents.ndim != 4:
            raise ConfigError(
                f"adapter expects (batch, agents, tokens, dim), got {tuple(latents.shape)}"
            )
        batch, n_agents, tokens, dim = latents.shape
        if n_agents < 1:
            raise ConfigError("adapter needs at least one context agent")
        if n_agents > self.dims.max_agents:
            raise ConfigError(
                f"{n_agents} context agents exceed the adapter maximum "
                f"{self.dims.max_agents}"
            )
        if dim != self.dims.token_dim:
            raise ConfigError(f"token width {dim} != adapter width {self.dims.token_dim}")
        x = latents.reshape(batch, n_agents * tokens, dim)
        bias = None
        if self.dims.use_agent_ids:
            ids = torch.arange(n_agents).repeat_interleave(tokens)
            bias = self.agent_embed(ids)
        for block in self.blocks:
            x = block(x, branch_bias=bias)
        return x.reshape(batch, n_agents, tokens, dim).mean(dim=1)


def build_context_adapter(dims: AdapterDims, seed: int) -> ContextAdapter:
    """Adapter with zero-initialized residual branches: before training it
    passes the per-agent mean through unchanged."""
    adapter = ContextAdapter(dims)
    init_transformer_params(
        adapter, make_generator("context_adapter", seed), zero_residual=True
    )
    return adapter


def build_context(adapter: ContextAdapter, latents: Tensor | Sequence[Tensor]) -> Tensor:
    """Summarize context agents.  Accepts (batch, agents, tokens, dim) or a
    sequence of (batch, tokens, dim) latents, one per agent."""
    if not isinstance(latents, Tensor):
        latents = torch.stack(tuple(latents), dim=1)
    return adapter(latents)


# --- reaction sampling --------------------------------------------------------


def sample_reaction(
    model: VelocityNet,
    context: Tensor,
    cond: Tensor,
    steps: int,
    generator: torch.Generator | None = None,
    start_noise_std: float = 0.0,
) -> Tensor:
    """Integrate the reaction field from the context summary over [0, 1].

    The first solver state is the context summary itself (bitwise: the
    returned trajectory starts at ``context``).  A small Gaussian start
    bump can be enabled via ``start_noise_std``; it is off by default and
    requires a generator.
    """
    x = context.clone()
    if start_noise_std > 0:
        if generator is None:
            raise ConfigError("start noise requires a generator")
        x = x + start_noise_std * torch.randn(
            x.shape, generator=generator, dtype=x.dtype
        )
    with torch.no_grad():
        return euler_solve(lambda xx, tt: model(xx, tt, cond), x, 0.0, 1.0, steps)


# --- full scenes --------------------------------------------------------------


@dataclass
class GenerationResult:
    """Latents and decoded motions for a batch of generated scenes.

    ``latents``: (batch, agents, tokens, token_dim); ``motions``: denormalized
    frames (batch, agents, n_frames, frame_dim); ``audit``: per-scene counts of
    sampler invocations, asserting the one-prior / N-1-reactions contract.
    """

    latents: Tensor
    motions: Tensor
    audit: dict


def generate_scene(
    vae,
    prior: VelocityNet,
    reaction: VelocityNet,
    adapter: ContextAdapter,
    schedule: PyramidSchedule,
    sampling: SamplingConfig,
    norm_mean: Tensor,
    norm_std: Tensor,
    n_agents: int,
    cond: Tensor,
    generator: torch.Generator,
) -> GenerationResult:
    """Generate a batch of scenes: one prior draw for the first agent, then
    one reaction draw per additional agent, each conditioned on the adapter
    summary of all agents so far; finally decode and denormalize."""
    if n_agents < 1:
        raise ConfigError(f"scene needs at least one agent, got {n_agents}")
    batch = cond.shape[0]
    audit = {"prior_calls": 0, "reaction_calls": 0}
    agents = [sample_prior(prior, schedule, cond, generator, batch)]
    audit["prior_calls"] += 1
    for _ in range(2, n_agents + 1):
        context = build_context(adapter, torch.stack(agents, dim=1))
        agents.append(
            sample_reaction(
                reaction,
                context,
                cond,
                sampling.reaction_steps,
                generator=generator,
                start_noise_std=sampling.start_noise_std,
            )
        )
        audit["reaction_calls"] += 1
    latents = torch.stack(agents, dim=1)
    with torch.no_grad():
        flat = latents.reshape(batch * n_agents, *latents.shape[2:])
        frames = vae.decode(flat)
        frames = frames * norm_std + norm_mean
        motions = frames.reshape(batch, n_agents, *frames.shape[1:])
    return GenerationResult(latents=latents, motions=motions, audit=audit)
