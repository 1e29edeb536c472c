"""Conditional interpolation paths and the stage-jump transition.

All paths are straight lines, so the regression target of a path from a
to b is the constant b - a.  Three path families are used:

* plain rectified flow between noise and data (``linear_interpolate``),
* the pyramid stage path between coupled endpoints built from the same
  noise draw at stage resolution (``pyramid_endpoints`` /
  ``pyramid_point_and_target``),
* the two reaction-model paths: context -> target latent and
  noise -> context (``reaction_interpolate`` / ``context_interpolate``).

``jump_update`` realizes the transition between pyramid stages: upsample
the stage-k endpoint, rescale by s_{k-1}/e_k, and add block-correlated
noise scaled by alpha so the result is distributed like a stage-(k-1)
start built directly from fresh noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError
from .resampling import downsample, sample_correlated_noise, upsample
from .schedule import PyramidSchedule, chained_end, jump_coefficients, rescale_time

__all__ = [
    "PathSample",
    "linear_interpolate",
    "pyramid_endpoints",
    "pyramid_point_and_target",
    "jump_update",
    "reaction_interpolate",
    "context_interpolate",
]

JUMP_BLOCK_SIZE = 2  # temporal block of the corrective noise at a factor-2 jump


@dataclass(frozen=True)
class PathSample:
    """A point on an interpolation path together with its training target.

    t_global is the global flow time of the point (scalar, or one value
    per batch element); stage is the pyramid stage index or None for
    single-stage paths.
    """

    point: torch.Tensor
    target: torch.Tensor
    t_global: float | torch.Tensor
    stage: int | None = None


def _broadcast_t(t: float | torch.Tensor, like: torch.Tensor) -> float | torch.Tensor:
    """Validate t in [0, 1] and shape it to broadcast over (..., length, dim)."""
    if isinstance(t, torch.Tensor):
        if not torch.all((t >= 0.0) & (t <= 1.0)):
            raise ConfigError("path time must lie in [0, 1]")
        if t.ndim == 0:
            return t.to(like.dtype)
        if t.shape[0] != like.shape[0] or t.ndim != 1:
            raise ConfigError(
                f"per-sample time must be ({like.shape[0]},), got {tuple(t.shape)}"
            )
        return t.to(like.dtype).reshape(-1, *([1] * (like.ndim - 1)))
    if not 0.0 <= float(t) <= 1.0:
        raise ConfigError(f"path time must lie in [0, 1], got {t!r}")
    return float(t)


def linear_interpolate(
    x0: torch.Tensor, x1: torch.Tensor, t: float | torch.Tensor
) -> PathSample:
    """Point t*x1 + (1-t)*x0 on the straight path, target x1 - x0."""
    if x0.shape != x1.shape:
        raise ConfigError(f"endpoint shapes differ: {tuple(x0.shape)} vs {tuple(x1.shape)}")
    tb = _broadcast_t(t, x1)
    point = tb * x1 + (1.0 - tb) * x0
    return PathSample(point=point, target=x1 - x0, t_global=t)


def pyramid_endpoints(
    z1: torch.Tensor, eps: torch.Tensor, k: int, schedule: PyramidSchedule
) -> tuple[torch.Tensor, torch.Tensor]:
    """Coupled start/end of the stage-k path, sharing the noise draw eps.

        start = s_k * up(down(z1, 2^k), 2)     + (1 - s_k) * eps
        end   = e_k * down(z1, 2^(k-1))        + (1 - e_k) * eps

    Args:
        z1: clean full-resolution latent (..., base_length, dim).
        eps: standard normal draw at stage-k resolution
            (..., base_length / 2^(k-1), dim).
        k: stage index in 1..K.

    The coefficient-0 and coefficient-1 cases are taken verbatim (start
    is eps itself when s_k = 0; end is the pooled data when e_k = 1), so
    a K = 1 schedule degenerates bitwise to the plain noise-to-data path.
    """
    s_k, e_k = schedule.window(k)
    stage_len = schedule.length_at(k)
    if z1.shape[-2] != schedule.base_length:
        raise ConfigError(
            f"latent length {z1.shape[-2]} does not match base length {schedule.base_length}"
        )
    if eps.shape[-2] != stage_len or eps.shape[:-2] != z1.shape[:-2] or eps.shape[-1] != z1.shape[-1]:
        raise ConfigError(
            f"noise shape {tuple(eps.shape)} does not match stage-{k} shape "
            f"{(*z1.shape[:-2], stage_len, z1.shape[-1])}"
        )
    if s_k == 0.0:
        start = eps.clone()
    else:
        coarse = upsample(downsample(z1, schedule.factor(k) * 2), 2)
        start = s_k * coarse + (1.0 - s_k) * eps
    pooled = downsample(z1, schedule.factor(k))
    end = pooled if e_k == 1.0 else e_k * pooled + (1.0 - e_k) * eps
    return start, end


def pyramid_point_and_target(
    z1: torch.Tensor,
    eps: torch.Tensor,
    k: int,
    t_global: float | torch.Tensor,
    schedule: PyramidSchedule,
) -> PathSample:
    """Sample the stage-k path at global time t_global.

    The in-stage time is t' = (t_global - s_k) / (e_k - s_k); the point is
    t' * end + (1 - t') * start and the target is the constant end - start.
    """
    s_k, e_k = schedule.window(k)
    start, end = pyramid_endpoints(z1, eps, k, schedule)
    if isinstance(t_global, torch.Tensor) and t_global.ndim > 0:
        lo, hi = float(t_global.min()), float(t_global.max())
        rescale_time(lo, s_k, e_k)
        rescale_time(hi, s_k, e_k)
        t_local = ((t_global - s_k) / (e_k - s_k)).clamp(0.0, 1.0)
    else:
        t_local = rescale_time(float(t_global), s_k, e_k)
    sample = linear_interpolate(start, end, t_local)
    return PathSample(point=sample.point, target=sample.target, t_global=t_global, stage=k)


def jump_update(
    end_k: torch.Tensor,
    s_next: float,
    e_k: float,
    generator: torch.Generator,
    *,
    alpha_scale: float = 1.0,
) -> torch.Tensor:
    """Transition a stage-k endpoint into a stage-(k-1) start sample.

        out = (s_next / e_k) * upsample(end_k, 2) + alpha * n'

    with n' block-correlated noise (block size 2).  e_k must satisfy the
    closed-form chain for s_next, which makes the rescale factor equal
    (1 + s_next) / 2 and guarantees the output's mean, per-coordinate
    variance (1 - s_next)^2, and zero within-block covariance all match a
    directly constructed stage-(k-1) start.

    ``alpha_scale`` multiplies the noise amplitude and exists only as a
    verification hook: the continuity report uses alpha_scale = 0.5 as a
    negative control that must visibly break the variance match.  The
    sampling pipeline always uses the default 1.0.
    """
    if not 0.0 < s_next < e_k < 1.0:
        raise ConfigError(f"jump times must satisfy 0 < s_next < e_k < 1, got {s_next}, {e_k}")
    if abs(e_k - chained_end(s_next)) > 1e-9:
        raise ConfigError(
            f"endpoint time {e_k} breaks the closed-form chain for s_next={s_next} "
            f"(expected {chained_end(s_next)!r})"
        )
    if alpha_scale <= 0:
        raise ConfigError(f"alpha_scale must be positive, got {alpha_scale}")
    coeffs = jump_coefficients(s_next)
    up = upsample(end_k, 2)
    batch = up.shape[0] if up.ndim == 3 else None
    noise = sample_correlated_noise(
        up.shape[-2], up.shape[-1], JUMP_BLOCK_SIZE, generator, batch=batch, dtype=up.dtype
    )
    return coeffs.scale * up + (alpha_scale * coeffs.alpha) * noise


def reaction_interpolate(
    context: torch.Tensor, target: torch.Tensor, t: float | torch.Tensor
) -> PathSample:
    """Reaction path from the context latent C to the target latent W."""
    return linear_interpolate(context, target, t)


def context_interpolate(
    eps: torch.Tensor, context: torch.Tensor, t: float | torch.Tensor
) -> PathSample:
    """Context-reconstruction path from noise to the context latent C."""
    return linear_interpolate(eps, context, t)
