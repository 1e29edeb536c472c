"""Stage decomposition of flow time for coarse-to-fine piecewise sampling.

Generation runs through K stages indexed k = K..1.  Stage k covers the
time window [s_k, e_k] at temporal resolution base_length / 2^(k-1), so
stage K is the coarsest and stage 1 is full resolution.  Always s_K = 0
and e_1 = 1.  Between stage k and stage k-1 the state is upsampled by a
factor of two and renoised; matching the mean and covariance of the
stage-(k-1) start distribution forces the closed forms

    e_k   = 2 * s_{k-1} / (1 + s_{k-1})
    alpha = sqrt(3) * (1 - s_{k-1}) / 2

where alpha scales block-correlated corrective noise (see ``resampling``).
Because e_k > s_{k-1} for every s in (0, 1), adjacent windows overlap:
each jump rewinds global time by s(1-s)/(1+s) while doubling resolution.
The union of the windows is exactly [0, 1] and time is strictly
increasing within each stage.

Intermediate breakpoints for K >= 3 are generated by iterating the
inverse of the closed-form map, s_k = s_{k-1} / (2 - s_{k-1}), which
makes each stage's end coincide with the start of the stage two levels
finer (e_{k+1} = s_{k-1}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError

__all__ = [
    "JumpCoefficients",
    "PyramidSchedule",
    "build_schedule",
    "jump_coefficients",
    "rescale_time",
]

# Tolerance for validating that configured breakpoints satisfy the
# closed form; generous enough for hand-written decimal configs.
_CHAIN_TOL = 1e-9

# Slack accepted when a solver time grid lands a few ulp outside its
# stage window.
_TIME_EPS = 1e-9


@dataclass(frozen=True)
class JumpCoefficients:
    """Constants of the rescale/renoise transition between stages.

    Attributes:
        scale: mean-matching factor s_{k-1} / e_k applied to the upsampled
            stage-k endpoint; equals (1 + s_{k-1}) / 2 under the closed form.
        alpha: magnitude of the block-correlated corrective noise restoring
            the per-coordinate variance to (1 - s_{k-1})^2.
    """

    scale: float
    alpha: float


def jump_coefficients(s_next: float) -> JumpCoefficients:
    """Closed-form transition constants for a jump landing at time s_next.

    Args:
        s_next: start time s_{k-1} of the receiving stage, in (0, 1).

    Returns:
        JumpCoefficients with scale = (1 + s_next) / 2 and
        alpha = sqrt(3) * (1 - s_next) / 2.
    """
    if not 0.0 < s_next < 1.0:
        raise ConfigError(f"jump target time must be in (0, 1), got {s_next!r}")
    scale = (1.0 + s_next) / 2.0
    alpha = math.sqrt(3.0) * (1.0 - s_next) / 2.0
    return JumpCoefficients(scale=scale, alpha=alpha)


def chained_end(s_prev: float) -> float:
    """End time e_k of the stage feeding a jump that lands at s_prev."""
    return 2.0 * s_prev / (1.0 + s_prev)


def rescale_time(t: float, start: float, end: float) -> float:
    """Map a global time inside [start, end] to in-stage time in [0, 1].

    Times within ``_TIME_EPS`` outside the window (solver grid round-off)
    are clamped; anything further out raises.
    """
    if end <= start:
        raise ConfigError(f"degenerate window [{start}, {end}]")
    if t < start - _TIME_EPS or t > end + _TIME_EPS:
        raise ConfigError(f"time {t} outside stage window [{start}, {end}]")
    u = (t - start) / (end - start)
    return min(1.0, max(0.0, u))


@dataclass(frozen=True)
class PyramidSchedule:
    """Validated stage windows, step counts, and resolutions.

    ``windows`` and ``steps`` are ordered coarse to fine: index 0 holds
    stage K, the last entry stage 1.  Use :meth:`window` and
    :meth:`steps_at` to address stages by their index k.
    """

    stage_count: int
    windows: tuple[tuple[float, float], ...]
    steps: tuple[int, ...]
    base_length: int

    def __post_init__(self):
        k = self.stage_count
        if k < 1:
            raise ConfigError(f"stage count must be >= 1, got {k}")
        if len(self.windows) != k or len(self.steps) != k:
            raise ConfigError(
                f"expected {k} windows and step counts, got "
                f"{len(self.windows)} and {len(self.steps)}"
            )
        if any(int(n) != n or n < 1 for n in self.steps):
            raise ConfigError(f"step counts must be positive integers: {self.steps}")
        if self.base_length < 1 or self.base_length % (1 << (k - 1)) != 0:
            raise ConfigError(
                f"base length {self.base_length} not divisible by 2^(K-1) = {1 << (k - 1)}"
            )
        for s, e in self.windows:
            if not (0.0 <= s < e <= 1.0):
                raise ConfigError(f"window ({s}, {e}) violates 0 <= s < e <= 1")
        if self.windows[0][0] != 0.0:
            raise ConfigError("coarsest stage must start at time 0")
        if self.windows[-1][1] != 1.0:
            raise ConfigError("full-resolution stage must end at time 1")
        # Adjacent pairs must satisfy the closed form e_k = 2 s_{k-1} / (1 + s_{k-1}).
        for i in range(k - 1):
            e_coarse = self.windows[i][1]
            s_fine = self.windows[i + 1][0]
            if abs(e_coarse - chained_end(s_fine)) > _CHAIN_TOL:
                raise ConfigError(
                    f"windows {self.windows[i]} -> {self.windows[i + 1]} break the "
                    f"closed-form chain: expected end {chained_end(s_fine)!r}"
                )

    def _index(self, k: int) -> int:
        if not 1 <= k <= self.stage_count:
            raise ConfigError(f"stage {k} outside 1..{self.stage_count}")
        return self.stage_count - k

    def window(self, k: int) -> tuple[float, float]:
        """(s_k, e_k) of stage k."""
        return self.windows[self._index(k)]

    def steps_at(self, k: int) -> int:
        """ODE step count of stage k."""
        return self.steps[self._index(k)]

    def factor(self, k: int) -> int:
        """Temporal downsampling factor 2^(k-1) of stage k."""
        self._index(k)
        return 1 << (k - 1)

    def length_at(self, k: int) -> int:
        """Token count at stage k: base_length / 2^(k-1)."""
        return self.base_length // self.factor(k)

    @property
    def total_steps(self) -> int:
        return sum(self.steps)


def build_schedule(
    stage_count: int,
    base_length: int,
    step_counts: list[int] | tuple[int, ...],
    full_res_start: float | None = None,
) -> PyramidSchedule:
    """Construct a schedule from the number of stages and s_1.

    Args:
        stage_count: number of pyramid stages K (>= 1).
        base_length: full-resolution token count; must be divisible by
            2^(K-1).
        step_counts: per-stage ODE step counts ordered coarse to fine
            (stage K first).
        full_res_start: start time s_1 of the full-resolution stage, in
            (0, 1).  Required for K >= 2; ignored for K = 1, where the
            single stage is the whole interval [0, 1].

    Intermediate starts for K >= 3 follow s_k = s_{k-1} / (2 - s_{k-1});
    ends follow e_k = 2 s_{k-1} / (1 + s_{k-1}); s_K = 0 and e_1 = 1.
    """
    if stage_count < 1:
        raise ConfigError(f"stage count must be >= 1, got {stage_count}")
    if len(step_counts) != stage_count:
        raise ConfigError(
            f"need {stage_count} step counts (coarse to fine), got {len(step_counts)}"
        )
    if stage_count == 1:
        windows = ((0.0, 1.0),)
    else:
        if full_res_start is None or not 0.0 < full_res_start < 1.0:
            raise ConfigError(
                f"full_res_start must be in (0, 1) for K >= 2, got {full_res_start!r}"
            )
        starts = [full_res_start]  # starts[i] = s_{i+1}
        for _ in range(stage_count - 2):
            starts.append(starts[-1] / (2.0 - starts[-1]))
        fine_to_coarse = [(full_res_start, 1.0)]
        for i in range(1, stage_count):
            s_k = 0.0 if i == stage_count - 1 else starts[i]
            fine_to_coarse.append((s_k, chained_end(starts[i - 1])))
        windows = tuple(reversed(fine_to_coarse))
    return PyramidSchedule(
        stage_count=stage_count,
        windows=windows,
        steps=tuple(int(n) for n in step_counts),
        base_length=base_length,
    )
