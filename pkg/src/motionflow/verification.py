"""Self-verification suite: fast, training-free checks of the pipeline's
mathematical claims, run by the ``verify`` CLI command and reused by the
test suite.

Each check returns a ``CheckResult`` with a one-line detail string.  The
suite covers:

* closed-form jump coefficients against an independent numeric solution
  of the moment-matching system (root finding, no closed forms involved),
* Monte-Carlo continuity of the resolution jump, with a negative control,
* resampling identities and the correlated-noise covariance,
* Euler solver order and exact integration of zero/constant fields,
* bitwise degeneracy of the single-stage pipeline to plain rectified flow,
* analytic gradients against central differences on double-precision
  micro-models of all three losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import torch
from scipy.optimize import brentq

from .config import AdapterDims, EvalConfig, RunConfig
from .errors import VerificationError
from .evaluation import jump_continuity_report, solver_order_report
from .flow_paths import linear_interpolate, pyramid_point_and_target
from .motion_vae import VaeDims, build_motion_vae, vae_loss_terms
from .resampling import block_covariance, downsample, sample_correlated_noise, upsample
from .sampling import build_context, build_context_adapter, sample_prior
from .schedule import PyramidSchedule, build_schedule, chained_end, jump_coefficients
from .training import pflow_loss_step, sflow_loss_step
from .utils import make_generator
from .velocity_model import ModelDims, VelocityNet, build_velocity_net

__all__ = [
    "CheckResult",
    "solve_jump_system",
    "central_difference_check",
    "check_jump_coefficients",
    "check_jump_continuity",
    "check_resampling",
    "check_solver",
    "check_degeneracy",
    "check_gradients",
    "run_verification",
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{self.name}: {'PASS' if self.passed else 'FAIL'} ({self.detail})"


# --- independent solution of the jump moment system ---------------------------


def solve_jump_system(s: float, block_corr: float = -1.0 / 3.0) -> tuple[float, float, float]:
    """Solve for (end_time, scale, alpha) of a factor-2 jump landing at
    start time ``s``, directly from the moment-matching conditions.

    With pass-through noise fraction beta(e) = (s/e)(1-e), the jump output
    must satisfy per-coordinate variance beta^2 + alpha^2 = (1-s)^2 and
    zero within-block covariance beta^2 + alpha^2 * block_corr = 0.
    Eliminating alpha gives a single equation in the end time e, solved by
    bracketed root finding on (s, 1); no closed-form expressions enter.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"start time must lie in (0, 1), got {s}")

    def beta(e: float) -> float:
        return (s / e) * (1.0 - e)

    def residual(e: float) -> float:
        b2 = beta(e) ** 2
        alpha2 = -b2 / block_corr
        return b2 + alpha2 - (1.0 - s) ** 2

    lo, hi = s + 1e-12, 1.0 - 1e-12
    e_star = float(brentq(residual, lo, hi, xtol=1e-15, rtol=8.9e-16))
    b = beta(e_star)
    alpha = math.sqrt(-b * b / block_corr)
    return e_star, s / e_star, alpha


def check_jump_coefficients(s_values: Iterable[float] = (0.1, 1.0 / 3.0, 0.5, 0.9)) -> CheckResult:
    worst = 0.0
    for s in s_values:
        e_star, scale_star, alpha_star = solve_jump_system(s)
        coeffs = jump_coefficients(s)
        worst = max(
            worst,
            abs(e_star - chained_end(s)),
            abs(scale_star - coeffs.scale),
            abs(alpha_star - coeffs.alpha),
        )
    return CheckResult(
        "jump_coefficients_vs_numeric_solution",
        worst < 1e-12,
        f"max |closed form - root-finding solution| = {worst:.3e} over s in {tuple(s_values)}",
    )


# --- statistical checks --------------------------------------------------------


def check_jump_continuity(cfg: EvalConfig, draws: int | None = None) -> CheckResult:
    eval_cfg = cfg if draws is None else _with_draws(cfg, draws)
    schedule = build_schedule(2, 4, (45, 5), 1.0 / 3.0)
    report = jump_continuity_report(schedule, 16, eval_cfg)
    failing = [m.name for m in report.metrics if m.enforced and not m.passed]
    detail = "; ".join(m.line() for m in report.metrics)
    return CheckResult("jump_continuity_mc", not failing, detail)


def _with_draws(cfg: EvalConfig, draws: int) -> EvalConfig:
    import dataclasses

    return dataclasses.replace(cfg, mc_draws=draws)


def check_resampling(seed: int = 0) -> CheckResult:
    g = make_generator("verify_resampling", seed)
    x = torch.randn(3, 8, 5, generator=g)
    exact = bool(torch.equal(downsample(upsample(x, 2), 2), x))

    n = 200_000
    noise = sample_correlated_noise(4, 2, 2, g, batch=n)
    blocks = noise.reshape(n, 2, 2, 2)
    emp = torch.einsum("nbid,nbjd->ij", blocks.double(), blocks.double()) / (n * 2 * 2)
    target = torch.from_numpy(block_covariance(2))
    cov_err = float((emp - target).abs().max())
    passed = exact and cov_err < 2e-2
    return CheckResult(
        "resampling_identities",
        passed,
        f"down(up(x)) exact: {exact}; correlated-noise covariance max err {cov_err:.3e}",
    )


def check_solver(cfg: EvalConfig) -> CheckResult:
    report = solver_order_report(cfg)
    failing = [m.name for m in report.metrics if m.enforced and not m.passed]
    detail = "; ".join(m.line() for m in report.metrics)
    return CheckResult("solver_order_and_exactness", not failing, detail)


# --- bitwise degeneracy ---------------------------------------------------------


def check_degeneracy(cases: int = 20, seed: int = 0) -> CheckResult:
    """With one stage, training paths and sampling trajectories must match
    a plain rectified-flow implementation bit for bit on a shared RNG."""
    dims = ModelDims(token_dim=6, d_model=16, n_heads=2, n_blocks=1, n_classes=3)
    schedule = PyramidSchedule(
        stage_count=1, windows=((0.0, 1.0),), steps=(8,), base_length=4
    )
    model = build_velocity_net(dims, seed)
    ok = True
    for case in range(cases):
        g1 = make_generator("degeneracy", seed, case)
        g2 = make_generator("degeneracy", seed, case)
        batch = 3 + case % 4
        z1 = torch.randn(batch, 4, dims.token_dim, generator=g1)
        t = torch.rand(batch, generator=g1)
        eps = torch.randn(batch, 4, dims.token_dim, generator=g1)
        staged = pyramid_point_and_target(z1, eps, 1, t, schedule)

        z1_ref = torch.randn(batch, 4, dims.token_dim, generator=g2)
        t_ref = torch.rand(batch, generator=g2)
        eps_ref = torch.randn(batch, 4, dims.token_dim, generator=g2)
        plain = linear_interpolate(eps_ref, z1_ref, t_ref)
        if not (
            torch.equal(staged.point, plain.point)
            and torch.equal(staged.target, plain.target)
        ):
            ok = False
            break

        cond = torch.randint(0, dims.n_classes, (batch,), generator=g1)
        cond_ref = torch.randint(0, dims.n_classes, (batch,), generator=g2)
        gs1 = make_generator("degeneracy_sample", seed, case)
        gs2 = make_generator("degeneracy_sample", seed, case)
        staged_sample = sample_prior(model, schedule, cond, gs1, batch)
        x = torch.randn(batch, 4, dims.token_dim, generator=gs2)
        dt = 1.0 / 8
        with torch.no_grad():
            for m in range(8):
                t_m = torch.full((batch,), m * dt)
                x = x + dt * model(x, t_m, cond_ref)
        if not torch.equal(staged_sample, x):
            ok = False
            break
    return CheckResult(
        "single_stage_degeneracy_bitwise",
        ok,
        f"{cases} cases, paths and 8-step trajectories compared with torch.equal",
    )


# --- gradient checks ------------------------------------------------------------


def central_difference_check(
    loss_fn: Callable[[], torch.Tensor],
    params: dict[str, torch.nn.Parameter],
    eps: float = 1e-5,
) -> float:
    """Max elementwise relative error between autograd gradients and
    central differences.  ``loss_fn`` must be deterministic in the
    parameters (re-derive any RNG inside).  The relative error uses
    denominator max(|g_a| + |g_n|, 1e-6), so elements with negligible
    gradient are compared absolutely at the 1e-6 scale."""
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in params.items()
    }
    worst = 0.0
    with torch.no_grad():
        for name, p in params.items():
            flat = p.reshape(-1)
            ga = analytic[name].reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                gn = (up - down) / (2.0 * eps)
                denom = max(abs(float(ga[i])) + abs(gn), 1e-6)
                worst = max(worst, abs(float(ga[i]) - gn) / denom)
    return worst


def _micro_velocity(seed: int) -> tuple[VelocityNet, ModelDims]:
    dims = ModelDims(token_dim=4, d_model=8, n_heads=2, n_blocks=1, n_classes=2)
    model = build_velocity_net(dims, seed).double()
    # the zero-initialized output head would hide gradient paths; give it
    # small nonzero weights for the check
    g = make_generator("gradcheck_head", seed)
    with torch.no_grad():
        model.token_out.weight.normal_(0.0, 0.05, generator=g)
        model.token_out.bias.normal_(0.0, 0.05, generator=g)
    return model, dims


def check_gradients(tolerance: float = 1e-4, seed: int = 0) -> CheckResult:
    errors: dict[str, float] = {}

    # autoencoder loss
    vdims = VaeDims(
        n_frames=8, frame_dim=4, token_count=2, token_dim=4,
        internal_dim=8, n_heads=2, n_blocks=1, use_adapter=True,
    )
    vae = build_motion_vae(vdims, seed).double()
    g_data = make_generator("gradcheck_vae_data", seed)
    batch = torch.randn(2, 8, 4, generator=g_data, dtype=torch.float64)
    mean = torch.zeros(4, dtype=torch.float64)
    std = torch.ones(4, dtype=torch.float64)

    def vae_loss() -> torch.Tensor:
        terms = vae_loss_terms(
            vae, batch, make_generator("gradcheck_vae", seed), 0.1, mean, std, ((0, 1),)
        )
        return terms["total"]

    errors["vae"] = central_difference_check(vae_loss, dict(vae.named_parameters()))

    # staged prior loss (two stages so the jump path participates)
    model, dims = _micro_velocity(seed)
    schedule = build_schedule(2, 2, (3, 2), 1.0 / 3.0)
    g_data = make_generator("gradcheck_prior_data", seed)
    z1 = torch.randn(3, 2, dims.token_dim, generator=g_data, dtype=torch.float64)
    cond_p = torch.randint(0, dims.n_classes, (3,), generator=g_data)

    def prior_loss() -> torch.Tensor:
        loss, _ = pflow_loss_step(
            model, z1, cond_p, schedule, make_generator("gradcheck_prior", seed)
        )
        return loss

    errors["prior"] = central_difference_check(prior_loss, dict(model.named_parameters()))

    # reaction loss through the context adapter
    rmodel, rdims = _micro_velocity(seed + 1)
    adims = AdapterDims(token_dim=4, n_heads=2, n_blocks=1, max_agents=4, use_agent_ids=True)
    adapter = build_context_adapter(adims, seed).double()
    g_data = make_generator("gradcheck_reaction_data", seed)
    ctx_latents = torch.randn(2, 2, 2, 4, generator=g_data, dtype=torch.float64)
    target = torch.randn(2, 2, 4, generator=g_data, dtype=torch.float64)
    cond_r = torch.randint(0, rdims.n_classes, (2,), generator=g_data)

    def reaction_loss() -> torch.Tensor:
        context = build_context(adapter, ctx_latents)
        loss, _ = sflow_loss_step(
            rmodel, context, target, cond_r, make_generator("gradcheck_reaction", seed), 0.5
        )
        return loss

    joint = dict(rmodel.named_parameters())
    joint.update({f"adapter.{k}": v for k, v in adapter.named_parameters()})
    errors["reaction"] = central_difference_check(reaction_loss, joint)

    worst = max(errors.values())
    detail = ", ".join(f"{k}={v:.3e}" for k, v in errors.items())
    return CheckResult(
        "gradcheck_double_precision", worst < tolerance, f"max rel err {detail}"
    )


# --- suite -----------------------------------------------------------------------


def run_verification(
    cfg: RunConfig, fast: bool = False, log: Callable[[str], None] | None = None
) -> list[CheckResult]:
    """Run all checks, print one line each via ``log``, and raise
    ``VerificationError`` if any fail.  ``fast`` shrinks the Monte-Carlo
    draw count for smoke runs."""
    # the mean tolerance assumes the full draw count; fast mode shrinks it
    # only as far as the Monte-Carlo error allows
    draws = 60_000 if fast else None
    checks = [
        check_jump_coefficients(),
        check_jump_continuity(cfg.evaluation, draws=draws),
        check_resampling(cfg.seed),
        check_solver(cfg.evaluation),
        check_degeneracy(cases=5 if fast else 20, seed=cfg.seed),
        check_gradients(seed=cfg.seed),
    ]
    for check in checks:
        if log is not None:
            log(check.line())
    failed = [c.name for c in checks if not c.passed]
    if failed:
        raise VerificationError(f"verification failed: {', '.join(failed)}")
    return checks
