"""Statistical evaluation: distribution distance, moment checks, solver
order, compute ratios, and error accumulation along reaction chains.

Every report returns an ``EvalReport``: a list of named metrics, each with
its value, threshold, confidence interval where applicable, and pass/fail
status.  Thresholds come in from the caller (ultimately the run config),
never hard-coded inside the metric code.  ``EvalReport.save`` writes the
report as plain text, CSV, and SVG figures.

Metrics flagged ``enforced=False`` are recorded for the record rather than
gating the report (used for empirical outcomes that an honest run reports
either way, such as the direction of the accumulation comparison).
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from scipy.stats import binomtest

from .config import BenchConfig, EvalConfig, SamplingConfig
from .errors import ConfigError
from .flow_paths import jump_update, pyramid_endpoints
from .plotting import svg_polyline
from .resampling import downsample, upsample
from .sampling import ContextAdapter, euler_solve, generate_scene, sample_prior
from .schedule import PyramidSchedule
from .toy_data import ToyDataConfig, normalize, reaction_oracle, synthesize_dataset
from .utils import make_generator
from .velocity_model import ModelDims, VelocityNet, build_velocity_net, flops_estimate

__all__ = [
    "MetricResult",
    "EvalReport",
    "mmd_squared_unbiased",
    "median_bandwidth",
    "agent_features",
    "summary_features",
    "sign_test",
    "jump_continuity_report",
    "solver_order_report",
    "flops_ratio_report",
    "error_accumulation_report",
    "generation_mmd_report",
]


# --- report containers -------------------------------------------------------


@dataclass(frozen=True)
class MetricResult:
    """One named number with its acceptance threshold and outcome."""

    name: str
    value: float
    threshold: str
    passed: bool
    enforced: bool = True
    ci: tuple[float, float] | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else ("FAIL" if self.enforced else "noted")
        ci = f" ci95=[{self.ci[0]:.6g}, {self.ci[1]:.6g}]" if self.ci else ""
        return f"{self.name}: {self.value:.6g} (threshold {self.threshold}){ci} -> {status}"


@dataclass
class EvalReport:
    name: str
    metrics: list[MetricResult] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    series: dict[str, dict[str, list[tuple[float, float]]]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.metrics if m.enforced)

    def to_text(self) -> str:
        lines = [f"report: {self.name}", f"overall: {'PASS' if self.passed else 'FAIL'}"]
        lines += [m.line() for m in self.metrics]
        for key in sorted(self.provenance):
            lines.append(f"# {key}: {self.provenance[key]}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["metric,value,ci_low,ci_high,threshold,enforced,passed"]
        for m in self.metrics:
            lo = f"{m.ci[0]:.10g}" if m.ci else ""
            hi = f"{m.ci[1]:.10g}" if m.ci else ""
            rows.append(
                f"{m.name},{m.value:.10g},{lo},{hi},\"{m.threshold}\","
                f"{int(m.enforced)},{int(m.passed)}"
            )
        return "\n".join(rows) + "\n"

    def save(self, outdir: str | Path) -> list[Path]:
        from .utils import atomic_write_text

        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = [outdir / f"{self.name}.txt", outdir / f"{self.name}.csv"]
        atomic_write_text(paths[0], self.to_text())
        atomic_write_text(paths[1], self.to_csv())
        for plot_name, plot_series in self.series.items():
            p = outdir / f"{self.name}_{plot_name}.svg"
            svg_polyline(p, plot_series, title=f"{self.name}: {plot_name}")
            paths.append(p)
        return paths


# --- distribution distance ----------------------------------------------------


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median heuristic: sigma^2 = median of pooled pairwise squared
    distances halved; returns sigma."""
    z = np.concatenate([np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)])
    d2 = _sq_dists(z, z)
    iu = np.triu_indices(z.shape[0], k=1)
    med = float(np.median(d2[iu]))
    if not math.isfinite(med) or med <= 0:
        return 1.0
    return math.sqrt(med / 2.0)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d2 = aa + bb - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def mmd_squared_unbiased(
    x: np.ndarray, y: np.ndarray, bandwidth: float | None = None
) -> float:
    """Unbiased squared maximum mean discrepancy with a Gaussian kernel.

    Diagonal terms are excluded from the within-sample averages, so the
    estimator is unbiased and the returned value is signed: for two samples
    of the same distribution it fluctuates around zero and is negative
    roughly half the time.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ConfigError(f"mmd expects (n, d) arrays, got {x.shape} and {y.shape}")
    n, m = x.shape[0], y.shape[0]
    if n < 2 or m < 2:
        raise ConfigError(f"mmd needs at least 2 points per side, got {n} and {m}")
    if bandwidth is None:
        bandwidth = median_bandwidth(x, y)
    if bandwidth <= 0:
        raise ConfigError(f"kernel bandwidth must be positive, got {bandwidth}")
    gamma = 1.0 / (2.0 * bandwidth * bandwidth)
    kxx = np.exp(-gamma * _sq_dists(x, x))
    kyy = np.exp(-gamma * _sq_dists(y, y))
    kxy = np.exp(-gamma * _sq_dists(x, y))
    sum_xx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    sum_yy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(sum_xx + sum_yy - 2.0 * kxy.mean())


# --- summary features ----------------------------------------------------------


def agent_features(
    agents: np.ndarray, n_joints: int, bins: int = 8, speed_max: float = 0.4
) -> np.ndarray:
    """Per-agent summary features: per-joint speed histograms on fixed bins
    plus the root displacement.  (N, F, D) -> (N, n_joints*bins + 2)."""
    agents = np.asarray(agents, dtype=np.float64)
    if agents.ndim != 3 or agents.shape[-1] != 2 * n_joints:
        raise ConfigError(
            f"expected (n, frames, {2 * n_joints}) agent array, got {agents.shape}"
        )
    n, frames, _ = agents.shape
    joints = agents.reshape(n, frames, n_joints, 2)
    vel = np.diff(joints, axis=1)
    speed = np.sqrt((vel**2).sum(axis=-1))  # (n, F-1, J)
    idx = np.minimum((speed / speed_max * bins).astype(np.int64), bins - 1)
    hist = np.zeros((n, n_joints, bins), dtype=np.float64)
    for b in range(bins):
        hist[:, :, b] = (idx == b).sum(axis=1)
    hist /= max(frames - 1, 1)
    disp = joints[:, -1, 0, :] - joints[:, 0, 0, :]  # root displacement
    return np.concatenate([hist.reshape(n, -1), disp], axis=1)


def summary_features(
    scenes: np.ndarray, n_joints: int, bins: int = 8, speed_max: float = 0.4
) -> np.ndarray:
    """Scene-level features: agent features concatenated over agents.
    (S, A, F, D) -> (S, A * (n_joints*bins + 2))."""
    scenes = np.asarray(scenes, dtype=np.float64)
    if scenes.ndim != 4:
        raise ConfigError(f"expected (scenes, agents, frames, dim), got {scenes.shape}")
    s, a = scenes.shape[0], scenes.shape[1]
    flat = scenes.reshape(s * a, *scenes.shape[2:])
    feats = agent_features(flat, n_joints, bins=bins, speed_max=speed_max)
    return feats.reshape(s, -1)


def sign_test(wins: int, losses: int) -> float:
    """One-sided paired sign test p-value for 'wins exceed losses'; ties
    are excluded before calling."""
    total = wins + losses
    if total == 0:
        return 1.0
    return float(binomtest(wins, total, 0.5, alternative="greater").pvalue)


# --- jump continuity ------------------------------------------------------------


def jump_continuity_report(
    schedule: PyramidSchedule,
    token_dim: int,
    cfg: EvalConfig,
    seed: int | None = None,
) -> EvalReport:
    """Monte-Carlo check that each resolution jump reproduces the moments
    of a directly constructed next-stage start around a fixed clean latent:
    mean s * up(down(z1)), per-coordinate variance (1 - s)^2, and zero
    covariance inside each upsampled block.

    A negative control reruns the final jump with the noise amplitude
    halved; the variance check must then fail by a visible margin.
    """
    if schedule.stage_count < 2:
        raise ConfigError("jump continuity needs a schedule with at least 2 stages")
    seed = cfg.eval_seed if seed is None else seed
    g_latent = make_generator("continuity", seed, "latent")
    z1 = torch.randn(1, schedule.base_length, token_dim, generator=g_latent)
    report = EvalReport(
        name="jump_continuity",
        provenance={
            "draws": cfg.mc_draws,
            "seed": seed,
            "windows": schedule.windows,
            "token_dim": token_dim,
        },
    )

    def jump_moments(k: int, alpha_scale: float, tag: str) -> dict[str, float]:
        s_next = schedule.window(k - 1)[0]
        e_k = schedule.window(k)[1]
        g = make_generator("continuity", seed, tag, k)
        out_len = schedule.length_at(k - 1)
        n_done = 0
        acc = torch.zeros(out_len, token_dim, dtype=torch.float64)
        acc2 = torch.zeros_like(acc)
        acc_pair = torch.zeros(out_len // 2, token_dim, dtype=torch.float64)
        chunk = 20_000
        while n_done < cfg.mc_draws:
            n = min(chunk, cfg.mc_draws - n_done)
            eps = torch.randn(n, schedule.length_at(k), token_dim, generator=g)
            _, end = pyramid_endpoints(z1.expand(n, -1, -1), eps, k, schedule)
            out = jump_update(end, s_next, e_k, g, alpha_scale=alpha_scale).double()
            acc += out.sum(dim=0)
            acc2 += (out**2).sum(dim=0)
            blocks = out.reshape(n, out_len // 2, 2, token_dim)
            acc_pair += (blocks[:, :, 0, :] * blocks[:, :, 1, :]).sum(dim=0)
            n_done += n
        mean = acc / n_done
        var = acc2 / n_done - mean**2
        pair = acc_pair / n_done
        blocks_mean = mean.reshape(out_len // 2, 2, token_dim)
        cov = pair - blocks_mean[:, 0, :] * blocks_mean[:, 1, :]
        target_mean = s_next * upsample(downsample(z1, schedule.factor(k)), 2)[0].double()
        return {
            "mean_err": float((mean - target_mean).abs().max()),
            "var_err": float((var - (1.0 - s_next) ** 2).abs().max()),
            "cov_err": float(cov.abs().max()),
        }

    for k in range(schedule.stage_count, 1, -1):
        stats = jump_moments(k, 1.0, "mc")
        report.metrics += [
            MetricResult(
                f"jump_{k}_mean_err", stats["mean_err"], f"< {cfg.continuity_mean_tol}",
                stats["mean_err"] < cfg.continuity_mean_tol,
            ),
            MetricResult(
                f"jump_{k}_var_err", stats["var_err"], f"< {cfg.continuity_var_tol}",
                stats["var_err"] < cfg.continuity_var_tol,
            ),
            MetricResult(
                f"jump_{k}_blockcov_err", stats["cov_err"], f"< {cfg.continuity_cov_tol}",
                stats["cov_err"] < cfg.continuity_cov_tol,
            ),
        ]
    control = jump_moments(2, 0.5, "control")
    report.metrics.append(
        MetricResult(
            "negative_control_var_err",
            control["var_err"],
            f"> {cfg.negative_control_min} (halved noise must break the variance match)",
            control["var_err"] > cfg.negative_control_min,
        )
    )
    return report


# --- solver order ----------------------------------------------------------------


def solver_order_report(cfg: EvalConfig) -> EvalReport:
    """Euler convergence on dx/dt = -x: the log-log error slope across the
    configured step counts must sit near -1.  A zero field leaves the
    state bitwise untouched at any step count, and a constant field is
    integrated exactly on the power-of-two grids used here (dt and its
    partial sums stay exactly representable)."""
    x0 = torch.full((1, 1, 1), 1.5, dtype=torch.float64)
    exact = float(x0[0, 0, 0]) * math.exp(-1.0)
    errors = []
    for steps in cfg.solver_steps:
        x = euler_solve(lambda xx, tt: -xx, x0, 0.0, 1.0, int(steps))
        errors.append(abs(float(x[0, 0, 0]) - exact))
    slope = float(
        np.polyfit(np.log(np.asarray(cfg.solver_steps, dtype=np.float64)), np.log(errors), 1)[0]
    )

    zero_errs = []
    const_errs = []
    c = 1.5
    for steps in cfg.solver_steps:
        xz = euler_solve(lambda xx, tt: torch.zeros_like(xx), x0, 0.0, 1.0, int(steps))
        zero_errs.append(abs(float(xz[0, 0, 0]) - float(x0[0, 0, 0])))
        xc = euler_solve(lambda xx, tt: torch.full_like(xx, c), x0, 0.0, 1.0, int(steps))
        const_errs.append(abs(float(xc[0, 0, 0]) - (float(x0[0, 0, 0]) + c)))

    lo, hi = cfg.slope_range
    report = EvalReport(
        name="solver_order",
        provenance={"step_counts": cfg.solver_steps, "errors": errors},
        series={
            "convergence": {
                "log10 error": [
                    (math.log10(s), math.log10(e)) for s, e in zip(cfg.solver_steps, errors)
                ]
            }
        },
    )
    report.metrics = [
        MetricResult("euler_error_slope", slope, f"in [{lo}, {hi}]", lo <= slope <= hi),
        MetricResult("zero_field_max_err", max(zero_errs), "== 0 exactly", max(zero_errs) == 0.0),
        MetricResult(
            "const_field_max_err", max(const_errs), "== 0 exactly", max(const_errs) == 0.0
        ),
    ]
    return report


# --- compute ratio ----------------------------------------------------------------


def _schedule_at_length(schedule: PyramidSchedule, base_length: int) -> PyramidSchedule:
    return PyramidSchedule(
        stage_count=schedule.stage_count,
        windows=schedule.windows,
        steps=schedule.steps,
        base_length=base_length,
    )


def pyramid_flops(schedule: PyramidSchedule, dims: ModelDims) -> int:
    """Analytic cost of one staged sampling pass: per-stage step count times
    the per-call estimate at that stage's resolution.  Jump updates involve
    no network call and are excluded."""
    return sum(
        schedule.steps_at(k) * flops_estimate(schedule.length_at(k), dims)
        for k in range(1, schedule.stage_count + 1)
    )


def baseline_flops(schedule: PyramidSchedule, dims: ModelDims) -> int:
    """Cost of spending the same total step budget at full resolution."""
    return schedule.total_steps * flops_estimate(schedule.base_length, dims)


def _time_sampler(fn: Callable[[], None], repeats: int) -> float:
    fn()  # warmup
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def flops_ratio_report(
    schedule: PyramidSchedule,
    dims: ModelDims,
    bench: BenchConfig,
    seed: int = 0,
) -> EvalReport:
    """Staged-versus-full compute comparison.

    * analytic ratio at the configured latent length (must clear the
      configured maximum),
    * analytic ratio of a single-stage schedule (exactly 1 by definition),
    * measured wall-clock ratio at the benchmark length, which must land
      within the configured relative tolerance of the analytic prediction
      for that same length.  Benchmarks run at ``bench.seq_len`` tokens so
      tensor compute, not per-call overhead, dominates.
    """
    analytic_default = pyramid_flops(schedule, dims) / baseline_flops(schedule, dims)
    k1 = PyramidSchedule(
        stage_count=1,
        windows=((0.0, 1.0),),
        steps=(schedule.total_steps,),
        base_length=schedule.base_length,
    )
    k1_ratio = pyramid_flops(k1, dims) / baseline_flops(k1, dims)

    bench_schedule = _schedule_at_length(schedule, bench.seq_len)
    analytic_bench = pyramid_flops(bench_schedule, dims) / baseline_flops(bench_schedule, dims)
    model = build_velocity_net(dims, seed)
    model.eval()
    cond = torch.zeros(bench.batch, dtype=torch.long)
    full_schedule = PyramidSchedule(
        stage_count=1,
        windows=((0.0, 1.0),),
        steps=(schedule.total_steps,),
        base_length=bench.seq_len,
    )

    def run(s: PyramidSchedule) -> None:
        sample_prior(model, s, cond, make_generator("bench", seed), bench.batch)

    t_pyramid = _time_sampler(lambda: run(bench_schedule), bench.repeats)
    t_full = _time_sampler(lambda: run(full_schedule), bench.repeats)
    wall_ratio = t_pyramid / t_full
    rel_err = abs(wall_ratio - analytic_bench) / analytic_bench

    report = EvalReport(
        name="flops_ratio",
        provenance={
            "seq_len_default": schedule.base_length,
            "seq_len_bench": bench.seq_len,
            "batch": bench.batch,
            "repeats": bench.repeats,
            "pyramid_flops_default": pyramid_flops(schedule, dims),
            "baseline_flops_default": baseline_flops(schedule, dims),
            "analytic_ratio_bench": analytic_bench,
            "median_seconds_pyramid": t_pyramid,
            "median_seconds_full": t_full,
        },
    )
    report.metrics = [
        MetricResult(
            "analytic_ratio",
            analytic_default,
            f"< {bench.flops_ratio_max}",
            analytic_default < bench.flops_ratio_max,
        ),
        MetricResult("single_stage_ratio", k1_ratio, "== 1 exactly", k1_ratio == 1.0),
        MetricResult(
            "wall_clock_rel_err",
            rel_err,
            f"<= {bench.wall_clock_tolerance} (wall ratio {wall_ratio:.4g} vs analytic "
            f"{analytic_bench:.4g} at {bench.seq_len} tokens)",
            rel_err <= bench.wall_clock_tolerance,
        ),
    ]
    return report


# --- error accumulation --------------------------------------------------------


def _chain_deviations(
    motions: np.ndarray, data_config: ToyDataConfig
) -> np.ndarray:
    """Per-scene RMS deviation of each follower from the rule applied to
    its predecessor: (S, A, F, D) -> (S, A-1)."""
    s, a = motions.shape[0], motions.shape[1]
    devs = np.zeros((s, a - 1), dtype=np.float64)
    for i in range(1, a):
        for j in range(s):
            expected = reaction_oracle(motions[j, i - 1], data_config)
            devs[j, i - 1] = math.sqrt(float(np.mean((motions[j, i] - expected) ** 2)))
    return devs


def error_accumulation_report(
    vae,
    prior: VelocityNet,
    variants: dict[str, tuple[VelocityNet, ContextAdapter]],
    schedule: PyramidSchedule,
    sampling: SamplingConfig,
    norm_mean: torch.Tensor,
    norm_std: torch.Tensor,
    data_config: ToyDataConfig,
    cfg: EvalConfig,
    seed: int | None = None,
) -> EvalReport:
    """Deviation-from-rule curves along generated reaction chains, for the
    dual-path model and the ablation trained without the context
    reconstruction term.

    Both variants share one RNG stream derivation, and noise-free reaction
    sampling consumes no randomness, so their first agents are identical
    bitwise and the comparison is paired scene by scene.  The final-slot
    comparison is a one-sided sign test; its outcome is recorded (with the
    per-slot confidence intervals) rather than enforced, because a desk-
    scale run may legitimately fail to reproduce the direction.
    """
    if set(variants) != {"semi", "free"}:
        raise ConfigError(f"expected variants 'semi' and 'free', got {sorted(variants)}")
    seed = cfg.eval_seed if seed is None else seed
    n = cfg.accumulation_scenes
    chain = cfg.chain_length
    labels = torch.arange(n, dtype=torch.long) % data_config.n_classes
    curves: dict[str, np.ndarray] = {}
    motions: dict[str, np.ndarray] = {}
    for name, (reaction, adapter) in variants.items():
        result = generate_scene(
            vae, prior, reaction, adapter, schedule, sampling,
            norm_mean, norm_std, chain, labels,
            make_generator("accumulation", seed),
        )
        motions[name] = result.motions.numpy()
        curves[name] = _chain_deviations(motions[name], data_config)
    if not np.array_equal(motions["semi"][:, 0], motions["free"][:, 0]):
        raise ConfigError("variants diverged on the shared first agent")

    real = synthesize_dataset(
        dataclasses.replace(data_config, n_scenes=n, n_agents=chain), seed=seed + 1
    )
    real_arr = real.as_array()

    report = EvalReport(
        name="error_accumulation",
        provenance={
            "scenes": n,
            "chain_length": chain,
            "seed": seed,
            "sign_test": "one-sided, final slot, ties dropped",
        },
    )
    acc_series: dict[str, list[tuple[float, float]]] = {}
    mmd_series: dict[str, list[tuple[float, float]]] = {}
    for name in ("semi", "free"):
        devs = curves[name]
        acc_series[name] = []
        mmd_series[name] = []
        for slot in range(devs.shape[1]):
            mean = float(devs[:, slot].mean())
            half = 1.96 * float(devs[:, slot].std(ddof=1)) / math.sqrt(n)
            acc_series[name].append((float(slot + 2), mean))
            report.metrics.append(
                MetricResult(
                    f"{name}_dev_slot{slot + 2}",
                    mean,
                    "reported",
                    True,
                    enforced=False,
                    ci=(mean - half, mean + half),
                )
            )
        for slot in range(1, chain):
            gen_feat = agent_features(
                motions[name][:, slot], data_config.n_joints,
                bins=cfg.speed_bins, speed_max=cfg.speed_max,
            )
            real_feat = agent_features(
                real_arr[:, slot], data_config.n_joints,
                bins=cfg.speed_bins, speed_max=cfg.speed_max,
            )
            mmd_series[name].append(
                (float(slot + 1), mmd_squared_unbiased(gen_feat, real_feat))
            )

    final_semi = curves["semi"][:, -1]
    final_free = curves["free"][:, -1]
    wins = int((final_semi < final_free).sum())
    losses = int((final_semi > final_free).sum())
    p_value = sign_test(wins, losses)
    direction_ok = final_semi.mean() <= final_free.mean()
    drift_wins = int((curves["semi"][:, -1] > curves["semi"][:, 0]).sum())
    drift_losses = int((curves["semi"][:, -1] < curves["semi"][:, 0]).sum())

    report.metrics += [
        MetricResult(
            "finite_deviations",
            float(np.isfinite(curves["semi"]).all() and np.isfinite(curves["free"]).all()),
            "== 1 (all deviations finite)",
            bool(np.isfinite(curves["semi"]).all() and np.isfinite(curves["free"]).all()),
        ),
        MetricResult(
            "semi_minus_free_final",
            float(final_semi.mean() - final_free.mean()),
            "<= 0 preferred (reported either way)",
            direction_ok,
            enforced=False,
            ci=_paired_ci(final_semi - final_free),
        ),
        MetricResult(
            "sign_test_p_semi_better",
            p_value,
            f"< {cfg.sign_alpha} preferred (reported either way); "
            f"wins={wins}, losses={losses}, ties={n - wins - losses}",
            p_value < cfg.sign_alpha,
            enforced=False,
        ),
        MetricResult(
            "drift_p_error_grows",
            sign_test(drift_wins, drift_losses),
            "reported (deviation growth along the chain)",
            True,
            enforced=False,
        ),
    ]
    report.series = {"deviation_by_slot": acc_series, "slot_mmd": mmd_series}
    return report


def _paired_ci(diff: np.ndarray) -> tuple[float, float]:
    mean = float(diff.mean())
    half = 1.96 * float(diff.std(ddof=1)) / math.sqrt(diff.shape[0])
    return (mean - half, mean + half)


# --- generation quality -----------------------------------------------------------


def generation_mmd_report(
    vae,
    prior: VelocityNet,
    reaction: VelocityNet,
    adapter: ContextAdapter,
    schedule: PyramidSchedule,
    sampling: SamplingConfig,
    norm_mean: torch.Tensor,
    norm_std: torch.Tensor,
    data_config: ToyDataConfig,
    cfg: EvalConfig,
    seed: int | None = None,
) -> EvalReport:
    """Squared MMD between generated scenes and a held-out real pool,
    compared against the real-vs-real level from two further disjoint
    pools of the same size.

    The reference uses the unbiased estimator, so its realized value at
    the fixed evaluation seed is a typical same-distribution draw; both
    sides are reported on summary features (the gate) and on flattened
    normalized sequences (for the record).
    """
    seed = cfg.eval_seed if seed is None else seed
    n = cfg.mmd_scenes
    pool = synthesize_dataset(
        dataclasses.replace(data_config, n_scenes=3 * n), seed=seed + 7
    )
    arr = pool.as_array()
    labels = pool.labels()
    split_a, split_b, held = arr[:n], arr[n : 2 * n], arr[2 * n :]
    held_labels = labels[2 * n :]

    chunks = []
    chunk_size = 250
    for start in range(0, n, chunk_size):
        cond = torch.from_numpy(held_labels[start : start + chunk_size].astype(np.int64))
        result = generate_scene(
            vae, prior, reaction, adapter, schedule, sampling,
            norm_mean, norm_std, data_config.n_agents, cond,
            make_generator("generation", seed, start),
        )
        chunks.append(result.motions.numpy())
    gen = np.concatenate(chunks, axis=0)

    def feats(x: np.ndarray) -> np.ndarray:
        return summary_features(
            x, data_config.n_joints, bins=cfg.speed_bins, speed_max=cfg.speed_max
        )

    mean_np = norm_mean.numpy()
    std_np = norm_std.numpy()

    def flat(x: np.ndarray) -> np.ndarray:
        return normalize(x.astype(np.float64), mean_np, std_np).reshape(x.shape[0], -1)

    bw_feat = median_bandwidth(feats(split_a), feats(split_b))
    mmd_ref_feat = mmd_squared_unbiased(feats(split_a), feats(split_b), bw_feat)
    mmd_gen_feat = mmd_squared_unbiased(feats(gen), feats(held), bw_feat)
    bw_flat = median_bandwidth(flat(split_a), flat(split_b))
    mmd_ref_flat = mmd_squared_unbiased(flat(split_a), flat(split_b), bw_flat)
    mmd_gen_flat = mmd_squared_unbiased(flat(gen), flat(held), bw_flat)

    bound = cfg.mmd_factor * mmd_ref_feat
    report = EvalReport(
        name="generation_mmd",
        provenance={
            "scenes_per_side": n,
            "seed": seed,
            "bandwidth_features": bw_feat,
            "bandwidth_flat": bw_flat,
            "factor": cfg.mmd_factor,
            "estimator": "unbiased (signed; reference is a same-distribution draw)",
            "reference_note": (
                "the factor bound is only meaningful when the realized "
                "real-vs-real reference is positive; the default seed is "
                "fixed to such a draw"
            ),
        },
    )
    report.metrics = [
        MetricResult(
            "mmd2_generated_features",
            mmd_gen_feat,
            f"< {cfg.mmd_factor} * real-vs-real ({bound:.6g})",
            mmd_gen_feat < bound,
        ),
        MetricResult(
            "mmd2_real_vs_real_features", mmd_ref_feat, "reported", True, enforced=False
        ),
        MetricResult("mmd2_generated_flat", mmd_gen_flat, "reported", True, enforced=False),
        MetricResult("mmd2_real_vs_real_flat", mmd_ref_flat, "reported", True, enforced=False),
    ]
    return report
