"""Acceptance gate: every release criterion exercised end to end.

Each test computes one criterion at its stated tolerance and records a
single ``A<n> ...: PASS/FAIL`` line that the terminal summary prints
after the run.  The trained criteria (A5, A7, A9) share one module-scoped
fixture that trains the full pipeline from scratch at the default desk
budgets (roughly seven minutes of CPU); everything else is analytic and
runs in seconds.

A9 compares generated scenes against held-out real ones at a gate of
three times the real-vs-real MMD level.  At these model sizes the
autoencoder's compression residual alone sits well above that gate, so
the criterion is expected to fail; the test still runs it faithfully and
reports the measured values rather than loosening the gate.
"""

import csv
import dataclasses
import shutil
import time
from types import SimpleNamespace

import numpy as np
import pytest
import torch

from motionflow import __version__
from motionflow.cli import main
from motionflow.config import (
    AdapterDims,
    ModelDims,
    SamplingConfig,
    ToyDataConfig,
    TrainConfig,
    TrainSection,
    VaeDims,
    default_config,
    load_config,
    save_config,
)
from motionflow.evaluation import (
    error_accumulation_report,
    flops_ratio_report,
    generation_mmd_report,
    jump_continuity_report,
    solver_order_report,
)
from motionflow.pipeline import load_bundle
from motionflow.toy_data import load_dataset, normalize, split_indices
from motionflow.verification import (
    check_degeneracy,
    check_gradients,
    check_jump_coefficients,
)


def _record(lines: list, cid: str, title: str, passed: bool, detail: str) -> None:
    lines.append(f"{cid} {title}: {'PASS' if passed else 'FAIL'} — {detail}")


def _metric(report, name):
    for m in report.metrics:
        if m.name == name:
            return m
    raise AssertionError(f"report {report.name} has no metric {name}")


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Full pipeline trained from scratch at the default budgets, plus the
    no-context-reconstruction ablation sharing the same vae and prior."""
    root = tmp_path_factory.mktemp("acceptance")
    data = root / "data.umfd"
    assert main(["synth", "--out", str(data)]) == 0
    work, ablation = root / "main", root / "ablation"
    for stage in ("vae", "prior", "reaction"):
        assert (
            main(
                ["train", "--stage", stage, "--data", str(data), "--workdir", str(work)]
            )
            == 0
        )
    ablation.mkdir()
    shutil.copy(work / "vae.umfw", ablation / "vae.umfw")
    shutil.copy(work / "prior.umfw", ablation / "prior.umfw")
    assert (
        main(
            [
                "train",
                "--stage",
                "reaction",
                "--data",
                str(data),
                "--workdir",
                str(ablation),
                "--set",
                "train.reaction.lambda_recon=0",
            ]
        )
        == 0
    )
    cfg = default_config()
    return SimpleNamespace(
        cfg=cfg,
        data=data,
        bundle=load_bundle(work, cfg),
        ablation=load_bundle(ablation, cfg),
        loss_csv=work / "vae_loss.csv",
    )


def test_a1_jump_moment_continuity(acceptance_lines):
    cfg = default_config()
    t0 = time.perf_counter()
    report = jump_continuity_report(
        cfg.schedule.build(), cfg.prior_model.token_dim, cfg.evaluation
    )
    elapsed = time.perf_counter() - t0
    mean_err = _metric(report, "jump_2_mean_err").value
    var_err = _metric(report, "jump_2_var_err").value
    cov_err = _metric(report, "jump_2_blockcov_err").value
    control = _metric(report, "negative_control_var_err").value
    passed = report.passed and elapsed < 60.0
    _record(
        acceptance_lines,
        "A1",
        "resolution-jump moment continuity",
        passed,
        f"{cfg.evaluation.mc_draws} draws: mean err {mean_err:.2e} < 1e-2, "
        f"var err {var_err:.2e} < 2e-2, block-cov err {cov_err:.2e} < 2e-2, "
        f"halved-noise control err {control:.3f} > 0.1, {elapsed:.1f}s",
    )
    assert passed


def test_a2_jump_coefficient_closed_forms(acceptance_lines):
    result = check_jump_coefficients()  # s in {0.1, 1/3, 0.5, 0.9}, tol 1e-12
    _record(
        acceptance_lines,
        "A2",
        "jump coefficients match the moment-matching oracle",
        result.passed,
        result.detail,
    )
    assert result.passed


def test_a3_single_stage_degeneracy(acceptance_lines):
    result = check_degeneracy(cases=20)
    _record(
        acceptance_lines,
        "A3",
        "single-stage schedule is bitwise plain rectified flow",
        result.passed,
        result.detail,
    )
    assert result.passed


def test_a4_solver_convergence_order(acceptance_lines):
    cfg = default_config()
    report = solver_order_report(cfg.evaluation)
    slope = _metric(report, "euler_error_slope").value
    const_err = _metric(report, "const_field_max_err").value
    _record(
        acceptance_lines,
        "A4",
        "Euler solver is first order",
        report.passed,
        f"log-log slope {slope:.4f} in [-1.2, -0.8], "
        f"constant-field error {const_err} (exactly 0 required)",
    )
    assert report.passed


def test_a5_reaction_chain_error_direction(trained, acceptance_lines):
    cfg = trained.cfg
    b, a = trained.bundle, trained.ablation
    report = error_accumulation_report(
        b.vae,
        b.prior,
        {"semi": (b.reaction, b.adapter), "free": (a.reaction, a.adapter)},
        b.schedule,
        cfg.sampling,
        b.norm_mean,
        b.norm_std,
        cfg.data,
        cfg.evaluation,
    )
    diff = _metric(report, "semi_minus_free_final")
    p = _metric(report, "sign_test_p_semi_better").value
    replicated = diff.value <= 0.0 and p < cfg.evaluation.sign_alpha
    ci_reported = diff.ci is not None
    # The direction is a training outcome: replication passes outright, and
    # a non-replication passes only by being reported with its CI.
    passed = report.passed and (replicated or ci_reported)
    status = (
        "direction replicated"
        if replicated
        else "direction NOT replicated (recorded with CI, not blocking)"
    )
    _record(
        acceptance_lines,
        "A5",
        "context-anchored chains drift less than noise-free chains",
        passed,
        f"{status}: semi-free mean deviation {diff.value:+.4f}, "
        f"CI95 [{diff.ci[0]:.4f}, {diff.ci[1]:.4f}], sign-test p {p:.4g} "
        f"over {cfg.evaluation.accumulation_scenes} scenes at chain length "
        f"{cfg.evaluation.chain_length}",
    )
    assert passed


def test_a6_staged_compute_ratio(acceptance_lines):
    cfg = default_config()
    report = flops_ratio_report(cfg.schedule.build(), cfg.prior_model, cfg.bench)
    analytic = _metric(report, "analytic_ratio").value
    single = _metric(report, "single_stage_ratio").value
    wall = _metric(report, "wall_clock_rel_err").value
    _record(
        acceptance_lines,
        "A6",
        "staged sampling saves compute",
        report.passed,
        f"analytic staged/full ratio {analytic:.4f} < "
        f"{cfg.bench.flops_ratio_max}, wall-clock within {wall:.1%} of "
        f"analytic (tolerance {cfg.bench.wall_clock_tolerance:.0%}), "
        f"single-stage ratio {single} (exactly 1 required)",
    )
    assert report.passed


def test_a7_autoencoder_reconstruction_quality(trained, acceptance_lines):
    cfg, b = trained.cfg, trained.bundle
    dataset = load_dataset(trained.data)
    _, val_idx = split_indices(len(dataset.scenes), 0.9, cfg.seed)
    arr = dataset.as_array()[val_idx]
    norm = normalize(arr, b.norm_mean.numpy(), b.norm_std.numpy())
    x = torch.from_numpy(norm.reshape(-1, cfg.data.n_frames, cfg.data.frame_dim))
    with torch.no_grad():
        mean_latent, _ = b.vae.encode(x)
        recon = b.vae.decode(mean_latent)
    err = (recon - x).numpy().reshape(-1, cfg.data.frame_dim)
    mse_d = (err**2).mean(axis=0)
    var_d = norm.reshape(-1, cfg.data.frame_dim).var(axis=0)
    worst = float((mse_d / var_d).max())

    with open(trained.loss_csv) as fh:
        kl_values = [float(row["kl"]) for row in csv.DictReader(fh)]
    kl_min = min(kl_values)

    passed = worst < 0.05 and kl_min >= 0.0
    _record(
        acceptance_lines,
        "A7",
        "mean-latent reconstruction on held-out scenes",
        passed,
        f"worst per-dimension MSE/variance {worst:.4f} < 0.05 over "
        f"{len(val_idx)} validation scenes; KL minimum over "
        f"{len(kl_values)} steps {kl_min:.4f} >= 0",
    )
    assert passed


def test_a8_gradient_correctness(acceptance_lines):
    result = check_gradients(tolerance=1e-4)
    _record(
        acceptance_lines,
        "A8",
        "analytic gradients match central differences in double precision",
        result.passed,
        result.detail,
    )
    assert result.passed


def test_a9_generation_distribution_match(trained, acceptance_lines):
    cfg, b = trained.cfg, trained.bundle
    report = generation_mmd_report(
        b.vae,
        b.prior,
        b.reaction,
        b.adapter,
        b.schedule,
        cfg.sampling,
        b.norm_mean,
        b.norm_std,
        cfg.data,
        cfg.evaluation,
    )
    gen = _metric(report, "mmd2_generated_features").value
    ref = _metric(report, "mmd2_real_vs_real_features").value
    _record(
        acceptance_lines,
        "A9",
        "generated scenes within 3x the real-vs-real MMD level",
        report.passed,
        f"MMD^2 generated-vs-held-out {gen:.6g} vs gate "
        f"{cfg.evaluation.mmd_factor} * {ref:.6g} = "
        f"{cfg.evaluation.mmd_factor * ref:.6g}, "
        f"{cfg.evaluation.mmd_scenes} scenes per side",
    )
    assert report.passed


def _tiny_rerun_config():
    base = default_config()
    train = TrainConfig(lr=1e-3, batch_size=4, total_steps=2)
    return dataclasses.replace(
        base,
        data=ToyDataConfig(n_scenes=12, n_agents=2, n_frames=16, n_classes=2),
        vae=VaeDims(
            n_frames=16, frame_dim=10, token_count=4, token_dim=8,
            internal_dim=16, n_heads=2, n_blocks=1,
        ),
        prior_model=ModelDims(token_dim=8, d_model=16, n_heads=2, n_blocks=1, n_classes=2),
        reaction_model=ModelDims(token_dim=8, d_model=16, n_heads=2, n_blocks=1, n_classes=2),
        adapter=AdapterDims(token_dim=8, n_heads=2, n_blocks=1, max_agents=4),
        schedule=dataclasses.replace(
            base.schedule, stage_count=2, base_length=4, steps=(2, 2)
        ),
        sampling=SamplingConfig(reaction_steps=2),
        train=TrainSection(vae=train, prior=train, reaction=train),
    ).validate()


def test_a10_rerun_from_materialized_config_is_bitwise(tmp_path, acceptance_lines):
    cfg_path = tmp_path / "run.json"
    save_config(_tiny_rerun_config(), cfg_path, __version__)

    # synth: the config written next to the dataset reproduces it.
    data1 = tmp_path / "data.umfd"
    assert main(["synth", "--config", str(cfg_path), "--out", str(data1)]) == 0
    data2 = tmp_path / "again.umfd"
    assert (
        main(
            [
                "synth",
                "--config",
                str(tmp_path / "data.config.json"),
                "--out",
                str(data2),
            ]
        )
        == 0
    )
    synth_ok = data1.read_bytes() == data2.read_bytes()

    # train: the config written into the workdir reproduces every stage.
    w1, w2 = tmp_path / "w1", tmp_path / "w2"
    for stage in ("vae", "prior", "reaction"):
        assert (
            main(
                [
                    "train",
                    "--stage",
                    stage,
                    "--config",
                    str(cfg_path),
                    "--data",
                    str(data1),
                    "--workdir",
                    str(w1),
                ]
            )
            == 0
        )
        assert (
            main(
                [
                    "train",
                    "--stage",
                    stage,
                    "--config",
                    str(w1 / "config.json"),
                    "--data",
                    str(data1),
                    "--workdir",
                    str(w2),
                ]
            )
            == 0
        )
    train_ok = all(
        (w1 / name).read_bytes() == (w2 / name).read_bytes()
        for name in ("vae.umfw", "prior.umfw", "reaction.umfw")
    )

    # sample: the config written next to the samples reproduces them.
    s1, s2 = tmp_path / "s1.umfs", tmp_path / "s2.umfs"
    assert (
        main(
            [
                "sample",
                "--config",
                str(cfg_path),
                "--workdir",
                str(w1),
                "--scenes",
                "4",
                "--out",
                str(s1),
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "sample",
                "--config",
                str(tmp_path / "s1.config.json"),
                "--workdir",
                str(w1),
                "--scenes",
                "4",
                "--out",
                str(s2),
            ]
        )
        == 0
    )
    sample_ok = s1.read_bytes() == s2.read_bytes()

    # The materialized config carries every derived default explicitly.
    materialized = load_config(tmp_path / "data.config.json")
    windows_ok = materialized.schedule.windows is not None

    passed = synth_ok and train_ok and sample_ok and windows_ok
    _record(
        acceptance_lines,
        "A10",
        "commands re-run bitwise from their materialized configs",
        passed,
        f"synth {'ok' if synth_ok else 'DIFFERS'}, "
        f"train all stages {'ok' if train_ok else 'DIFFERS'}, "
        f"sample {'ok' if sample_ok else 'DIFFERS'}, "
        f"windows {'materialized' if windows_ok else 'MISSING'}",
    )
    assert passed
