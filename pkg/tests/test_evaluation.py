"""Distribution distance, summary features, statistical reports, and the
report container."""

import math

import numpy as np
import pytest
import torch

from motionflow.config import AdapterDims, BenchConfig, EvalConfig, SamplingConfig, VaeDims
from motionflow.errors import ConfigError
from motionflow.evaluation import (
    EvalReport,
    MetricResult,
    agent_features,
    error_accumulation_report,
    flops_ratio_report,
    generation_mmd_report,
    jump_continuity_report,
    median_bandwidth,
    mmd_squared_unbiased,
    sign_test,
    solver_order_report,
    summary_features,
)
from motionflow.motion_vae import build_motion_vae
from motionflow.sampling import build_context_adapter
from motionflow.schedule import build_schedule
from motionflow.toy_data import ToyDataConfig
from motionflow.velocity_model import ModelDims, build_velocity_net

# --- MMD -----------------------------------------------------------------------


def test_mmd_of_a_set_against_itself_is_near_zero(rng):
    x = rng.normal(size=(500, 4))
    assert abs(mmd_squared_unbiased(x, x)) < 0.01


def test_mmd_of_two_standard_normal_samples_is_small(rng):
    x = rng.normal(size=(2000, 4))
    y = rng.normal(size=(2000, 4))
    assert abs(mmd_squared_unbiased(x, y)) < 0.01


def test_mmd_separates_shifted_normals(rng):
    x = rng.normal(size=(2000, 4))
    y = rng.normal(loc=3.0, size=(2000, 4))
    assert mmd_squared_unbiased(x, y) > 0.1


def test_mmd_can_be_negative_for_same_distribution(rng):
    # The unbiased estimator is signed; across independent same-distribution
    # draws it must dip below zero sometimes.
    values = []
    for rep in range(20):
        r = np.random.default_rng(rep)
        values.append(mmd_squared_unbiased(r.normal(size=(50, 2)), r.normal(size=(50, 2))))
    assert min(values) < 0.0


def test_mmd_input_validation(rng):
    with pytest.raises(ConfigError):
        mmd_squared_unbiased(rng.normal(size=(10, 3)), rng.normal(size=(10, 4)))
    with pytest.raises(ConfigError):
        mmd_squared_unbiased(rng.normal(size=(1, 3)), rng.normal(size=(10, 3)))
    with pytest.raises(ConfigError):
        mmd_squared_unbiased(rng.normal(size=(10, 3)), rng.normal(size=(10, 3)), bandwidth=0.0)


def test_median_bandwidth_hand_example():
    x = np.zeros((2, 1))
    y = np.full((2, 1), 2.0)
    # Pooled pairwise squared distances: {0, 4, 4, 4, 4, 0}; median 4.
    assert median_bandwidth(x, y) == pytest.approx(math.sqrt(2.0))


def test_median_bandwidth_degenerate_points_fall_back_to_one():
    x = np.ones((5, 3))
    assert median_bandwidth(x, x) == 1.0


# --- summary features -------------------------------------------------------------


def test_agent_features_static_agent_puts_all_mass_in_the_slowest_bin():
    n_joints, frames = 5, 16
    agents = np.ones((3, frames, 2 * n_joints))
    feats = agent_features(agents, n_joints, bins=8)
    assert feats.shape == (3, 5 * 8 + 2)
    hist = feats[:, : 5 * 8].reshape(3, 5, 8)
    assert np.allclose(hist[:, :, 0], 1.0)
    assert np.allclose(hist[:, :, 1:], 0.0)
    assert np.allclose(feats[:, -2:], 0.0)  # zero root displacement


def test_agent_features_constant_speed_lands_in_the_right_bin():
    n_joints, frames = 2, 9
    agents = np.zeros((1, frames, 4))
    # Speed 0.125 sits mid-bin (bin 2 covers [0.1, 0.15)), clear of edges.
    agents[0, :, 0] = 0.125 * np.arange(frames)
    feats = agent_features(agents, n_joints, bins=8, speed_max=0.4)
    hist = feats[:, : 2 * 8].reshape(1, 2, 8)
    assert hist[0, 0, 2] == pytest.approx(1.0)
    assert hist[0, 1, 0] == pytest.approx(1.0)  # second joint static
    np.testing.assert_allclose(feats[0, -2:], [1.0, 0.0])


def test_agent_features_overspeed_clips_into_the_last_bin():
    agents = np.zeros((1, 4, 2))
    agents[0, :, 0] = 10.0 * np.arange(4)
    feats = agent_features(agents, 1, bins=8, speed_max=0.4)
    assert feats[0, 7] == pytest.approx(1.0)


def test_summary_features_concatenate_agents_in_order(rng):
    scenes = rng.normal(size=(4, 2, 8, 10))
    feats = summary_features(scenes, 5)
    width = 5 * 8 + 2
    assert feats.shape == (4, 2 * width)
    swapped = summary_features(scenes[:, ::-1], 5)
    np.testing.assert_array_equal(feats[:, :width], swapped[:, width:])


def test_feature_shape_validation(rng):
    with pytest.raises(ConfigError):
        agent_features(rng.normal(size=(3, 8, 7)), 5)
    with pytest.raises(ConfigError):
        summary_features(rng.normal(size=(3, 8, 10)), 5)


# --- sign test ----------------------------------------------------------------------


def test_sign_test_exact_binomial_values():
    assert sign_test(10, 0) == pytest.approx(0.5**10)
    assert sign_test(5, 5) == pytest.approx(638.0 / 1024.0)
    assert sign_test(0, 10) == pytest.approx(1.0, abs=1e-12)
    assert sign_test(0, 0) == 1.0


# --- jump continuity report -----------------------------------------------------------


def test_jump_continuity_report_passes_and_rejects_halved_noise():
    cfg = EvalConfig(mc_draws=60_000)
    schedule = build_schedule(2, 4, (6, 4), full_res_start=1.0 / 3.0)
    report = jump_continuity_report(schedule, 8, cfg, seed=0)
    names = [m.name for m in report.metrics]
    assert names == [
        "jump_2_mean_err",
        "jump_2_var_err",
        "jump_2_blockcov_err",
        "negative_control_var_err",
    ]
    assert report.passed
    control = report.metrics[-1]
    assert control.value > 0.1


def test_jump_continuity_needs_two_stages():
    with pytest.raises(ConfigError):
        jump_continuity_report(build_schedule(1, 4, (4,)), 8, EvalConfig(mc_draws=1000))


# --- solver order report ------------------------------------------------------------


def test_solver_order_report_slope_and_exactness():
    report = solver_order_report(EvalConfig())
    by_name = {m.name: m for m in report.metrics}
    assert -1.2 <= by_name["euler_error_slope"].value <= -0.8
    assert by_name["zero_field_max_err"].value == 0.0
    assert by_name["const_field_max_err"].value == 0.0
    assert report.passed


# --- compute ratio report --------------------------------------------------------------


def test_flops_ratio_report_analytic_metrics():
    dims = ModelDims(token_dim=8, d_model=16, n_heads=2, n_blocks=1, n_classes=2)
    schedule = build_schedule(2, 8, (45, 5), full_res_start=1.0 / 3.0)
    bench = BenchConfig(seq_len=8, batch=2, repeats=2, wall_clock_tolerance=0.99)
    report = flops_ratio_report(schedule, dims, bench, seed=0)
    by_name = {m.name: m for m in report.metrics}
    assert by_name["single_stage_ratio"].value == 1.0
    analytic = by_name["analytic_ratio"].value
    assert 0.0 < analytic < 0.62
    # Hand recomputation from the per-call estimate.
    from motionflow.evaluation import baseline_flops, pyramid_flops
    from motionflow.velocity_model import flops_estimate

    expected = (
        45 * flops_estimate(4, dims) + 5 * flops_estimate(8, dims)
    ) / (50 * flops_estimate(8, dims))
    assert analytic == pytest.approx(expected, rel=1e-12)
    assert pyramid_flops(schedule, dims) < baseline_flops(schedule, dims)


# --- report container --------------------------------------------------------------------


def test_report_rendering_and_save(tmp_path):
    report = EvalReport(
        name="demo",
        metrics=[
            MetricResult("alpha", 1.5, "< 2", True),
            MetricResult("beta", 0.25, "reported", False, enforced=False, ci=(0.1, 0.4)),
            MetricResult("gamma", 9.0, "< 2", False),
        ],
        provenance={"seed": 7},
        series={"curve": {"loss": [(0.0, 1.0), (1.0, 0.5)]}},
    )
    assert not report.passed  # gamma is enforced and failed
    text = report.to_text()
    assert "overall: FAIL" in text
    assert "alpha: 1.5 (threshold < 2) -> PASS" in text
    # A missed non-enforced target is recorded, not failed.
    assert "beta: 0.25 (threshold reported) ci95=[0.1, 0.4] -> noted" in text
    assert "# seed: 7" in text
    csv_text = report.to_csv()
    assert csv_text.splitlines()[0] == "metric,value,ci_low,ci_high,threshold,enforced,passed"
    assert "beta,0.25,0.1,0.4" in csv_text
    paths = report.save(tmp_path)
    assert {p.name for p in paths} == {"demo.txt", "demo.csv", "demo_curve.svg"}
    for p in paths:
        assert p.exists() and p.stat().st_size > 0


# --- trained-artifact reports on tiny untrained models -------------------------------------


@pytest.fixture(scope="module")
def tiny_pipeline():
    data = ToyDataConfig(n_scenes=16, n_agents=2, n_frames=16, n_classes=2)
    vae = build_motion_vae(
        VaeDims(
            n_frames=16, frame_dim=data.frame_dim, token_count=2, token_dim=4,
            internal_dim=16, n_heads=2, n_blocks=1,
        ),
        seed=0,
    )
    dims = ModelDims(token_dim=4, d_model=8, n_heads=2, n_blocks=1, n_classes=2)
    prior = build_velocity_net(dims, seed=1)
    reaction = build_velocity_net(dims, seed=2)
    adapter = build_context_adapter(
        AdapterDims(token_dim=4, n_heads=2, n_blocks=1, max_agents=4), seed=3
    )
    schedule = build_schedule(2, 2, (3, 2), full_res_start=1.0 / 3.0)
    norm = torch.zeros(data.frame_dim), torch.ones(data.frame_dim)
    return data, vae, prior, reaction, adapter, schedule, norm


def test_error_accumulation_report_structure(tiny_pipeline, tmp_path):
    data, vae, prior, reaction, adapter, schedule, (mean, std) = tiny_pipeline
    cfg = EvalConfig(mc_draws=1000, accumulation_scenes=12, chain_length=3)
    report = error_accumulation_report(
        vae, prior, {"semi": (reaction, adapter), "free": (reaction, adapter)},
        schedule, SamplingConfig(reaction_steps=3), mean, std, data, cfg, seed=0,
    )
    names = [m.name for m in report.metrics]
    for slot in (2, 3):
        assert f"semi_dev_slot{slot}" in names
        assert f"free_dev_slot{slot}" in names
    by_name = {m.name: m for m in report.metrics}
    assert by_name["finite_deviations"].value == 1.0
    # Identical variant models give identical chains: difference exactly 0,
    # no wins on either side, sign test degenerates to 1.
    assert by_name["semi_minus_free_final"].value == 0.0
    assert by_name["sign_test_p_semi_better"].value == 1.0
    assert not by_name["semi_minus_free_final"].enforced
    # Deviation metrics carry confidence intervals.
    assert by_name["semi_dev_slot3"].ci is not None
    paths = report.save(tmp_path)
    assert (tmp_path / "error_accumulation.txt").exists()
    assert any(p.suffix == ".svg" for p in paths)


def test_error_accumulation_requires_both_variants(tiny_pipeline):
    data, vae, prior, reaction, adapter, schedule, (mean, std) = tiny_pipeline
    cfg = EvalConfig(mc_draws=1000, accumulation_scenes=4, chain_length=2)
    with pytest.raises(ConfigError):
        error_accumulation_report(
            vae, prior, {"semi": (reaction, adapter)},
            schedule, SamplingConfig(), mean, std, data, cfg, seed=0,
        )


def test_generation_mmd_report_structure(tiny_pipeline):
    data, vae, prior, reaction, adapter, schedule, (mean, std) = tiny_pipeline
    cfg = EvalConfig(mc_draws=1000, mmd_scenes=24)
    report = generation_mmd_report(
        vae, prior, reaction, adapter, schedule, SamplingConfig(reaction_steps=3),
        mean, std, data, cfg, seed=0,
    )
    by_name = {m.name: m for m in report.metrics}
    assert set(by_name) == {
        "mmd2_generated_features",
        "mmd2_real_vs_real_features",
        "mmd2_generated_flat",
        "mmd2_real_vs_real_flat",
    }
    gate = by_name["mmd2_generated_features"]
    assert gate.enforced
    assert math.isfinite(gate.value)
    # An untrained pipeline decodes noise: the distance must dwarf the
    # real-vs-real reference.
    assert gate.value > 10 * abs(by_name["mmd2_real_vs_real_features"].value)
    assert not by_name["mmd2_generated_flat"].enforced
    assert report.provenance["scenes_per_side"] == 24
