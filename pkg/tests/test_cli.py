"""Command-line interface: exit codes, config precedence, artifact
side effects, and bitwise re-runs from materialized configs."""

import dataclasses
import json

import pytest

from motionflow.cli import main
from motionflow.config import (
    AdapterDims,
    ModelDims,
    RunConfig,
    SamplingConfig,
    ToyDataConfig,
    TrainConfig,
    TrainSection,
    VaeDims,
    default_config,
    save_config,
)
from motionflow import __version__
from motionflow.pipeline import load_samples


def tiny_config() -> RunConfig:
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


@pytest.fixture(scope="module")
def cli_root(tmp_path_factory):
    """Config file, dataset, and a fully trained tiny workdir."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "tiny.json"
    save_config(tiny_config(), cfg_path, __version__)
    data = root / "data.umfd"
    assert main(["synth", "--config", str(cfg_path), "--out", str(data)]) == 0
    work = root / "work"
    for stage in ("vae", "prior", "reaction"):
        code = main(
            [
                "train",
                "--stage",
                stage,
                "--config",
                str(cfg_path),
                "--data",
                str(data),
                "--workdir",
                str(work),
            ]
        )
        assert code == 0
    return root


def test_synth_writes_dataset_and_materialized_config(cli_root):
    data = cli_root / "data.umfd"
    sibling = cli_root / "data.config.json"
    assert data.exists() and sibling.exists()
    raw = json.loads(sibling.read_text())
    assert "tool_version" in raw
    # Re-running from the materialized sibling reproduces the dataset bitwise.
    copy = cli_root / "again.umfd"
    assert main(["synth", "--config", str(sibling), "--out", str(copy)]) == 0
    assert copy.read_bytes() == data.read_bytes()


def test_train_saves_config_and_artifacts(cli_root):
    work = cli_root / "work"
    for name in ("config.json", "vae.umfw", "prior.umfw", "reaction.umfw"):
        assert (work / name).exists()
    assert (work / "vae_loss.csv").read_text().startswith("step,")


def test_train_prior_requires_vae_checkpoint(cli_root, tmp_path, capsys):
    code = main(
        [
            "train",
            "--stage",
            "prior",
            "--config",
            str(cli_root / "tiny.json"),
            "--data",
            str(cli_root / "data.umfd"),
            "--workdir",
            str(tmp_path / "empty"),
        ]
    )
    assert code == 1
    assert "vae" in capsys.readouterr().err


def test_sample_is_deterministic_and_counts_reaction_calls(cli_root, tmp_path):
    args = [
        "sample",
        "--config",
        str(cli_root / "tiny.json"),
        "--workdir",
        str(cli_root / "work"),
        "--scenes",
        "3",
        "--seed",
        "5",
    ]
    one, two = tmp_path / "one.umfs", tmp_path / "two.umfs"
    assert main(args + ["--out", str(one)]) == 0
    assert main(args + ["--out", str(two)]) == 0
    assert one.read_bytes() == two.read_bytes()
    motions, labels, mean, std, meta = load_samples(one)
    assert motions.shape[0] == 3 and motions.shape[1] == 2
    assert meta["reaction_calls_per_scene"] == 1

    solo = tmp_path / "solo.umfs"
    assert main(args + ["--agents", "1", "--out", str(solo)]) == 0
    _, _, _, _, meta = load_samples(solo)
    assert meta["reaction_calls_per_scene"] == 0


def test_eval_solver_order_writes_report_files(cli_root, tmp_path):
    out = tmp_path / "order"
    code = main(
        [
            "eval",
            "--report",
            "solver_order",
            "--config",
            str(cli_root / "tiny.json"),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    assert (out / "solver_order.txt").exists()
    assert (out / "solver_order.csv").exists()


def test_eval_generation_requires_workdir(cli_root, tmp_path, capsys):
    code = main(
        [
            "eval",
            "--report",
            "generation",
            "--config",
            str(cli_root / "tiny.json"),
            "--out",
            str(tmp_path / "gen"),
        ]
    )
    assert code == 1
    assert "workdir" in capsys.readouterr().err


def test_verify_fast_passes(cli_root, capsys):
    assert main(["verify", "--fast"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_unknown_override_key_exits_1_with_path(cli_root, tmp_path, capsys):
    code = main(
        [
            "synth",
            "--config",
            str(cli_root / "tiny.json"),
            "--set",
            "data.wavelength=3",
            "--out",
            str(tmp_path / "x.umfd"),
        ]
    )
    assert code == 1
    assert "wavelength" in capsys.readouterr().err


def test_invalid_thread_count_exits_1(cli_root, tmp_path, capsys):
    code = main(
        [
            "synth",
            "--threads",
            "0",
            "--config",
            str(cli_root / "tiny.json"),
            "--out",
            str(tmp_path / "x.umfd"),
        ]
    )
    assert code == 1
    assert "threads" in capsys.readouterr().err


def test_config_env_var_and_flag_precedence(cli_root, tmp_path, monkeypatch):
    env_cfg = tmp_path / "env.json"
    save_config(tiny_config(), env_cfg, __version__)
    monkeypatch.setenv("MOTIONFLOW_CONFIG", str(env_cfg))
    out = tmp_path / "from_env.umfd"
    assert main(["synth", "--out", str(out)]) == 0
    assert out.read_bytes() == (cli_root / "data.umfd").read_bytes()

    # An explicit --config beats the environment.
    other = tmp_path / "other.json"
    base = tiny_config()
    save_config(dataclasses.replace(base, seed=base.seed + 1), other, __version__)
    flagged = tmp_path / "from_flag.umfd"
    assert main(["synth", "--config", str(other), "--out", str(flagged)]) == 0
    assert flagged.read_bytes() != out.read_bytes()


def test_bench_flops_with_tiny_overrides(cli_root, tmp_path):
    out = tmp_path / "bench"
    code = main(
        [
            "bench",
            "--config",
            str(cli_root / "tiny.json"),
            "--set",
            "bench.batch=2",
            "--set",
            "bench.repeats=2",
            "--out",
            str(out),
        ]
    )
    assert code in (0, 3)  # wall-clock gate may miss on a busy machine
    assert (out / "flops_ratio.txt").exists()
    assert (out / "flops_ratio.csv").exists()
