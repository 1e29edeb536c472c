"""Command-line interface.

Subcommands::

    motionflow synth   --out data.umfd               synthesize a dataset
    motionflow train   --stage vae|prior|reaction    train one stage
    motionflow sample  --workdir W --out s.umfs      generate scenes
    motionflow eval    --report NAME                 run a statistical report
    motionflow verify                                run the self-check suite
    motionflow bench                                 compute-ratio benchmark

Configuration precedence: ``--set key.path=value`` overrides > ``--config``
file > the ``MOTIONFLOW_CONFIG`` environment variable > built-in defaults.
Every artifact-producing command writes the fully materialized config it
ran with (plus the tool version) next to its output.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime
failure (corrupt file, numerical blow-up), 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    CONFIG_ENV_VAR,
    RunConfig,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    default_config,
    deep_merge,
    save_config,
)
from .errors import ConfigError, DataFormatError, MotionFlowError, VerificationError
from .evaluation import (
    error_accumulation_report,
    flops_ratio_report,
    generation_mmd_report,
    jump_continuity_report,
    solver_order_report,
)
from .pipeline import generate_samples, load_bundle, save_samples
from .toy_data import load_dataset, save_dataset, synthesize_dataset
from .training import STAGES, train_stage
from .verification import run_verification

_REPORTS = ("continuity", "solver_order", "flops", "accumulation", "generation")


class _Parser(argparse.ArgumentParser):
    """argparse that signals usage errors through the ConfigError path so
    they exit with code 1."""

    def error(self, message: str):  # noqa: D401 - argparse hook
        raise ConfigError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="JSON run config")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY.PATH=VALUE",
        help="override a config entry (repeatable; JSON values)",
    )
    p.add_argument(
        "--threads",
        type=int,
        default=None,
        help="bound the number of compute threads (default: leave unchanged)",
    )


def _apply_threads(args: argparse.Namespace) -> None:
    threads = getattr(args, "threads", None)
    if threads is None:
        return
    if threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {threads}")
    import torch

    torch.set_num_threads(threads)
    try:
        torch.set_num_interop_threads(threads)
    except RuntimeError:
        # The inter-op pool can only be sized before first parallel use;
        # the intra-op bound above is the one that matters for this CLI.
        pass


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    data = config_to_dict(default_config())
    path = args.config
    if path is None:
        env = os.environ.get(CONFIG_ENV_VAR)
        if env:
            path = Path(env)
    if path is not None:
        try:
            file_data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_data, dict):
            raise ConfigError(f"config {path} must contain a JSON object")
        file_data.pop("tool_version", None)
        data = deep_merge(data, file_data)
    data = apply_overrides(data, args.overrides)
    return config_from_dict(data)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="motionflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"motionflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="synthesize a toy dataset")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True, help="output .umfd path")

    p = sub.add_parser("train", help="train one pipeline stage")
    _add_common(p)
    p.add_argument("--stage", choices=STAGES, required=True)
    p.add_argument("--data", type=Path, required=True, help="dataset .umfd path")
    p.add_argument("--workdir", type=Path, required=True)
    p.add_argument("--resume", action="store_true", help="continue from the stage checkpoint")

    p = sub.add_parser("sample", help="generate scenes from trained checkpoints")
    _add_common(p)
    p.add_argument("--workdir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output .umfs path")
    p.add_argument("--scenes", type=int, default=16)
    p.add_argument("--agents", type=int, default=None, help="agents per scene (default: config)")
    p.add_argument("--seed", type=int, default=None, help="sampling seed (default: config seed)")

    p = sub.add_parser("eval", help="run one statistical report")
    _add_common(p)
    p.add_argument("--report", choices=_REPORTS, required=True)
    p.add_argument("--out", type=Path, required=True, help="report output directory")
    p.add_argument("--workdir", type=Path, default=None, help="trained checkpoints (model reports)")
    p.add_argument(
        "--ablation-workdir",
        type=Path,
        default=None,
        help="workdir of the no-reconstruction ablation (accumulation report)",
    )

    p = sub.add_parser("verify", help="run the self-check suite")
    _add_common(p)
    p.add_argument("--fast", action="store_true", help="smaller Monte-Carlo sizes")

    p = sub.add_parser("bench", help="compute-ratio benchmark with wall-clock timing")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True, help="report output directory")

    return parser


def _cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    dataset = synthesize_dataset(cfg.data, cfg.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, args.out)
    save_config(cfg, args.out.with_suffix(".config.json"), __version__)
    print(f"wrote {dataset.as_array().shape[0]} scenes to {args.out}")
    return 0


def _cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    dataset = load_dataset(args.data, cfg.data)
    ckpt = train_stage(args.stage, dataset, cfg, args.workdir, resume=args.resume)
    save_config(cfg, Path(args.workdir) / "config.json", __version__)
    print(f"stage {args.stage}: checkpoint at {ckpt}")
    return 0


def _cmd_sample(args: argparse.Namespace, cfg: RunConfig) -> int:
    bundle = load_bundle(args.workdir, cfg)
    n_agents = args.agents if args.agents is not None else cfg.data.n_agents
    seed = args.seed if args.seed is not None else cfg.seed
    data, labels, metadata = generate_samples(bundle, args.scenes, n_agents, seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_samples(
        args.out,
        data,
        labels,
        bundle.norm_mean.numpy().astype(np.float32),
        bundle.norm_std.numpy().astype(np.float32),
        metadata,
    )
    save_config(cfg, args.out.with_suffix(".config.json"), __version__)
    print(f"wrote {args.scenes} scenes x {n_agents} agents to {args.out}")
    return 0


def _cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.report == "continuity":
        report = jump_continuity_report(cfg.schedule.build(), cfg.vae.token_dim, cfg.evaluation)
    elif args.report == "solver_order":
        report = solver_order_report(cfg.evaluation)
    elif args.report == "flops":
        report = flops_ratio_report(cfg.schedule.build(), cfg.prior_model, cfg.bench, cfg.seed)
    elif args.report == "generation":
        if args.workdir is None:
            raise ConfigError("--workdir is required for the generation report")
        bundle = load_bundle(args.workdir, cfg)
        report = generation_mmd_report(
            bundle.vae, bundle.prior, bundle.reaction, bundle.adapter,
            bundle.schedule, cfg.sampling, bundle.norm_mean, bundle.norm_std,
            cfg.data, cfg.evaluation,
        )
    else:  # accumulation
        if args.workdir is None or args.ablation_workdir is None:
            raise ConfigError(
                "--workdir and --ablation-workdir are required for the accumulation report"
            )
        bundle = load_bundle(args.workdir, cfg)
        ablation = load_bundle(args.ablation_workdir, cfg)
        report = error_accumulation_report(
            bundle.vae, bundle.prior,
            {
                "semi": (bundle.reaction, bundle.adapter),
                "free": (ablation.reaction, ablation.adapter),
            },
            bundle.schedule, cfg.sampling, bundle.norm_mean, bundle.norm_std,
            cfg.data, cfg.evaluation,
        )
    paths = report.save(args.out)
    save_config(cfg, Path(args.out) / "config.json", __version__)
    print(report.to_text(), end="")
    print(f"report files: {', '.join(str(p) for p in paths)}")
    return 0 if report.passed else 3


def _cmd_verify(args: argparse.Namespace, cfg: RunConfig) -> int:
    run_verification(cfg, fast=args.fast, log=print)
    print("verification: all checks passed")
    return 0


def _cmd_bench(args: argparse.Namespace, cfg: RunConfig) -> int:
    report = flops_ratio_report(cfg.schedule.build(), cfg.prior_model, cfg.bench, cfg.seed)
    paths = report.save(args.out)
    save_config(cfg, Path(args.out) / "config.json", __version__)
    print(report.to_text(), end="")
    print(f"report files: {', '.join(str(p) for p in paths)}")
    return 0 if report.passed else 3


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
    "bench": _cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_threads(args)
        cfg = _resolve_config(args)
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, MotionFlowError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
