"""Training loops for the three pipeline stages.

One optimizer (AdamW with decoupled weight decay and cosine learning-rate
decay) drives three stages:

* ``vae``      -- the motion autoencoder on individual normalized sequences,
* ``prior``    -- the pyramid flow network on encoded first-agent latents,
* ``reaction`` -- the reaction flow network plus context adapter, jointly.

Determinism and resumability: every optimization step derives its own RNG
generator from ``(seed, stage, step)``, so restarting from a checkpoint at
step n replays exactly the draws an uninterrupted run would have made —
no generator state needs to be serialized.  Batches are drawn with
replacement from the training split.

Non-finite gradients never touch the parameters: the step is skipped and
counted in the optimizer state (and the count is persisted in checkpoints).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import Tensor, nn

from .checkpoint import load_checkpoint, load_state_arrays, save_checkpoint, state_arrays
from .config import RunConfig, TrainConfig
from .errors import ConfigError
from .flow_paths import context_interpolate, pyramid_point_and_target, reaction_interpolate
from .motion_vae import MotionVae, build_motion_vae, vae_loss_terms
from .plotting import svg_polyline
from .sampling import build_context, build_context_adapter
from .schedule import PyramidSchedule
from .toy_data import SKELETON_EDGES, Dataset, normalize, split_indices
from .utils import make_generator
from .velocity_model import VelocityNet, build_velocity_net

__all__ = [
    "OptimizerState",
    "init_optimizer_state",
    "cosine_lr",
    "optimizer_step",
    "pflow_loss_step",
    "sflow_loss_step",
    "encode_sequences",
    "train_stage",
    "STAGES",
]

STAGES = ("vae", "prior", "reaction")


# --- optimizer -------------------------------------------------------------


@dataclass
class OptimizerState:
    """First/second moment estimates plus step accounting.

    ``applied`` counts steps that updated parameters; ``skipped`` counts
    steps rejected because a gradient was non-finite.
    """

    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)
    applied: int = 0
    skipped: int = 0


def init_optimizer_state(params: dict[str, Tensor]) -> OptimizerState:
    return OptimizerState(
        m={name: torch.zeros_like(p) for name, p in params.items()},
        v={name: torch.zeros_like(p) for name, p in params.items()},
    )


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from ``base_lr`` at step 0 toward 0 at ``total_steps``."""
    if total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
    frac = min(max(step / total_steps, 0.0), 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def optimizer_step(
    params: dict[str, Tensor],
    grads: dict[str, Tensor | None],
    state: OptimizerState,
    step_index: int,
    config: TrainConfig,
) -> float:
    """One AdamW update with bias correction and decoupled weight decay.

    Returns the learning rate used.  If any provided gradient contains a
    non-finite value the whole step is skipped (parameters and moments
    untouched) and ``state.skipped`` is incremented.  Missing gradients
    (``None``) are treated as zeros.
    """
    lr = cosine_lr(config.lr, step_index, config.total_steps)
    for name in params:
        grad = grads.get(name)
        if grad is not None and not torch.isfinite(grad).all():
            state.skipped += 1
            return lr
    t = state.applied + 1
    bc1 = 1.0 - config.beta1**t
    bc2 = 1.0 - config.beta2**t
    with torch.no_grad():
        for name, p in params.items():
            grad = grads.get(name)
            if grad is None:
                grad = torch.zeros_like(p)
            m = state.m[name]
            v = state.v[name]
            m.mul_(config.beta1).add_(grad, alpha=1.0 - config.beta1)
            v.mul_(config.beta2).addcmul_(grad, grad, value=1.0 - config.beta2)
            m_hat = m / bc1
            v_hat = v / bc2
            p.add_(m_hat / (v_hat.sqrt() + config.eps), alpha=-lr)
            if config.weight_decay > 0:
                p.add_(p, alpha=-lr * config.weight_decay)
    state.applied += 1
    return lr


# --- loss steps -------------------------------------------------------------


def pflow_loss_step(
    model: VelocityNet,
    z1: Tensor,
    cond: Tensor,
    schedule: PyramidSchedule,
    generator: torch.Generator,
    stage_sampling: str = "uniform_stage",
) -> tuple[Tensor, dict]:
    """Pyramid flow-matching loss on a batch of clean latents.

    RNG draw order (fixed; the single-stage degeneracy oracle mirrors it):

    1. with more than one stage: the per-sample stage assignment
       (``uniform_stage``: one integer draw; ``uniform_time``: a global
       time plus a tie-break draw for overlapping windows);
    2. per stage group, coarse to fine: local times ``t'``, then the
       shared endpoint noise.

    With a single stage no stage draw is consumed at all, so the draws
    coincide exactly with plain rectified flow on the same generator.

    The loss averages the per-sample mean squared error over the batch, so
    stages of different resolutions weigh equally per sample.
    """
    batch = z1.shape[0]
    if cond.shape != (batch,):
        raise ConfigError(f"condition shape {tuple(cond.shape)} != ({batch},)")
    stage_count = schedule.stage_count
    t_global_all: Tensor | None = None
    if stage_count == 1:
        stages = torch.ones(batch, dtype=torch.long)
    elif stage_sampling == "uniform_stage":
        stages = torch.randint(1, stage_count + 1, (batch,), generator=generator)
    elif stage_sampling == "uniform_time":
        t_global_all = torch.rand(batch, generator=generator, dtype=z1.dtype)
        tie = torch.rand(batch, generator=generator, dtype=z1.dtype)
        stages = _stages_containing(t_global_all, tie, schedule)
    else:
        raise ConfigError(f"unknown stage sampling mode {stage_sampling!r}")

    loss_sum = z1.new_zeros(())
    counts: dict[int, int] = {}
    for k in range(stage_count, 0, -1):
        idx = (stages == k).nonzero(as_tuple=True)[0]
        n_k = int(idx.numel())
        counts[k] = n_k
        if n_k == 0:
            continue
        start, end = schedule.window(k)
        if t_global_all is None:
            t_local = torch.rand(n_k, generator=generator, dtype=z1.dtype)
            t_global = start + (end - start) * t_local
        else:
            t_global = t_global_all[idx]
        eps = torch.randn(
            n_k, schedule.length_at(k), z1.shape[-1], generator=generator, dtype=z1.dtype
        )
        path = pyramid_point_and_target(z1[idx], eps, k, t_global, schedule)
        pred = model(path.point, t_global, cond[idx])
        per_sample = ((pred - path.target) ** 2).mean(dim=(1, 2))
        loss_sum = loss_sum + per_sample.sum()
    loss = loss_sum / batch
    parts = {"loss": float(loss.detach()), "stage_counts": counts}
    return loss, parts


def _stages_containing(t: Tensor, tie: Tensor, schedule: PyramidSchedule) -> Tensor:
    """Map global times to stages; where windows overlap, the tie draw
    picks uniformly among the stages containing the time."""
    masks = []
    stage_ids = []
    for k in range(schedule.stage_count, 0, -1):
        start, end = schedule.window(k)
        masks.append((t >= start) & (t <= end))
        stage_ids.append(k)
    mask = torch.stack(masks, dim=0)  # (K, B)
    count = mask.sum(dim=0)
    if (count == 0).any():
        raise ConfigError("schedule windows do not cover [0, 1]")
    pick = (tie * count).floor().long().clamp(max=count - 1)  # index among containing stages
    order = mask.long().cumsum(dim=0) - 1  # per-stage rank among containing stages
    chosen = torch.zeros_like(count)
    for row, k in enumerate(stage_ids):
        hit = mask[row] & (order[row] == pick)
        chosen = torch.where(hit, torch.full_like(chosen, k), chosen)
    return chosen


def sflow_loss_step(
    model: VelocityNet,
    context: Tensor,
    target: Tensor,
    cond: Tensor,
    generator: torch.Generator,
    lambda_recon: float,
) -> tuple[Tensor, dict]:
    """Dual-path reaction loss: transition term plus weighted context
    reconstruction term.

    RNG draw order: the transition time ``t1``; then, only when
    ``lambda_recon > 0``: the reconstruction time ``t2`` and the noise
    endpoint for the context path.
    """
    batch = context.shape[0]
    t1 = torch.rand(batch, generator=generator, dtype=context.dtype)
    trans_path = reaction_interpolate(context, target, t1)
    pred = model(trans_path.point, t1, cond)
    loss_trans = ((pred - trans_path.target) ** 2).mean()
    parts = {"trans": float(loss_trans.detach()), "recon": 0.0}
    loss = loss_trans
    if lambda_recon > 0:
        t2 = torch.rand(batch, generator=generator, dtype=context.dtype)
        eps = torch.randn(context.shape, generator=generator, dtype=context.dtype)
        recon_path = context_interpolate(eps, context, t2)
        pred2 = model(recon_path.point, t2, cond)
        loss_recon = ((pred2 - recon_path.target) ** 2).mean()
        parts["recon"] = float(loss_recon.detach())
        loss = loss + lambda_recon * loss_recon
    parts["loss"] = float(loss.detach())
    return loss, parts


# --- data preparation --------------------------------------------------------


def encode_sequences(vae: MotionVae, frames: Tensor, batch_size: int = 256) -> Tensor:
    """Posterior means for a stack of normalized sequences, (M, F, D) ->
    (M, tokens, token_dim).  The flows train on means, not samples."""
    chunks = []
    with torch.no_grad():
        for i in range(0, frames.shape[0], batch_size):
            mu, _ = vae.encode(frames[i : i + batch_size])
            chunks.append(mu)
    return torch.cat(chunks, dim=0)


def _train_tensors(dataset: Dataset, cfg: RunConfig) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Normalized scene tensor restricted to the training split, with
    labels and the normalization stats as tensors."""
    train_idx, _ = split_indices(len(dataset.scenes), 0.9, cfg.seed)
    data = normalize(dataset.as_array(), dataset.mean, dataset.std)
    scenes = torch.from_numpy(data[train_idx])
    labels = torch.from_numpy(dataset.labels()[train_idx]).long()
    mean_t = torch.from_numpy(dataset.mean)
    std_t = torch.from_numpy(dataset.std)
    return scenes, labels, mean_t, std_t


# --- stage driver ------------------------------------------------------------


def _named_params(modules: dict[str, nn.Module]) -> dict[str, nn.Parameter]:
    params: dict[str, nn.Parameter] = {}
    for prefix, module in modules.items():
        for name, p in module.named_parameters():
            params[f"{prefix}.{name}"] = p
    return params


def _checkpoint_arrays(
    modules: dict[str, nn.Module],
    state: OptimizerState,
    step: int,
    mean: Tensor,
    std: Tensor,
) -> dict:
    arrays = {}
    for prefix, module in modules.items():
        arrays.update(state_arrays(module, prefix=f"{prefix}."))
    for name, tensor in state.m.items():
        arrays[f"opt.m.{name}"] = tensor.detach().cpu().numpy()
    for name, tensor in state.v.items():
        arrays[f"opt.v.{name}"] = tensor.detach().cpu().numpy()
    arrays["meta.step"] = np.array([step], dtype=np.float32)
    arrays["meta.applied"] = np.array([state.applied], dtype=np.float32)
    arrays["meta.skipped"] = np.array([state.skipped], dtype=np.float32)
    arrays["norm.mean"] = mean.numpy()
    arrays["norm.std"] = std.numpy()
    return arrays


def _restore(
    path: Path, modules: dict[str, nn.Module], state: OptimizerState
) -> int:
    arrays = load_checkpoint(path)
    for prefix, module in modules.items():
        load_state_arrays(module, arrays, prefix=f"{prefix}.")
    for name in state.m:
        state.m[name] = torch.from_numpy(arrays[f"opt.m.{name}"].copy())
        state.v[name] = torch.from_numpy(arrays[f"opt.v.{name}"].copy())
    state.applied = int(arrays["meta.applied"][0])
    state.skipped = int(arrays["meta.skipped"][0])
    return int(arrays["meta.step"][0])


def train_stage(
    stage: str,
    dataset: Dataset,
    cfg: RunConfig,
    workdir: str | Path,
    resume: bool = False,
    progress: Callable[[int, int, float], None] | None = None,
) -> Path:
    """Train one stage to ``workdir/<stage>.umfw`` and append the loss
    curve to ``workdir/<stage>_loss.csv``.

    The prior and reaction stages require the autoencoder checkpoint in
    the same workdir.  If the training loop is interrupted by an
    exception (including ``KeyboardInterrupt`` or one raised from the
    ``progress`` callback), a checkpoint at the last completed step is
    written before the exception propagates.  With ``resume=True``
    training continues from the stage checkpoint's recorded step;
    because per-step RNG is derived from (seed, stage, step) and the
    learning-rate schedule from (step, total_steps), resuming under the
    same config reproduces the loss trajectory and final checkpoint of
    an uninterrupted run bit for bit.
    """
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    tc: TrainConfig = getattr(cfg.train, stage)
    scenes, labels, mean_t, std_t = _train_tensors(dataset, cfg)
    n_scenes, n_agents = scenes.shape[0], scenes.shape[1]
    ckpt_path = workdir / f"{stage}.umfw"

    vae_path = workdir / "vae.umfw"
    if stage == "vae":
        vae = build_motion_vae(cfg.vae, cfg.seed)
        modules: dict[str, nn.Module] = {"model": vae}
        flat = scenes.reshape(n_scenes * n_agents, cfg.data.n_frames, cfg.data.frame_dim)

        def closure(g: torch.Generator) -> tuple[Tensor, dict]:
            idx = torch.randint(flat.shape[0], (tc.batch_size,), generator=g)
            terms = vae_loss_terms(
                vae, flat[idx], g, tc.lambda_kl, mean_t, std_t, SKELETON_EDGES
            )
            parts = {k: float(v.detach()) for k, v in terms.items()}
            parts["loss"] = parts.pop("total")
            return terms["total"], parts

    else:
        if not vae_path.exists():
            raise ConfigError(
                f"stage {stage!r} requires the trained autoencoder at {vae_path}; "
                f"run the vae stage first"
            )
        vae = build_motion_vae(cfg.vae, cfg.seed)
        load_state_arrays(vae, load_checkpoint(vae_path), prefix="model.")
        vae.eval()
        flat = scenes.reshape(n_scenes * n_agents, cfg.data.n_frames, cfg.data.frame_dim)
        latents = encode_sequences(vae, flat)
        latents = latents.reshape(n_scenes, n_agents, *latents.shape[1:])

        if stage == "prior":
            model = build_velocity_net(cfg.prior_model, cfg.seed)
            modules = {"model": model}
            schedule = cfg.schedule.build()
            flat_latents = latents.reshape(n_scenes * n_agents, *latents.shape[2:])
            flat_labels = labels.repeat_interleave(n_agents)

            def closure(g: torch.Generator) -> tuple[Tensor, dict]:
                idx = torch.randint(flat_latents.shape[0], (tc.batch_size,), generator=g)
                return pflow_loss_step(
                    model, flat_latents[idx], flat_labels[idx], schedule, g, tc.stage_sampling
                )

        else:  # reaction
            if n_agents < 2:
                raise ConfigError("reaction stage requires scenes with at least 2 agents")
            model = build_velocity_net(cfg.reaction_model, cfg.seed)
            adapter = build_context_adapter(cfg.adapter, cfg.seed)
            modules = {"model": model, "adapter": adapter}

            def closure(g: torch.Generator) -> tuple[Tensor, dict]:
                idx = torch.randint(n_scenes, (tc.batch_size,), generator=g)
                if n_agents == 2:
                    slot = 2
                else:
                    slot = int(torch.randint(2, n_agents + 1, (1,), generator=g))
                ctx = build_context(adapter, latents[idx, : slot - 1])
                return sflow_loss_step(
                    model, ctx, latents[idx, slot - 1], labels[idx], g, tc.lambda_recon
                )

    params = _named_params(modules)
    state = init_optimizer_state(params)
    start_step = 0
    if resume and ckpt_path.exists():
        start_step = _restore(ckpt_path, modules, state)
    if start_step >= tc.total_steps:
        return ckpt_path

    csv_path = workdir / f"{stage}_loss.csv"
    write_header = start_step == 0 or not csv_path.exists()
    mode = "w" if write_header else "a"
    history: list[tuple[float, float]] = []
    completed = start_step
    try:
        with open(csv_path, mode, newline="") as fh:
            writer = csv.writer(fh)
            if write_header:
                writer.writerow(["step", "lr", "loss", "trans", "recon", "kl", "geometric"])
            for step in range(start_step, tc.total_steps):
                g = make_generator(cfg.seed, stage, step)
                for p in params.values():
                    p.grad = None
                loss, parts = closure(g)
                loss.backward()
                grads = {name: p.grad for name, p in params.items()}
                lr_used = optimizer_step(params, grads, state, step, tc)
                writer.writerow(
                    [
                        step,
                        f"{lr_used:.10g}",
                        f"{parts.get('loss', float(loss.detach())):.10g}",
                        f"{parts.get('trans', 0.0):.10g}",
                        f"{parts.get('recon', 0.0):.10g}",
                        f"{parts.get('kl', 0.0):.10g}",
                        f"{parts.get('geometric', 0.0):.10g}",
                    ]
                )
                completed = step + 1
                history.append((float(step), parts.get("loss", float(loss.detach()))))
                if progress is not None:
                    progress(step, tc.total_steps, parts.get("loss", 0.0))
    except BaseException:
        if completed > start_step:
            save_checkpoint(
                ckpt_path, _checkpoint_arrays(modules, state, completed, mean_t, std_t)
            )
        raise

    save_checkpoint(
        ckpt_path, _checkpoint_arrays(modules, state, tc.total_steps, mean_t, std_t)
    )
    if history:
        svg_polyline(
            workdir / f"{stage}_loss.svg",
            {"loss": history},
            title=f"{stage} training loss",
            xlabel="step",
            ylabel="loss",
        )
    return ckpt_path
