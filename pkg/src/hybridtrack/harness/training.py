"""Training loop for the toy tracker on synthetic sequences."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..eventsim import BoundingBox
from ..tracker import (HybridTracker, TrackerConfig, event_window, load_checkpoint, loss_total, prepare_crop,
                       save_checkpoint)
from .evaluation import evaluate_model

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; a diagnostic dump is written first."""


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    steps_per_epoch: int = 100
    lr: float = 1e-4
    lr_pretrained: float = 1e-5
    weight_decay: float = 1e-4
    decay_at: float = 0.8
    decay_factor: float = 0.1
    grad_clip: float = 1.0
    max_gap: int = 10
    center_jitter: float = 0.5
    scale_jitter: float = 0.15
    eval_every: int = 0
    regress_at: str = "gt"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.steps_per_epoch < 1:
            raise ValueError("epochs, batch_size and steps_per_epoch must be positive")
        if not 0 < self.decay_at <= 1:
            raise ValueError("decay_at must be in (0, 1]")
        if self.regress_at not in ("gt", "peak"):
            raise ValueError("regress_at must be 'gt' or 'peak'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    model: HybridTracker
    losses: list[dict]
    evals: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None
    seconds: float = 0.0


def sample_pair(seq, rng: np.random.Generator, cfg: TrackerConfig, tcfg: TrainConfig):
    """One template/search training pair with a jittered search window.

    Returns RGB template (3, S, S), RGB search, event template (T, 3, S, S),
    event search and the gt box in search-crop pixels.
    """
    n = len(seq)
    i = int(rng.integers(n))
    j = int(np.clip(i + rng.integers(-tcfg.max_gap, tcfg.max_gap + 1), 0, n - 1))
    events = seq.events if cfg.modality != "rgb" else None
    z_img, z_evt, _ = prepare_crop(seq.frames[i], events, event_window(i, seq.timestamps), seq.boxes[i],
                                   cfg.template_context, cfg.template_size, cfg)
    gt = seq.boxes[j]
    side = math.sqrt(gt.w * gt.h)
    dx, dy = rng.uniform(-tcfg.center_jitter, tcfg.center_jitter, size=2) * side
    scale = math.exp(rng.normal(0.0, tcfg.scale_jitter))
    jittered = BoundingBox(gt.cx + dx, gt.cy + dy, gt.w * scale, gt.h * scale)
    x_img, x_evt, cmap = prepare_crop(seq.frames[j], events, event_window(j, seq.timestamps), jittered,
                                      cfg.search_context, cfg.search_size, cfg)
    return z_img, x_img, z_evt, x_evt, cmap.to_crop(gt).as_array()


def make_batch(sequences, rng: np.random.Generator, cfg: TrackerConfig, tcfg: TrainConfig,
               dtype=torch.float32) -> tuple[torch.Tensor, ...]:
    samples = [sample_pair(sequences[int(rng.integers(len(sequences)))], rng, cfg, tcfg)
               for _ in range(tcfg.batch_size)]
    return tuple(torch.as_tensor(np.stack(parts), dtype=dtype) for parts in zip(*samples))


def build_optimizer(model: HybridTracker, tcfg: TrainConfig, pretrained: set[str] | None = None):
    """Adam with a base-rate group and a reduced-rate group for warm-started weights."""
    pretrained = pretrained or set()
    base, warm = [], []
    for name, p in model.named_parameters():
        (warm if name in pretrained else base).append(p)
    groups = [{"params": base, "lr": tcfg.lr, "name": "new"}]
    if warm:
        groups.append({"params": warm, "lr": tcfg.lr_pretrained, "name": "pretrained"})
    opt = torch.optim.Adam(groups, weight_decay=tcfg.weight_decay)
    milestone = max(1, int(round(tcfg.decay_at * tcfg.epochs)))
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, milestones=[milestone], gamma=tcfg.decay_factor)
    return opt, sched


def warm_start(model: HybridTracker, path) -> set[str]:
    """Copy every parameter whose name and shape match; returns the copied names."""
    src, _ = load_checkpoint(path)
    src_state = src.state_dict()
    own = model.state_dict()
    copied = {k: v for k, v in src_state.items() if k in own and own[k].shape == v.shape}
    model.load_state_dict(copied, strict=False)
    names = {n for n, _ in model.named_parameters()}
    return set(copied) & names


def _dump_divergence(out_dir, step: int, parts: dict, batch, model: HybridTracker) -> Path | None:
    info = {
        "step": step,
        "loss_parts": parts,
        "inputs": [{"min": float(t.min()), "max": float(t.max()), "finite": bool(torch.isfinite(t).all())}
                   for t in batch],
        "nonfinite_params": [n for n, p in model.named_parameters() if not bool(torch.isfinite(p).all())],
        "param_norms": {n: float(p.detach().norm()) for n, p in model.named_parameters()},
    }
    if out_dir is None:
        log.error("non-finite loss at step %d: %s", step, parts)
        return None
    path = Path(out_dir) / "divergence.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(info, indent=2))
    return path


def train_step(model: HybridTracker, opt, batch, tcfg: TrainConfig) -> tuple[torch.Tensor, dict]:
    z_img, x_img, z_evt, x_evt, gt = batch
    pred = model(z_img, x_img, z_evt, x_evt)
    loss, parts = loss_total(pred, gt, model.cfg, tcfg.regress_at)
    if not bool(torch.isfinite(loss)):
        return loss, parts
    opt.zero_grad(set_to_none=True)
    loss.backward()
    if tcfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.grad_clip)
    opt.step()
    return loss, parts


def train_loop(model_cfg: TrackerConfig, tcfg: TrainConfig, sequences, seed: int, out_dir=None,
               val_sequences=None, init_from=None) -> TrainResult:
    """Train a fresh tracker; writes ``losses.csv``, ``evals.json`` and ``model.pt`` under ``out_dir``."""
    if not sequences:
        raise ValueError("no training sequences")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = HybridTracker(model_cfg)
    pretrained = warm_start(model, init_from) if init_from is not None else set()
    opt, sched = build_optimizer(model, tcfg, pretrained)
    losses, evals = [], []
    t0 = time.time()
    step = 0
    for epoch in range(tcfg.epochs):
        model.train()
        for _ in range(tcfg.steps_per_epoch):
            batch = make_batch(sequences, rng, model_cfg, tcfg)
            loss, parts = train_step(model, opt, batch, tcfg)
            if not bool(torch.isfinite(loss)):
                dump = _dump_divergence(out_dir, step, parts, batch, model)
                raise TrainingDiverged(f"non-finite loss at step {step}" + (f"; see {dump}" if dump else ""))
            losses.append({"epoch": epoch, "step": step, "lr": opt.param_groups[0]["lr"], **parts})
            step += 1
        sched.step()
        recent = np.mean([r["total"] for r in losses[-tcfg.steps_per_epoch:]])
        log.info("epoch %d/%d loss %.4f (%.0fs)", epoch + 1, tcfg.epochs, recent, time.time() - t0)
        if val_sequences and tcfg.eval_every and (epoch + 1) % tcfg.eval_every == 0:
            pooled, _ = evaluate_model(model, val_sequences)
            evals.append({"epoch": epoch + 1, **{k: r.scalars() for k, r in pooled.items()}})
            log.info("epoch %d eval SR %.3f", epoch + 1, pooled["all"].sr_auc)
    model.eval()
    result = TrainResult(model, losses, evals, seconds=time.time() - t0)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_losses(out / "losses.csv", losses)
        (out / "evals.json").write_text(json.dumps(evals, indent=2))
        result.checkpoint = out / "model.pt"
        save_checkpoint(result.checkpoint, model, {"train": tcfg.to_dict(), "seed": seed})
    return result


def write_losses(path, losses: list[dict]) -> None:
    if not losses:
        return
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(losses[0]))
        w.writeheader()
        w.writerows(losses)
