"""Mini-batch training loop with per-epoch checkpoints and a loss-curve CSV."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint
from .config import ExperimentConfig
from .models import JointModel, build_model
from .optim import AdamState, LRSchedule, adam_step
from .scene import InstanceFrameSet, Scene, SceneError, build_frames, collate

log = logging.getLogger(__name__)

CURVE_FIELDS = ("step", "epoch", "lr", "total", "regression", "classification", "kl")
CHECKPOINT_NAME = "checkpoint.ckpt"
CURVE_NAME = "loss_curve.csv"


class TrainingError(FloatingPointError):
    """Non-finite loss or gradient; the message names the step."""


@dataclass
class TrainResult:
    model: JointModel
    optimizer: AdamState
    curve: list[dict] = field(default_factory=list)
    epochs_run: int = 0

    def checkpoint(self) -> Checkpoint:
        return make_checkpoint(self.model, self.epochs_run, self.optimizer)


def make_checkpoint(model: JointModel, epoch: int, opt: AdamState | None = None) -> Checkpoint:
    optimizer = None
    if opt is not None and opt.step > 0:
        optimizer = {"step": opt.step, "lr": opt.lr, "m": dict(opt.m), "v": dict(opt.v)}
    c = model.config
    return Checkpoint(c.to_dict(), c.digest, epoch, model.state_dict(), optimizer)


def load_model(ckpt: Checkpoint) -> JointModel:
    model = build_model(ExperimentConfig.from_dict(ckpt.config))
    model.load_state_dict(ckpt.params)
    return model


def curve_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_FIELDS)
    for r in rows:
        w.writerow(["" if r[f] is None else repr(r[f]) for f in CURVE_FIELDS])
    return buf.getvalue()


def prepare(scenes: Sequence[Scene]) -> list[InstanceFrameSet]:
    frames = [build_frames(s) for s in scenes]
    for f in frames:
        if f.future_local is None:
            raise SceneError(f"scene {f.scene_id} has no ground-truth futures; cannot train on it")
    return frames


def train(
    config: ExperimentConfig,
    scenes: Sequence[Scene],
    out_dir=None,
    max_steps: int | None = None,
    model: JointModel | None = None,
    on_step: Callable[[int, JointModel, dict], None] | None = None,
) -> TrainResult:
    """Train ``config.variant`` on ``scenes``.

    Mini-batches are drawn from a per-epoch permutation seeded by
    ``(seed, epoch)``; CVAE noise is seeded by ``(seed, step)``, so a run is
    bit-reproducible. With ``out_dir`` the checkpoint is rewritten after
    every epoch (and once before training) and the loss curve is written
    at the end. ``max_steps`` stops early after that many optimiser steps.
    """
    frames = prepare(scenes)
    if not frames:
        raise SceneError("training set is empty")
    model = build_model(config) if model is None else model
    schedule = LRSchedule(config.lr_initial, config.lr_final, config.lr_decay_epochs)
    opt = AdamState(lr=config.lr_initial)
    result = TrainResult(model, opt)
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        make_checkpoint(model, 0).save(out / CHECKPOINT_NAME)
    step = 0
    n = len(frames)
    for epoch in range(1, config.epochs + 1):
        opt.lr = schedule(epoch)
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        for start in range(0, n, config.batch_size):
            if max_steps is not None and step >= max_steps:
                break
            batch = collate([frames[i] for i in order[start : start + config.batch_size]])
            model.zero_grad()
            lb = model.loss(batch, np.random.default_rng([config.seed, step]))
            row = {"step": step, "epoch": epoch, "lr": opt.lr, **lb.as_dict()}
            if not np.isfinite(row["total"]):
                raise TrainingError(f"non-finite loss at step {step} (epoch {epoch})")
            ad.backward(lb.total)
            params = model.parameters()
            try:
                adam_step(params, {k: p.grad for k, p in params.items()}, opt)
            except FloatingPointError as e:
                raise TrainingError(f"step {step} (epoch {epoch}): {e}") from None
            result.curve.append(row)
            if on_step is not None:
                on_step(step, model, row)
            step += 1
        result.epochs_run = epoch
        if out is not None:
            result.checkpoint().save(out / CHECKPOINT_NAME)
        if result.curve:
            log.info("epoch %d step %d loss %.6g", epoch, step, result.curve[-1]["total"])
        if max_steps is not None and step >= max_steps:
            break
    if out is not None:
        (out / CURVE_NAME).write_text(curve_csv(result.curve))
    return result
