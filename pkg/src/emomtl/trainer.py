"""Training loop: masked multi-task objective, Adam, scheduling, validation
scoring, early stopping and checkpointing.

Loss terms whose labels are fully masked in a batch contribute 0 rather
than skipping the batch, so epoch length and schedule stepping stay
deterministic under corpus mixing. Everything is seeded from one top-level
seed via named substreams (init, shuffle, dropout).
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import losses, models, optim
from .metrics import EvalReport, evaluate
from .models import ModelDims, ModelState
from .numerics import Rng
from .optim import IMPROVE_TOL, AdamState, LrSchedule, adam_step, lr_at


@dataclass
class TrainConfig:
    variant: str = "multitask"
    d_in: int = 32
    d_enc: int = 64
    mlp: tuple = (64, 32)
    d_att: int = 64
    alpha: float = 1.0
    beta: float = 1.0
    dropout: float = 0.2
    leaky_slope: float = 0.01
    n_enc_layers: int = 1
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    schedule: LrSchedule = field(default_factory=LrSchedule)
    seed: int = 0
    hier_stop_gradient: bool = False
    grad_clip: float = 0.0
    output_dir: str | None = None

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")

    def model_dims(self) -> ModelDims:
        return ModelDims(
            d_in=self.d_in, d_enc=self.d_enc, mlp=tuple(self.mlp),
            d_att=self.d_att, n_enc_layers=self.n_enc_layers,
            dropout=self.dropout, leaky_slope=self.leaky_slope,
        )


@dataclass
class EpochRow:
    epoch: int
    loss_total: float
    loss_cont: float
    loss_disc: float
    lr: float
    val_score: float
    report: EvalReport
    wall_time: float


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    best_epoch: int = -1
    best_score: float = -np.inf

    CSV_HEADER = ("epoch", "loss_total", "loss_cont", "loss_disc", "lr",
                  "val_score", "val_accuracy", "val_ccc_mean", "wall_time")

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_HEADER)
            for r in self.rows:
                w.writerow([
                    r.epoch, f"{r.loss_total:.9g}", f"{r.loss_cont:.9g}",
                    f"{r.loss_disc:.9g}", f"{r.lr:.9g}", f"{r.val_score:.9g}",
                    "" if r.report.accuracy is None else f"{r.report.accuracy:.9g}",
                    "" if r.report.ccc_mean is None else f"{r.report.ccc_mean:.9g}",
                    f"{r.wall_time:.3f}",
                ])

    def summary(self) -> dict:
        best = self.rows[self.best_epoch]
        return {
            "epochs_run": len(self.rows),
            "best_epoch": self.best_epoch,
            "best_val_score": self.best_score,
            "best_val_report": best.report.to_dict(),
        }


def early_stop(history, patience: int) -> bool:
    """True once the score has failed to improve by > IMPROVE_TOL for
    `patience` consecutive epochs."""
    if len(history) <= patience:
        return False
    best = -np.inf
    stale = 0
    for score in history:
        if score > best + IMPROVE_TOL:
            best = score
            stale = 0
        else:
            stale += 1
    return stale >= patience


def _check_labels(cfg: TrainConfig, manifest) -> None:
    has_disc = any(r.label.disc is not None for r in manifest.records)
    has_cont = any(r.label.vad is not None for r in manifest.records)
    needs = {
        "baseline_c": (has_cont, "continuous"),
        "baseline_d": (has_disc, "discrete"),
    }.get(cfg.variant, (has_disc or has_cont, "any"))
    if not needs[0]:
        raise ValueError(
            f"variant {cfg.variant!r} needs at least one {needs[1]}-labeled "
            f"training example; the manifest has none"
        )


def _batch_step(model: ModelState, batch, w: losses.MtlWeights, drop_rng: Rng):
    out = model.forward(batch.features, batch.frame_mask, mode="train", rng=drop_rng)
    loss_cont, loss_disc = 0.0, 0.0
    grad_logits = None
    grad_c = None
    if model.has_continuous and batch.vad_mask.sum() >= 2:
        loss_cont, g = losses.continuous_loss(out.c_hat, batch.vad, batch.vad_mask)
        grad_c = w.alpha * g
    if model.has_discrete and batch.disc_mask.any():
        loss_disc, g = losses.cross_entropy(out.logits, batch.disc, batch.disc_mask)
        grad_logits = w.beta * g
    total = losses.multitask_loss([loss_cont], loss_disc, w)
    grads = model.backward(grad_logits=grad_logits, grad_c=grad_c)
    return total, loss_cont, loss_disc, grads


def train(cfg: TrainConfig, train_manifest, valid_manifest):
    """Train one model; returns (best ModelState, TrainLog).

    Writes best.emop, trainlog.csv and summary.json into cfg.output_dir
    when set. Fully deterministic given the config seed.
    """
    if len(train_manifest) == 0:
        raise ValueError("empty training manifest")
    _check_labels(cfg, train_manifest)

    root = Rng(cfg.seed)
    model = models.build(cfg.variant, cfg.model_dims(), root.spawn("init"),
                         hier_stop_gradient=cfg.hier_stop_gradient)
    shuffle_rng = root.spawn("shuffle")
    drop_rng = root.spawn("dropout")
    adam = AdamState()
    w = losses.MtlWeights(cfg.alpha, cfg.beta)
    sched = cfg.schedule

    log = TrainLog()
    history = []
    best_params = None
    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    global_step = 0
    for epoch in range(cfg.max_epochs):
        t0 = time.monotonic()
        sum_total = sum_cont = sum_disc = 0.0
        n_batches = 0
        lr = lr_at(sched, global_step, history)
        for batch_idx, batch in enumerate(
            data_mod.make_batches(train_manifest, cfg.batch_size, shuffle_rng, shuffle=True)
        ):
            total, lc, ld, grads = _batch_step(model, batch, w, drop_rng)
            if not np.isfinite(total):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} batch {batch_idx}: "
                    f"total={total}, cont={lc}, disc={ld}"
                )
            lr = lr_at(sched, global_step, history)
            adam_step(adam, model.params(), grads, lr, grad_clip=cfg.grad_clip)
            global_step += 1
            sum_total += total
            sum_cont += lc
            sum_disc += ld
            n_batches += 1

        report = evaluate(model, data_mod.make_batches(valid_manifest, cfg.batch_size))
        score = report.validation_score()
        history.append(score)
        row = EpochRow(
            epoch=epoch, loss_total=sum_total / n_batches,
            loss_cont=sum_cont / n_batches, loss_disc=sum_disc / n_batches,
            lr=lr, val_score=score, report=report,
            wall_time=time.monotonic() - t0,
        )
        log.rows.append(row)
        if score > log.best_score + IMPROVE_TOL:
            log.best_score = score
            log.best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params().items()}
        if early_stop(history, cfg.patience):
            break

    if best_params is None:       # no epoch improved over -inf cannot happen; guard anyway
        best_params = {k: v.copy() for k, v in model.params().items()}
    for name, p in model.params().items():
        p[...] = best_params[name]

    if out_dir:
        models.save_model(model, out_dir / "best.emop")
        log.save_csv(out_dir / "trainlog.csv")
        with open(out_dir / "summary.json", "w") as fh:
            json.dump(log.summary(), fh, indent=2, sort_keys=True)
    return model, log
