"""Adam optimizer and the training loop.

Training follows the usual recipe: Xavier init, IO normalization fitted on
the training split only, per-batch loss/backprop/Adam updates, a per-epoch
validation metric, and early stopping that returns the parameters of the
epoch with the lowest validation value. Everything is deterministic given
the config seed (single-threaded).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericError
from .loss import batch_iter, encoder_loss, valid_starts
from .model import Normalization, build_model, save_model

VAL_METRICS = ("sim-nrms", "encoder-loss")


class DegenerateChannelError(ValueError):
    """A channel of the training data is constant; normalization impossible."""


def fit_normalization(dataset) -> Normalization:
    """Per-channel mean and population std from the training split only."""
    if len(dataset) == 0:
        raise ValueError("empty training data")
    stats = []
    for label, arr in (("u", dataset.u), ("y", dataset.y)):
        mean = arr.mean(axis=0)
        std = arr.std(axis=0)
        bad = np.nonzero(std < 1e-12)[0]
        if bad.size:
            raise DegenerateChannelError(
                f"constant {label} channel(s) {bad.tolist()}: std < 1e-12"
            )
        stats.extend([mean, std])
    return Normalization(*stats)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict):
    """Standard bias-corrected Adam update, in place on the param blocks."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in block {name!r}", index=name)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class TrainConfig:
    horizon: int = 40  # truncation length T
    n_a: int = 10
    n_b: int = 10
    n_x: int = 4
    noise: str = "output-error"
    hidden_layers: int = 2
    hidden_width: int = 64
    activation: str = "tanh"
    bypass: bool = True
    batch_size: int = 256
    spacing: int = 1  # section spacing d
    learning_rate: float = 1e-3
    max_epochs: int = 5000
    patience: int = 50
    val_metric: str = "sim-nrms"
    seed: int = 0
    budget_s: float | None = None  # wall-clock cap, checked at epoch boundaries
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.val_metric not in VAL_METRICS:
            raise ValueError(f"unknown validation metric {self.val_metric!r}")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    wallclock_s: list = field(default_factory=list)
    best_epoch: int = -1
    checkpoint_path: str | None = None
    diverged: bool = False

    @property
    def epochs_run(self):
        return len(self.train_loss)


def run_training_loop(blocks, loss_grad_fn, val_fn, index_set, config: TrainConfig):
    """Generic batched training loop shared by the encoder and baseline paths.

    `blocks` is the dict of trainable flat arrays (updated in place);
    `loss_grad_fn(starts) -> (loss, grads)`, `val_fn() -> float` reads the
    current parameter values. Returns (best_blocks, report); on numeric
    divergence the report is flagged and the best (last good) snapshot wins.
    """
    state = AdamState(
        lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.eps
    )
    report = TrainReport()
    best_blocks = {k: v.copy() for k, v in blocks.items()}
    best_val = np.inf
    t_start = time.perf_counter()
    for epoch in range(config.max_epochs):
        if config.budget_s is not None and time.perf_counter() - t_start >= config.budget_s:
            break
        try:
            total = 0.0
            count = 0
            for starts in batch_iter(index_set, config.batch_size, config.seed, epoch):
                loss, grads = loss_grad_fn(starts)
                adam_step(state, blocks, grads)
                total += loss * len(starts)
                count += len(starts)
        except NumericError:
            report.diverged = True
            break
        try:
            val = float(val_fn())
        except NumericError:
            val = np.inf
        if not np.isfinite(val):
            val = np.inf
        report.train_loss.append(total / count)
        report.val_metric.append(val)
        report.wallclock_s.append(time.perf_counter() - t_start)
        if val < best_val:
            best_val = val
            report.best_epoch = epoch
            best_blocks = {k: v.copy() for k, v in blocks.items()}
        if epoch - report.best_epoch > config.patience:
            break
    return best_blocks, report


def train(config: TrainConfig, train_ds, val_ds, checkpoint_path=None):
    """Estimate a model on the training split with early stopping on the
    validation split. Returns (best model, TrainReport)."""
    if train_ds.n_u != val_ds.n_u or train_ds.n_y != val_ds.n_y:
        raise ValueError("train/validation channel counts differ")
    norm = fit_normalization(train_ds)
    model = build_model(
        config.n_x, train_ds.n_u, train_ds.n_y, config.n_a, config.n_b,
        noise=config.noise,
        hidden_layers=config.hidden_layers,
        hidden_width=config.hidden_width,
        activation=config.activation,
        bypass=config.bypass,
        seed=config.seed,
        norm=norm,
    )
    u_tr = norm.norm_u(train_ds.u)
    y_tr = norm.norm_y(train_ds.y)
    index_set = valid_starts(
        len(train_ds), config.horizon, config.n_a, config.n_b, config.spacing
    )
    if config.val_metric == "encoder-loss":
        u_val = norm.norm_u(val_ds.u)
        y_val = norm.norm_y(val_ds.y)
        val_set = valid_starts(len(val_ds), config.horizon, config.n_a, config.n_b)

        def val_fn():
            return encoder_loss(model, u_val, y_val, val_set.starts, config.horizon)

    else:

        def val_fn():
            from .analysis import nrms

            sim = model.simulate(val_ds, mode="free-run")
            return nrms(val_ds.y[sim.skip :], sim.y_sim[sim.skip :])

    blocks = model.param_blocks()

    def loss_grad_fn(starts):
        return encoder_loss(model, u_tr, y_tr, starts, config.horizon, with_grad=True)

    best_blocks, report = run_training_loop(
        blocks, loss_grad_fn, val_fn, index_set, config
    )
    model.set_param_blocks(best_blocks)
    if checkpoint_path is not None:
        save_model(model, checkpoint_path)
        report.checkpoint_path = str(checkpoint_path)
    return model, report


def write_report_csv(report: TrainReport, path):
    """Deterministic training curves (epoch, train_loss, val_metric)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_metric"])
        for i, (tr, va) in enumerate(zip(report.train_loss, report.val_metric)):
            writer.writerow([i, f"{tr:.17g}", f"{va:.17g}"])


def write_timing_csv(report: TrainReport, path):
    """Wall-clock per epoch, kept out of the deterministic report file."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "wallclock_s"])
        for i, w in enumerate(report.wallclock_s):
            writer.writerow([i, f"{w:.6f}"])
