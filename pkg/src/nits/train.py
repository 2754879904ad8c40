"""Maximum-likelihood training of the weight model.

Minibatch Adam on the mean negative log density, global gradient-norm
clipping, early stopping on a validation split.  Every random choice
(shuffling, dropout) flows from the config seed, so identical configs on
identical data reproduce the run exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import grad, model as model_mod, pnn
from .errors import DomainError, NumericalError
from .model import NitsModel

_MAX_CONSECUTIVE_BAD = 10


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 2e-4
    patience: int = 5
    max_epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")


@dataclass
class TrainReport:
    train_nll: list = field(default_factory=list)
    val_nll: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_nll: float = math.inf
    epochs_run: int = 0
    wall_clock: float = 0.0
    weight_clamps: int = 0
    partition_floors: int = 0
    nonfinite_batches: int = 0
    aborted_nonfinite: bool = False

    def to_lines(self) -> list:
        lines = []
        for e, (tr, va) in enumerate(zip(self.train_nll, self.val_nll)):
            lines.append(f"epoch={e} train_nll={tr!r} val_nll={va!r}")
        lines.append(f"best_epoch={self.best_epoch}")
        lines.append(f"best_val_nll={self.best_val_nll!r}")
        lines.append(f"epochs_run={self.epochs_run}")
        lines.append(f"wall_clock={self.wall_clock!r}")
        lines.append(f"weight_clamps={self.weight_clamps}")
        lines.append(f"partition_floors={self.partition_floors}")
        lines.append(f"nonfinite_batches={self.nonfinite_batches}")
        lines.append(f"aborted_nonfinite={self.aborted_nonfinite}")
        return lines


class Adam:
    """The standard Adam update with bias correction."""

    def __init__(self, params: list, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def clip_global_norm(grads: list, max_norm: float) -> float:
    """Scale all arrays in place so the joint L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


@dataclass(frozen=True)
class EvalResult:
    nats: float
    bits_per_dim: float
    n_evaluated: int
    n_excluded: int


def evaluate_nll(model: NitsModel, x_rows) -> EvalResult:
    """Mean negative log density of the rows inside the model bounds.

    Rows outside the bounds are excluded and counted, not errors: the
    support is finite by construction and held-out data can fall past it.
    """
    x_rows = np.asarray(x_rows, dtype=np.float64)
    if x_rows.ndim != 2 or x_rows.shape[1] != model.data_dim:
        raise ValueError(f"x shape {x_rows.shape}, expected (n, {model.data_dim})")
    mask = model_mod.in_bounds_mask(model, x_rows)
    kept = x_rows[mask]
    if kept.shape[0] == 0:
        raise DomainError("no rows inside the model bounds")
    nats = float(-np.mean(model_mod.log_likelihood_batch(model, kept)))
    bits = nats / (math.log(2.0) * model.data_dim)
    return EvalResult(nats=nats, bits_per_dim=bits,
                      n_evaluated=int(kept.shape[0]),
                      n_excluded=int(x_rows.shape[0] - kept.shape[0]))


def _check_in_bounds(model, x_rows, what):
    mask = model_mod.in_bounds_mask(model, x_rows)
    if not np.all(mask):
        row = int(np.flatnonzero(~mask)[0])
        raise DomainError(f"{what} row {row} lies outside the model bounds")


def fit(model: NitsModel, dataset, cfg: TrainConfig = TrainConfig(),
        progress=None):
    """Train a copy of the model; return (best_model, report).

    dataset provides .x plus train/val index arrays (anything shaped like
    data.Dataset).  If the validation split is empty, a val_fraction
    share of the training rows is carved off, seeded by the config.  The
    input model is left untouched; the returned model carries the
    parameters of the best validation epoch.  Training halts exactly
    patience epochs after that epoch, or at max_epochs.  progress, if
    given, is called with (epoch, train_nll, val_nll) after each epoch.
    """
    t_start = time.perf_counter()
    train_x = np.asarray(dataset.x[dataset.train_idx], dtype=np.float64)
    val_x = np.asarray(dataset.x[dataset.val_idx], dtype=np.float64)

    ss = np.random.SeedSequence(cfg.seed)
    ss_split, ss_shuffle, ss_dropout = ss.spawn(3)
    if val_x.shape[0] == 0:
        n = train_x.shape[0]
        n_val = max(1, int(round(cfg.val_fraction * n)))
        if n_val >= n:
            raise ValueError("not enough training rows to carve a validation split")
        perm = np.random.default_rng(ss_split).permutation(n)
        val_x = train_x[perm[:n_val]]
        train_x = train_x[perm[n_val:]]
    _check_in_bounds(model, train_x, "training")

    work = model.copy()
    arrays = work.wm_params.arrays()
    adam = Adam(arrays, lr=cfg.learning_rate, beta1=cfg.beta1,
                beta2=cfg.beta2, eps=cfg.adam_eps)
    shuffle_rng = np.random.default_rng(ss_shuffle)
    dropout_rng = np.random.default_rng(ss_dropout)

    clamp_start = pnn.diagnostics.weight_clamps
    floor_start = pnn.diagnostics.partition_floors
    report = TrainReport()
    best_params = work.wm_params.copy()
    n_train = train_x.shape[0]
    consecutive_bad = 0

    for epoch in range(cfg.max_epochs):
        perm = shuffle_rng.permutation(n_train)
        nll_sum, nll_count = 0.0, 0
        aborted = False
        for start in range(0, n_train, cfg.batch_size):
            xb = train_x[perm[start:start + cfg.batch_size]]
            try:
                theta, tape = model_mod.emit_stack(
                    work, xb, training=True, dropout_rng=dropout_rng)
                nll, dtheta = grad.nll_and_grad_rows(
                    work.pnn_widths, work.bounds, theta, xb)
                batch_nll = float(np.mean(nll))
                grads = grad.chain_to_phi(dtheta / xb.shape[0], tape)
                finite = (math.isfinite(batch_nll)
                          and all(np.all(np.isfinite(g)) for g in grads))
            except NumericalError:
                finite = False
            if not finite:
                report.nonfinite_batches += 1
                consecutive_bad += 1
                if consecutive_bad >= _MAX_CONSECUTIVE_BAD:
                    report.aborted_nonfinite = True
                    aborted = True
                    break
                continue
            consecutive_bad = 0
            clip_global_norm(grads, cfg.grad_clip)
            adam.step(grads)
            nll_sum += batch_nll * xb.shape[0]
            nll_count += xb.shape[0]

        report.train_nll.append(nll_sum / nll_count if nll_count else math.nan)
        val = evaluate_nll(work, val_x).nats
        report.val_nll.append(val)
        report.epochs_run = epoch + 1
        if progress is not None:
            progress(epoch, report.train_nll[-1], val)
        if math.isfinite(val) and val < report.best_val_nll:
            report.best_val_nll = val
            report.best_epoch = epoch
            best_params = work.wm_params.copy()
        if aborted or (epoch - report.best_epoch) >= cfg.patience:
            break

    if report.best_epoch < 0:
        # no finite validation epoch; fall back to the last state
        report.best_epoch = report.epochs_run - 1
        best_params = work.wm_params.copy()
    best = work.copy()
    best.wm_params = best_params
    report.wall_clock = time.perf_counter() - t_start
    report.weight_clamps = pnn.diagnostics.weight_clamps - clamp_start
    report.partition_floors = pnn.diagnostics.partition_floors - floor_start
    return best, report
