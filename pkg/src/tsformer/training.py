"""Loss, metrics, optimizers, and the epoch loop.

Training minimizes mean squared error by reverse-mode backpropagation:
every mini-batch records forward passes for its windows on one tape,
reduces them to a scalar batch loss, sweeps the tape backward, and applies
an SGD or Adam update. Everything is seeded, so a rerun with the same
configs reproduces the parameters and the report bit for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .autodiff import Tape
from .errors import ConfigError, DataError, DimensionError, NumericError
from .data import TimeSeriesDataset
from .fileio import atomic_write_text
from .model import ModelConfig, ModelParams, build_forward, forward, init_params, make_param_vars, param_items

__all__ = [
    "TrainConfig",
    "TrainReport",
    "AdamState",
    "mse",
    "mae",
    "sgd_step",
    "adam_step",
    "clip_gradients",
    "train",
    "evaluate",
    "export_report",
]


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 16
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = None
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive, got {self.grad_clip}")


@dataclass
class TrainReport:
    """Per-epoch metric trajectories; the data behind a loss-curve plot."""

    train_mse: list[float] = field(default_factory=list)
    train_mae: list[float] = field(default_factory=list)
    val_mse: list[float] | None = None
    val_mae: list[float] | None = None
    seconds: list[float] = field(default_factory=list)


def _metric_inputs(predictions, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size != t.size:
        raise DimensionError(f"metrics: length mismatch, {p.size} vs {t.size}")
    if p.size == 0:
        raise DimensionError("metrics: need at least one sample")
    return p, t


def mse(predictions, targets) -> float:
    """Mean of squared differences."""
    p, t = _metric_inputs(predictions, targets)
    return float(np.mean((p - t) ** 2))


def mae(predictions, targets) -> float:
    """Mean of absolute differences."""
    p, t = _metric_inputs(predictions, targets)
    return float(np.mean(np.abs(p - t)))


def _check_grads(params: ModelParams, grads: dict[str, np.ndarray], who: str) -> None:
    for name, arr in param_items(params):
        g = grads.get(name)
        if g is None:
            raise DimensionError(f"{who}: missing gradient for {name}")
        if g.shape != arr.shape:
            raise DimensionError(
                f"{who}: gradient shape {g.shape} does not match {name} {arr.shape}"
            )


def sgd_step(params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> ModelParams:
    """Plain gradient descent, in place: theta <- theta - lr * g."""
    _check_grads(params, grads, "sgd_step")
    for name, arr in param_items(params):
        arr -= lr * grads[name]
    return params


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in param_items(params)},
            v={name: np.zeros_like(arr) for name, arr in param_items(params)},
        )


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> tuple[ModelParams, AdamState]:
    """Adam update with bias correction, in place on params and state."""
    _check_grads(params, grads, "adam_step")
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    for name, arr in param_items(params):
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / (1.0 - b1 ** state.t)
        v_hat = state.v[name] / (1.0 - b2 ** state.t)
        arr -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return params, state


def clip_gradients(grads: dict[str, np.ndarray], cap: float) -> float:
    """Scale all gradients so the global L2 norm is at most ``cap``.

    Returns the pre-clip norm.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if norm > cap:
        factor = cap / norm
        for g in grads.values():
            g *= factor
    return norm


def _batch_loss(
    params: ModelParams,
    windows: list[tuple[np.ndarray, float]],
    mconfig: ModelConfig,
) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
    """Forward + backward for one mini-batch on a fresh tape.

    Returns (mean squared loss, per-window errors, gradients by name).
    """
    tape = Tape()
    leaves = make_param_vars(tape, params)
    outputs = []
    for x, _ in windows:
        y, _ = build_forward(tape, tape.leaf(x), leaves, mconfig)
        outputs.append(y)
    predictions = tape.concat_cols(outputs)
    targets = tape.leaf(np.array([[y for _, y in windows]]))
    diff = tape.sub(predictions, targets)
    loss = tape.mean_all(tape.mul(diff, diff))
    grads = tape.backward(loss)
    named = {}
    for name, var in leaves.items():
        g = grads[var.nid]
        named[name] = g if g is not None else np.zeros_like(var.value)
    return loss.value.item(), diff.value.ravel(), named


def train(
    dataset: TimeSeriesDataset,
    val: TimeSeriesDataset | None,
    mconfig: ModelConfig,
    tconfig: TrainConfig,
    clock=time.perf_counter,
) -> tuple[ModelParams, TrainReport]:
    """Run the full epoch loop and return final parameters plus the report.

    Epoch train metrics aggregate each batch's pre-update errors, the usual
    running training loss. Validation metrics, when a validation set is
    given, come from a clean read-only pass after each epoch. A non-finite
    loss aborts immediately rather than training through the damage.
    """
    if not dataset.windows:
        raise DataError("train: dataset is empty")
    if dataset.window_len != mconfig.window_len or dataset.input_dim != mconfig.input_dim:
        raise ConfigError(
            f"train: dataset windows are {dataset.window_len}x{dataset.input_dim}, "
            f"model expects {mconfig.window_len}x{mconfig.input_dim}"
        )
    params = init_params(mconfig)
    state = AdamState.zeros(params) if tconfig.optimizer == "adam" else None
    order_rng = tensor.RngState(tconfig.seed)
    n = len(dataset.windows)
    report = TrainReport(
        val_mse=[] if val is not None else None,
        val_mae=[] if val is not None else None,
    )
    for epoch in range(1, tconfig.epochs + 1):
        started = clock()
        if tconfig.shuffle_each_epoch:
            order = order_rng.permutation(n)
        else:
            order = np.arange(n)
        sq_sum = 0.0
        abs_sum = 0.0
        for lo in range(0, n, tconfig.batch_size):
            batch_ids = order[lo : lo + tconfig.batch_size]
            batch = [dataset.windows[i] for i in batch_ids]
            loss, errors, grads = _batch_loss(params, batch, mconfig)
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {lo // tconfig.batch_size}"
                )
            sq_sum += float(np.sum(errors * errors))
            abs_sum += float(np.sum(np.abs(errors)))
            if tconfig.grad_clip is not None:
                clip_gradients(grads, tconfig.grad_clip)
            if tconfig.optimizer == "adam":
                adam_step(params, grads, state, tconfig)
            else:
                sgd_step(params, grads, tconfig.learning_rate)
        report.train_mse.append(sq_sum / n)
        report.train_mae.append(abs_sum / n)
        if val is not None:
            v_mse, v_mae = evaluate(params, mconfig, val)
            report.val_mse.append(v_mse)
            report.val_mae.append(v_mae)
        report.seconds.append(clock() - started)
    return params, report


def evaluate(
    params: ModelParams, config: ModelConfig, dataset: TimeSeriesDataset
) -> tuple[float, float]:
    """MSE and MAE of the model over every window; never mutates params."""
    if not dataset.windows:
        raise DataError("evaluate: dataset is empty")
    predictions = np.empty(len(dataset.windows))
    targets = np.empty(len(dataset.windows))
    for i, (x, y) in enumerate(dataset.windows):
        predictions[i], _ = forward(x, params, config)
        targets[i] = y
    return mse(predictions, targets), mae(predictions, targets)


def export_report(report: TrainReport, path: str) -> None:
    """Write the plot-ready per-epoch CSV; val columns stay blank without a
    validation set.
    """
    lines = ["epoch,train_mse,train_mae,val_mse,val_mae,seconds"]
    for i in range(len(report.train_mse)):
        val_mse = f"{report.val_mse[i]:.17g}" if report.val_mse is not None else ""
        val_mae = f"{report.val_mae[i]:.17g}" if report.val_mae is not None else ""
        lines.append(
            f"{i + 1},{report.train_mse[i]:.17g},{report.train_mae[i]:.17g},"
            f"{val_mse},{val_mae},{report.seconds[i]:.3f}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")
