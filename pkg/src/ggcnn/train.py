"""Training loop, Adam, MSE loss and the finite-difference gradient check."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import InputError, NumericError, ShapeMismatch
from .graph import AdjacencySeries, propagation_operator
from .ingest import DemandTensor, FeatureTensor, MinMaxScaler, SplitSpec, fit_scaler
from .neuro.autograd import Tensor, as_tensor, no_grad
from .neuro.model import Module

log = logging.getLogger(__name__)


class DivergedLoss(NumericError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    early_stop_patience: int | None = None
    grad_clip: float | None = None
    val_fraction: float = 0.10

    def __post_init__(self):
        if self.learning_rate <= 0 or self.adam_epsilon <= 0:
            raise InputError("learning rate and epsilon must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise InputError("batch_size must be >= 1 and epochs >= 0")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise InputError("Adam betas must lie in [0, 1)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise InputError("val_fraction must lie in [0, 1)")


def mse_loss(pred, target) -> Tensor:
    """Mean of squared errors over every element."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[Mapping[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; ``params`` arrays are modified in place."""
    state.step += 1
    b1, b2, lr, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.learning_rate, cfg.adam_epsilon
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


# ---------------------------------------------------------------------------
# data


@dataclass
class ForecastDataset:
    """Supervised samples ``(operator_t, X_t) -> demand_t`` for slots ``t >= 1``.

    ``X_t`` holds weather at ``t`` and demand at ``t-1``; the operator comes
    from the adjacency of slot ``t-1`` so no sample sees its own target.
    Everything is min-max scaled with statistics from the training slots.
    """

    X: np.ndarray
    Y: np.ndarray
    ops: np.ndarray
    slots: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    feature_scaler: MinMaxScaler
    target_scaler: MinMaxScaler
    feature_names: tuple[str, ...]
    station_ids: tuple[str, ...]

    @property
    def n_stations(self) -> int:
        return self.X.shape[1]

    @property
    def n_features(self) -> int:
        return self.X.shape[2]

    def lag_columns(self) -> list[int]:
        return [self.feature_names.index("last_in_trips"), self.feature_names.index("last_out_trips")]


def target_scaler_from(features: FeatureTensor, scaler: MinMaxScaler) -> MinMaxScaler:
    cols = [features.column("last_in_trips"), features.column("last_out_trips")]
    return MinMaxScaler(scaler.minimum[cols].copy(), scaler.maximum[cols].copy())


def prepare_dataset(
    features: FeatureTensor,
    demand: DemandTensor,
    adjacency: AdjacencySeries | np.ndarray,
    split: SplitSpec = SplitSpec(),
    operator: str = "normalized",
    val_fraction: float = 0.10,
    scaler: MinMaxScaler | None = None,
) -> ForecastDataset:
    T = features.n_slots
    mats = adjacency.matrices if isinstance(adjacency, AdjacencySeries) else np.asarray(adjacency)
    if demand.n_slots != T or mats.shape[0] != T:
        raise InputError(f"slot counts differ: features {T}, demand {demand.n_slots}, adjacency {mats.shape[0]}")
    if mats.shape[-1] != features.values.shape[1]:
        raise InputError("adjacency size does not match the station count")
    scaler = scaler or fit_scaler(features, split)
    tscaler = target_scaler_from(features, scaler)

    slots = np.arange(1, T)
    X = scaler.transform(features.values[1:])
    Y = tscaler.transform(demand.values[1:])
    prev = mats[:-1]
    if operator == "normalized":
        ops = propagation_operator(prev)
    elif operator == "raw":
        ops = np.array(prev, dtype=float)
    else:
        raise InputError(f"unknown operator mode {operator!r}")

    cut = split.cut(T)
    train_all = np.flatnonzero(slots < cut)
    test_idx = np.flatnonzero(slots >= cut)
    n_val = int(math.floor(val_fraction * train_all.size))
    train_idx = train_all[: train_all.size - n_val]
    val_idx = train_all[train_all.size - n_val :]
    if train_idx.size == 0:
        raise InputError("no training samples after the validation hold-out")
    return ForecastDataset(
        X, Y, ops, slots, train_idx, val_idx, test_idx, scaler, tscaler, features.names, features.station_ids
    )


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None
    seconds: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    initial_train_loss: float = float("nan")
    best_epoch: int = 0
    best_loss: float = float("inf")
    stopped_early: bool = False
    final_metrics: dict = field(default_factory=dict)

    def write_csv(self, path: str | Path) -> None:
        """Loss history; wall time goes to a separate sidecar so this file is reproducible."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for r in self.epochs:
                w.writerow([r.epoch, repr(r.train_loss), "" if r.val_loss is None else repr(r.val_loss)])

    def write_timing(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "seconds"])
            for r in self.epochs:
                w.writerow([r.epoch, f"{r.seconds:.4f}"])

    def summary(self) -> dict:
        return {
            "epochs_completed": len(self.epochs),
            "initial_train_loss": self.initial_train_loss,
            "final_train_loss": self.epochs[-1].train_loss if self.epochs else None,
            "best_epoch": self.best_epoch,
            "best_loss": self.best_loss,
            "stopped_early": self.stopped_early,
            "final_metrics": self.final_metrics,
        }

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def predict(model: Module, data: ForecastDataset, idx: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Scaled predictions for the samples in ``idx``."""
    out = []
    with no_grad():
        for lo in range(0, idx.size, chunk):
            sel = idx[lo : lo + chunk]
            out.append(model(data.ops[sel], data.X[sel]).data)
    if not out:
        return np.zeros((0, data.n_stations, model.descriptor["n_outputs"]))
    return np.concatenate(out, axis=0)


def evaluate_loss(model: Module, data: ForecastDataset, idx: np.ndarray) -> float | None:
    if idx.size == 0:
        return None
    pred = predict(model, data, idx)
    return float(np.mean((pred - data.Y[idx]) ** 2))


def _check_finite(loss: float, epoch: int, batch: int) -> None:
    if not math.isfinite(loss):
        raise DivergedLoss(f"loss became {loss} at epoch {epoch}, batch {batch}")


def train(
    model: Module,
    data: ForecastDataset,
    cfg: TrainConfig = TrainConfig(),
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[Module, TrainLog]:
    """Mini-batch Adam over shuffled training slots; keeps the best-validation weights.

    Only ``data.train_idx`` and ``data.val_idx`` are ever read.
    """
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    state = AdamState()
    log_ = TrainLog()
    log_.initial_train_loss = evaluate_loss(model, data, data.train_idx)
    _check_finite(log_.initial_train_loss, 0, 0)
    best_state = model.state()
    stale = 0

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(data.train_idx)
        total = 0.0
        for b, lo in enumerate(range(0, order.size, cfg.batch_size)):
            sel = np.sort(order[lo : lo + cfg.batch_size])
            model.zero_grad()
            loss = mse_loss(model(data.ops[sel], data.X[sel]), data.Y[sel])
            value = loss.item()
            _check_finite(value, epoch, b)
            loss.backward()
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
            if cfg.grad_clip:
                clip_global_norm(grads, cfg.grad_clip)
            adam_step({k: p.data for k, p in params.items()}, grads, state, cfg)
            total += value * sel.size
        train_loss = total / order.size
        val_loss = evaluate_loss(model, data, data.val_idx)
        if val_loss is not None:
            _check_finite(val_loss, epoch, -1)
        rec = EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - t0)
        log_.epochs.append(rec)
        if on_epoch:
            on_epoch(rec)

        score = val_loss if val_loss is not None else train_loss
        if score < log_.best_loss:
            log_.best_loss, log_.best_epoch = score, epoch
            best_state = model.state()
            stale = 0
        else:
            stale += 1
            if cfg.early_stop_patience and stale >= cfg.early_stop_patience:
                log_.stopped_early = True
                break

    if log_.epochs:
        model.load_state(best_state)
    return model, log_


# ---------------------------------------------------------------------------
# gradient check


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    eps: float
    atol: float

    def failures(self, threshold: float = 1e-4) -> list[str]:
        return [k for k, v in self.max_rel_error.items() if not v < threshold]

    def passed(self, threshold: float = 1e-4) -> bool:
        return not self.failures(threshold)

    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def lines(self, threshold: float = 1e-4) -> list[str]:
        width = max((len(k) for k in self.max_rel_error), default=0)
        return [
            f"{k:<{width}}  {v:.3e}  {'ok' if v < threshold else 'FAIL'}" for k, v in self.max_rel_error.items()
        ]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-7) -> np.ndarray:
    """Element-wise ``|a - n| / max(|a|, |n|)``; zero where ``|a - n| <= atol``."""
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.divide(diff, denom, out=np.zeros_like(diff), where=denom > 0)
    return np.where(diff <= atol, 0.0, rel)


def analytic_gradients(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    return {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    atol: float = 1e-7,
    analytic: Mapping[str, np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare backward() gradients with central differences, one tensor at a time.

    ``analytic`` may be supplied to check externally produced gradients.
    """
    if analytic is None:
        analytic = analytic_gradients(loss_fn, params)
    report = {}
    with no_grad():
        for name, p in params.items():
            numeric = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / (2.0 * eps)
            report[name] = float(relative_error(np.asarray(analytic[name]), numeric, atol).max(initial=0.0))
    return GradCheckReport(report, eps, atol)


def model_grad_check(model: Module, op, X, Y, eps: float = 1e-5, atol: float = 1e-7) -> GradCheckReport:
    return grad_check(lambda: mse_loss(model(op, X), Y), model.parameters(), eps=eps, atol=atol)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
