"""Comparison models: persistence, OLS, a per-station MLP and a plain GCN."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError
from ..neuro.autograd import Tensor
from ..neuro.layers import GcnLayerParams, gcn_forward
from ..neuro.model import Mlp, Module
from ..train import ForecastDataset, TrainConfig, predict, train

FEATURE_ATTRIBUTES = (
    "precipitation, pressure, temp, wind speed, access to population, "
    "access to employment, last time step in-trips, out-trips"
)


class RankDeficient(NumericError):
    pass


def persistence_baseline(data: ForecastDataset, idx: np.ndarray) -> np.ndarray:
    """Next demand equals the previous slot's demand (the scaled lag features)."""
    return data.X[idx][..., data.lag_columns()].copy()


def ols_fit(
    features: np.ndarray, targets: np.ndarray, ridge_fallback: bool = True, ridge: float = 1e-8
) -> tuple[np.ndarray, float | np.ndarray]:
    """Least squares with intercept via the normal equations.

    ``targets`` may be 1-D or ``(samples, k)``. When the design matrix plus its
    intercept column is rank deficient, a tiny ridge penalty is added (the intercept
    is left unpenalised). With ``ridge_fallback`` off, ``RankDeficient`` is raised instead.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    n, f = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    gram = A.T @ A
    rhs = A.T @ y
    if np.linalg.matrix_rank(gram) < f + 1:
        if not ridge_fallback:
            raise RankDeficient(f"design matrix of {n} samples x {f} features is rank deficient")
        pen = np.eye(f + 1) * ridge
        pen[-1, -1] = 0.0
        gram = gram + pen
    beta = np.linalg.solve(gram, rhs)
    coef, intercept = beta[:-1], beta[-1]
    return coef, (float(intercept) if np.ndim(intercept) == 0 else intercept)


@dataclass
class OlsModel:
    coef: np.ndarray  # (F, C)
    intercept: np.ndarray  # (C,)

    @classmethod
    def fit(cls, data: ForecastDataset, idx: np.ndarray) -> "OlsModel":
        X = data.X[idx].reshape(-1, data.n_features)
        Y = data.Y[idx].reshape(-1, data.Y.shape[-1])
        coef, intercept = ols_fit(X, Y)
        return cls(np.asarray(coef), np.atleast_1d(intercept))

    def predict(self, data: ForecastDataset, idx: np.ndarray) -> np.ndarray:
        return data.X[idx] @ self.coef + self.intercept


class MlpBaseline(Module):
    """Each station independently: features -> 32 -> 32 -> 64 -> 2, ReLU."""

    kind = "mlp"
    DEFAULTS = {"n_features": 8, "hidden": [32, 32, 64], "n_outputs": 2}

    def __init__(self, descriptor: dict | None = None, seed: int = 0, **overrides):
        desc = {**self.DEFAULTS, **(descriptor or {}), **overrides, "kind": self.kind, "seed": seed}
        self.descriptor = desc
        rng = np.random.default_rng(seed)
        self.net = Mlp.init(rng, [desc["n_features"], *desc["hidden"], desc["n_outputs"]])

    def parameters(self) -> dict[str, Tensor]:
        return self.net.named("mlp.")

    def forward(self, op, X) -> Tensor:
        _, X = self._check_input(op, X)
        return self.net(X)


class GcnBaseline(Module):
    """Two graph convolutions with ReLU, then a dense readout; no gating."""

    kind = "gcn"
    DEFAULTS = {"n_features": 8, "hidden": [32, 32], "readout_hidden": [64], "n_outputs": 2}

    def __init__(self, descriptor: dict | None = None, seed: int = 0, **overrides):
        desc = {**self.DEFAULTS, **(descriptor or {}), **overrides, "kind": self.kind, "seed": seed}
        self.descriptor = desc
        rng = np.random.default_rng(seed)
        widths = [desc["n_features"], *desc["hidden"]]
        self.convs = [GcnLayerParams.init(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]
        self.readout = Mlp.init(rng, [widths[-1], *desc["readout_hidden"], desc["n_outputs"]])

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, conv in enumerate(self.convs, start=1):
            out.update(conv.named(f"conv{i}."))
        out.update(self.readout.named("readout."))
        return out

    def forward(self, op, X) -> Tensor:
        op, h = self._check_input(op, X)
        for conv in self.convs:
            h = gcn_forward(op, h, conv).relu()
        return self.readout(h)


def fit_neural_baseline(kind: str, data: ForecastDataset, cfg: TrainConfig, seed: int = 0):
    """Train an ``mlp`` or ``gcn`` baseline with the shared training loop."""
    cls = {"mlp": MlpBaseline, "gcn": GcnBaseline}[kind]
    model = cls(n_features=data.n_features, seed=seed)
    model, log = train(model, data, cfg)
    return model, log


def neural_predictions(model: Module, data: ForecastDataset, idx: np.ndarray) -> np.ndarray:
    return predict(model, data, idx)
