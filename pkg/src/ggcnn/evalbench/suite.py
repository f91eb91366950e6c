"""Fit and score a set of models on one dataset, in both scaled and count space."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError
from ..neuro.model import GgcnnModel, Module
from ..train import ForecastDataset, TrainConfig, TrainLog, predict, train
from .baselines import FEATURE_ATTRIBUTES, OlsModel, fit_neural_baseline, persistence_baseline
from .metrics import MetricsReport, build_report

MODELS = ("persistence", "ols", "mlp", "gcn", "ggcnn")

ATTRIBUTES = {
    "persistence": "last time step in-trips, out-trips",
    "ols": FEATURE_ATTRIBUTES,
    "mlp": FEATURE_ATTRIBUTES,
    "gcn": FEATURE_ATTRIBUTES + " + graph",
    "ggcnn": FEATURE_ATTRIBUTES + " + graph",
}


@dataclass
class SuiteResult:
    predictions: dict[str, np.ndarray] = field(default_factory=dict)  # scaled, (test slots, N, 2)
    logs: dict[str, TrainLog] = field(default_factory=dict)
    models: dict[str, Module] = field(default_factory=dict)

    def reports(self, data: ForecastDataset, spaces=("scaled", "counts")) -> list[MetricsReport]:
        actual = data.Y[data.test_idx]
        out = []
        for space in spaces:
            for name in self.predictions:
                pred = self.predictions[name]
                y = actual
                if space == "counts":
                    pred = data.target_scaler.inverse_transform(pred)
                    y = data.target_scaler.inverse_transform(actual)
                out.append(build_report(name, pred, y, data.station_ids, space, ATTRIBUTES.get(name, "")))
        return out

    def r2(self, data: ForecastDataset) -> dict[str, float]:
        return {r.model: r.r2 for r in self.reports(data, spaces=("scaled",))}


def run_suite(
    data: ForecastDataset,
    models=MODELS,
    cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
    trained: dict[str, Module] | None = None,
    model_overrides: dict | None = None,
) -> SuiteResult:
    """Fit each requested model on the training slots and predict the test slots.

    OLS is fitted on training plus validation slots; the neural models use
    the validation slots for model selection. ``trained`` supplies models
    that are already fitted (for example a loaded checkpoint).
    """
    trained = trained or {}
    result = SuiteResult()
    test = data.test_idx
    for name in models:
        if name not in MODELS:
            raise InputError(f"unknown model {name!r}; choose from {', '.join(MODELS)}")
        if name in trained:
            model = trained[name]
            result.models[name] = model
            result.predictions[name] = predict(model, data, test)
        elif name == "persistence":
            result.predictions[name] = persistence_baseline(data, test)
        elif name == "ols":
            fit_idx = np.concatenate([data.train_idx, data.val_idx])
            result.predictions[name] = OlsModel.fit(data, fit_idx).predict(data, test)
        elif name in ("mlp", "gcn"):
            model, log = fit_neural_baseline(name, data, cfg, seed=seed)
            result.models[name], result.logs[name] = model, log
            result.predictions[name] = predict(model, data, test)
        else:
            model = GgcnnModel(n_features=data.n_features, seed=seed, **(model_overrides or {}))
            model, log = train(model, data, cfg)
            result.models[name], result.logs[name] = model, log
            result.predictions[name] = predict(model, data, test)
    return result
