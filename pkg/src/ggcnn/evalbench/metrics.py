"""R², MSE, RMSE and the per-model metrics report."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import LengthMismatch


def _pair(pred, actual) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float).ravel()
    actual = np.asarray(actual, dtype=float).ravel()
    if pred.shape != actual.shape:
        raise LengthMismatch(f"prediction has {pred.size} values, target has {actual.size}")
    return pred, actual


def mse(pred, actual) -> float:
    pred, actual = _pair(pred, actual)
    if pred.size == 0:
        raise LengthMismatch("empty series")
    return float(np.mean((pred - actual) ** 2))


def rmse(pred, actual) -> float:
    return math.sqrt(mse(pred, actual))


def r_squared(pred, actual) -> float:
    """Coefficient of determination; ``nan`` when the target has zero variance."""
    pred, actual = _pair(pred, actual)
    if pred.size < 2:
        raise LengthMismatch("r_squared needs at least two values")
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    if ss_tot == 0.0:
        return float("nan")
    return 1.0 - float(np.sum((actual - pred) ** 2)) / ss_tot


@dataclass
class StationMetrics:
    station_id: str
    r2: float
    mse: float
    rmse: float


@dataclass
class MetricsReport:
    model: str
    space: str
    n_test_slots: int
    r2: float
    mse: float
    rmse: float
    per_station: list[StationMetrics] = field(default_factory=list)
    attributes: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        return _json_safe(d)

    def consistent(self, tol: float = 1e-9) -> bool:
        """RMSE² = MSE for the aggregate and every station."""
        rows = [(self.rmse, self.mse)] + [(s.rmse, s.mse) for s in self.per_station]
        return all(abs(r * r - m) <= tol for r, m in rows)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def build_report(
    model: str,
    pred: np.ndarray,
    actual: np.ndarray,
    station_ids: Sequence[str],
    space: str,
    attributes: str = "",
) -> MetricsReport:
    """Pool all (slot, station, channel) cells for the aggregate; per station pool slots and channels.

    Arrays are ``(slots, stations, channels)``.
    """
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise LengthMismatch(f"prediction {pred.shape} vs target {actual.shape}")
    per = []
    for s, sid in enumerate(station_ids):
        p, a = pred[:, s], actual[:, s]
        m = mse(p, a)
        per.append(StationMetrics(str(sid), r_squared(p, a) if p.size >= 2 else float("nan"), m, math.sqrt(m)))
    m = mse(pred, actual)
    return MetricsReport(
        model=model,
        space=space,
        n_test_slots=int(pred.shape[0]),
        r2=r_squared(pred, actual),
        mse=m,
        rmse=math.sqrt(m),
        per_station=per,
        attributes=attributes,
    )


def _fmt(x: float) -> str:
    return "undefined" if not math.isfinite(x) else f"{x:.4f}"


def comparison_table(reports: Sequence[MetricsReport]) -> str:
    rows = [("Model", "R2", "MSE", "RMSE", "Attributes")]
    rows += [(r.model, _fmt(r.r2), _fmt(r.mse), _fmt(r.rmse), r.attributes) for r in reports]
    widths = [max(len(row[i]) for row in rows) for i in range(5)]
    lines = []
    for j, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + [row[i].rjust(widths[i]) for i in (1, 2, 3)] + [row[4]]
        lines.append("  ".join(cells).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths[:4]) + "  " + "-" * max(widths[4], 10))
    return "\n".join(lines) + "\n"


def write_reports(stem: str | Path, reports: Sequence[MetricsReport]) -> list[Path]:
    """Write ``<stem>.json``, ``<stem>.csv`` and ``<stem>.txt``; returns the paths.

    The text file holds one comparison table per space, in order of appearance.
    """
    stem = Path(stem)
    out_json = stem.with_suffix(".json")
    out_csv = stem.with_suffix(".csv")
    out_txt = stem.with_suffix(".txt")
    out_json.write_text(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n")
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "space", "station_id", "r2", "mse", "rmse", "n_test_slots"])
        for r in reports:
            w.writerow([r.model, r.space, "ALL", repr(r.r2), repr(r.mse), repr(r.rmse), r.n_test_slots])
            for s in r.per_station:
                w.writerow([r.model, r.space, s.station_id, repr(s.r2), repr(s.mse), repr(s.rmse), r.n_test_slots])
    spaces = list(dict.fromkeys(r.space for r in reports))
    blocks = [f"[{sp}]\n" + comparison_table([r for r in reports if r.space == sp]) for sp in spaces]
    out_txt.write_text("\n".join(blocks))
    return [out_json, out_csv, out_txt]
