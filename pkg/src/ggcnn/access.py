"""Cumulative-opportunity access around each station.

Walking time is approximated by great-circle distance at a fixed speed;
``haversine_minutes`` is the only place that knows this, so a routed
travel-time source can replace it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class OpportunityPoint:
    lat: float
    lon: float
    weight: float

    def __post_init__(self):
        if self.weight < 0:
            raise InputError(f"opportunity weight must be non-negative, got {self.weight}")
        if not (-90 <= self.lat <= 90 and -180 <= self.lon <= 180):
            raise InputError(f"invalid coordinate ({self.lat}, {self.lon})")


@dataclass(frozen=True)
class AccessConfig:
    budget_minutes: float = 15.0
    walking_speed_kmh: float = 5.0

    def __post_init__(self):
        if not self.budget_minutes > 0 or not self.walking_speed_kmh > 0:
            raise InputError("access budget and walking speed must be positive")


def haversine_minutes(a, b, speed_kmh: float = 5.0):
    """Walking minutes between ``a`` and ``b`` (``(..., 2)`` lat/lon in degrees).

    Broadcasts, so one station against an array of points is a single call.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lat1, lon1 = np.radians(a[..., 0]), np.radians(a[..., 1])
    lat2, lon2 = np.radians(b[..., 0]), np.radians(b[..., 1])
    h = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    km = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    minutes = km / speed_kmh * 60.0
    return float(minutes) if np.ndim(minutes) == 0 else minutes


def _as_arrays(points: Sequence[OpportunityPoint] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(points, np.ndarray):
        pts = points.reshape(-1, 3)
        return pts[:, :2], pts[:, 2]
    coords = np.array([[p.lat, p.lon] for p in points], dtype=float).reshape(-1, 2)
    weights = np.array([p.weight for p in points], dtype=float)
    return coords, weights


def cumulative_access(station, points, cfg: AccessConfig = AccessConfig()) -> float:
    """Sum of weights of points reachable within ``cfg.budget_minutes`` (inclusive)."""
    coords, weights = _as_arrays(points)
    if weights.size == 0:
        return 0.0
    minutes = np.atleast_1d(haversine_minutes(np.asarray(station, dtype=float), coords, cfg.walking_speed_kmh))
    return float(weights[minutes <= cfg.budget_minutes].sum())


def access_vectors(registry, population, employment, cfg: AccessConfig = AccessConfig()):
    """Population and employment access per station, in registry index order."""
    if len(registry) == 0:
        raise InputError("registry is empty")
    stations = registry.coords
    pop = np.array([cumulative_access(s, population, cfg) for s in stations])
    emp = np.array([cumulative_access(s, employment, cfg) for s in stations])
    return pop, emp


def read_points(path: str | Path) -> list[OpportunityPoint]:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        missing = {"lat", "lon", "weight"} - set(reader.fieldnames or ())
        if missing:
            raise InputError(f"{path}: missing column(s) {sorted(missing)}")
        return [OpportunityPoint(float(r["lat"]), float(r["lon"]), float(r["weight"])) for r in reader]


def write_access_csv(path: str | Path, station_ids: Sequence[str], pop, emp) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station_id", "access_population", "access_employment"])
        for sid, p, e in zip(station_ids, pop, emp):
            w.writerow([sid, repr(float(p)), repr(float(e))])


def read_access_csv(path: str | Path) -> dict[str, tuple[float, float]]:
    with open(path, newline="") as fh:
        return {
            r["station_id"]: (float(r["access_population"]), float(r["access_employment"]))
            for r in csv.DictReader(fh)
        }


def summarize(values: np.ndarray) -> dict[str, float]:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return {"mean": 0.0, "std": 0.0, "min": 0.0, "max": 0.0}
    return {
        "mean": float(values.mean()),
        "std": float(values.std(ddof=1)) if values.size > 1 else 0.0,
        "min": float(values.min()),
        "max": float(values.max()),
    }
