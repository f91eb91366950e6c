"""Synthetic station demand with a planted graph, daily/weekly cycles and a weather effect.

Per station ``s`` and channel ``c`` (in, out)::

    base[t, s, c] = level[s] + amp[s] * (1 + weekly * sin(2 pi t / 168 + psi))
                                      * sin(2 pi t / 24 + phase[s, c])
    demand[t]     = max(0, base[t] + alpha * P @ demand[t-1] + beta * temp_z[t] + noise * eps[t])

Stations sit in spatial communities that share a daily phase (up to a small
jitter); ``P`` is the symmetric-normalized adjacency of the k-nearest-neighbour
graph over station positions, so planted neighbours also share a rhythm. ``temp_z`` is the standardized
temperature series (seasonal drift plus a diurnal cycle).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from datetime import datetime

import numpy as np

from ..errors import InputError
from ..graph import AdjacencySeries, dynamic_adjacency
from ..ingest import DemandTensor, FeatureTensor, Station, StationRegistry, FEATURE_ORDER

ORIGIN = datetime(2019, 1, 1)
CENTER = (41.8781, -87.6298)


@dataclass(frozen=True)
class SyntheticSpec:
    n_stations: int = 20
    n_slots: int = 2000
    seed: int = 42
    alpha: float = 0.3
    beta: float = 0.5
    noise: float = 0.2
    weekly: float = 0.3
    k_neighbors: int = 3
    communities: int = 4
    spread: float = 0.04
    phase_jitter: float = 0.05
    station_jitter: float = 0.02
    window: int = 168
    channel: str = "out"
    clip_negative: bool = True

    def __post_init__(self):
        if self.n_stations < 1 or self.n_slots < 2:
            raise InputError("need at least one station and two slots")
        if self.noise < 0 or self.k_neighbors < 0:
            raise InputError("noise and k_neighbors must be non-negative")
        if self.window > self.n_slots:
            raise InputError("adjacency window exceeds the number of slots")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SyntheticData:
    features: FeatureTensor
    demand: DemandTensor
    adjacency: AdjacencySeries
    planted: np.ndarray  # 0/1 kNN adjacency, no self-loops
    planted_operator: np.ndarray
    registry: StationRegistry
    access: tuple[np.ndarray, np.ndarray]
    spec: SyntheticSpec


def knn_graph(pos: np.ndarray, k: int) -> np.ndarray:
    n = pos.shape[0]
    adj = np.zeros((n, n))
    if n < 2 or k == 0:
        return adj
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    nearest = np.argsort(d, axis=1, kind="stable")[:, : min(k, n - 1)]
    rows = np.repeat(np.arange(n), nearest.shape[1])
    adj[rows, nearest.ravel()] = 1.0
    return np.maximum(adj, adj.T)


def sym_normalize(adj: np.ndarray) -> np.ndarray:
    deg = adj.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return adj * inv[:, None] * inv[None, :]


def _smooth_noise(rng, n: int, rho: float, scale: float) -> np.ndarray:
    out = np.empty(n)
    x = 0.0
    eps = rng.standard_normal(n) * scale * np.sqrt(1 - rho * rho)
    for t in range(n):
        x = rho * x + eps[t]
        out[t] = x
    return out


def weather_series(rng, n_slots: int) -> dict[str, np.ndarray]:
    t = np.arange(n_slots)
    temperature = (
        -5.0
        + 25.0 * t / max(n_slots - 1, 1)
        + 4.0 * np.sin(2 * np.pi * (t - 9) / 24.0)
        + _smooth_noise(rng, n_slots, 0.95, 2.0)
    )
    pressure = 1016.9 + _smooth_noise(rng, n_slots, 0.99, 7.5)
    wind = np.clip(16.2 + _smooth_noise(rng, n_slots, 0.9, 6.9), 1.0, None)
    rain_on = _smooth_noise(rng, n_slots, 0.9, 1.0) > 1.2
    precipitation = np.where(rain_on, rng.gamma(1.5, 0.5, n_slots), 0.0)
    return {"precipitation": precipitation, "pressure": pressure, "temperature": temperature, "wind_speed": wind}


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    N, T = spec.n_stations, spec.n_slots

    community = np.arange(N) % spec.communities
    centers = rng.uniform(0.15, 0.85, size=(spec.communities, 2))
    pos = centers[community] + rng.normal(0.0, spec.spread, size=(N, 2))
    planted = knn_graph(pos, spec.k_neighbors)
    P = sym_normalize(planted)

    # land use is shared within a community, with a little per-station spread
    share = rng.uniform(0.0, 1.0, spec.communities)[community]
    share = np.clip(share + rng.normal(0.0, spec.station_jitter, N), 0.0, 1.0)
    pop = np.round(37747.0 * share)
    emp = np.round(4592.0 * np.clip(1.0 - share + rng.normal(0.0, spec.station_jitter, N), 0.0, 1.0))
    level = 0.8 + 1.2 * share
    amp = rng.uniform(0.6, 1.2, spec.communities)[community] * (1.0 + rng.normal(0.0, spec.station_jitter, N))
    phase_out = 2 * np.pi * community / spec.communities + rng.normal(0.0, spec.phase_jitter, N)
    phase_in = phase_out + rng.uniform(0.5, 1.5, spec.communities)[community]
    phase = np.stack([phase_in, phase_out], axis=-1)  # (N, 2)
    psi = rng.uniform(0, 2 * np.pi)

    weather = weather_series(rng, T)
    temp = weather["temperature"]
    temp_z = (temp - temp.mean()) / temp.std()

    t = np.arange(T)[:, None, None]
    weekly = 1.0 + spec.weekly * np.sin(2 * np.pi * t / 168.0 + psi)
    base = level[None, :, None] + amp[None, :, None] * weekly * np.sin(2 * np.pi * t / 24.0 + phase[None])
    eps = rng.standard_normal((T, N, 2))

    demand = np.zeros((T, N, 2))
    prev = np.zeros((N, 2))
    for k in range(T):
        d = base[k] + spec.alpha * (P @ prev) + spec.beta * temp_z[k] + spec.noise * eps[k]
        prev = np.maximum(d, 0.0)
        demand[k] = prev

    ids = tuple(str(i + 1) for i in range(N))
    lat = CENTER[0] + (pos[:, 1] - 0.5) * 0.08
    lon = CENTER[1] + (pos[:, 0] - 0.5) * 0.10
    registry = StationRegistry(
        tuple(
            Station(sid, f"Synthetic {sid}", float(la), float(lo), int(round(demand[:, i].sum())))
            for i, (sid, la, lo) in enumerate(zip(ids, lat, lon))
        )
    )
    dt = DemandTensor(demand, ORIGIN, ids)

    feats = np.zeros((T, N, len(FEATURE_ORDER)))
    for name in ("precipitation", "pressure", "temperature", "wind_speed"):
        feats[:, :, FEATURE_ORDER.index(name)] = weather[name][:, None]
    feats[:, :, FEATURE_ORDER.index("access_population")] = pop[None]
    feats[:, :, FEATURE_ORDER.index("access_employment")] = emp[None]
    feats[1:, :, FEATURE_ORDER.index("last_in_trips")] = demand[:-1, :, 0]
    feats[1:, :, FEATURE_ORDER.index("last_out_trips")] = demand[:-1, :, 1]
    ft = FeatureTensor(feats, FEATURE_ORDER, ORIGIN, ids)

    adjacency = dynamic_adjacency(dt, spec.window, spec.channel, spec.clip_negative)
    return SyntheticData(ft, dt, adjacency, planted, P, registry, (pop, emp), spec)
