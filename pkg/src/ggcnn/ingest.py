"""Trip/weather parsing, hourly aggregation, feature assembly, scaling and splitting.

Channel order of every demand array is ``(in_trips, out_trips)``; axis order
is ``(slot, station, channel)``.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from . import container
from .errors import InputError

log = logging.getLogger(__name__)

HOUR = timedelta(hours=1)
IN, OUT = 0, 1
CHANNELS = ("in_trips", "out_trips")

WEATHER_FEATURES = ("precipitation", "pressure", "temperature", "wind_speed")
ACCESS_FEATURES = ("access_population", "access_employment")
LAG_FEATURES = ("last_in_trips", "last_out_trips")
FEATURE_ORDER = WEATHER_FEATURES + ACCESS_FEATURES + LAG_FEATURES

MAX_WEATHER_GAP = 24

TIME_FORMATS = ("%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M")

# Column names of the 2019 Divvy exports.
DIVVY_2019 = {
    "trip_id": "trip_id",
    "start_time": "start_time",
    "end_time": "end_time",
    "start_station_id": "from_station_id",
    "end_station_id": "to_station_id",
    "start_station_name": "from_station_name",
    "end_station_name": "to_station_name",
    "user_type": "usertype",
}
REQUIRED_FIELDS = ("trip_id", "start_time", "end_time", "start_station_id", "end_station_id")
OPTIONAL_FIELDS = (
    "start_station_name",
    "end_station_name",
    "start_lat",
    "start_lon",
    "end_lat",
    "end_lon",
    "user_type",
)


class MissingColumn(InputError):
    pass


class EmptyFile(InputError):
    pass


class NoStationsRetained(InputError):
    pass


class WeatherGapTooLarge(InputError):
    pass


class DegenerateSplit(InputError):
    pass


class UserType(str, Enum):
    CUSTOMER = "Customer"
    SUBSCRIBER = "Subscriber"
    UNKNOWN = "Unknown"

    @classmethod
    def parse(cls, raw: str | None) -> "UserType":
        for member in cls:
            if raw and raw.strip().lower() == member.value.lower():
                return member
        return cls.UNKNOWN


@dataclass(frozen=True, slots=True)
class TripRecord:
    trip_id: str
    start_time: datetime
    end_time: datetime
    start_station_id: str
    end_station_id: str
    start_lat: float = math.nan
    start_lon: float = math.nan
    end_lat: float = math.nan
    end_lon: float = math.nan
    user_type: UserType = UserType.UNKNOWN
    start_station_name: str = ""
    end_station_name: str = ""


@dataclass(frozen=True, slots=True)
class WeatherRecord:
    slot: datetime
    temperature: float
    wind_speed: float
    humidity: float
    precipitation: float
    pressure: float


class ParseResult(NamedTuple):
    records: list
    skipped: int


def parse_time(raw: str) -> datetime:
    raw = raw.strip()
    for fmt in TIME_FORMATS:
        try:
            return datetime.strptime(raw, fmt)
        except ValueError:
            continue
    raise ValueError(f"unparseable timestamp {raw!r}")


def floor_hour(ts: datetime) -> datetime:
    return ts.replace(minute=0, second=0, microsecond=0)


def _optional_float(row: Mapping[str, str], column: str | None) -> float:
    if column is None:
        return math.nan
    raw = (row.get(column) or "").strip()
    return float(raw) if raw else math.nan


def _valid_coord(lat: float, lon: float) -> bool:
    if math.isnan(lat) and math.isnan(lon):
        return True
    return -90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0


def parse_trips(path: str | Path, schema: Mapping[str, str] | None = None) -> ParseResult:
    """Read a trip CSV into ``TripRecord`` objects sorted by start time.

    ``schema`` maps record field names to CSV column names; it defaults to the
    2019 Divvy layout. Rows with bad timestamps, missing station ids, negative
    durations or out-of-range coordinates are skipped and counted.
    """
    schema = dict(DIVVY_2019 if schema is None else schema)
    missing = [f for f in REQUIRED_FIELDS if f not in schema]
    if missing:
        raise MissingColumn(f"schema does not map required field(s): {', '.join(missing)}")

    path = Path(path)
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise EmptyFile(f"{path}: no header row")
        absent = [schema[f] for f in REQUIRED_FIELDS if schema[f] not in header]
        if absent:
            raise MissingColumn(f"{path}: column(s) not in header: {', '.join(absent)}")
        opt = {f: schema[f] if schema.get(f) in header else None for f in OPTIONAL_FIELDS}

        records = []
        skipped = 0
        for lineno, row in enumerate(reader, start=2):
            try:
                start = parse_time(row[schema["start_time"]])
                end = parse_time(row[schema["end_time"]])
                s_id = (row[schema["start_station_id"]] or "").strip()
                e_id = (row[schema["end_station_id"]] or "").strip()
                if not s_id or not e_id or end < start:
                    raise ValueError("missing station or negative duration")
                slat, slon = _optional_float(row, opt["start_lat"]), _optional_float(row, opt["start_lon"])
                elat, elon = _optional_float(row, opt["end_lat"]), _optional_float(row, opt["end_lon"])
                if not (_valid_coord(slat, slon) and _valid_coord(elat, elon)):
                    raise ValueError("coordinate out of range")
            except (ValueError, TypeError, KeyError, AttributeError) as exc:
                skipped += 1
                log.debug("%s:%d skipped (%s)", path, lineno, exc)
                continue
            records.append(
                TripRecord(
                    trip_id=(row[schema["trip_id"]] or "").strip(),
                    start_time=start,
                    end_time=end,
                    start_station_id=s_id,
                    end_station_id=e_id,
                    start_lat=slat,
                    start_lon=slon,
                    end_lat=elat,
                    end_lon=elon,
                    user_type=UserType.parse(row.get(opt["user_type"]) if opt["user_type"] else None),
                    start_station_name=(row.get(opt["start_station_name"]) or "").strip()
                    if opt["start_station_name"]
                    else "",
                    end_station_name=(row.get(opt["end_station_name"]) or "").strip()
                    if opt["end_station_name"]
                    else "",
                )
            )
    if not records and not skipped:
        raise EmptyFile(f"{path}: no data rows")
    if skipped:
        log.warning("%s: skipped %d malformed row(s)", path, skipped)
    records.sort(key=lambda r: (r.start_time, r.trip_id))
    return ParseResult(records, skipped)


def parse_weather(path: str | Path) -> ParseResult:
    """Read the hourly weather CSV (slot,temperature,wind_speed,humidity,precipitation,pressure)."""
    path = Path(path)
    cols = ("slot", "temperature", "wind_speed", "humidity", "precipitation", "pressure")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames:
            raise EmptyFile(f"{path}: no header row")
        absent = [c for c in cols if c not in reader.fieldnames]
        if absent:
            raise MissingColumn(f"{path}: column(s) not in header: {', '.join(absent)}")
        out = []
        skipped = 0
        for row in reader:
            try:
                rec = WeatherRecord(
                    slot=floor_hour(parse_time(row["slot"])),
                    temperature=float(row["temperature"]),
                    wind_speed=float(row["wind_speed"]),
                    humidity=float(row["humidity"]),
                    precipitation=float(row["precipitation"]),
                    pressure=float(row["pressure"]),
                )
                if not 0.0 <= rec.humidity <= 100.0 or rec.precipitation < 0.0:
                    raise ValueError("humidity or precipitation out of range")
                if not all(math.isfinite(v) for v in (rec.temperature, rec.wind_speed, rec.pressure)):
                    raise ValueError("non-finite reading")
            except (ValueError, TypeError) as exc:
                skipped += 1
                log.debug("%s: weather row skipped (%s)", path, exc)
                continue
            out.append(rec)
    if not out and not skipped:
        raise EmptyFile(f"{path}: no data rows")
    out.sort(key=lambda r: r.slot)
    return ParseResult(out, skipped)


# ---------------------------------------------------------------------------
# stations


def _station_sort_key(station_id: str):
    try:
        return (0, int(station_id), station_id)
    except ValueError:
        return (1, 0, station_id)


@dataclass(frozen=True)
class Station:
    station_id: str
    name: str
    lat: float
    lon: float
    annual_demand: int


@dataclass(frozen=True)
class StationRegistry:
    stations: tuple[Station, ...]
    index: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            object.__setattr__(self, "index", {s.station_id: i for i, s in enumerate(self.stations)})

    def __len__(self) -> int:
        return len(self.stations)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.station_id for s in self.stations)

    @property
    def coords(self) -> np.ndarray:
        return np.array([[s.lat, s.lon] for s in self.stations], dtype=float).reshape(-1, 2)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "station_id", "name", "lat", "lon", "annual_demand"])
            for i, s in enumerate(self.stations):
                w.writerow([i, s.station_id, s.name, repr(s.lat), repr(s.lon), s.annual_demand])

    @classmethod
    def from_csv(cls, path: str | Path) -> "StationRegistry":
        with open(path, newline="") as fh:
            rows = sorted(csv.DictReader(fh), key=lambda r: int(r["index"]))
        return cls(
            tuple(
                Station(r["station_id"], r["name"], float(r["lat"]), float(r["lon"]), int(r["annual_demand"]))
                for r in rows
            )
        )


def filter_stations(trips: Sequence[TripRecord], min_annual_demand: int = 1000) -> StationRegistry:
    """Keep stations whose trip count (either end) reaches ``min_annual_demand``."""
    if not trips:
        raise InputError("filter_stations needs at least one trip")
    counts: Counter[str] = Counter()
    meta: dict[str, tuple[str, float, float]] = {}
    for t in trips:
        counts[t.start_station_id] += 1
        counts[t.end_station_id] += 1
        meta.setdefault(t.start_station_id, (t.start_station_name, t.start_lat, t.start_lon))
        meta.setdefault(t.end_station_id, (t.end_station_name, t.end_lat, t.end_lon))
    kept = sorted((sid for sid, c in counts.items() if c >= min_annual_demand), key=_station_sort_key)
    if not kept:
        raise NoStationsRetained(
            f"no station reaches {min_annual_demand} trips (max seen {max(counts.values())})"
        )
    return StationRegistry(tuple(Station(sid, *meta[sid], annual_demand=counts[sid]) for sid in kept))


def read_station_coordinates(path: str | Path) -> dict[str, tuple[float, float]]:
    """Station coordinates from a CSV with ``station_id`` (or ``id``), ``lat``/``latitude``, ``lon``/``longitude``."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = set(reader.fieldnames or ())

        def pick(*names):
            return next((n for n in names if n in header), None)

        id_col, lat_col, lon_col = pick("station_id", "id"), pick("lat", "latitude"), pick("lon", "longitude")
        if None in (id_col, lat_col, lon_col):
            raise MissingColumn(f"{path}: need station_id, lat and lon columns")
        return {r[id_col].strip(): (float(r[lat_col]), float(r[lon_col])) for r in reader}


def with_coordinates(registry: StationRegistry, coords: Mapping[str, tuple[float, float]]) -> StationRegistry:
    """Registry with lat/lon taken from ``coords`` where available."""
    out = []
    for s in registry.stations:
        lat, lon = coords.get(s.station_id, (s.lat, s.lon))
        out.append(Station(s.station_id, s.name, float(lat), float(lon), s.annual_demand))
    return StationRegistry(tuple(out))


# ---------------------------------------------------------------------------
# tensors


@dataclass(frozen=True)
class DemandTensor:
    """Hourly (in, out) trip counts, shape ``(slots, stations, 2)``."""

    values: np.ndarray
    start: datetime
    station_ids: tuple[str, ...]

    @property
    def n_slots(self) -> int:
        return self.values.shape[0]

    @property
    def n_stations(self) -> int:
        return self.values.shape[1]

    def slot_index(self, ts: datetime) -> int:
        idx = int((floor_hour(ts) - self.start) // HOUR)
        if not 0 <= idx < self.n_slots:
            raise KeyError(ts)
        return idx

    def slot_time(self, idx: int) -> datetime:
        return self.start + idx * HOUR

    def header(self) -> dict:
        return {
            "kind": "demand",
            "channels": list(CHANNELS),
            "slot_start": self.start.isoformat(),
            "n_slots": self.n_slots,
            "station_index": {sid: i for i, sid in enumerate(self.station_ids)},
        }

    def save(self, path: str | Path) -> None:
        container.write(path, self.values, self.header())

    @classmethod
    def load(cls, path: str | Path) -> "DemandTensor":
        values, head = container.read(path)
        if head.get("kind") != "demand":
            raise container.ContainerError(f"{path}: not a demand tensor")
        return cls(values, datetime.fromisoformat(head["slot_start"]), _ids_from_index(head["station_index"]))


@dataclass(frozen=True)
class FeatureTensor:
    """Per-slot, per-station model inputs, shape ``(slots, stations, features)``."""

    values: np.ndarray
    names: tuple[str, ...]
    start: datetime
    station_ids: tuple[str, ...]

    @property
    def n_slots(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> int:
        return self.names.index(name)

    def header(self) -> dict:
        return {
            "kind": "features",
            "feature_order": list(self.names),
            "slot_start": self.start.isoformat(),
            "n_slots": self.n_slots,
            "station_index": {sid: i for i, sid in enumerate(self.station_ids)},
        }

    def save(self, path: str | Path) -> None:
        container.write(path, self.values, self.header())

    @classmethod
    def load(cls, path: str | Path) -> "FeatureTensor":
        values, head = container.read(path)
        if head.get("kind") != "features":
            raise container.ContainerError(f"{path}: not a feature tensor")
        return cls(
            values,
            tuple(head["feature_order"]),
            datetime.fromisoformat(head["slot_start"]),
            _ids_from_index(head["station_index"]),
        )


def _ids_from_index(index: Mapping[str, int]) -> tuple[str, ...]:
    return tuple(sid for sid, _ in sorted(index.items(), key=lambda kv: kv[1]))


def covering_range(trips: Iterable[TripRecord]) -> tuple[datetime, datetime]:
    """Hour-aligned half-open range spanning every trip start and end."""
    trips = list(trips)
    if not trips:
        raise InputError("cannot derive a slot range from zero trips")
    lo = floor_hour(min(t.start_time for t in trips))
    hi = floor_hour(max(t.end_time for t in trips)) + HOUR
    return lo, hi


def aggregate_hourly(
    trips: Iterable[TripRecord],
    registry: StationRegistry,
    start: datetime,
    end: datetime,
) -> DemandTensor:
    """Count out-trips by (start slot, start station) and in-trips by (end slot, end station).

    ``[start, end)`` must be hour aligned. Trip ends at unretained stations or
    outside the range are dropped per side.
    """
    start, end = floor_hour(start), floor_hour(end)
    n_slots = int((end - start) // HOUR)
    if n_slots < 0:
        raise InputError("slot range end precedes start")
    values = np.zeros((n_slots, len(registry), 2), dtype=np.float64)
    dropped = 0
    for t in trips:
        for sid, ts, ch in ((t.start_station_id, t.start_time, OUT), (t.end_station_id, t.end_time, IN)):
            s = registry.index.get(sid)
            if s is None:
                continue
            row = int((floor_hour(ts) - start) // HOUR)
            if 0 <= row < n_slots:
                values[row, s, ch] += 1
            else:
                dropped += 1
    if dropped:
        log.warning("%d trip end(s) fell outside the slot range and were dropped", dropped)
    return DemandTensor(values, start, registry.ids)


def hourly_weather(weather: Sequence[WeatherRecord], start: datetime, n_slots: int) -> np.ndarray:
    """Weather matrix ``(n_slots, 5)`` ordered as WeatherRecord fields, gaps forward-filled.

    A leading gap is back-filled from the first record. Any run of more than
    ``MAX_WEATHER_GAP`` consecutive missing hours raises ``WeatherGapTooLarge``.
    """
    table = np.full((n_slots, 5), np.nan)
    for rec in weather:
        row = int((rec.slot - start) // HOUR)
        if 0 <= row < n_slots and np.isnan(table[row, 0]):
            table[row] = (rec.temperature, rec.wind_speed, rec.humidity, rec.precipitation, rec.pressure)
    present = ~np.isnan(table[:, 0])
    if not present.any():
        raise WeatherGapTooLarge("no weather records inside the demand range")
    run = 0
    for t in range(n_slots):
        run = 0 if present[t] else run + 1
        if run > MAX_WEATHER_GAP:
            raise WeatherGapTooLarge(f"weather missing for more than {MAX_WEATHER_GAP} h ending at slot {t}")
    first = int(np.argmax(present))
    table[:first] = table[first]
    for t in range(first + 1, n_slots):
        if not present[t]:
            table[t] = table[t - 1]
    return table


def join_weather(
    demand: DemandTensor,
    weather: Sequence[WeatherRecord],
    access: tuple[Sequence[float], Sequence[float]],
    include_humidity: bool = False,
) -> FeatureTensor:
    """Assemble the feature tensor: weather, station access, previous-slot demand."""
    T, N = demand.n_slots, demand.n_stations
    pop, emp = (np.asarray(a, dtype=float) for a in access)
    if pop.shape != (N,) or emp.shape != (N,):
        raise InputError(f"access vectors must have length {N}")
    wx = hourly_weather(weather, demand.start, T)
    temperature, wind, humidity, precip, pressure = wx.T

    columns = {
        "precipitation": precip,
        "pressure": pressure,
        "temperature": temperature,
        "wind_speed": wind,
        "humidity": humidity,
    }
    names = list(WEATHER_FEATURES) + (["humidity"] if include_humidity else []) + list(ACCESS_FEATURES) + list(LAG_FEATURES)
    out = np.zeros((T, N, len(names)))
    for k, name in enumerate(names):
        if name in columns:
            out[:, :, k] = columns[name][:, None]
    out[:, :, names.index("access_population")] = pop[None, :]
    out[:, :, names.index("access_employment")] = emp[None, :]
    out[1:, :, names.index("last_in_trips")] = demand.values[:-1, :, IN]
    out[1:, :, names.index("last_out_trips")] = demand.values[:-1, :, OUT]
    return FeatureTensor(out, tuple(names), demand.start, demand.station_ids)


# ---------------------------------------------------------------------------
# scaling and splitting


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.70

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise InputError("train_fraction must lie strictly between 0 and 1")

    def cut(self, n_slots: int) -> int:
        return math.floor(self.train_fraction * n_slots)


@dataclass(frozen=True)
class MinMaxScaler:
    minimum: np.ndarray
    maximum: np.ndarray

    @property
    def span(self) -> np.ndarray:
        return self.maximum - self.minimum

    def transform(self, x: np.ndarray) -> np.ndarray:
        span = self.span
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (np.asarray(x, dtype=float) - self.minimum) / safe, 0.0)

    def inverse_transform(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.span + self.minimum

    def to_dict(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MinMaxScaler":
        return cls(np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float))


def fit_scaler(features: FeatureTensor | np.ndarray, split: SplitSpec) -> MinMaxScaler:
    """Per-feature min/max over the training slots only."""
    values = features.values if isinstance(features, FeatureTensor) else np.asarray(features)
    cut = split.cut(values.shape[0])
    if cut < 1:
        raise DegenerateSplit("training portion is empty")
    train = values[:cut].reshape(-1, values.shape[-1])
    return MinMaxScaler(train.min(axis=0), train.max(axis=0))


@dataclass(frozen=True)
class SplitPart:
    features: np.ndarray
    targets: np.ndarray
    slots: range


def split(features: FeatureTensor, targets: DemandTensor, spec: SplitSpec) -> tuple[SplitPart, SplitPart]:
    T = features.n_slots
    if targets.n_slots != T:
        raise InputError(f"feature/target slot counts differ ({T} vs {targets.n_slots})")
    cut = spec.cut(T)
    if cut < 1 or cut >= T:
        raise DegenerateSplit(f"{T} slot(s) at fraction {spec.train_fraction} leave an empty side")
    return (
        SplitPart(features.values[:cut], targets.values[:cut], range(0, cut)),
        SplitPart(features.values[cut:], targets.values[cut:], range(cut, T)),
    )
