import csv
import math
from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import TRIP_HEADER, trip_row, write_csv
from ggcnn import ingest
from ggcnn.ingest import (
    DegenerateSplit,
    DemandTensor,
    EmptyFile,
    FeatureTensor,
    MinMaxScaler,
    MissingColumn,
    NoStationsRetained,
    SplitSpec,
    Station,
    StationRegistry,
    TripRecord,
    WeatherGapTooLarge,
    WeatherRecord,
)

T0 = datetime(2019, 6, 1)


def trip(i, start, minutes, a, b):
    return TripRecord(str(i), start, start + timedelta(minutes=minutes), a, b)


def registry(*ids):
    return StationRegistry(tuple(Station(s, s, math.nan, math.nan, 0) for s in ids))


def weather_rows(n, start=T0, skip=()):
    return [
        WeatherRecord(start + timedelta(hours=h), 10.0 + h, 5.0, 50.0, 0.0, 1000.0 + h)
        for h in range(n)
        if h not in skip
    ]


# -- parsing -----------------------------------------------------------------


def test_parse_skips_unparseable_timestamp(tmp_path):
    rows = [trip_row(i, T0 + timedelta(hours=i), T0 + timedelta(hours=i, minutes=9), "1", "2") for i in range(3)]
    rows.insert(1, ["x", "2019-13-45 99:00:00", "2019-06-01 01:00:00", "1", "0", "1", "", "2", "", "", "", ""])
    res = ingest.parse_trips(write_csv(tmp_path / "t.csv", TRIP_HEADER, rows))
    assert len(res.records) == 3
    assert res.skipped == 1


def test_parse_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(EmptyFile):
        ingest.parse_trips(p)
    p.write_text(",".join(TRIP_HEADER) + "\n")
    with pytest.raises(EmptyFile):
        ingest.parse_trips(p)


def test_parse_missing_column(tmp_path):
    p = write_csv(tmp_path / "t.csv", ["trip_id", "start_time"], [["1", "2019-06-01 00:00:00"]])
    with pytest.raises(MissingColumn):
        ingest.parse_trips(p)
    with pytest.raises(MissingColumn):
        ingest.parse_trips(p, {"trip_id": "trip_id"})


def test_parse_thousand_row_slice_matches_line_count(tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for i in range(1000):
        s = T0 + timedelta(minutes=int(rng.integers(0, 60 * 24 * 30)))
        rows.append(trip_row(i, s, s + timedelta(minutes=int(rng.integers(1, 90))), str(rng.integers(1, 600)), "7"))
    p = write_csv(tmp_path / "divvy.csv", TRIP_HEADER, rows)
    with open(p, "rb") as fh:
        data_lines = sum(1 for _ in fh) - 1  # line count independent of the csv parser
    res = ingest.parse_trips(p)
    assert len(res.records) == data_lines == 1000
    assert res.skipped == 0
    starts = [r.start_time for r in res.records]
    assert starts == sorted(starts)


def test_parse_custom_schema_and_rejects(tmp_path):
    header = ["id", "t0", "t1", "a", "b", "alat", "alon", "blat", "blon"]
    rows = [
        ["1", "2019-06-01 08:00", "2019-06-01 08:10", "A", "B", "41.9", "-87.6", "41.8", "-87.7"],
        ["2", "2019-06-01 09:00", "2019-06-01 08:10", "A", "B", "", "", "", ""],  # negative duration
        ["3", "2019-06-01 09:00", "2019-06-01 09:10", "A", "B", "95", "-87.6", "41.8", "-87.7"],  # bad lat
        ["4", "2019-06-01 09:00", "2019-06-01 09:10", "", "B", "", "", "", ""],  # missing station
    ]
    schema = {
        "trip_id": "id", "start_time": "t0", "end_time": "t1", "start_station_id": "a", "end_station_id": "b",
        "start_lat": "alat", "start_lon": "alon", "end_lat": "blat", "end_lon": "blon",
    }  # fmt: skip
    res = ingest.parse_trips(write_csv(tmp_path / "c.csv", header, rows), schema)
    assert res.skipped == 3
    (rec,) = res.records
    assert rec.start_lat == 41.9 and rec.end_lon == -87.7
    assert rec.user_type is ingest.UserType.UNKNOWN


def test_parse_weather_and_gap_fill(tmp_path):
    header = ["slot", "temperature", "wind_speed", "humidity", "precipitation", "pressure"]
    rows = [["2019-06-01 00:00:00", 1, 2, 50, 0, 1000], ["2019-06-01 02:00:00", 3, 2, 50, 0, 1001]]
    rows.append(["2019-06-01 03:00:00", 3, 2, 150, 0, 1001])  # humidity out of range
    res = ingest.parse_weather(write_csv(tmp_path / "w.csv", header, rows))
    assert len(res.records) == 2 and res.skipped == 1
    table = ingest.hourly_weather(res.records, T0, 4)
    assert table[:, 0].tolist() == [1, 1, 3, 3]


def test_weather_gap_too_large():
    rows = weather_rows(40, skip=set(range(5, 30)))
    with pytest.raises(WeatherGapTooLarge):
        ingest.hourly_weather(rows, T0, 40)
    ingest.hourly_weather(weather_rows(40, skip=set(range(5, 29))), T0, 40)  # exactly 24 missing is fine


def test_leading_weather_gap_backfilled():
    table = ingest.hourly_weather(weather_rows(6, skip={0, 1}), T0, 6)
    assert table[0, 0] == table[2, 0] == 12.0


# -- station filtering ---------------------------------------------------------


def test_filter_boundary_999():
    trips = [trip(i, T0, 5, "A", "X") for i in range(999)]
    # A has 999 ends, X has 999 ends
    with pytest.raises(NoStationsRetained):
        ingest.filter_stations(trips, 1000)


def test_filter_keeps_only_busy_station():
    trips = [trip(i, T0, 5, "A", "A") for i in range(750)]  # 1500 ends at A
    trips += [trip(1000 + i, T0, 5, "B", "A") for i in range(500)]  # B: 500 ends, A: +500
    reg = ingest.filter_stations(trips, 1000)
    assert reg.ids == ("A",)
    assert reg.stations[0].annual_demand == 2000


def test_filter_matches_recount_and_orders_ids():
    rng = np.random.default_rng(3)
    ids = [str(v) for v in (3, 25, 100, 7, 42, 8, 19, 61, 2, 10)]
    trips = [trip(i, T0, 5, ids[rng.integers(0, 10)], ids[rng.integers(0, 10)]) for i in range(3000)]
    counts = {}
    for t in trips:
        counts[t.start_station_id] = counts.get(t.start_station_id, 0) + 1
        counts[t.end_station_id] = counts.get(t.end_station_id, 0) + 1
    threshold = sorted(counts.values())[4]
    expected = sorted((s for s, c in counts.items() if c >= threshold), key=int)
    reg = ingest.filter_stations(trips, threshold)
    assert list(reg.ids) == expected
    assert [reg.index[s] for s in expected] == list(range(len(expected)))


def test_registry_csv_roundtrip(tmp_path):
    reg = StationRegistry((Station("5", "Five", 41.9, -87.6, 1200), Station("9", "Nine", 41.8, -87.7, 1500)))
    reg.to_csv(tmp_path / "s.csv")
    assert ingest.StationRegistry.from_csv(tmp_path / "s.csv") == reg


# -- aggregation -----------------------------------------------------------------


def test_aggregate_single_trip():
    reg = registry("A", "B")
    t = TripRecord("1", T0.replace(hour=9, minute=14), T0.replace(hour=9, minute=40), "A", "B")
    d = ingest.aggregate_hourly([t], reg, T0, T0 + timedelta(hours=24))
    assert d.values[9, 0, ingest.OUT] == 1
    assert d.values[9, 1, ingest.IN] == 1
    assert d.values.sum() == 2


def test_aggregate_zero_trips():
    d = ingest.aggregate_hourly([], registry("A", "B", "C"), T0, T0 + timedelta(hours=5))
    assert d.values.shape == (5, 3, 2)
    assert not d.values.any()


def test_aggregate_conserves_counts():
    rng = np.random.default_rng(1)
    trips = [trip(i, T0 + timedelta(minutes=int(rng.integers(0, 2000))), int(rng.integers(1, 60)),
                  "ABCD"[rng.integers(0, 4)], "ABCD"[rng.integers(0, 4)]) for i in range(200)]  # fmt: skip
    reg = registry("A", "B", "C", "D")
    lo, hi = ingest.covering_range(trips)
    d = ingest.aggregate_hourly(trips, reg, lo, hi)
    assert d.values[..., ingest.OUT].sum() == 200
    assert d.values[..., ingest.IN].sum() == 200
    assert d.n_slots == int((hi - lo).total_seconds() // 3600)


def test_aggregate_drops_unretained_side_only():
    reg = registry("A")
    trips = [trip(0, T0, 10, "A", "Z"), trip(1, T0, 10, "Z", "A"), trip(2, T0, 10, "Z", "Z")]
    d = ingest.aggregate_hourly(trips, reg, T0, T0 + timedelta(hours=1))
    assert d.values[0, 0].tolist() == [1, 1]


# -- features --------------------------------------------------------------------


def test_join_lag_two_slots():
    values = np.zeros((2, 1, 2))
    values[0, 0] = (3, 5)
    d = DemandTensor(values, T0, ("s",))
    f = ingest.join_weather(d, weather_rows(2), ([1.0], [2.0]))
    assert f.names == ingest.FEATURE_ORDER
    assert f.values[1, 0, f.column("last_in_trips")] == 3
    assert f.values[1, 0, f.column("last_out_trips")] == 5
    assert f.values[0, :, -2:].tolist() == [[0.0, 0.0]]


def test_join_lag_exhaustive_48():
    rng = np.random.default_rng(2)
    values = rng.integers(0, 9, size=(48, 5, 2)).astype(float)
    d = DemandTensor(values, T0, tuple("abcde"))
    f = ingest.join_weather(d, weather_rows(48), (rng.uniform(0, 9, 5), rng.uniform(0, 9, 5)))
    li, lo = f.column("last_in_trips"), f.column("last_out_trips")
    for t in range(1, 48):
        for s in range(5):
            assert f.values[t, s, li] == values[t - 1, s, 0]
            assert f.values[t, s, lo] == values[t - 1, s, 1]
    w = f.values[:, :, : len(ingest.WEATHER_FEATURES)]
    assert np.all(w == w[:, :1])  # weather shared across stations
    a = f.values[:, :, [f.column("access_population"), f.column("access_employment")]]
    assert np.all(a == a[:1])  # access constant over time


def test_join_humidity_toggle():
    d = DemandTensor(np.zeros((3, 2, 2)), T0, ("a", "b"))
    f = ingest.join_weather(d, weather_rows(3), ([0, 0], [0, 0]), include_humidity=True)
    assert "humidity" in f.names and f.values.shape[-1] == 9
    assert np.all(f.values[:, :, f.column("humidity")] == 50.0)


def test_tensor_container_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    d = DemandTensor(rng.integers(0, 5, (6, 3, 2)).astype(float), T0, ("1", "2", "3"))
    d.save(tmp_path / "d.bin")
    back = DemandTensor.load(tmp_path / "d.bin")
    assert back.values.tobytes() == d.values.tobytes() and back.start == T0 and back.station_ids == d.station_ids
    f = ingest.join_weather(d, weather_rows(6), ([1, 2, 3], [4, 5, 6]))
    f.save(tmp_path / "f.bin")
    g = FeatureTensor.load(tmp_path / "f.bin")
    assert g.names == f.names and np.array_equal(g.values, f.values)
    d.save(tmp_path / "d2.bin")
    assert (tmp_path / "d.bin").read_bytes() == (tmp_path / "d2.bin").read_bytes()


# -- scaling and splitting ----------------------------------------------------------


def test_scaler_examples():
    col = np.array([2.0, 4.0, 6.0, 8.0]).reshape(4, 1, 1)
    sc = ingest.fit_scaler(col, SplitSpec(0.75))  # cut = 3 -> [2, 4, 6]
    assert sc.minimum.tolist() == [2.0] and sc.maximum.tolist() == [6.0]
    assert sc.transform(np.array([4.0])).tolist() == [0.5]
    assert sc.transform(np.array([8.0])).tolist() == [1.5]
    const = ingest.fit_scaler(np.full((3, 1, 1), 5.0), SplitSpec(0.7))
    assert const.transform(np.array([5.0])).tolist() == [0.0]


def test_scaler_ignores_test_slots():
    x = np.arange(10.0).reshape(10, 1, 1)
    x[7:] = 1e6
    sc = ingest.fit_scaler(x, SplitSpec(0.7))
    assert sc.maximum.tolist() == [6.0]


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=3, max_size=40))
def test_scaler_roundtrip(values):
    x = np.array(values).reshape(-1, 1, 1)
    sc = MinMaxScaler(x.min(axis=(0, 1)), x.max(axis=(0, 1)))
    back = sc.inverse_transform(sc.transform(x))
    if sc.span[0] > 0:
        assert np.allclose(back, x, rtol=0, atol=1e-9 * max(1.0, np.abs(x).max()))


def test_split_examples():
    f = FeatureTensor(np.zeros((10, 1, 8)), ingest.FEATURE_ORDER, T0, ("a",))
    d = DemandTensor(np.zeros((10, 1, 2)), T0, ("a",))
    train, test = ingest.split(f, d, SplitSpec())
    assert list(train.slots) == list(range(7)) and list(test.slots) == [7, 8, 9]
    one = FeatureTensor(np.zeros((1, 1, 8)), ingest.FEATURE_ORDER, T0, ("a",))
    with pytest.raises(DegenerateSplit):
        ingest.split(one, DemandTensor(np.zeros((1, 1, 2)), T0, ("a",)), SplitSpec())
    assert SplitSpec().cut(8768) == 6137 == math.floor(0.7 * 8768)


@given(st.integers(2, 500), st.floats(0.05, 0.95))
def test_split_disjoint_exhaustive(T, frac):
    spec = SplitSpec(frac)
    cut = spec.cut(T)
    if cut < 1 or cut >= T:
        return
    f = FeatureTensor(np.zeros((T, 1, 8)), ingest.FEATURE_ORDER, T0, ("a",))
    d = DemandTensor(np.zeros((T, 1, 2)), T0, ("a",))
    a, b = ingest.split(f, d, spec)
    assert set(a.slots).isdisjoint(b.slots)
    assert sorted([*a.slots, *b.slots]) == list(range(T))
    assert max(a.slots) < min(b.slots)


def test_station_coordinates(tiny_inputs):
    coords = ingest.read_station_coordinates(tiny_inputs["stations"])
    reg = ingest.with_coordinates(registry("11", "13", "7"), coords)
    assert reg.coords[0].tolist() == [41.88, -87.63]
    assert np.isnan(reg.coords[2]).all()


def test_ingest_is_deterministic(tiny_inputs, tmp_path):
    def run(tag):
        res = ingest.parse_trips(tiny_inputs["trips"])
        reg = ingest.filter_stations(res.records, 100)
        lo, hi = ingest.covering_range(res.records)
        d = ingest.aggregate_hourly(res.records, reg, lo, hi)
        d.save(tmp_path / f"{tag}.bin")
        return (tmp_path / f"{tag}.bin").read_bytes()

    assert run("a") == run("b")
    with open(tiny_inputs["trips"]) as fh:
        assert sum(1 for _ in csv.reader(fh)) == 603
