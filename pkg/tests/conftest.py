import csv
from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large]
)
settings.load_profile("default")

TRIP_HEADER = [
    "trip_id", "start_time", "end_time", "bikeid", "tripduration",
    "from_station_id", "from_station_name", "to_station_id", "to_station_name",
    "usertype", "gender", "birthyear",
]  # fmt: skip


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def trip_row(i, start, end, a, b, user="Subscriber"):
    fmt = "%Y-%m-%d %H:%M:%S"
    return [
        str(i), start.strftime(fmt), end.strftime(fmt), "1", str(int((end - start).total_seconds())),
        a, f"Station {a}", b, f"Station {b}", user, "", "",
    ]  # fmt: skip


@pytest.fixture
def tiny_inputs(tmp_path):
    """Three stations trading trips over two days, with weather and opportunity points."""
    rng = np.random.default_rng(5)
    t0 = datetime(2019, 3, 1)
    rows = []
    for i in range(600):
        start = t0 + timedelta(minutes=int(rng.integers(0, 48 * 60 - 40)))
        end = start + timedelta(minutes=int(rng.integers(3, 35)))
        a, b = rng.choice(["11", "12", "13"], size=2)
        rows.append(trip_row(i, start, end, str(a), str(b)))
    rows.append(trip_row(999, t0, t0 + timedelta(minutes=5), "99", "11"))  # station 99 falls below threshold
    rows.append(["bad", "not a time", "", "1", "0", "11", "", "12", "", "Customer", "", ""])
    trips = write_csv(tmp_path / "trips.csv", TRIP_HEADER, rows)

    wx_rows = []
    for h in range(48):
        if h in (7, 8):  # short gap, forward-filled
            continue
        wx_rows.append([
            (t0 + timedelta(hours=h)).strftime("%Y-%m-%d %H:%M:%S"),
            round(2.0 + 3.0 * np.sin(h / 4.0), 3), 15.0 + h % 5, 60.0, 0.1 * (h % 7 == 0), 1012.0 + h % 3,
        ])  # fmt: skip
    weather = write_csv(
        tmp_path / "weather.csv",
        ["slot", "temperature", "wind_speed", "humidity", "precipitation", "pressure"],
        wx_rows,
    )
    stations = write_csv(
        tmp_path / "stations_geo.csv",
        ["id", "latitude", "longitude"],
        [["11", 41.880, -87.630], ["12", 41.885, -87.625], ["13", 41.950, -87.700], ["99", 41.0, -87.0]],
    )
    pop = write_csv(tmp_path / "population.csv", ["lat", "lon", "weight"], [[41.881, -87.631, 500], [41.951, -87.701, 70]])
    emp = write_csv(tmp_path / "employment.csv", ["lat", "lon", "weight"], [[41.884, -87.626, 900]])
    return {"trips": trips, "weather": weather, "population": pop, "employment": emp, "stations": stations}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
