"""Command-line pipeline: ingest | synth -> graph -> train -> eval / predict.

Every command reads one TOML config (``--config``) whose sections mirror the
modules (``[paths]``, ``[ingest]``, ``[access]``, ``[graph]``, ``[model]``,
``[train]``, ``[eval]``, ``[synth]``); ``--set section.key=value`` overrides
single keys. Artifacts land in the work directory next to ``manifest.json``,
which records content hashes so unchanged stages are skipped.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from filelock import FileLock, Timeout

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__, access, graph, ingest
from .container import file_digest, pack_arrays
from .errors import InputError, NumericError
from .evalbench.metrics import write_reports
from .evalbench.suite import MODELS, run_suite
from .evalbench.synthetic import SyntheticSpec, generate_synthetic
from .neuro.autograd import no_grad
from .neuro.model import GgcnnModel, load_checkpoint, save_checkpoint
from .train import TrainConfig, config_dict, evaluate_loss, model_grad_check, prepare_dataset, train

log = logging.getLogger("ggcnn")

MANIFEST = "manifest.json"
LOCK = ".ggcnn.lock"

# artifact -> command that produces it
PRODUCER = {
    "stations.csv": "ingest (or synth)",
    "access.csv": "ingest (or synth)",
    "demand.bin": "ingest (or synth)",
    "features.bin": "ingest (or synth)",
    "adjacency.bin": "graph",
    "checkpoint.ckpt": "train",
}

_SYNTH_KEYS = [f.name for f in fields(SyntheticSpec) if f.name not in ("window", "channel", "clip_negative")]

DEFAULTS: dict[str, Any] = {
    "seed": 42,
    "paths": {"trips": "", "weather": "", "population": "", "employment": "", "stations": "", "workdir": "work"},
    "ingest": {
        "min_annual_demand": 1000,
        "start": "",
        "end": "",
        "train_fraction": 0.7,
        "include_humidity": False,
        "schema": {},  # record field -> CSV column, merged over the default trip layout
    },
    "access": {"budget_minutes": 15.0, "walking_speed_kmh": 5.0},
    "graph": {"mode": "dynamic", "window_slots": 168, "channel": "out", "clip_negative": True, "top_k": 0},
    "model": {"hidden": [32, 32], "steps": [4, 3], "readout_hidden": [64], "operator": "normalized"},
    # TOML has no null: 0 turns patience and clipping off, a negative seed inherits the run seed
    "train": {
        "epochs": 100,
        "batch_size": 64,
        "lr": 0.001,
        "beta1": 0.9,
        "beta2": 0.999,
        "epsilon": 1e-8,
        "patience": 0,
        "grad_clip": 0.0,
        "val_fraction": 0.1,
        "seed": -1,
    },
    "eval": {"models": list(MODELS)},
    "synth": {k: v for k, v in asdict(SyntheticSpec()).items() if k in _SYNTH_KEYS},
}


class MissingUpstreamArtifact(InputError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _parse_value(raw: str) -> Any:
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def _merge(base: dict, extra: dict, where: str = "") -> None:
    for key, value in extra.items():
        if key not in base:
            raise InputError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict) and not base[key]:
            if not isinstance(value, dict):
                raise InputError(f"config key {where}{key!r} must be a table")
            base[key] = {**value}
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise InputError(f"config key {where}{key!r} must be a table")
            _merge(base[key], value, f"{where}{key}.")
        else:
            base[key] = value


@dataclass
class RunConfig:
    data: dict
    base_dir: Path
    workdir: Path

    @classmethod
    def load(
        cls,
        path: str | Path | None = None,
        overrides: Sequence[str] = (),
        workdir: str | Path | None = None,
        seed: int | None = None,
    ) -> "RunConfig":
        data = copy.deepcopy(DEFAULTS)
        base = Path.cwd()
        if path:
            path = Path(path)
            if not path.is_file():
                raise InputError(f"config file not found: {path}")
            try:
                _merge(data, tomllib.loads(path.read_text()))
            except tomllib.TOMLDecodeError as exc:
                raise InputError(f"{path}: {exc}") from None
            base = path.resolve().parent
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise InputError(f"--set expects section.key=value, got {item!r}")
            *parents, leaf = key.strip().split(".")
            nested: dict = {leaf: _parse_value(raw.strip())}
            for p in reversed(parents):
                nested = {p: nested}
            _merge(data, nested)
        if seed is not None:
            data["seed"] = seed
        wd = Path(workdir) if workdir else base / data["paths"]["workdir"]
        return cls(data, base, wd)

    def section(self, name: str) -> dict:
        return self.data[name]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def input_path(self, key: str) -> Path:
        raw = self.data["paths"][key]
        if not raw:
            raise InputError(f"paths.{key} is not set")
        p = Path(raw)
        p = p if p.is_absolute() else self.base_dir / p
        if not p.is_file():
            raise InputError(f"input file not found: {p}")
        return p

    def artifact(self, name: str) -> Path:
        return self.workdir / name

    def upstream(self, name: str) -> Path:
        p = self.artifact(name)
        if not p.is_file():
            raise MissingUpstreamArtifact(f"{name} not found in {self.workdir}; run `ggcnn {PRODUCER[name]}` first")
        return p

    def train_config(self) -> TrainConfig:
        t = self.data["train"]
        return TrainConfig(
            epochs=int(t["epochs"]),
            batch_size=int(t["batch_size"]),
            learning_rate=float(t["lr"]),
            adam_beta1=float(t["beta1"]),
            adam_beta2=float(t["beta2"]),
            adam_epsilon=float(t["epsilon"]),
            seed=self.seed if int(t["seed"]) < 0 else int(t["seed"]),
            early_stop_patience=int(t["patience"]) or None,
            grad_clip=float(t["grad_clip"]) or None,
            val_fraction=float(t["val_fraction"]),
        )

    def split(self) -> ingest.SplitSpec:
        return ingest.SplitSpec(float(self.data["ingest"]["train_fraction"]))


# ---------------------------------------------------------------------------
# manifest and stage caching


def _stable_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


class Manifest:
    """Per-stage record of input hashes, config snapshot and output hashes."""

    def __init__(self, workdir: Path):
        self.path = workdir / MANIFEST
        self.data = {"tool_version": __version__, "stages": {}}
        if self.path.is_file():
            try:
                self.data = json.loads(self.path.read_text())
            except json.JSONDecodeError:
                log.warning("%s is unreadable; starting a fresh manifest", self.path)
        self.data["tool_version"] = __version__

    @staticmethod
    def key(inputs: dict[str, str], config: dict) -> str:
        return hashlib.sha256(_stable_json({"inputs": inputs, "config": config}).encode()).hexdigest()

    def fresh(self, stage: str, key: str, workdir: Path) -> bool:
        entry = self.data["stages"].get(stage)
        if not entry or entry.get("key") != key:
            return False
        for name, digest in entry["outputs"].items():
            p = workdir / name
            if not p.is_file() or file_digest(p) != digest:
                return False
        return True

    def record(self, stage: str, key: str, inputs: dict, config: dict, outputs: dict) -> None:
        self.data["stages"][stage] = {
            "key": key,
            "inputs": inputs,
            "config": config,
            "outputs": outputs,
            "completed_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }

    def save(self) -> None:
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def run_stage(
    cfg: RunConfig,
    stage: str,
    inputs: dict[str, Path],
    config: dict,
    outputs: Sequence[str],
    body: Callable[[], None],
    force: bool = False,
) -> bool:
    """Run ``body`` unless the manifest shows identical inputs and intact outputs.

    Returns True when the stage actually ran.
    """
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    try:
        with FileLock(str(cfg.workdir / LOCK), timeout=30):
            manifest = Manifest(cfg.workdir)
            digests = {name: file_digest(p) for name, p in sorted(inputs.items())}
            key = Manifest.key(digests, config)
            if not force and manifest.fresh(stage, key, cfg.workdir):
                print(f"{stage}: up-to-date")
                return False
            body()
            produced = {name: file_digest(cfg.artifact(name)) for name in outputs}
            manifest.record(stage, key, digests, config, produced)
            manifest.save()
    except Timeout:
        raise InputError(f"another ggcnn command holds the lock on {cfg.workdir}") from None
    return True


# ---------------------------------------------------------------------------
# shared loaders


def _load_tensors(cfg: RunConfig):
    features = ingest.FeatureTensor.load(cfg.upstream("features.bin"))
    demand = ingest.DemandTensor.load(cfg.upstream("demand.bin"))
    return features, demand


def _dataset(cfg: RunConfig, scaler: ingest.MinMaxScaler | None = None):
    features, demand = _load_tensors(cfg)
    adjacency = graph.AdjacencySeries.load(cfg.upstream("adjacency.bin"))
    return prepare_dataset(
        features,
        demand,
        adjacency,
        cfg.split(),
        operator=cfg.section("model")["operator"],
        val_fraction=float(cfg.section("train")["val_fraction"]),
        scaler=scaler,
    )


def _access_config(cfg: RunConfig) -> access.AccessConfig:
    a = cfg.section("access")
    return access.AccessConfig(float(a["budget_minutes"]), float(a["walking_speed_kmh"]))


def _print_access_summary(pop: np.ndarray, emp: np.ndarray) -> None:
    print(f"{'':<22}{'mean':>12}{'std':>12}{'min':>12}{'max':>12}")
    for label, values in (("access to population", pop), ("access to employment", emp)):
        s = access.summarize(values)
        print(f"{label:<22}{s['mean']:>12.1f}{s['std']:>12.1f}{s['min']:>12.1f}{s['max']:>12.1f}")


def _parse_bound(raw: str) -> datetime | None:
    return ingest.parse_time(raw) if raw else None


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: RunConfig, force: bool = False) -> int:
    paths = {k: cfg.input_path(k) for k in ("trips", "weather", "population", "employment")}
    if cfg.section("paths")["stations"]:
        paths["stations"] = cfg.input_path("stations")
    section = {"ingest": cfg.section("ingest"), "access": cfg.section("access")}
    outputs = ("stations.csv", "access.csv", "demand.bin", "features.bin")

    def body():
        ing = cfg.section("ingest")
        trips = ingest.parse_trips(paths["trips"], {**ingest.DIVVY_2019, **ing["schema"]})
        weather = ingest.parse_weather(paths["weather"])
        registry = ingest.filter_stations(trips.records, int(ing["min_annual_demand"]))
        if "stations" in paths:
            registry = ingest.with_coordinates(registry, ingest.read_station_coordinates(paths["stations"]))
        unplaced = int(np.isnan(registry.coords).any(axis=1).sum())
        if unplaced:
            log.warning("%d station(s) have no coordinates; their access values are 0", unplaced)
        lo, hi = ingest.covering_range(trips.records)
        start = _parse_bound(ing["start"]) or lo
        end = _parse_bound(ing["end"]) or hi
        demand = ingest.aggregate_hourly(trips.records, registry, start, end)
        pop, emp = access.access_vectors(
            registry, access.read_points(paths["population"]), access.read_points(paths["employment"]), _access_config(cfg)
        )
        features = ingest.join_weather(demand, weather.records, (pop, emp), bool(ing["include_humidity"]))
        registry.to_csv(cfg.artifact("stations.csv"))
        access.write_access_csv(cfg.artifact("access.csv"), registry.ids, pop, emp)
        demand.save(cfg.artifact("demand.bin"))
        features.save(cfg.artifact("features.bin"))
        print(
            f"ingest: {len(trips.records)} trips parsed, {trips.skipped} skipped; "
            f"{len(weather.records)} weather rows; {len(registry)} stations retained; {demand.n_slots} hourly slots"
        )

    run_stage(cfg, "ingest", paths, section, outputs, body, force)
    return 0


def cmd_access(cfg: RunConfig, force: bool = False) -> int:
    inputs = {
        "stations.csv": cfg.upstream("stations.csv"),
        "population": cfg.input_path("population"),
        "employment": cfg.input_path("employment"),
    }

    def body():
        registry = ingest.StationRegistry.from_csv(inputs["stations.csv"])
        pop, emp = access.access_vectors(
            registry,
            access.read_points(inputs["population"]),
            access.read_points(inputs["employment"]),
            _access_config(cfg),
        )
        access.write_access_csv(cfg.artifact("access.csv"), registry.ids, pop, emp)
        _print_access_summary(pop, emp)

    run_stage(cfg, "access", inputs, {"access": cfg.section("access")}, ("access.csv",), body, force)
    return 0


def cmd_synth(cfg: RunConfig, force: bool = False) -> int:
    s = dict(cfg.section("synth"))
    s["seed"] = cfg.seed
    g = cfg.section("graph")
    spec = SyntheticSpec(**s, window=int(g["window_slots"]), channel=g["channel"], clip_negative=bool(g["clip_negative"]))
    outputs = ("stations.csv", "access.csv", "demand.bin", "features.bin", "planted_graph.bin")

    def body():
        syn = generate_synthetic(spec)
        syn.registry.to_csv(cfg.artifact("stations.csv"))
        access.write_access_csv(cfg.artifact("access.csv"), syn.registry.ids, *syn.access)
        syn.demand.save(cfg.artifact("demand.bin"))
        syn.features.save(cfg.artifact("features.bin"))
        cfg.artifact("planted_graph.bin").write_bytes(
            pack_arrays(
                {"adjacency": syn.planted, "operator": syn.planted_operator},
                {"kind": "planted_graph", "station_index": list(syn.registry.ids), "spec": spec.to_dict()},
            )
        )
        print(f"synth: {spec.n_stations} stations, {spec.n_slots} hourly slots (seed {spec.seed})")

    run_stage(cfg, "synth", {}, {"synth": spec.to_dict()}, outputs, body, force)
    return 0


def cmd_graph(cfg: RunConfig, force: bool = False) -> int:
    inputs = {"demand.bin": cfg.upstream("demand.bin")}
    g = cfg.section("graph")
    if g["mode"] not in ("dynamic", "static"):
        raise InputError(f"graph.mode must be 'dynamic' or 'static', got {g['mode']!r}")

    def body():
        demand = ingest.DemandTensor.load(inputs["demand.bin"])
        top_k = int(g["top_k"]) or None
        if g["mode"] == "dynamic":
            series = graph.dynamic_adjacency(demand, int(g["window_slots"]), g["channel"], bool(g["clip_negative"]), top_k)
        else:
            cut = cfg.split().cut(demand.n_slots)
            train_part = ingest.DemandTensor(demand.values[:cut], demand.start, demand.station_ids)
            adj = graph.static_adjacency(train_part, g["channel"], bool(g["clip_negative"]), top_k)
            mats = np.broadcast_to(adj, (demand.n_slots, *adj.shape)).copy()
            series = graph.AdjacencySeries(mats, cut, g["channel"], bool(g["clip_negative"]), top_k)
        series.save(cfg.artifact("adjacency.bin"))
        last = series.matrices[-1]
        off = last[~np.eye(last.shape[0], dtype=bool)]
        print(
            f"graph: {g['mode']} adjacency, {series.matrices.shape[0]} slots x {last.shape[0]} stations; "
            f"mean off-diagonal weight {off.mean() if off.size else 0.0:.3f}"
        )

    config = {"graph": g, "train_fraction": cfg.section("ingest")["train_fraction"]}
    run_stage(cfg, "graph", inputs, config, ("adjacency.bin",), body, force)
    return 0


def cmd_train(cfg: RunConfig, force: bool = False) -> int:
    inputs = {n: cfg.upstream(n) for n in ("features.bin", "demand.bin", "adjacency.bin")}
    tcfg = cfg.train_config()
    m = cfg.section("model")
    config = {
        "model": m,
        "train": config_dict(tcfg),
        "train_fraction": cfg.section("ingest")["train_fraction"],
    }
    outputs = ("checkpoint.ckpt", "train_log.csv", "train_summary.json")

    def body():
        data = _dataset(cfg)
        model = GgcnnModel(
            n_features=data.n_features,
            seed=cfg.seed,
            hidden=list(m["hidden"]),
            steps=list(m["steps"]),
            readout_hidden=list(m["readout_hidden"]),
            operator=m["operator"],
        )

        def report(rec):
            if rec.epoch == 1 or rec.epoch % 10 == 0 or rec.epoch == tcfg.epochs:
                val = "n/a" if rec.val_loss is None else f"{rec.val_loss:.6f}"
                print(f"epoch {rec.epoch:>4}  train {rec.train_loss:.6f}  val {val}")

        model, tlog = train(model, data, tcfg, on_epoch=report)
        tlog.final_metrics = {
            "train_loss": evaluate_loss(model, data, data.train_idx),
            "val_loss": evaluate_loss(model, data, data.val_idx),
        }
        save_checkpoint(
            cfg.artifact("checkpoint.ckpt"),
            model,
            {
                "feature_scaler": data.feature_scaler.to_dict(),
                "target_scaler": data.target_scaler.to_dict(),
                "feature_names": list(data.feature_names),
                "station_ids": list(data.station_ids),
                "train": config_dict(tcfg),
                "train_fraction": cfg.split().train_fraction,
            },
        )
        tlog.write_csv(cfg.artifact("train_log.csv"))
        tlog.write_timing(cfg.artifact("train_timing.csv"))
        tlog.write_summary(cfg.artifact("train_summary.json"))
        print(f"train: best epoch {tlog.best_epoch}, best validation loss {tlog.best_loss:.6f}")

    run_stage(cfg, "train", inputs, config, outputs, body, force)
    return 0


def _load_trained(cfg: RunConfig):
    model, header = load_checkpoint(cfg.upstream("checkpoint.ckpt"))
    return model, header, ingest.MinMaxScaler.from_dict(header["feature_scaler"])


def cmd_eval(cfg: RunConfig, models: Sequence[str] | None = None, force: bool = False) -> int:
    models = list(models or cfg.section("eval")["models"])
    unknown = [m for m in models if m not in MODELS]
    if unknown:
        raise InputError(f"unknown model(s) {unknown}; choose from {', '.join(MODELS)}")
    inputs = {n: cfg.upstream(n) for n in ("features.bin", "demand.bin", "adjacency.bin")}
    if "ggcnn" in models:
        inputs["checkpoint.ckpt"] = cfg.upstream("checkpoint.ckpt")
    tcfg = cfg.train_config()
    config = {
        "models": models,
        "model": cfg.section("model"),
        "train": config_dict(tcfg),
        "train_fraction": cfg.section("ingest")["train_fraction"],
    }
    outputs = ("report.json", "report.csv", "report.txt")

    def body():
        trained, scaler = {}, None
        if "ggcnn" in models:
            model, _, scaler = _load_trained(cfg)
            trained["ggcnn"] = model
        data = _dataset(cfg, scaler)
        result = run_suite(data, models, tcfg, seed=cfg.seed, trained=trained)
        reports = result.reports(data)
        write_reports(cfg.workdir / "report", reports)
        for r in reports:
            if not r.consistent():
                raise NumericError(f"{r.model} ({r.space}): RMSE^2 differs from MSE")
        print(f"eval: {data.test_idx.size} test slots, {data.n_stations} stations")
        sys.stdout.write(cfg.artifact("report.txt").read_text())

    run_stage(cfg, "eval", inputs, config, outputs, body, force)
    return 0


def next_slot_inputs(features: ingest.FeatureTensor, demand: ingest.DemandTensor) -> np.ndarray:
    """Feature rows for the slot after the last observed one.

    Weather is unknown ahead of time, so the last observed weather is held;
    access is static and the lag columns take the last observed demand.
    """
    x = features.values[-1].copy()
    x[:, features.column("last_in_trips")] = demand.values[-1, :, ingest.IN]
    x[:, features.column("last_out_trips")] = demand.values[-1, :, ingest.OUT]
    return x


def cmd_predict(cfg: RunConfig, slot: int | None = None, out: str | None = None, force: bool = False) -> int:
    inputs = {n: cfg.upstream(n) for n in ("features.bin", "demand.bin", "adjacency.bin", "checkpoint.ckpt")}
    target = cfg.artifact(out or "forecast.csv")
    name = target.name if target.parent == cfg.workdir else str(target)
    config = {"slot": slot, "operator": cfg.section("model")["operator"]}

    def body():
        model, header, scaler = _load_trained(cfg)
        features, demand = _load_tensors(cfg)
        adjacency = graph.AdjacencySeries.load(inputs["adjacency.bin"]).matrices
        tscaler = ingest.MinMaxScaler.from_dict(header["target_scaler"])
        T = features.n_slots
        if slot is None:
            x, adj, when = next_slot_inputs(features, demand), adjacency[-1], demand.slot_time(T - 1) + ingest.HOUR
        else:
            if not 1 <= slot < T:
                raise InputError(f"--slot must lie in [1, {T - 1}]")
            x, adj, when = features.values[slot], adjacency[slot - 1], demand.slot_time(slot)
        op = graph.propagation_operator(adj) if cfg.section("model")["operator"] == "normalized" else adj
        with no_grad():
            scaled = model(op, scaler.transform(x)).data
        counts = tscaler.inverse_transform(scaled)
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot", "station_id", "space", "predicted_in", "predicted_out"])
            for space, values in (("scaled", scaled), ("counts", counts)):
                for sid, row in zip(features.station_ids, values):
                    w.writerow([when.isoformat(sep=" "), sid, space, repr(float(row[0])), repr(float(row[1]))])
        print(f"predict: forecast for {when.isoformat(sep=' ')} written to {target}")

    run_stage(cfg, "predict", inputs, config, (name,), body, force)
    return 0


def cmd_grad_check(
    cfg: RunConfig, stations: int = 4, hidden: int = 8, eps: float = 1e-5, threshold: float = 1e-4
) -> int:
    """Finite-difference check of every gradient on a small gated model.

    Uses the first ``stations`` stations of the first training sample when a
    dataset is present in the work directory, random inputs otherwise.
    """
    rng = np.random.default_rng(cfg.seed)
    try:
        data = _dataset(cfg)
        adjacency = graph.AdjacencySeries.load(cfg.upstream("adjacency.bin")).matrices
        t = int(data.train_idx[0])
        X, Y = data.X[t, :stations], data.Y[t, :stations]
        op = graph.propagation_operator(adjacency[data.slots[t] - 1][:stations, :stations])
        source = "work directory"
    except MissingUpstreamArtifact:
        X = rng.uniform(0, 1, (stations, 8))
        Y = rng.uniform(0, 1, (stations, 2))
        a = rng.uniform(0, 1, (stations, stations))
        adj = (a + a.T) / 2
        np.fill_diagonal(adj, 1.0)
        op = graph.propagation_operator(adj)
        source = "random"
    model = GgcnnModel(n_features=X.shape[-1], seed=cfg.seed, hidden=[hidden, hidden], steps=[4, 3])
    report = model_grad_check(model, op, X, Y, eps=eps)
    print(f"grad-check: {stations} stations, hidden {hidden}, eps {eps:g}, inputs from {source}")
    for line in report.lines(threshold):
        print("  " + line)
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    cfg.artifact("grad_check.json").write_text(
        json.dumps(
            {
                "eps": eps,
                "threshold": threshold,
                "passed": report.passed(threshold),
                "worst": report.worst(),
                "max_rel_error": report.max_rel_error,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    if not report.passed(threshold):
        raise NumericError(f"gradient check failed for {', '.join(report.failures(threshold))}")
    print(f"grad-check: all {len(report.max_rel_error)} parameter tensors within {threshold:g}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="TOML run configuration")
    parser.add_argument("--workdir", default=d, help="artifact directory (overrides paths.workdir)")
    parser.add_argument("--seed", type=int, default=d, help="seed for generation, initialization and shuffling")
    parser.add_argument("--force", action="store_true", default=d if suppress else False, help="ignore the stage cache")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=d if suppress else [], metavar="KEY=VALUE",
        help="override one config key, e.g. --set train.epochs=20",
    )
    parser.add_argument("-v", "--verbose", action="store_true", default=d if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ggcnn", description="Station-level bike demand forecasting pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, description=help_)
        _global_flags(p, suppress=True)
        return p

    add("ingest", "parse trips and weather into demand and feature tensors")
    add("access", "recompute per-station cumulative access and print summary statistics")
    p = add("synth", "write a synthetic dataset with a planted graph")
    p.add_argument("--stations", type=int, help="number of stations")
    p.add_argument("--slots", type=int, help="number of hourly slots")
    add("graph", "build the correlation adjacency series")
    add("train", "train the gated graph model")
    p = add("eval", "score models on the test slots")
    p.add_argument("--models", help=f"comma-separated subset of {','.join(MODELS)}")
    p = add("predict", "forecast per-station demand with a trained checkpoint")
    p.add_argument("--slot", type=int, help="forecast an observed slot instead of the next one")
    p.add_argument("--out", help="output CSV name inside the work directory (default forecast.csv)")
    p = add("grad-check", "compare backpropagated gradients with finite differences")
    p.add_argument("--stations", type=int, default=4)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=1e-4)
    return parser


def dispatch(args: argparse.Namespace) -> int:
    overrides = list(args.overrides)
    if args.command == "synth":
        if args.stations is not None:
            overrides.append(f"synth.n_stations={args.stations}")
        if args.slots is not None:
            overrides.append(f"synth.n_slots={args.slots}")
    cfg = RunConfig.load(args.config, overrides, args.workdir, args.seed)
    force = args.force
    if args.command == "ingest":
        return cmd_ingest(cfg, force)
    if args.command == "access":
        return cmd_access(cfg, force)
    if args.command == "synth":
        return cmd_synth(cfg, force)
    if args.command == "graph":
        return cmd_graph(cfg, force)
    if args.command == "train":
        return cmd_train(cfg, force)
    if args.command == "eval":
        models = [m.strip() for m in args.models.split(",") if m.strip()] if args.models else None
        return cmd_eval(cfg, models, force)
    if args.command == "predict":
        return cmd_predict(cfg, args.slot, args.out, force)
    return cmd_grad_check(cfg, args.stations, args.hidden, args.eps, args.threshold)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return dispatch(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
