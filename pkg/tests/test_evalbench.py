import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from ggcnn.errors import InputError, LengthMismatch
from ggcnn.evalbench import metrics
from ggcnn.evalbench.baselines import (
    GcnBaseline,
    MlpBaseline,
    OlsModel,
    RankDeficient,
    fit_neural_baseline,
    ols_fit,
    persistence_baseline,
)
from ggcnn.evalbench.suite import run_suite
from ggcnn.evalbench.synthetic import SyntheticSpec, generate_synthetic, knn_graph, sym_normalize
from ggcnn.graph import static_adjacency
from ggcnn.ingest import SplitSpec
from ggcnn.neuro import no_grad
from ggcnn.train import ForecastDataset, TrainConfig, prepare_dataset

seeds = st.integers(0, 2**32 - 1)


# -- metrics --------------------------------------------------------------------------


def test_metric_examples():
    assert metrics.r_squared([1, 2, 3], [1, 2, 3]) == 1.0
    assert metrics.r_squared([2, 2, 2], [1, 2, 3]) == 0.0
    assert math.isnan(metrics.r_squared([1, 2, 3], [4, 4, 4]))
    assert metrics.mse([0, 0], [3, 4]) == 12.5
    assert metrics.rmse([0], [3]) == 3.0
    with pytest.raises(LengthMismatch):
        metrics.mse([1, 2], [1])
    with pytest.raises(LengthMismatch):
        metrics.mse([], [])


def test_metric_flat_loop_oracles():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p, a = rng.normal(size=40), rng.normal(size=40)
        pl, al = p.tolist(), a.tolist()
        assert abs(metrics.mse(p, a) - oracles.mse(pl, al)) < 1e-12
        assert abs(metrics.rmse(p, a) - oracles.rmse(pl, al)) < 1e-12
        assert abs(metrics.r_squared(p, a) - oracles.r_squared(pl, al)) < 1e-12


@given(seeds, st.integers(2, 50))
def test_metric_invariants(seed, n):
    rng = np.random.default_rng(seed)
    p, a = rng.normal(size=n), rng.normal(size=n) * 3 + 1
    assert metrics.mse(p, a) >= 0
    assert abs(metrics.rmse(p, a) ** 2 - metrics.mse(p, a)) <= 1e-9 * max(1.0, metrics.mse(p, a))
    assert metrics.r_squared(p, a) <= 1.0 + 1e-12
    # R² is invariant to a common affine rescaling
    assert metrics.r_squared(2 * p + 5, 2 * a + 5) == pytest.approx(metrics.r_squared(p, a), abs=1e-9)


def test_report_consistency_and_pooling():
    rng = np.random.default_rng(1)
    pred, actual = rng.normal(size=(10, 3, 2)), rng.normal(size=(10, 3, 2))
    r = metrics.build_report("m", pred, actual, ["a", "b", "c"], "scaled")
    assert r.consistent() and r.n_test_slots == 10
    # equal cell counts per station, so the pooled MSE is the mean of station MSEs
    assert r.mse == pytest.approx(np.mean([s.mse for s in r.per_station]), abs=1e-12)
    assert r.per_station[1].mse == pytest.approx(metrics.mse(pred[:, 1], actual[:, 1]))
    with pytest.raises(LengthMismatch):
        metrics.build_report("m", pred, actual[:5], ["a", "b", "c"], "scaled")


def test_write_reports(tmp_path):
    rng = np.random.default_rng(2)
    a = rng.normal(size=(6, 2, 2))
    reports = [
        metrics.build_report("persistence", a + 0.1, a, ["1", "2"], "scaled"),
        metrics.build_report("persistence", a * 10 + 1, a * 10, ["1", "2"], "counts"),
    ]
    paths = metrics.write_reports(tmp_path / "report", reports)
    assert [p.name for p in paths] == ["report.json", "report.csv", "report.txt"]
    data = json.loads(paths[0].read_text())
    assert [d["space"] for d in data] == ["scaled", "counts"]
    rows = paths[1].read_text().splitlines()
    assert rows[0] == "model,space,station_id,r2,mse,rmse,n_test_slots" and len(rows) == 1 + 2 * 3
    txt = paths[2].read_text()
    assert txt.startswith("[scaled]\nModel") and "[counts]" in txt
    assert "R2" in txt and "RMSE" in txt


def test_undefined_r2_serialises_as_null(tmp_path):
    flat = np.ones((4, 1, 2))
    r = metrics.build_report("m", flat, flat, ["x"], "scaled")
    assert math.isnan(r.r2) and r.to_dict()["r2"] is None
    assert "undefined" in metrics.comparison_table([r])


# -- OLS ---------------------------------------------------------------------------------


def test_ols_exact_line():
    coef, b = ols_fit(np.array([[1.0], [2.0], [3.0]]), np.array([2.0, 4.0, 6.0]))
    assert coef[0] == pytest.approx(2.0, abs=1e-12) and b == pytest.approx(0.0, abs=1e-12)


def test_ols_against_two_oracles():
    rng = np.random.default_rng(3)
    for _ in range(100):
        X = rng.normal(size=(30, 4))
        y = X @ rng.normal(size=4) + 0.5 + rng.normal(scale=0.1, size=30)
        coef, b = ols_fit(X, y)
        A = np.hstack([X, np.ones((30, 1))])
        via_pinv = np.linalg.pinv(A) @ y
        assert np.max(np.abs(np.append(coef, b) - via_pinv)) < 1e-8
        At = oracles.transpose(A.tolist())
        gram = oracles.matmul(At, A.tolist())
        rhs = [row[0] for row in oracles.matmul(At, [[v] for v in y])]
        assert np.max(np.abs(np.append(coef, b) - oracles.solve(gram, rhs))) < 1e-8


@given(seeds)
def test_ols_residual_orthogonal(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(25, 3))
    y = rng.normal(size=25)
    coef, b = ols_fit(X, y)
    resid = y - X @ coef - b
    assert np.all(np.abs(X.T @ resid) < 1e-6) and abs(resid.sum()) < 1e-6


def test_ols_rank_deficient():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(20, 1))
    X = np.hstack([x, 2 * x])
    y = 3 * x[:, 0] + 1
    with pytest.raises(RankDeficient):
        ols_fit(X, y, ridge_fallback=False)
    coef, b = ols_fit(X, y)
    assert np.allclose(X @ coef + b, y, atol=1e-6)


def test_ols_multi_output():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 3))
    Y = np.column_stack([X @ [1, 2, 3], X @ [-1, 0, 1] + 4])
    coef, b = ols_fit(X, Y)
    assert np.allclose(coef, [[1, -1], [2, 0], [3, 1]]) and np.allclose(b, [0, 4])


# -- persistence and neural baselines -------------------------------------------------------


def dataset_from(Y, X=None):
    """Minimal dataset whose lag columns are the previous targets."""
    S, N, _ = Y.shape
    if X is None:
        X = np.zeros((S, N, 8))
        X[1:, :, 6:] = Y[:-1]
    from ggcnn.ingest import MinMaxScaler

    idx = np.arange(S)
    names = ("a", "b", "c", "d", "e", "f", "last_in_trips", "last_out_trips")
    sc = MinMaxScaler(np.zeros(8), np.ones(8))
    return ForecastDataset(
        X, Y, np.broadcast_to(np.eye(N), (S, N, N)).copy(), idx + 1, idx, idx[:0], idx,
        sc, MinMaxScaler(np.zeros(2), np.ones(2)), names, tuple(str(i) for i in range(N)),
    )  # fmt: skip


def test_persistence_examples():
    Y = np.zeros((4, 1, 2))
    Y[:, 0, 1] = [3, 5, 7, 9]
    data = dataset_from(Y)
    assert persistence_baseline(data, np.array([1, 2, 3]))[:, 0, 1].tolist() == [3, 5, 7]


def test_persistence_beats_mean_on_random_walk():
    rng = np.random.default_rng(6)
    walk = np.cumsum(rng.normal(size=500))
    Y = np.stack([walk, walk], axis=-1)[:, None, :]
    data = dataset_from(Y)
    idx = np.arange(1, 500)
    persist = metrics.mse(persistence_baseline(data, idx), Y[idx])
    mean = metrics.mse(np.full_like(Y[idx], Y[idx].mean()), Y[idx])
    assert persist < mean


def test_zero_target_baselines():
    rng = np.random.default_rng(7)
    X = rng.uniform(0, 1, (50, 3, 8))
    X[..., 6:] = 0.0
    data = dataset_from(np.zeros((50, 3, 2)), X)
    ols = OlsModel.fit(data, data.train_idx)
    assert np.max(np.abs(ols.predict(data, data.test_idx))) < 1e-10
    for kind in ("mlp", "gcn"):
        model, _ = fit_neural_baseline(kind, data, TrainConfig(epochs=60, learning_rate=0.01))
        with no_grad():
            out = model(data.ops[0], data.X[0]).data
        assert np.max(np.abs(out)) < 0.05, kind


def test_baseline_shapes_and_structure():
    m, g = MlpBaseline(seed=0), GcnBaseline(seed=0)
    assert list(m.parameters())[0] == "mlp.0.W"
    assert [k for k in g.parameters() if k.endswith(".W")][:2] == ["conv1.W", "conv2.W"]
    rng = np.random.default_rng(8)
    X = rng.normal(size=(5, 8))
    op = rng.uniform(0, 1, (5, 5))
    with no_grad():
        assert m(op, X).shape == (5, 2) and g(op, X).shape == (5, 2)
        # the MLP ignores the graph; the GCN does not
        assert np.array_equal(m(op, X).data, m(np.eye(5), X).data)
        assert not np.array_equal(g(op, X).data, g(np.eye(5), X).data)


# -- synthetic generator ----------------------------------------------------------------------


def test_synthetic_closed_form_without_coupling():
    spec = SyntheticSpec(n_stations=6, n_slots=240, noise=0.0, alpha=0.0, beta=0.0, weekly=0.0, window=24)
    d = generate_synthetic(spec).demand.values
    assert np.allclose(d[24:], d[:-24], atol=1e-12)  # daily period
    # an unclipped sinusoid satisfies x[t] + x[t+12] = 2 * level
    pair = d[:-12] + d[12:]
    live = (d[:-12] > 0) & (d[12:] > 0)
    for s in range(6):
        for c in range(2):
            vals = pair[:, s, c][live[:, s, c]]
            assert vals.size > 0 and np.ptp(vals) < 1e-12


def test_synthetic_regeneration_byte_identical():
    spec = SyntheticSpec(n_stations=5, n_slots=200, window=24, seed=8)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a.demand.values.tobytes() == b.demand.values.tobytes()
    assert a.features.values.tobytes() == b.features.values.tobytes()
    assert a.adjacency.matrices.tobytes() == b.adjacency.matrices.tobytes()
    c = generate_synthetic(SyntheticSpec(n_stations=5, n_slots=200, window=24, seed=9))
    assert a.demand.values.tobytes() != c.demand.values.tobytes()


@given(seeds, st.integers(2, 12), st.integers(0, 4))
def test_synthetic_invariants(seed, n, k):
    syn = generate_synthetic(SyntheticSpec(n_stations=n, n_slots=60, window=24, seed=seed % 1000, k_neighbors=k))
    assert np.all(syn.demand.values >= 0)
    assert np.array_equal(syn.planted, syn.planted.T) and not np.diag(syn.planted).any()
    assert np.allclose(syn.planted_operator, syn.planted_operator.T)
    assert np.array_equal(syn.features.values[1:, :, 6:], syn.demand.values[:-1])


def test_pcc_recovers_planted_graph():
    syn = generate_synthetic(SyntheticSpec(n_stations=20, n_slots=1000, window=168))
    a = static_adjacency(syn.demand.values)
    off = ~np.eye(20, dtype=bool)
    truth = syn.planted_operator[off]
    score = np.corrcoef(a[off], truth)[0, 1]
    rng = np.random.default_rng(0)
    controls = []
    for _ in range(20):
        perm = rng.permutation(20)
        controls.append(np.corrcoef(a[off], syn.planted_operator[np.ix_(perm, perm)][off])[0, 1])
    assert score > max(controls)
    assert a[syn.planted > 0].mean() > a[(syn.planted == 0) & off].mean()


def test_knn_graph_examples():
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]])
    g = knn_graph(pos, 1)
    assert g.tolist() == [[0, 1, 0], [1, 0, 1], [0, 1, 0]]
    assert np.allclose(sym_normalize(g)[0, 1], 1 / math.sqrt(2))
    assert not knn_graph(pos, 0).any()


def test_synthetic_spec_validation():
    with pytest.raises(InputError):
        SyntheticSpec(n_stations=0)
    with pytest.raises(InputError):
        SyntheticSpec(n_slots=100, window=168)


# -- suite --------------------------------------------------------------------------------------


def test_suite_small_run():
    syn = generate_synthetic(SyntheticSpec(n_stations=5, n_slots=300, window=24))
    data = prepare_dataset(syn.features, syn.demand, syn.adjacency, SplitSpec())
    res = run_suite(
        data,
        models=("persistence", "ols", "ggcnn"),
        cfg=TrainConfig(epochs=2),
        model_overrides={"hidden": [8, 8], "steps": [1, 1], "readout_hidden": [8]},
    )
    reports = res.reports(data)
    assert [(r.model, r.space) for r in reports] == [
        (m, s) for s in ("scaled", "counts") for m in ("persistence", "ols", "ggcnn")
    ]
    assert all(r.consistent() for r in reports)
    assert set(res.r2(data)) == {"persistence", "ols", "ggcnn"}
    counts = [r for r in reports if r.space == "counts" and r.model == "persistence"][0]
    raw = syn.demand.values[data.slots[data.test_idx]]
    prev = syn.demand.values[data.slots[data.test_idx] - 1]
    assert counts.mse == pytest.approx(metrics.mse(prev, raw), rel=1e-9)
    with pytest.raises(InputError):
        run_suite(data, models=("nope",))
