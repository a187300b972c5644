import csv
import io

import numpy as np
import pytest

from phnsw import (
    DDR4_PJ_PER_BIT, HBM_PJ_PER_BIT, LayerKConfig, PHNSWIndex, brute_force_knn, ground_truth,
    make_synthetic, recall_at_k, run_bench, sweep_k, write_csv,
)
from phnsw.evaluation import CSV_HEADER


def full_sort_oracle(X, q, K):
    d = [(sum((float(a) - float(b)) ** 2 for a, b in zip(x, q)), i) for i, x in enumerate(X)]
    return [i for _, i in sorted(d)[:K]]


def test_brute_force_matches_full_sort(rng):
    X = rng.normal(size=(300, 8)).astype(np.float32)
    for q in rng.normal(size=(5, 8)).astype(np.float32):
        ids, d = brute_force_knn(X, q, 10)
        assert ids.tolist() == full_sort_oracle(X, q, 10)
        assert np.all(np.diff(d) >= 0)


def test_brute_force_edge_cases():
    X = np.array([[0.0], [1.0], [1.0], [3.0]], np.float32)
    ids, d = brute_force_knn(X, [1.0], 4)
    assert ids.tolist() == [1, 2, 0, 3] and d.tolist() == [0.0, 0.0, 1.0, 4.0]
    with pytest.raises(ValueError):
        brute_force_knn(X, [1.0], 5)
    with pytest.raises(ValueError):
        brute_force_knn(X, [1.0], 0)


def test_ground_truth_self_query(rng):
    X = rng.normal(size=(50, 4)).astype(np.float32)
    gt = ground_truth(X, X[:3], 5)
    assert gt.ids.shape == (3, 5) and gt.ids[:, 0].tolist() == [0, 1, 2]
    assert np.all(gt.distances[:, 0] == 0)


def test_recall_basic_cases():
    t = list(range(10))
    assert recall_at_k(t, t) == 1.0
    assert recall_at_k(list(range(10, 20)), t) == 0.0
    assert recall_at_k(t[::-1], t) == 1.0
    assert recall_at_k([0, 1, 2, 30, 40, 50, 60, 70, 80, 90], t) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        recall_at_k(t[:5], t)


def test_singleton_bench_recall_is_one():
    X = np.ones((1, 4), np.float32)
    index = PHNSWIndex(projection="identity", M=4, ef_construction=8, k0=8, k1=4, k_rest=4, n_neighbors=1).fit(X)
    rep = run_bench(index, X, "phnsw_inline", index.search_params(K=1), warmup=0, repeats=1)
    assert rep.recall_at_k == 1.0 and rep.n_queries == 1 and rep.qps > 0


@pytest.fixture(scope="module")
def small_reports(small):
    index, Q = small["index"], small["queries"]
    truth = ground_truth(index.base_, Q, 10)
    reps = {v: run_bench(index, Q, v, truth=truth, warmup=0, repeats=1) for v in ("hnsw_std", "phnsw_sep", "phnsw_inline")}
    return truth, reps


def test_layouts_same_bytes_fewer_transactions(small_reports):
    _, reps = small_reports
    sep, inl = reps["phnsw_sep"], reps["phnsw_inline"]
    assert sep.recall_at_k == inl.recall_at_k
    assert sep.traffic.lowdim_bytes + sep.traffic.highdim_bytes == inl.traffic.lowdim_bytes + inl.traffic.highdim_bytes
    assert sep.traffic.bytes == inl.traffic.bytes
    assert inl.traffic.transactions < sep.traffic.transactions
    # Inline: one record fetch per expansion plus the high-dim fetches.
    assert inl.traffic.transactions == inl.expansions + inl.highdim_evals
    assert sep.traffic.transactions == sep.expansions + sep.lowdim_evals + sep.highdim_evals


def test_per_expansion_high_dim_work(small_reports):
    _, reps = small_reports
    assert reps["phnsw_inline"].max_highdim_per_expansion[0] <= 16
    assert reps["phnsw_inline"].bound_violations == 0
    assert reps["hnsw_std"].max_highdim_per_expansion[0] <= 16  # M0 for M=8


def test_energy_is_bytes_times_constant(small_reports):
    _, reps = small_reports
    for rep in reps.values():
        assert rep.energy_ddr4_pj == rep.traffic.bytes * 8 * DDR4_PJ_PER_BIT / rep.n_queries
        assert rep.energy_hbm_pj == rep.traffic.bytes * 8 * HBM_PJ_PER_BIT / rep.n_queries


def test_reported_recall_matches_recomputation(small, small_reports):
    truth, reps = small_reports
    rep = reps["phnsw_inline"]
    manual = np.mean([recall_at_k(r, t) for r, t in zip(rep.results, truth.ids)])
    assert rep.recall_at_k == manual


def test_identity_projection_recall_equals_baseline():
    rng = np.random.default_rng(16)
    X = rng.normal(size=(600, 16)).astype(np.float32)
    Q = rng.normal(size=(20, 16)).astype(np.float32)
    index = PHNSWIndex(projection="identity", M=8, ef_construction=32, k0=16, k1=8, k_rest=8).fit(X)
    params = index.search_params(k_config=LayerKConfig.degree_bound(index.graph_), lowdim_threshold=False)
    a = run_bench(index, Q, "hnsw_std", params, warmup=0, repeats=0)
    b = run_bench(index, Q, "phnsw_inline", params, warmup=0, repeats=0)
    assert a.recall_at_k == b.recall_at_k
    assert [r.ids.tolist() for r in a.results] == [r.ids.tolist() for r in b.results]
    assert np.isnan(a.qps)


def test_sweep_is_deterministic(small):
    index, Q = small["index"], small["queries"]
    a = sweep_k(index, Q, 0, [8, 12, 16], warmup=0, repeats=1)
    b = sweep_k(index, Q, 0, [8, 12, 16], warmup=0, repeats=1)
    assert [p.recall for p in a] == [p.recall for p in b]
    assert [p.report.traffic for p in a] == [p.report.traffic for p in b]
    assert [p.report.params["k_config"]["k0"] for p in a] == [8, 12, 16]
    s1 = sweep_k(index, Q, 1, [2, 8], fixed_k=12, warmup=0, repeats=0)
    assert [(p.report.params["k_config"]["k0"], p.report.params["k_config"]["k1"]) for p in s1] == [(12, 2), (12, 8)]
    with pytest.raises(ValueError):
        sweep_k(index, Q, 2, [3])
    with pytest.raises(ValueError):
        sweep_k(index, Q, 0, [17])


def test_csv_output(small_reports):
    _, reps = small_reports
    buf = io.StringIO()
    write_csv(list(reps.values()), buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0] == CSV_HEADER
    assert ",".join(CSV_HEADER) == "variant,layer_k0,layer_k1,recall_at_10,qps,transactions,bytes,energy_ddr4_pj,energy_hbm_pj"
    assert [r[0] for r in rows[1:]] == ["hnsw_std", "phnsw_sep", "phnsw_inline"]
    assert buf.getvalue().endswith("\r\n")
    for r, rep in zip(rows[1:], reps.values()):
        assert float(r[3]) == pytest.approx(rep.recall_at_k, abs=1e-6)
        assert float(r[6]) == pytest.approx(rep.bytes_per_query, abs=1e-3)


def test_csv_quotes_fields(small_reports):
    _, reps = small_reports
    rep = reps["hnsw_std"]
    rep_copy = type(rep)(**{**rep.__dict__, "variant": 'odd,"name"'})
    buf = io.StringIO()
    write_csv([rep_copy], buf)
    assert '"odd,""name"""' in buf.getvalue()
    assert next(csv.reader(io.StringIO(buf.getvalue().splitlines()[1])))[0] == 'odd,"name"'


def test_synthetic_is_seeded():
    a = make_synthetic(200, 5, 16, seed=1)
    b = make_synthetic(200, 5, 16, seed=1)
    c = make_synthetic(200, 5, 16, seed=2)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
    assert a[0].tobytes() != c[0].tobytes()
    assert a[0].dtype == np.float32 and a[0].shape == (200, 16)


def test_truth_too_narrow_rejected(small):
    index, Q = small["index"], small["queries"][:3]
    with pytest.raises(ValueError):
        run_bench(index, Q, "hnsw_std", truth=ground_truth(index.base_, Q, 5), warmup=0, repeats=0)
    with pytest.raises(ValueError):
        run_bench(index, Q, "annoy", warmup=0, repeats=0)
