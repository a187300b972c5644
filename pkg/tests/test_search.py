import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import phnsw.search as search_mod
from phnsw import (
    BuildParams, HnswGraph, LayerKConfig, PHNSWIndex, LayoutMode, PcaModel, SearchParams, build_image,
    brute_force_knn, hnsw_build, hnsw_search, hnsw_search_layer, phnsw_search, phnsw_search_layer,
    rank_topk,
)
from phnsw.core import DimensionMismatchError
from phnsw.search import IterationCapExceeded, SearchCounters

STD, SEP, INLINE = LayoutMode.HIGH_DIM_ONLY, LayoutMode.SEPARATE_LOWDIM, LayoutMode.INLINE_LOWDIM


# -- rank_topk ---------------------------------------------------------------


def stable_sort_oracle(values, k):
    return [i for _, i in sorted((v, i) for i, v in enumerate(values))][:k]


def test_rank_topk_hand_example():
    assert rank_topk([5, 2, 9, 1, 7], 3).tolist() == [3, 1, 0]


def test_rank_topk_ties_prefer_lower_index():
    assert rank_topk([4, 4, 4, 4], 2).tolist() == [0, 1]
    assert rank_topk([3, 1, 3, 1, 2], 5).tolist() == [1, 3, 4, 0, 2]


def test_rank_topk_maps_ids():
    assert rank_topk([0.5, 0.25, 0.75], 2, ids=[40, 10, 30]).tolist() == [10, 40]


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=32), st.data())
def test_rank_topk_matches_stable_sort(values, data):
    k = data.draw(st.integers(0, len(values)))
    assert rank_topk(np.array(values, np.float32), k).tolist() == stable_sort_oracle(values, k)


def test_rank_topk_rejects_bad_input():
    with pytest.raises(ValueError):
        rank_topk([1.0, 2.0], 3)
    with pytest.raises(ValueError):
        rank_topk([1.0, float("nan")], 1)
    with pytest.raises(ValueError):
        rank_topk([1.0, 2.0], 1, ids=[1])


# -- literal list-based oracle for one pHNSW layer search ----------------------


def oracle_phnsw_layer(X, low, adj, q, q_low, eps, ef, k, threshold=True):
    """Plain-list transcription of the layer loop; distances in float64."""
    dist = lambda i: float(sum((float(a) - float(b)) ** 2 for a, b in zip(X[i], q)))
    dl = lambda i: float(sum((float(a) - float(b)) ** 2 for a, b in zip(low[i], q_low)))
    key = lambda i: (dist(i), i)
    V, C, F, C_pca = set(eps), list(eps), list(eps), []
    trace = []
    while C:
        c = min(C, key=key)
        C.remove(c)
        f = max(F, key=key)
        f_pca = max(dl(i) for i in C_pca) if C_pca else math.inf
        if dist(c) > dist(f):
            break
        N = list(adj[c])
        cand = [(dl(e), pos, e) for pos, e in enumerate(N) if not threshold or dl(e) < f_pca]
        kept = [e for _, _, e in sorted(cand)[:k]]
        tmp = []
        for e in kept:
            if e in V:
                continue
            V.add(e)
            f = max(F, key=key)
            if dist(e) < dist(f) or len(F) < ef:
                C.append(e)
                F.append(e)
                tmp.append(e)
                if len(F) > ef:
                    F.remove(max(F, key=key))
        C_pca = tmp
        trace.append({"c": c, "f_pca": f_pca, "C_pca": kept, "admitted": tmp, "C": sorted(C), "F": sorted(F)})
    return sorted((dist(i), i) for i in F), trace


def _line_graph():
    X = np.array([[0, 0], [1, 3], [2, 0], [3, 1], [5, 0]], np.float32)
    low = X[:, :1].copy()
    adj = {0: [1, 2], 1: [0, 3], 2: [0, 3, 4], 3: [1, 2, 4], 4: [2, 3]}
    return X, low, adj, HnswGraph.from_lists([adj], entry_point=0, M=2)


def test_hand_traced_layer_search():
    X, low, adj, g = _line_graph()
    img = build_image(g, X, low, INLINE)
    trace = []
    out = phnsw_search_layer([4, 0], [4], [0], 2, 0, 1, g, img, trace=trace)
    # Node 4 is the true nearest neighbor but its low-dim distance (1) is not
    # strictly below the carried-over threshold (1), so it is filtered out.
    assert out == [(2.0, 3), (4.0, 2)]
    assert trace == [
        {"c": 0, "f_pca": math.inf, "C_pca": [2], "admitted": [2], "C": [2], "F": [0, 2]},
        {"c": 2, "f_pca": 4.0, "C_pca": [3], "admitted": [3], "C": [3], "F": [2, 3]},
        {"c": 3, "f_pca": 1.0, "C_pca": [], "admitted": [], "C": [], "F": [2, 3]},
    ]
    ref, ref_trace = oracle_phnsw_layer(X, low, adj, [4, 0], [4], [0], 2, 1)
    assert ref == out and ref_trace == trace


def test_hand_traced_metering():
    X, low, adj, g = _line_graph()
    for mode, txns in ((SEP, 1 + 4 + 5 + 4), (INLINE, 1 + 2 + 2 + 1)):
        c = SearchCounters()
        phnsw_search_layer([4, 0], [4], [0], 2, 0, 1, g, build_image(g, X, low, mode), counters=c)
        assert c.lowdim_evals == 8 and c.highdim_evals == 3
        assert c.traffic.transactions == txns
        assert c.traffic.lowdim_bytes == 8 * 4 and c.traffic.highdim_bytes == 3 * 8
        assert c.traffic.index_bytes == 10 + 14 + 14


@pytest.fixture(scope="module")
def grid20():
    rng = np.random.default_rng(20)
    X = rng.choice(60, size=(20, 2), replace=True).astype(np.float32)
    g = hnsw_build(X, BuildParams(M=3, ef_construction=8, rng_seed=4))
    adj = {v: g.neighbors(v, 0).tolist() for v in range(20)}
    return X, X[:, :1].copy(), adj, g


@pytest.mark.parametrize("threshold", [True, False])
def test_trace_matches_literal_oracle(grid20, threshold):
    X, low, adj, g = grid20
    img = build_image(g, X, low, INLINE)
    rng = np.random.default_rng(1)
    filtered = 0
    for _ in range(25):
        q = rng.integers(0, 60, size=2).astype(np.float32)
        ep = int(rng.integers(20))
        for ef in (1, 3, 6):
            trace = []
            out = phnsw_search_layer(q, q[:1], [ep], ef, 0, 2, g, img, lowdim_threshold=threshold, trace=trace)
            ref, ref_trace = oracle_phnsw_layer(X, low, adj, q, q[:1], [ep], ef, 2, threshold)
            assert out == ref
            assert trace == ref_trace
            filtered += sum(len(t["C_pca"]) < len(adj[t["c"]]) for t in trace)
    assert filtered > 0


# -- baseline and equivalence --------------------------------------------------


def test_single_node_layer_search():
    X = np.array([[1.0, 2.0]], np.float32)
    g = hnsw_build(X)
    img = build_image(g, X, X, INLINE)
    assert hnsw_search_layer([0, 0], [0], 5, 0, g, img) == [(5.0, 0)]
    c = SearchCounters()
    assert phnsw_search_layer([0, 0], [0, 0], [0], 5, 0, 1, g, img, counters=c) == [(5.0, 0)]
    assert c.lowdim_evals == 0 and c.highdim_evals == 1


def test_complete_graph_returns_brute_force(rng):
    X = rng.normal(size=(10, 2)).astype(np.float32)
    g = HnswGraph.from_lists([{v: [u for u in range(10) if u != v] for v in range(10)}], 0, M=5)
    img = build_image(g, X, X, SEP)
    q = np.array([0.1, -0.2], np.float32)
    ids, d = brute_force_knn(X, q, 10)
    assert [i for _, i in hnsw_search_layer(q, [0], 10, 0, g, img)] == ids.tolist()
    out = phnsw_search_layer(q, q, [0], 10, 0, 9, g, img, lowdim_threshold=False)
    assert [i for _, i in out] == ids.tolist()


@pytest.fixture(scope="module")
def sixteen():
    rng = np.random.default_rng(16)
    X = rng.normal(size=(1_000, 16)).astype(np.float32)
    Q = rng.normal(size=(100, 16)).astype(np.float32)
    g = hnsw_build(X, BuildParams(M=8, ef_construction=40, rng_seed=16))
    return X, Q, g


def test_identity_projection_equivalence(sixteen):
    X, Q, g = sixteen
    std = build_image(g, X, None, STD)
    inl = build_image(g, X, X, INLINE)
    params = SearchParams(ef_base=10, k_config=LayerKConfig.degree_bound(g), lowdim_threshold=False)
    for q in Q:
        a = hnsw_search(q, g, std, params)
        b = phnsw_search(q, g, inl, PcaModel.identity(16), params)
        assert a.ids.tolist() == b.ids.tolist()
        np.testing.assert_array_equal(a.distances, b.distances)
        # Same evaluations; order within an expansion differs (id vs low-dim order).
        assert sorted(a.counters.visit_order) == sorted(b.counters.visit_order)
        assert a.counters.highdim_evals == b.counters.highdim_evals


def test_layer_equivalence_from_distance_entries(sixteen):
    X, Q, g = sixteen
    img = build_image(g, X, X, INLINE)
    ep = [(float(((X[5] - Q[0]) ** 2).sum()), 5)]
    a = hnsw_search_layer(Q[0], ep, 12, 0, g, img)
    b = phnsw_search_layer(Q[0], Q[0], ep, 12, 0, g.M0, g, img, lowdim_threshold=False)
    assert a == b


# -- invariants on a built index ----------------------------------------------


def test_counters_and_bounds(small):
    index = small["index"]
    img = index.get_image("inline")
    d = index.base_.shape[1]
    for q in small["queries"]:
        r = phnsw_search(q, index.graph_, img, index.pca_, index.search_params())
        c = r.counters
        assert c.traffic.highdim_bytes == c.highdim_evals * d * 4
        assert c.traffic.highdim_transactions == c.highdim_evals
        assert c.bound_violations == 0
        kcfg = index.search_params().k_config
        assert all(v <= kcfg.for_layer(l) for l, v in c.max_highdim_per_expansion.items())
        assert c.traffic.bytes >= c.traffic.transactions
        assert list(r.distances) == sorted(r.distances)
        assert len(set(r.ids.tolist())) == len(r.ids) == 10


def test_layer_search_never_revisits(small):
    index = small["index"]
    img, g = index.get_image("sep"), index.graph_
    q = small["queries"][0]
    q_low = index.pca_.components @ (q - index.pca_.mean)
    for ef in (1, 10, 40):
        c = SearchCounters()
        out = phnsw_search_layer(q, q_low, [g.entry_point], ef, 0, 16, g, img, counters=c)
        assert len(c.visit_order) == len(set(c.visit_order))
        assert len(out) <= ef and [d for d, _ in out] == sorted(d for d, _ in out)
        c = SearchCounters()
        hnsw_search_layer(q, [g.entry_point], ef, 0, g, img, counters=c)
        assert len(c.visit_order) == len(set(c.visit_order))
        assert c.expansions <= g.n


def test_iteration_cap_is_wired(small, monkeypatch):
    index = small["index"]
    monkeypatch.setattr(search_mod, "_iteration_cap", lambda entries, n: 0)
    with pytest.raises(IterationCapExceeded):
        index.search(small["queries"][0], variant="phnsw_inline")
    with pytest.raises(IterationCapExceeded):
        index.search(small["queries"][0], variant="hnsw_std")


def test_exact_match_is_found():
    # 20 clusters of 10 points: center spacing ~35, noise radius ~5.
    rng = np.random.default_rng(2)
    centers = rng.normal(size=(20, 24)) * 5.0
    X = (centers[np.arange(200) % 20] + rng.normal(size=(200, 24))).astype(np.float32)
    index = PHNSWIndex(n_components=6, M=8, ef_construction=40, n_neighbors=1).fit(X)
    for i in range(200):
        for variant in ("phnsw_inline", "hnsw_std"):
            r = index.search(X[i], variant=variant, params=index.search_params(K=1))
            assert r.ids.tolist() == [i] and r.distances[0] == 0.0


def test_entry_override(small):
    index = small["index"]
    g = index.graph_
    low_node = int(np.flatnonzero(g.levels == 0)[0])
    r = index.search(small["queries"][1], params=index.search_params(entry_override=low_node))
    assert r.counters.visit_order[0] == low_node
    with pytest.raises(ValueError):
        index.search(small["queries"][1], params=index.search_params(entry_override=g.n))


def test_concurrent_queries_match_sequential(small):
    index = small["index"]
    Q = small["queries"]
    seq = [index.search(q).ids.tolist() for q in Q]
    with ThreadPoolExecutor(4) as pool:
        par = list(pool.map(lambda q: index.search(q).ids.tolist(), Q))
    assert par == seq


def test_default_k_per_layer():
    kcfg = LayerKConfig()
    assert [kcfg.for_layer(l) for l in range(5, -1, -1)] == [3, 3, 3, 3, 8, 16]
    assert LayerKConfig(overrides={2: 5}).for_layer(2) == 5
    p = SearchParams()
    assert (p.ef_upper, p.ef_base, p.K) == (1, 10, 10)


def test_search_errors(small):
    index = small["index"]
    g, pca = index.graph_, index.pca_
    q = small["queries"][0]
    with pytest.raises(ValueError):
        phnsw_search(q, g, index.get_image("std"), pca)
    with pytest.raises(DimensionMismatchError):
        phnsw_search(q[:5], g, index.get_image("inline"), pca)
    with pytest.raises(DimensionMismatchError):
        phnsw_search_layer(q, q, [g.entry_point], 5, 0, 4, g, index.get_image("inline"))
    with pytest.raises(ValueError):
        phnsw_search(q, g, index.get_image("inline"), pca, SearchParams(k_config=LayerKConfig(k0=17)))
    with pytest.raises(ValueError):
        hnsw_search_layer(q, [], 5, 0, g, index.get_image("std"))
    absent = int(np.flatnonzero(g.levels == 0)[0])
    with pytest.raises(ValueError):
        hnsw_search_layer(q, [absent], 5, 1, g, index.get_image("std"))
    with pytest.raises(ValueError):
        SearchParams(K=11, ef_base=10)
    with pytest.raises(ValueError):
        LayerKConfig(k0=0)
