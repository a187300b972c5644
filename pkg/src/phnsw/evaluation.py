"""Ground truth, recall, throughput and layout/energy benchmarking.

Energy figures cover modeled DRAM traffic only (bytes x 8 x pJ/bit); compute
and on-chip memory energy are not modeled.
"""

from __future__ import annotations

import csv
import gc
import statistics
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, TextIO, Union

import numpy as np

from .core import DTYPE, as_dataset, as_vector, sqdist_rows
from .estimator import PHNSWIndex, check_variant
from .search import LayerKConfig, SearchParams, SearchResult
from .storage import DDR4_PJ_PER_BIT, HBM_PJ_PER_BIT, TrafficCounters, energy_estimate

CSV_HEADER = [
    "variant", "layer_k0", "layer_k1", "recall_at_10", "qps",
    "transactions", "bytes", "energy_ddr4_pj", "energy_hbm_pj",
]


def make_synthetic(
    n_base: int = 10_000,
    n_queries: int = 100,
    dim: int = 128,
    n_clusters: int = 20,
    decay: float = 0.7,
    seed: int = 0,
):
    """Seeded Gaussian-mixture stand-in for SIFT: ``(base, queries)`` float32 arrays.

    Cluster centers and within-cluster noise share a power-law spectrum
    ``1 / (1 + j) ** decay`` along a random orthonormal basis, so most of the
    variance sits in the leading principal components, as it does for SIFT.
    """
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    scales = 1.0 / (1.0 + np.arange(dim)) ** decay
    centers = rng.standard_normal((n_clusters, dim)) * scales * 3.0

    def draw(m):
        labels = rng.integers(n_clusters, size=m)
        z = centers[labels] + rng.standard_normal((m, dim)) * scales
        return np.ascontiguousarray((z @ basis.T * 10.0).astype(DTYPE))

    return draw(n_base), draw(n_queries)


@dataclass
class GroundTruth:
    ids: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return self.ids.shape[0]


def brute_force_knn(ds, q, K: int):
    """Exact ``K`` nearest rows of ``ds`` to ``q``: ``(ids, squared distances)``, ascending.

    Equal distances are ordered by lower id.
    """
    X = as_dataset(ds, name="ds")
    q = as_vector(q, name="q")
    if not 1 <= K <= X.shape[0]:
        raise ValueError(f"K must be in [1, {X.shape[0]}], got {K}")
    d = sqdist_rows(X, q)
    order = np.lexsort((np.arange(X.shape[0]), d))[:K]
    return order.astype(np.int64), d[order]


def ground_truth(ds, queries, K: int) -> GroundTruth:
    Q = as_dataset(queries, name="queries")
    pairs = [brute_force_knn(ds, q, K) for q in Q]
    return GroundTruth(
        ids=np.stack([p[0] for p in pairs]),
        distances=np.stack([p[1] for p in pairs]),
    )


def recall_at_k(result, truth, K: int = 10) -> float:
    """``|top-K(result) & top-K(truth)| / K`` over id sequences."""
    result = np.asarray(result.ids if isinstance(result, SearchResult) else result).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if result.shape[0] < K or truth.shape[0] < K:
        raise ValueError(
            f"recall@{K} needs at least {K} ids on both sides, got {result.shape[0]} and {truth.shape[0]}"
        )
    return len(set(result[:K].tolist()) & set(truth[:K].tolist())) / K


@dataclass
class BenchReport:
    variant: str
    K: int
    n_queries: int
    recall_at_k: float
    qps: float
    traffic: TrafficCounters
    lowdim_evals: int
    highdim_evals: int
    expansions: int
    max_highdim_per_expansion: Dict[int, int]
    bound_violations: int
    params: dict = field(default_factory=dict)
    pass_seconds: List[float] = field(default_factory=list)
    per_query_recall: List[float] = field(default_factory=list)
    results: List[SearchResult] = field(default_factory=list, repr=False)

    @property
    def transactions_per_query(self) -> float:
        return self.traffic.transactions / self.n_queries

    @property
    def bytes_per_query(self) -> float:
        return self.traffic.bytes / self.n_queries

    def energy_per_query(self, pj_per_bit: float) -> float:
        return energy_estimate(self.traffic, pj_per_bit) / self.n_queries

    @property
    def energy_ddr4_pj(self) -> float:
        return self.energy_per_query(DDR4_PJ_PER_BIT)

    @property
    def energy_hbm_pj(self) -> float:
        return self.energy_per_query(HBM_PJ_PER_BIT)

    def csv_row(self) -> list:
        kcfg = self.params.get("k_config", {})
        return [
            self.variant, kcfg.get("k0", ""), kcfg.get("k1", ""),
            f"{self.recall_at_k:.6f}", f"{self.qps:.3f}",
            f"{self.transactions_per_query:.3f}", f"{self.bytes_per_query:.3f}",
            f"{self.energy_ddr4_pj:.3f}", f"{self.energy_hbm_pj:.3f}",
        ]


def _params_echo(params: SearchParams) -> dict:
    k = params.k_config
    return {
        "ef_upper": params.ef_upper, "ef_base": params.ef_base, "K": params.K,
        "k_config": {"k0": k.k0, "k1": k.k1, "k_rest": k.k_rest, "overrides": dict(k.overrides)},
        "entry_override": params.entry_override, "lowdim_threshold": params.lowdim_threshold,
    }


def _one_pass(index: PHNSWIndex, Q, variant, params):
    return [index.search(q, variant=variant, params=params) for q in Q]


def _timed_pass(index, Q, variant, params) -> float:
    # Collector pauses are the dominant timing noise; timeit disables it too.
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        t0 = time.perf_counter()
        _one_pass(index, Q, variant, params)
        return time.perf_counter() - t0
    finally:
        if was_enabled:
            gc.enable()


def _report(index, Q, variant, params, truth, results, pass_seconds) -> BenchReport:
    K = params.K
    traffic = TrafficCounters()
    maxes: Dict[int, int] = {}
    for r in results:
        traffic.merge(r.counters.traffic)
        for layer, v in r.counters.max_highdim_per_expansion.items():
            maxes[layer] = max(maxes.get(layer, 0), v)
    if truth.ids.shape[1] < K:
        raise ValueError(f"ground truth holds {truth.ids.shape[1]} neighbors per query, need {K}")
    # Short result lists (tiny graphs) count their missing slots as misses.
    recalls = [
        len(set(r.ids[:K].tolist()) & set(t[:K].tolist())) / K
        for r, t in zip(results, truth.ids)
    ]
    qps = len(Q) / statistics.median(pass_seconds) if pass_seconds else float("nan")
    return BenchReport(
        variant=variant, K=K, n_queries=len(Q),
        recall_at_k=float(np.mean(recalls)), qps=qps, traffic=traffic,
        lowdim_evals=sum(r.counters.lowdim_evals for r in results),
        highdim_evals=sum(r.counters.highdim_evals for r in results),
        expansions=sum(r.counters.expansions for r in results),
        max_highdim_per_expansion=maxes,
        bound_violations=sum(r.counters.bound_violations for r in results),
        params=_params_echo(params), pass_seconds=list(pass_seconds),
        per_query_recall=recalls, results=results,
    )


def run_bench(
    index: PHNSWIndex,
    queries,
    variant: str,
    params: Optional[SearchParams] = None,
    truth: Optional[GroundTruth] = None,
    *,
    warmup: int = 3,
    repeats: int = 5,
) -> BenchReport:
    """Recall, single-threaded QPS and DRAM traffic of one variant over ``queries``.

    QPS is ``n_queries / median(pass time)`` over ``repeats`` timed passes
    after ``warmup`` untimed ones; ``repeats=0`` skips timing (qps is NaN).
    """
    check_variant(variant)
    Q = as_dataset(queries, name="queries")
    params = params or index.search_params()
    if truth is None:
        truth = ground_truth(index.base_, Q, params.K)
    results = _one_pass(index, Q, variant, params)
    for _ in range(max(warmup - 1, 0) if repeats else 0):
        _one_pass(index, Q, variant, params)
    seconds = [_timed_pass(index, Q, variant, params) for _ in range(repeats)]
    return _report(index, Q, variant, params, truth, results, seconds)


@dataclass
class SweepPoint:
    k: int
    recall: float
    qps: float
    report: BenchReport


def sweep_k(
    index: PHNSWIndex,
    queries,
    layer: int,
    k_values: Sequence[int],
    fixed_k: Optional[int] = None,
    truth: Optional[GroundTruth] = None,
    *,
    variant: str = "phnsw_inline",
    warmup: int = 3,
    repeats: int = 5,
) -> List[SweepPoint]:
    """Vary the filter size of layer 0 or layer 1, holding the other fixed.

    Timed passes are interleaved across k values (round-robin) so slow drift
    in machine speed does not favor one end of the sweep.
    """
    if layer not in (0, 1):
        raise ValueError(f"layer must be 0 or 1, got {layer}")
    Q = as_dataset(queries, name="queries")
    base = index.search_params()
    configs = []
    for k in k_values:
        if layer == 0:
            kcfg = LayerKConfig(k0=k, k1=index.k1 if fixed_k is None else fixed_k, k_rest=index.k_rest)
        else:
            kcfg = LayerKConfig(k0=index.k0 if fixed_k is None else fixed_k, k1=k, k_rest=index.k_rest)
        kcfg.check(index.graph_)
        configs.append(SearchParams(
            ef_upper=base.ef_upper, ef_base=base.ef_base, K=base.K, k_config=kcfg,
            entry_override=base.entry_override, lowdim_threshold=base.lowdim_threshold,
        ))
    if truth is None:
        truth = ground_truth(index.base_, Q, base.K)
    results = [_one_pass(index, Q, variant, p) for p in configs]
    for _ in range(max(warmup - 1, 0) if repeats else 0):
        for p in configs:
            _one_pass(index, Q, variant, p)
    seconds: List[List[float]] = [[] for _ in configs]
    for _ in range(repeats):
        for i, p in enumerate(configs):
            seconds[i].append(_timed_pass(index, Q, variant, p))
    points = []
    for k, p, res, secs in zip(k_values, configs, results, seconds):
        rep = _report(index, Q, variant, p, truth, res, secs)
        points.append(SweepPoint(k=k, recall=rep.recall_at_k, qps=rep.qps, report=rep))
    return points


def write_csv(reports: Sequence[BenchReport], out: Union[str, TextIO]) -> None:
    """One row per report; transactions, bytes and energies are per-query means."""
    if isinstance(out, str):
        with open(out, "w", newline="") as fh:
            write_csv(reports, fh)
        return
    writer = csv.writer(out)
    writer.writerow(CSV_HEADER)
    for rep in reports:
        writer.writerow(rep.csv_row())
