"""Baseline HNSW search and PCA-filtered (pHNSW) search over a storage image.

All reads of neighbor lists and vectors go through the image so that every
query's memory traffic is metered.  Each query owns its own
:class:`SearchCounters`; nothing mutable is shared between queries, so
concurrent searches over one graph/image/model are safe and their counters are
only merged at reporting time.

Ordering conventions shared by both searches:

* heaps are keyed by ``(distance, id)``, so the lower id wins a distance tie;
* neighbors of an expanded node are considered in ascending distance order
  (low-dim distance for pHNSW, high-dim for the baseline);
* the visited set is fresh for every layer search.
"""

from __future__ import annotations

import heapq
import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from .core import DimensionMismatchError, as_vector, sqdist_rows
from .graph import HnswGraph
from .pca import PcaModel, pca_project
from .storage import LayoutMode, StorageImage, TrafficCounters

INF = math.inf


@dataclass(frozen=True)
class LayerKConfig:
    """Filter size per layer: ``k0`` at layer 0, ``k1`` at layer 1, ``k_rest`` above.

    ``overrides`` maps a layer to a k that takes precedence over the defaults.
    """

    k0: int = 16
    k1: int = 8
    k_rest: int = 3
    overrides: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for k in (self.k0, self.k1, self.k_rest, *self.overrides.values()):
            if k < 1:
                raise ValueError(f"filter size k must be >= 1, got {k}")

    def for_layer(self, layer: int) -> int:
        if layer in self.overrides:
            return self.overrides[layer]
        if layer == 0:
            return self.k0
        return self.k1 if layer == 1 else self.k_rest

    def check(self, graph: HnswGraph) -> None:
        for layer in range(graph.num_layers):
            k = self.for_layer(layer)
            if k > graph.degree_bound(layer):
                raise ValueError(
                    f"k={k} at layer {layer} exceeds the degree bound {graph.degree_bound(layer)}"
                )

    @classmethod
    def degree_bound(cls, graph: HnswGraph) -> "LayerKConfig":
        """k equal to each layer's degree bound: the filter never drops a neighbor."""
        return cls(k0=graph.M0, k1=graph.M, k_rest=graph.M)


@dataclass(frozen=True)
class SearchParams:
    ef_upper: int = 1
    ef_base: int = 10
    K: int = 10
    k_config: LayerKConfig = field(default_factory=LayerKConfig)
    entry_override: Optional[int] = None
    # False replaces the carried-over low-dim threshold test with "always admit".
    lowdim_threshold: bool = True

    def __post_init__(self):
        if self.ef_upper < 1 or self.ef_base < 1:
            raise ValueError("ef_upper and ef_base must be >= 1")
        if not 1 <= self.K <= self.ef_base:
            raise ValueError(f"K must be in [1, ef_base={self.ef_base}], got {self.K}")


@dataclass
class SearchCounters:
    traffic: TrafficCounters = field(default_factory=TrafficCounters)
    lowdim_evals: int = 0
    highdim_evals: int = 0
    expansions: int = 0
    # Largest number of high-dim evaluations seen in one expansion, per layer.
    max_highdim_per_expansion: Dict[int, int] = field(default_factory=dict)
    # pHNSW expansions that evaluated more than the layer's k (must stay 0).
    bound_violations: int = 0
    visit_order: List[int] = field(default_factory=list)

    def _note_expansion(self, layer: int, evals: int) -> None:
        self.expansions += 1
        if evals > self.max_highdim_per_expansion.get(layer, -1):
            self.max_highdim_per_expansion[layer] = evals


@dataclass
class SearchResult:
    ids: np.ndarray
    distances: np.ndarray
    counters: SearchCounters

    def pairs(self) -> List[Tuple[int, float]]:
        return list(zip(self.ids.tolist(), self.distances.tolist()))


@lru_cache(maxsize=None)
def _earlier(n: int) -> np.ndarray:
    return np.tri(n, n, -1, dtype=bool)


def rank_topk(values, k: int, ids=None) -> np.ndarray:
    """Ids of the ``k`` smallest values, in rank order, via a comparison matrix.

    The rank of element ``i`` is the number of strictly smaller values plus the
    number of equal values at a lower index.  Ranks form a permutation, and the
    elements of rank ``0..k-1`` are returned.  ``ids`` defaults to positions.
    """
    v = np.asarray(values)
    n = v.shape[0]
    if ids is None:
        ids = np.arange(n)
    else:
        ids = np.asarray(ids)
        if ids.shape[0] != n:
            raise ValueError("ids and values must have the same length")
    if not 0 <= k <= n:
        raise ValueError(f"k={k} must be between 0 and the number of values ({n})")
    if np.isnan(v).any():
        raise ValueError("rank_topk: NaN values cannot be ranked")
    col = v[:, None]
    row = v[None, :]
    # "j beats i" is disjoint between the strict-less and earlier-equal cases.
    beats = (row < col) | ((row == col) & _earlier(n))
    rank = np.count_nonzero(beats, axis=1)
    out = np.empty(k, dtype=ids.dtype)
    sel = rank < k
    out[rank[sel]] = ids[sel]
    return out


def _check_entries(eps, graph: HnswGraph, layer: int, image: StorageImage, q, counters):
    entries = []
    for e in eps:
        if isinstance(e, tuple):
            d, node = float(e[0]), int(e[1])
        else:
            node = int(e)
            d = None
        if not graph.has_node(node, layer):
            raise ValueError(f"entry point {node} is not present at layer {layer}")
        if d is None:
            x = image.fetch_highdim(node, counters.traffic)
            counters.highdim_evals += 1
            counters.visit_order.append(node)
            d = float(sqdist_rows(x[None, :], q)[0])
        entries.append((d, node))
    if not entries:
        raise ValueError("entry point set must not be empty")
    return entries


class IterationCapExceeded(RuntimeError):
    """A layer search ran more outer iterations than nodes it could admit."""


def _iteration_cap(entries, n):
    # Every outer iteration pops C, and a node enters C at most once per layer.
    return len(entries) + n


def _init_lists(entries, ef, n):
    visited = bytearray(n)
    cand = []
    found = []
    for d, e in entries:
        if visited[e]:
            continue
        visited[e] = 1
        cand.append((d, e))
        found.append((-d, -e))
    heapq.heapify(cand)
    heapq.heapify(found)
    while len(found) > ef:
        heapq.heappop(found)
    return visited, cand, found


def _hnsw_layer(q, entries, ef, layer, image, counters, trace):
    visited, cand, found = _init_lists(entries, ef, image.n)
    traffic = counters.traffic
    budget = _iteration_cap(entries, image.n)
    while cand:
        budget -= 1
        if budget < 0:
            raise IterationCapExceeded(f"layer {layer} search exceeded its iteration cap")
        d_c, c = heapq.heappop(cand)
        if d_c > -found[0][0]:
            break
        ids, _ = image.fetch_neighbor_record(c, layer, traffic)
        scored = []
        for e in ids.tolist():
            if visited[e]:
                continue
            visited[e] = 1
            x = image.fetch_highdim(e, traffic)
            scored.append((float(sqdist_rows(x[None, :], q)[0]), e))
            counters.visit_order.append(e)
        counters.highdim_evals += len(scored)
        counters._note_expansion(layer, len(scored))
        scored.sort()
        for d_e, e in scored:
            if len(found) < ef or d_e < -found[0][0]:
                heapq.heappush(cand, (d_e, e))
                heapq.heappush(found, (-d_e, -e))
                if len(found) > ef:
                    heapq.heappop(found)
        if trace is not None:
            trace.append(_snapshot(c, None, [e for _, e in scored], None, cand, found))
    return sorted((-d, -i) for d, i in found)


def _phnsw_layer(q, q_pca, entries, ef, layer, k, image, counters, lowdim_threshold, trace):
    inline = image.mode == LayoutMode.INLINE_LOWDIM
    visited, cand, found = _init_lists(entries, ef, image.n)
    traffic = counters.traffic
    c_pca: List[Tuple[float, int]] = []
    budget = _iteration_cap(entries, image.n)
    while cand:
        budget -= 1
        if budget < 0:
            raise IterationCapExceeded(f"layer {layer} search exceeded its iteration cap")
        d_c, c = heapq.heappop(cand)
        d_f = -found[0][0]
        f_pca = max(c_pca)[0] if c_pca else INF
        if d_c > d_f:
            break

        # Step 2: low-dim distances for every neighbor, threshold, top-k trim.
        ids, low = image.fetch_neighbor_record(c, layer, traffic)
        if not inline:
            low = image.fetch_lowdim_many(ids, traffic)
        counters.lowdim_evals += ids.shape[0]
        kept: List[Tuple[float, int]] = []
        if ids.shape[0]:
            dl = sqdist_rows(low, q_pca)
            if lowdim_threshold and f_pca != INF:
                mask = dl < f_pca
                ids, dl = ids[mask], dl[mask]
            if ids.shape[0]:
                top = rank_topk(dl, min(k, ids.shape[0]))
                kept = list(zip(dl[top].tolist(), ids[top].tolist()))

        # Step 3: high-dim evaluation of the survivors, nearest low-dim first.
        admitted: List[Tuple[float, int]] = []
        evals = 0
        for d_low, m in kept:
            if visited[m]:
                continue
            visited[m] = 1
            x = image.fetch_highdim(m, traffic)
            d_m = float(sqdist_rows(x[None, :], q)[0])
            evals += 1
            counters.visit_order.append(m)
            if len(found) < ef or d_m < -found[0][0]:
                admitted.append((d_low, m))
                heapq.heappush(cand, (d_m, m))
                heapq.heappush(found, (-d_m, -m))
                if len(found) > ef:
                    heapq.heappop(found)
        counters.highdim_evals += evals
        counters._note_expansion(layer, evals)
        if evals > k:
            counters.bound_violations += 1
        c_pca = admitted
        if trace is not None:
            trace.append(_snapshot(c, f_pca, [m for _, m in kept], [m for _, m in admitted], cand, found))
    return sorted((-d, -i) for d, i in found)


def _snapshot(c, f_pca, kept, admitted, cand, found):
    return {
        "c": c,
        "f_pca": f_pca,
        "C_pca": kept,
        "admitted": admitted,
        "C": sorted(e for _, e in cand),
        "F": sorted(-i for _, i in found),
    }


def _check_query(q, image: StorageImage) -> np.ndarray:
    q = as_vector(q, name="q")
    if q.shape[0] != image.d_high:
        raise DimensionMismatchError(f"query has dim {q.shape[0]}, image stores dim {image.d_high}")
    return q


def _require_lowdim(image: StorageImage) -> None:
    if image.mode == LayoutMode.HIGH_DIM_ONLY:
        raise ValueError("pHNSW search needs a SeparateLowDim or InlineLowDim image")


def hnsw_search_layer(
    q, eps: Iterable, ef: int, layer: int, graph: HnswGraph, image: StorageImage,
    *, counters: Optional[SearchCounters] = None, trace: Optional[list] = None,
) -> List[Tuple[float, int]]:
    """Classic best-first layer search in the high-dimensional space.

    ``eps`` holds node ids or ``(distance, id)`` pairs.  Returns the result set
    as ``(distance, id)`` pairs, ascending.
    """
    q = _check_query(q, image)
    counters = counters if counters is not None else SearchCounters()
    entries = _check_entries(eps, graph, layer, image, q, counters)
    return _hnsw_layer(q, entries, ef, layer, image, counters, trace)


def phnsw_search_layer(
    q, q_pca, eps: Iterable, ef: int, layer: int, k: int, graph: HnswGraph, image: StorageImage,
    *, counters: Optional[SearchCounters] = None, lowdim_threshold: bool = True,
    trace: Optional[list] = None,
) -> List[Tuple[float, int]]:
    """One layer of PCA-filtered search.

    Each expansion scores all neighbors in the low-dim space, keeps those closer
    than the furthest low-dim survivor admitted by the previous expansion, trims
    them to the ``k`` nearest and evaluates only those in the high-dim space.
    At most ``k`` high-dim distances are computed per expansion.
    """
    _require_lowdim(image)
    q = _check_query(q, image)
    q_pca = as_vector(q_pca, name="q_pca")
    if q_pca.shape[0] != image.d_low:
        raise DimensionMismatchError(f"q_pca has dim {q_pca.shape[0]}, image stores dim {image.d_low}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    counters = counters if counters is not None else SearchCounters()
    entries = _check_entries(eps, graph, layer, image, q, counters)
    return _phnsw_layer(q, q_pca, entries, ef, layer, k, image, counters, lowdim_threshold, trace)


def _descend(q, graph, image, params, layer_search, counters):
    ep = graph.entry_point if params.entry_override is None else int(params.entry_override)
    if not 0 <= ep < graph.n:
        raise ValueError(f"entry point {ep} out of range [0, {graph.n})")
    start = int(graph.levels[ep])
    entries = _check_entries([ep], graph, start, image, q, counters)
    for layer in range(start, -1, -1):
        ef = params.ef_base if layer == 0 else params.ef_upper
        entries = layer_search(entries, ef, layer)
    top = entries[: params.K]
    return SearchResult(
        ids=np.array([i for _, i in top], dtype=np.int64),
        distances=np.array([d for d, _ in top], dtype=np.float32),
        counters=counters,
    )


def hnsw_search(q, graph: HnswGraph, image: StorageImage, params: SearchParams = SearchParams()) -> SearchResult:
    """Top-down baseline search: ``ef_upper`` above layer 0, ``ef_base`` at layer 0."""
    q = _check_query(q, image)
    if image.n != graph.n:
        raise ValueError("image and graph disagree on the number of nodes")
    counters = SearchCounters()
    return _descend(
        q, graph, image, params,
        lambda entries, ef, layer: _hnsw_layer(q, entries, ef, layer, image, counters, None),
        counters,
    )


def phnsw_search(
    q, graph: HnswGraph, image: StorageImage, pca: PcaModel, params: SearchParams = SearchParams()
) -> SearchResult:
    """Top-down pHNSW search with per-layer filter sizes from ``params.k_config``."""
    _require_lowdim(image)
    q = _check_query(q, image)
    if image.n != graph.n:
        raise ValueError("image and graph disagree on the number of nodes")
    if pca.d_high != image.d_high or pca.d_low != image.d_low:
        raise DimensionMismatchError(
            f"PCA model maps {pca.d_high}->{pca.d_low} but the image stores {image.d_high}/{image.d_low}"
        )
    params.k_config.check(graph)
    q_pca = pca_project(pca, q)
    counters = SearchCounters()
    kcfg = params.k_config
    return _descend(
        q, graph, image, params,
        lambda entries, ef, layer: _phnsw_layer(
            q, q_pca, entries, ef, layer, kcfg.for_layer(layer), image, counters,
            params.lowdim_threshold, None,
        ),
        counters,
    )
