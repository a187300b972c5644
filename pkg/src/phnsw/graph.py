"""Multi-layer HNSW graph: construction and summary statistics.

The graph is built in the high-dimensional space with the classic
insert / search-layer / keep-closest procedure.  Finished neighbor lists are
stored sorted by node id, which makes list order canonical and lets
"lower id first" tie-breaking coincide with list position.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .core import as_dataset, frozen, sqdist_rows

IDS_DTYPE = np.uint32


@dataclass(frozen=True)
class BuildParams:
    M: int = 16
    ef_construction: int = 200
    level_scale: Optional[float] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError(f"M must be >= 2, got {self.M}")
        if self.ef_construction < self.M:
            raise ValueError(
                f"ef_construction ({self.ef_construction}) must be >= M ({self.M})"
            )
        if self.level_scale is not None and not self.level_scale > 0:
            raise ValueError(f"level_scale must be positive, got {self.level_scale}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must fit in an unsigned 64-bit integer")

    @property
    def effective_level_scale(self) -> float:
        return self.level_scale if self.level_scale is not None else 1.0 / math.log(self.M)


class HnswGraph:
    """Immutable layered adjacency structure.

    ``adjacency[layer][node]`` is a sorted ``uint32`` array of neighbor ids, or
    ``None`` when ``node`` does not reach ``layer``.
    """

    def __init__(
        self,
        levels: Sequence[int],
        adjacency: List[List[Optional[np.ndarray]]],
        entry_point: int,
        M: int,
        seed: int = 0,
    ):
        self.levels = frozen(np.asarray(levels, dtype=np.int64))
        self.adjacency = [
            [None if nb is None else frozen(np.sort(np.asarray(nb, dtype=IDS_DTYPE))) for nb in layer]
            for layer in adjacency
        ]
        self.entry_point = int(entry_point)
        self.M = int(M)
        self.seed = int(seed)
        self.validate()

    @property
    def n(self) -> int:
        return self.levels.shape[0]

    @property
    def num_layers(self) -> int:
        return len(self.adjacency)

    @property
    def M0(self) -> int:
        return 2 * self.M

    def degree_bound(self, layer: int) -> int:
        return self.M0 if layer == 0 else self.M

    def has_node(self, node: int, layer: int) -> bool:
        return 0 <= layer < self.num_layers and 0 <= node < self.n and self.levels[node] >= layer

    def neighbors(self, node: int, layer: int) -> np.ndarray:
        if not self.has_node(node, layer):
            raise KeyError(f"node {node} is not present at layer {layer}")
        return self.adjacency[layer][node]

    def nodes_at(self, layer: int) -> np.ndarray:
        return np.flatnonzero(self.levels >= layer)

    def validate(self) -> None:
        n, L = self.n, self.num_layers
        if n < 1 or L < 1:
            raise ValueError("graph must have at least one node and one layer")
        if int(self.levels.max()) != L - 1 or int(self.levels.min()) < 0:
            raise ValueError("node levels inconsistent with layer count")
        if not 0 <= self.entry_point < n or self.levels[self.entry_point] != L - 1:
            raise ValueError(f"entry point {self.entry_point} is not on the top layer")
        for layer, lists in enumerate(self.adjacency):
            if len(lists) != n:
                raise ValueError(f"layer {layer} has {len(lists)} slots, expected {n}")
            bound = self.degree_bound(layer)
            for node, nb in enumerate(lists):
                present = self.levels[node] >= layer
                if present != (nb is not None):
                    raise ValueError(f"node {node} presence at layer {layer} inconsistent")
                if nb is None:
                    continue
                if nb.shape[0] > bound:
                    raise ValueError(f"node {node} has degree {nb.shape[0]} > {bound} at layer {layer}")
                if nb.shape[0] and (int(nb[-1]) >= n or np.any(nb == node)):
                    raise ValueError(f"node {node} has an invalid neighbor at layer {layer}")
                if nb.shape[0] and np.any(self.levels[nb] < layer):
                    raise ValueError(f"node {node} links to a node absent from layer {layer}")

    @classmethod
    def from_lists(
        cls, layers: Sequence[Mapping[int, Sequence[int]]], entry_point: int, M: int, n: Optional[int] = None
    ) -> "HnswGraph":
        """Build a graph from hand-written ``{node: [neighbors]}`` maps, one per layer."""
        if n is None:
            n = 1 + max(node for layer in layers for node in layer)
        levels = np.full(n, -1, dtype=np.int64)
        for layer, nodes in enumerate(layers):
            for node in nodes:
                levels[node] = max(levels[node], layer)
        if np.any(levels < 0):
            raise ValueError("every node must appear at layer 0")
        adjacency = [
            [list(layer.get(node, ())) if levels[node] >= l else None for node in range(n)]
            for l, layer in enumerate(layers)
        ]
        return cls(levels, adjacency, entry_point, M)

    def __eq__(self, other) -> bool:
        if not isinstance(other, HnswGraph):
            return NotImplemented
        if (self.n, self.num_layers, self.M, self.entry_point, self.seed) != (
            other.n, other.num_layers, other.M, other.entry_point, other.seed
        ) or not np.array_equal(self.levels, other.levels):
            return False
        for a, b in zip(self.adjacency, other.adjacency):
            for x, y in zip(a, b):
                if (x is None) != (y is None) or (x is not None and not np.array_equal(x, y)):
                    return False
        return True

    __hash__ = None

    def __repr__(self) -> str:
        return f"HnswGraph(n={self.n}, layers={self.num_layers}, M={self.M}, entry_point={self.entry_point})"


def _search_layer(X, q, entry, ef, links):
    """Best-first beam search used during insertion; returns ``[(dist, id)]`` ascending."""
    visited = {i for _, i in entry}
    candidates = list(entry)
    heapq.heapify(candidates)
    found = [(-d, -i) for d, i in entry]
    heapq.heapify(found)
    while candidates:
        d, c = heapq.heappop(candidates)
        if d > -found[0][0]:
            break
        fresh = [e for e in links[c] if e not in visited]
        if not fresh:
            continue
        visited.update(fresh)
        dists = sqdist_rows(X[fresh], q).tolist()
        for de, e in zip(dists, fresh):
            if len(found) < ef or de < -found[0][0]:
                heapq.heappush(candidates, (de, e))
                heapq.heappush(found, (-de, -e))
                if len(found) > ef:
                    heapq.heappop(found)
    return sorted((-d, -i) for d, i in found)


def _shrink(X, node, links, bound):
    nb = links[node]
    dists = sqdist_rows(X[nb], X[node]).tolist()
    links[node] = [e for _, e in sorted(zip(dists, nb))[:bound]]


def sample_levels(n: int, params: BuildParams) -> np.ndarray:
    """Max level of each of ``n`` nodes: ``floor(-ln(u) * level_scale)``, ``u`` in (0, 1]."""
    rng = np.random.default_rng(params.rng_seed)
    u = 1.0 - rng.random(n)
    return np.floor(-np.log(u) * params.effective_level_scale).astype(np.int64)


def hnsw_build(ds, params: BuildParams = BuildParams()) -> HnswGraph:
    """Insert every row of ``ds`` in id order and return the finished graph.

    Levels are drawn as ``floor(-ln(u) * level_scale)`` from a generator seeded
    with ``params.rng_seed``, so equal inputs give identical graphs.
    """
    X = as_dataset(ds, name="ds")
    n = X.shape[0]
    M, M0, efc = params.M, 2 * params.M, params.ef_construction
    levels = sample_levels(n, params)

    links: List[Dict[int, List[int]]] = []
    entry, top = 0, int(levels[0])
    for _ in range(top + 1):
        links.append({0: []})

    for node in range(1, n):
        q = X[node]
        lvl = int(levels[node])
        while len(links) <= lvl:
            links.append({})
        ep = [(float(sqdist_rows(X[entry][None, :], q)[0]), entry)]
        for layer in range(top, lvl, -1):
            ep = _search_layer(X, q, ep, 1, links[layer])[:1]
        for layer in range(min(top, lvl), -1, -1):
            found = _search_layer(X, q, ep, efc, links[layer])
            chosen = [i for _, i in found[:M]]
            layer_links = links[layer]
            layer_links[node] = chosen
            bound = M0 if layer == 0 else M
            for e in chosen:
                layer_links[e].append(node)
                if len(layer_links[e]) > bound:
                    _shrink(X, e, layer_links, bound)
            ep = found
        for layer in range(top + 1, lvl + 1):
            links[layer][node] = []
        if lvl > top:
            entry, top = node, lvl

    adjacency = [
        [layer_links.get(node) if levels[node] >= l else None for node in range(n)]
        for l, layer_links in enumerate(links)
    ]
    return HnswGraph(levels, adjacency, entry, M, seed=params.rng_seed)


@dataclass
class GraphStats:
    num_layers: int
    layer_counts: List[int] = field(default_factory=list)
    mean_degree: List[float] = field(default_factory=list)
    max_degree: List[int] = field(default_factory=list)

    @property
    def overall_max_degree(self) -> int:
        return max(self.max_degree, default=0)


def graph_stats(g: HnswGraph) -> GraphStats:
    stats = GraphStats(num_layers=g.num_layers)
    for layer in range(g.num_layers):
        degs = [len(g.adjacency[layer][v]) for v in g.nodes_at(layer)]
        stats.layer_counts.append(len(degs))
        stats.mean_degree.append(float(np.mean(degs)) if degs else 0.0)
        stats.max_degree.append(max(degs, default=0))
    return stats
