"""scikit-learn style index: ``fit`` builds everything, ``kneighbors`` searches."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import as_dataset, frozen
from .graph import BuildParams, HnswGraph, hnsw_build
from .pca import PcaModel, pca_fit, pca_project_all
from .search import LayerKConfig, SearchParams, SearchResult, hnsw_search, phnsw_search
from .storage import LayoutMode, StorageImage, build_image

VARIANTS = {
    "hnsw_std": LayoutMode.HIGH_DIM_ONLY,
    "phnsw_sep": LayoutMode.SEPARATE_LOWDIM,
    "phnsw_inline": LayoutMode.INLINE_LOWDIM,
}
LAYOUT_TO_VARIANT = {mode: name for name, mode in VARIANTS.items()}


def check_variant(variant: str) -> LayoutMode:
    try:
        return VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}") from None


class PHNSWIndex(BaseEstimator):
    """Approximate k-NN index: HNSW graph plus PCA filtering space.

    Parameters
    ----------
    n_components : int, default=15
        Dimension of the low-dimensional filtering space.
    M : int, default=16
        Degree bound above layer 0 (layer 0 allows ``2 * M``).
    ef_construction : int, default=200
    level_scale : float or None, default=None
        Level multiplier; ``None`` means ``1 / ln(M)``.
    variant : {"phnsw_inline", "phnsw_sep", "hnsw_std"}, default="phnsw_inline"
        Search algorithm and storage layout used by :meth:`kneighbors`.
    ef : int, default=10
        Beam width at layer 0.
    ef_upper : int, default=1
        Beam width above layer 0.
    k0, k1, k_rest : int, default=16, 8, 3
        Filter sizes at layer 0, layer 1 and the layers above.
    n_neighbors : int, default=10
    projection : {"pca", "identity"}, default="pca"
        ``"identity"`` skips PCA and filters in the original space; the
        filtering dimension then equals the input dimension.
    random_state : int, default=0
        Seed for level sampling; the only source of randomness.

    Attributes
    ----------
    pca_ : PcaModel
    graph_ : HnswGraph
    lowdim_ : ndarray of shape (n_samples, d_low)
    n_features_in_ : int

    Notes
    -----
    Returned distances are squared Euclidean distances.
    """

    def __init__(
        self,
        n_components: int = 15,
        M: int = 16,
        ef_construction: int = 200,
        level_scale: Optional[float] = None,
        variant: str = "phnsw_inline",
        ef: int = 10,
        ef_upper: int = 1,
        k0: int = 16,
        k1: int = 8,
        k_rest: int = 3,
        n_neighbors: int = 10,
        projection: str = "pca",
        random_state: int = 0,
    ):
        self.n_components = n_components
        self.M = M
        self.ef_construction = ef_construction
        self.level_scale = level_scale
        self.variant = variant
        self.ef = ef
        self.ef_upper = ef_upper
        self.k0 = k0
        self.k1 = k1
        self.k_rest = k_rest
        self.n_neighbors = n_neighbors
        self.projection = projection
        self.random_state = random_state

    def fit(self, X, y=None):
        X = as_dataset(X)
        check_variant(self.variant)
        if self.projection == "identity":
            pca = PcaModel.identity(X.shape[1])
        elif self.projection == "pca":
            pca = pca_fit(X, self.n_components)
        else:
            raise ValueError(f"projection must be 'pca' or 'identity', got {self.projection!r}")
        graph = hnsw_build(
            X,
            BuildParams(
                M=self.M,
                ef_construction=self.ef_construction,
                level_scale=self.level_scale,
                rng_seed=self.random_state,
            ),
        )
        return self._set_fitted(X, pca, graph)

    @classmethod
    def from_parts(cls, X, pca: PcaModel, graph: HnswGraph, **params) -> "PHNSWIndex":
        """Wrap an already-built graph and PCA model (e.g. loaded from disk)."""
        X = as_dataset(X)
        params.setdefault("M", graph.M)
        params.setdefault("n_components", pca.d_low)
        params.setdefault("random_state", graph.seed)
        return cls(**params)._set_fitted(X, pca, graph)

    def _set_fitted(self, X, pca: PcaModel, graph: HnswGraph):
        if graph.n != X.shape[0]:
            raise ValueError(f"graph has {graph.n} nodes but X has {X.shape[0]} rows")
        LayerKConfig(k0=self.k0, k1=self.k1, k_rest=self.k_rest).check(graph)
        self.base_ = frozen(X)
        self.pca_ = pca
        self.graph_ = graph
        self.lowdim_ = frozen(pca_project_all(pca, X))
        self.n_features_in_ = X.shape[1]
        self.images_: Dict[LayoutMode, StorageImage] = {}
        return self

    def get_image(self, layout=None) -> StorageImage:
        """Storage image for ``layout`` (default: the one ``variant`` uses), built once."""
        check_is_fitted(self, "graph_")
        mode = check_variant(self.variant) if layout is None else LayoutMode.parse(layout)
        if mode not in self.images_:
            self.images_[mode] = build_image(self.graph_, self.base_, self.lowdim_, mode)
        return self.images_[mode]

    def search_params(self, **overrides) -> SearchParams:
        kcfg = LayerKConfig(k0=self.k0, k1=self.k1, k_rest=self.k_rest)
        kw = dict(ef_upper=self.ef_upper, ef_base=self.ef, K=self.n_neighbors, k_config=kcfg)
        kw.update(overrides)
        return SearchParams(**kw)

    def search(self, q, variant: Optional[str] = None, params: Optional[SearchParams] = None) -> SearchResult:
        """Search one query and return the result with its traffic counters."""
        check_is_fitted(self, "graph_")
        variant = variant or self.variant
        image = self.get_image(check_variant(variant))
        params = params or self.search_params()
        if variant == "hnsw_std":
            return hnsw_search(q, self.graph_, image, params)
        return phnsw_search(q, self.graph_, image, self.pca_, params)

    def kneighbors(self, X, n_neighbors: Optional[int] = None, return_distance: bool = True):
        """Approximate neighbors of each row of ``X``.

        Rows whose search found fewer than ``n_neighbors`` points are padded
        with id ``-1`` and distance ``inf``.
        """
        check_is_fitted(self, "graph_")
        X = as_dataset(X)
        K = self.n_neighbors if n_neighbors is None else n_neighbors
        params = self.search_params(K=K, ef_base=max(self.ef, K))
        ind = np.full((X.shape[0], K), -1, dtype=np.int64)
        dist = np.full((X.shape[0], K), np.inf, dtype=np.float32)
        for row, q in enumerate(X):
            res = self.search(q, params=params)
            ind[row, : res.ids.shape[0]] = res.ids
            dist[row, : res.ids.shape[0]] = res.distances
        return (dist, ind) if return_distance else ind
