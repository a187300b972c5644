"""HNSW search with PCA-based low-dimensional candidate filtering.

The public surface mirrors the pipeline: fit a projection
(:func:`pca_fit`), build the graph (:func:`hnsw_build`), lay it out in a
metered storage image (:func:`build_image`) and search it
(:func:`phnsw_search` / :func:`hnsw_search`).  :class:`PHNSWIndex` wraps all
of it behind a scikit-learn estimator.
"""

from .core import DimensionMismatchError, dataset_slice, squared_distance
from .estimator import PHNSWIndex
from .evaluation import (
    BenchReport, GroundTruth, brute_force_knn, ground_truth, make_synthetic,
    recall_at_k, run_bench, sweep_k, write_csv,
)
from .graph import BuildParams, GraphStats, HnswGraph, graph_stats, hnsw_build
from .pca import PCAProjector, PcaModel, pca_fit, pca_project, pca_project_all
from .search import (
    LayerKConfig, SearchParams, SearchResult, hnsw_search, hnsw_search_layer,
    phnsw_search, phnsw_search_layer, rank_topk,
)
from .storage import (
    DDR4_PJ_PER_BIT, HBM_PJ_PER_BIT, LayoutMode, SizeReport, StorageImage,
    TrafficCounters, build_image, energy_estimate, size_report,
)

__version__ = "0.1.0"

__all__ = [
    "BenchReport", "BuildParams", "DDR4_PJ_PER_BIT", "DimensionMismatchError",
    "GraphStats", "GroundTruth", "HBM_PJ_PER_BIT", "HnswGraph", "LayerKConfig",
    "LayoutMode", "PCAProjector", "PHNSWIndex", "PcaModel", "SearchParams",
    "SearchResult", "SizeReport", "StorageImage", "TrafficCounters",
    "brute_force_knn", "build_image", "dataset_slice", "energy_estimate",
    "graph_stats", "ground_truth", "hnsw_build", "hnsw_search",
    "hnsw_search_layer", "make_synthetic", "pca_fit", "pca_project",
    "pca_project_all", "phnsw_search", "phnsw_search_layer", "rank_topk",
    "recall_at_k", "run_bench", "size_report", "squared_distance", "sweep_k",
    "write_csv",
]
