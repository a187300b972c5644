"""PCA model used to map the base set and queries into the filtering space."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import DTYPE, DimensionMismatchError, as_dataset, as_vector, frozen

# Rows per chunk when projecting; keeps the broadcast temporary around 8 MB.
_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Mean vector plus an orthonormal ``(d_low, d_high)`` projection matrix.

    Rows of ``components`` are ordered by non-increasing explained variance.
    ``explained_variance`` is informational and is not serialized.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: Optional[np.ndarray] = None

    def __post_init__(self):
        mean = np.ascontiguousarray(self.mean, dtype=DTYPE).reshape(-1)
        comps = np.ascontiguousarray(self.components, dtype=DTYPE)
        if comps.ndim != 2 or comps.shape[1] != mean.shape[0]:
            raise ValueError(
                f"components shape {comps.shape} incompatible with mean of dim {mean.shape[0]}"
            )
        if not 1 <= comps.shape[0] <= comps.shape[1]:
            raise ValueError(f"need 1 <= d_low <= d_high, got components {comps.shape}")
        object.__setattr__(self, "mean", frozen(mean))
        object.__setattr__(self, "components", frozen(comps))

    @property
    def d_high(self) -> int:
        return self.mean.shape[0]

    @property
    def d_low(self) -> int:
        return self.components.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "PcaModel":
        """Zero mean, identity projection: maps every vector to itself."""
        return cls(np.zeros(dim, DTYPE), np.eye(dim, dtype=DTYPE))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PcaModel):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(
            self.components, other.components
        )

    __hash__ = None


def _normalize_signs(rows: np.ndarray) -> np.ndarray:
    # Largest-|entry| of each row made positive; argmax picks the lowest index on ties.
    pivots = np.argmax(np.abs(rows), axis=1)
    signs = np.where(rows[np.arange(rows.shape[0]), pivots] < 0, -1.0, 1.0)
    return rows * signs[:, None]


def _order_components(eigvals: np.ndarray, eigvecs: np.ndarray):
    """Sort eigenpairs by eigenvalue descending; tied eigenvalues by row, lexicographically descending."""
    rows = _normalize_signs(eigvecs.T)
    order = np.argsort(-eigvals, kind="stable")
    eigvals, rows = eigvals[order], rows[order]
    scale = max(float(np.abs(eigvals).max(initial=0.0)), 1e-300)
    out_vals, out_rows = [], []
    start = 0
    n = eigvals.shape[0]
    while start < n:
        stop = start + 1
        while stop < n and abs(eigvals[stop] - eigvals[start]) <= 1e-9 * scale:
            stop += 1
        group = rows[start:stop]
        # np.lexsort treats the last key as primary, so feed columns reversed.
        lex = np.lexsort(tuple(-group[:, j] for j in range(group.shape[1] - 1, -1, -1)))
        out_vals.extend(eigvals[start:stop])
        out_rows.extend(group[lex])
        start = stop
    return np.asarray(out_vals), np.asarray(out_rows)


def pca_fit(ds, d_low: int) -> PcaModel:
    """Fit a ``d_high -> d_low`` PCA on ``ds`` by covariance eigendecomposition.

    The covariance is accumulated in float64 and the model is stored as float32.
    Component signs follow a fixed convention (largest-magnitude entry
    positive), which makes the fit deterministic.
    """
    X = as_dataset(ds, name="ds", min_samples=2)
    n, d_high = X.shape
    if not 1 <= d_low <= d_high:
        raise ValueError(f"d_low must be in [1, {d_high}], got {d_low}")
    X64 = X.astype(np.float64)
    mean = X64.mean(axis=0)
    centered = X64 - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals, rows = _order_components(eigvals, eigvecs)
    return PcaModel(
        mean=mean.astype(DTYPE),
        components=rows[:d_low].astype(DTYPE),
        explained_variance=frozen(eigvals[:d_low].copy()),
    )


def _project_rows(model: PcaModel, X: np.ndarray) -> np.ndarray:
    # Elementwise product + last-axis reduction, so a row's projection does not
    # depend on how many rows are projected together.
    out = np.empty((X.shape[0], model.d_low), dtype=DTYPE)
    W = model.components[None, :, :]
    for start in range(0, X.shape[0], _CHUNK):
        block = X[start : start + _CHUNK] - model.mean
        out[start : start + _CHUNK] = (block[:, None, :] * W).sum(axis=2, dtype=DTYPE)
    return out


def pca_project(model: PcaModel, v) -> np.ndarray:
    """Project one vector: ``W @ (v - mean)``."""
    v = as_vector(v, name="v")
    if v.shape[0] != model.d_high:
        raise DimensionMismatchError(
            f"vector has dim {v.shape[0]}, model expects {model.d_high}"
        )
    return _project_rows(model, v[None, :])[0]


def pca_project_all(model: PcaModel, ds) -> np.ndarray:
    """Project every row of ``ds``; bitwise equal to row-by-row :func:`pca_project`."""
    X = as_dataset(ds, name="ds")
    if X.shape[1] != model.d_high:
        raise DimensionMismatchError(
            f"dataset has dim {X.shape[1]}, model expects {model.d_high}"
        )
    return _project_rows(model, X)


class PCAProjector(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`pca_fit` / :func:`pca_project_all`.

    Parameters
    ----------
    n_components : int, default=15
        Dimension of the filtering space.

    Attributes
    ----------
    model_ : PcaModel
    mean_ : ndarray of shape (n_features,)
    components_ : ndarray of shape (n_components, n_features)
    explained_variance_ : ndarray of shape (n_components,)
    n_features_in_ : int
    """

    def __init__(self, n_components: int = 15):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = as_dataset(X, min_samples=2)
        self.model_ = pca_fit(X, self.n_components)
        self.mean_ = self.model_.mean
        self.components_ = self.model_.components
        self.explained_variance_ = self.model_.explained_variance
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return pca_project_all(self.model_, X)

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        Z = as_dataset(Z, name="Z")
        return Z @ self.model_.components + self.model_.mean
