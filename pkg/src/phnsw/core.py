"""Dense vector containers and the squared-L2 distance kernel.

Vectors are 1-D ``float32`` arrays and datasets are C-contiguous ``(N, dim)``
``float32`` arrays.  Validation goes through :func:`sklearn.utils.check_array`
so anything array-like is accepted at the boundary.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.utils import check_array

DTYPE = np.float32


class DimensionMismatchError(ValueError):
    """Raised when two vectors (or a vector and a model) disagree on dim."""


def as_vector(v, *, name: str = "vector") -> np.ndarray:
    """Validate ``v`` as a finite, non-empty 1-D float32 vector."""
    arr = check_array(
        np.asarray(v).reshape(1, -1) if np.ndim(v) <= 1 else v,
        dtype=DTYPE,
        ensure_min_features=1,
        input_name=name,
    )
    if arr.shape[0] != 1:
        raise ValueError(f"{name} must be 1-D, got shape {np.shape(v)}")
    return np.ascontiguousarray(arr[0])


def as_dataset(X, *, name: str = "X", min_samples: int = 1) -> np.ndarray:
    """Validate ``X`` as an (N, dim) finite float32 dataset with N >= min_samples."""
    arr = check_array(
        X, dtype=DTYPE, order="C", ensure_min_samples=min_samples, input_name=name
    )
    return arr


def frozen(arr: np.ndarray) -> np.ndarray:
    """Return a read-only view of ``arr``."""
    out = arr.view()
    out.flags.writeable = False
    return out


def sqdist_rows(X: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared L2 distance from every row of ``X`` to ``q``, in float32.

    Every distance in the package goes through this kernel so that the same
    pair of vectors always yields the same bits, whichever caller asks.
    """
    diff = X - q
    return (diff * diff).sum(axis=1, dtype=DTYPE)


def squared_distance(a, b) -> float:
    """Squared Euclidean distance between two vectors of equal dim."""
    a = as_vector(a, name="a")
    b = as_vector(b, name="b")
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatchError(
            f"dimension mismatch: a has dim {a.shape[0]}, b has dim {b.shape[0]}"
        )
    return float(sqdist_rows(a[None, :], b)[0])


def dataset_slice(ds, ids: Sequence[int]) -> np.ndarray:
    """Rows of ``ds`` at ``ids``, in the given order.

    An empty id list is rejected because a dataset must hold at least one
    vector.
    """
    ds = as_dataset(ds, name="ds")
    idx = np.asarray(ids, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ValueError("dataset_slice: empty id list would produce an empty dataset")
    bad = idx[(idx < 0) | (idx >= ds.shape[0])]
    if bad.size:
        raise IndexError(
            f"dataset_slice: id {int(bad[0])} out of range for dataset of size {ds.shape[0]}"
        )
    return np.ascontiguousarray(ds[idx])
