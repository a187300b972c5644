"""Readers and writers for ANN vector files and the package's binary artifacts.

``.fvecs`` / ``.ivecs`` / ``.bvecs`` files are sequences of records, each a
little-endian int32 dimension followed by that many f32 / i32 / u8 values.
Readers validate the framing of the whole file before returning anything and
report the byte offset of the first bad record.

Artifact formats (all little-endian):

* ``PCAM``: magic, u32 d_high, u32 d_low, mean (d_high f32), components
  (d_low x d_high f32, row-major)
* ``HNSG``: magic, u32 N, u32 L, u32 M, u64 seed, then per node: u8
  max_level and, for each layer 0..max_level, u16 count + count x u32 ids
* ``PHDB``: the storage image buffer, see :mod:`phnsw.storage`
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import DTYPE
from .graph import HnswGraph
from .pca import PcaModel
from .storage import StorageImage

PathLike = Union[str, os.PathLike]

PCA_MAGIC = b"PCAM"
GRAPH_MAGIC = b"HNSG"
_PCA_HEADER = struct.Struct("<4sII")
_GRAPH_HEADER = struct.Struct("<4sIIIQ")

# Rows copied per step when materializing a vector file.
_CHUNK_ROWS = 65536


class FormatError(ValueError):
    """Malformed or truncated input file."""


def _read_vecs(path: PathLike, elem: np.dtype, count: Optional[int]) -> np.ndarray:
    path = Path(path)
    size = path.stat().st_size
    if size == 0:
        raise FormatError(f"{path}: empty file (a dataset needs at least one vector)")
    if size < 4:
        raise FormatError(f"{path}: truncated record header at byte offset 0")
    with open(path, "rb") as fh:
        (dim,) = struct.unpack("<i", fh.read(4))
    if dim <= 0:
        raise FormatError(f"{path}: non-positive dimension {dim} at byte offset 0")
    rec = 4 + dim * elem.itemsize
    n_avail = size // rec
    n_full = n_avail
    # A partial trailing record only matters if it would be part of the result.
    truncated = size % rec != 0
    if count is not None:
        if count < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        n_full = min(n_avail, count)
        truncated = truncated and count > n_avail

    layout = np.dtype([("dim", "<i4"), ("values", elem, (dim,))])
    records = np.memmap(path, dtype=layout, mode="r", shape=(n_full,)) if n_full else None
    out = np.empty((n_full, dim), dtype=DTYPE if elem.kind != "i" else np.int32)
    for start in range(0, n_full, _CHUNK_ROWS):
        block = records[start : start + _CHUNK_ROWS]
        bad = np.flatnonzero(block["dim"] != dim)
        if bad.size:
            i = start + int(bad[0])
            raise FormatError(
                f"{path}: record {i} has dimension {int(block['dim'][bad[0]])}, expected {dim} "
                f"(byte offset {i * rec})"
            )
        out[start : start + block.shape[0]] = block["values"]
    del records
    if truncated:
        raise FormatError(
            f"{path}: truncated record at byte offset {n_full * rec} "
            f"(file is {size} bytes, records are {rec} bytes)"
        )
    return out


def read_fvecs(path: PathLike, count: Optional[int] = None) -> np.ndarray:
    """Read a ``.fvecs`` file as an ``(N, dim)`` float32 array (first ``count`` rows if given)."""
    return _read_vecs(path, np.dtype("<f4"), count)


def read_ivecs(path: PathLike, count: Optional[int] = None) -> np.ndarray:
    """Read a ``.ivecs`` file (e.g. ground-truth id lists) as ``(N, dim)`` int32."""
    return _read_vecs(path, np.dtype("<i4"), count)


def read_bvecs(path: PathLike, count: Optional[int] = None) -> np.ndarray:
    """Read a ``.bvecs`` file, widening the u8 payload to float32."""
    return _read_vecs(path, np.dtype("u1"), count)


def _write_vecs(path: PathLike, X, elem: str) -> None:
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D array, got shape {X.shape}")
    layout = np.dtype([("dim", "<i4"), ("values", elem, (X.shape[1],))])
    rec = np.empty(X.shape[0], dtype=layout)
    rec["dim"] = X.shape[1]
    rec["values"] = X
    rec.tofile(path)


def write_fvecs(path: PathLike, X) -> None:
    _write_vecs(path, np.asarray(X, dtype=np.float32), "<f4")


def write_ivecs(path: PathLike, X) -> None:
    _write_vecs(path, np.asarray(X, dtype=np.int32), "<i4")


def write_bvecs(path: PathLike, X) -> None:
    X = np.asarray(X)
    if X.size and (X.min() < 0 or X.max() > 255 or not np.all(X == np.round(X))):
        raise ValueError("bvecs values must be integers in [0, 255]")
    _write_vecs(path, X.astype(np.uint8), "u1")


def read_vectors(path: PathLike, count: Optional[int] = None) -> np.ndarray:
    """Dispatch on extension: ``.fvecs`` or ``.bvecs``."""
    suffix = Path(path).suffix.lower()
    if suffix == ".fvecs":
        return read_fvecs(path, count)
    if suffix == ".bvecs":
        return read_bvecs(path, count)
    raise ValueError(f"{path}: unsupported vector file extension {suffix!r}")


# -- artifacts ---------------------------------------------------------------


def pca_to_bytes(model: PcaModel) -> bytes:
    return (
        _PCA_HEADER.pack(PCA_MAGIC, model.d_high, model.d_low)
        + model.mean.astype("<f4").tobytes()
        + model.components.astype("<f4").tobytes()
    )


def pca_from_bytes(data: bytes) -> PcaModel:
    if len(data) < _PCA_HEADER.size:
        raise FormatError("PCA model truncated: shorter than header")
    magic, d_high, d_low = _PCA_HEADER.unpack_from(data, 0)
    if magic != PCA_MAGIC:
        raise FormatError(f"bad PCA model magic {magic!r}, expected {PCA_MAGIC!r}")
    expected = _PCA_HEADER.size + 4 * d_high * (1 + d_low)
    if len(data) != expected:
        raise FormatError(f"PCA model is {len(data)} bytes, expected {expected}")
    floats = np.frombuffer(data, "<f4", offset=_PCA_HEADER.size)
    return PcaModel(mean=floats[:d_high], components=floats[d_high:].reshape(d_low, d_high))


def graph_to_bytes(g: HnswGraph) -> bytes:
    if g.num_layers > 256:
        raise ValueError("HNSG stores max_level in one byte; at most 256 layers")
    parts = [_GRAPH_HEADER.pack(GRAPH_MAGIC, g.n, g.num_layers, g.M, g.seed)]
    for node in range(g.n):
        lvl = int(g.levels[node])
        parts.append(struct.pack("<B", lvl))
        for layer in range(lvl + 1):
            nb = g.adjacency[layer][node]
            parts.append(struct.pack("<H", nb.shape[0]))
            parts.append(nb.astype("<u4").tobytes())
    return b"".join(parts)


def graph_from_bytes(data: bytes) -> HnswGraph:
    """Decode an ``HNSG`` buffer.

    The format has no entry-point field; the entry point is the lowest id on
    the top layer, which is the node :func:`~phnsw.graph.hnsw_build` promotes.
    """
    if len(data) < _GRAPH_HEADER.size:
        raise FormatError("graph truncated: shorter than header")
    magic, n, num_layers, M, seed = _GRAPH_HEADER.unpack_from(data, 0)
    if magic != GRAPH_MAGIC:
        raise FormatError(f"bad graph magic {magic!r}, expected {GRAPH_MAGIC!r}")
    pos = _GRAPH_HEADER.size
    levels = np.empty(n, dtype=np.int64)
    adjacency = [[None] * n for _ in range(num_layers)]
    try:
        for node in range(n):
            lvl = data[pos]
            pos += 1
            if lvl >= num_layers:
                raise FormatError(f"node {node} has level {lvl} but the graph has {num_layers} layers")
            levels[node] = lvl
            for layer in range(lvl + 1):
                (cnt,) = struct.unpack_from("<H", data, pos)
                pos += 2
                if pos + 4 * cnt > len(data):
                    raise IndexError
                adjacency[layer][node] = np.frombuffer(data, "<u4", cnt, pos)
                pos += 4 * cnt
    except (IndexError, struct.error):
        raise FormatError(f"graph truncated at byte offset {pos}") from None
    if pos != len(data):
        raise FormatError(f"graph has {len(data) - pos} trailing bytes at offset {pos}")
    top = np.flatnonzero(levels == num_layers - 1)
    if top.size == 0:
        raise FormatError("no node reaches the top layer")
    try:
        return HnswGraph(levels, adjacency, int(top[0]), M, seed=seed)
    except ValueError as exc:
        raise FormatError(f"graph fails validation: {exc}") from exc


def image_from_bytes(data: bytes) -> StorageImage:
    try:
        return StorageImage(data)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def _write_bytes(path: PathLike, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)


def _read_bytes(path: PathLike) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def save_pca(path: PathLike, model: PcaModel) -> None:
    _write_bytes(path, pca_to_bytes(model))


def load_pca(path: PathLike) -> PcaModel:
    return pca_from_bytes(_read_bytes(path))


def save_graph(path: PathLike, g: HnswGraph) -> None:
    _write_bytes(path, graph_to_bytes(g))


def load_graph(path: PathLike) -> HnswGraph:
    return graph_from_bytes(_read_bytes(path))


def save_image(path: PathLike, img: StorageImage) -> None:
    _write_bytes(path, img.buffer)


def load_image(path: PathLike) -> StorageImage:
    return image_from_bytes(_read_bytes(path))
