"""Byte-accounted storage images of the graph plus vectors, and DRAM energy.

An image is one little-endian byte buffer laid out as::

    header      32 B   "PHDB", u32 version, u32 mode, u32 N, u32 d_high,
                       u32 d_low, u32 num_layers, u32 reserved
    directory   per layer: u32 count, then count x (u32 node, u64 offset)
    index       per layer, per present node (ascending id):
                u16 degree, degree x u32 ids
                [INLINE_LOWDIM: degree x d_low x f32 neighbor vectors]
    lowdim      SEPARATE_LOWDIM only: N x d_low x f32
    highdim     N x d_high x f32

Only index records and vector rows are metered; the directory stands in for
address generation and is never fetched.  One fetch call is one transaction,
whatever its size.
"""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass, fields
from typing import Optional, Tuple

import numpy as np

from .core import as_dataset
from .graph import HnswGraph

MAGIC = b"PHDB"
VERSION = 1
HEADER = struct.Struct("<4s7I")
DIR_COUNT = struct.Struct("<I")
DIR_ENTRY = np.dtype([("node", "<u4"), ("offset", "<u8")])
RECORD_HEADER_BYTES = 2
ID_BYTES = 4
FLOAT_BYTES = 4

DDR4_PJ_PER_BIT = 18.75
HBM_PJ_PER_BIT = 7.0


class LayoutMode(enum.IntEnum):
    HIGH_DIM_ONLY = 0
    SEPARATE_LOWDIM = 1
    INLINE_LOWDIM = 2

    @classmethod
    def parse(cls, value) -> "LayoutMode":
        if isinstance(value, LayoutMode):
            return value
        aliases = {"std": cls.HIGH_DIM_ONLY, "sep": cls.SEPARATE_LOWDIM, "inline": cls.INLINE_LOWDIM}
        if isinstance(value, str) and value.lower() in aliases:
            return aliases[value.lower()]
        if isinstance(value, str) and value.upper() in cls.__members__:
            return cls[value.upper()]
        if isinstance(value, int):
            return cls(value)
        raise ValueError(f"unknown layout mode {value!r}; use std, sep or inline")


@dataclass
class TrafficCounters:
    """Per-query accumulator of metered fetches, split by table category.

    Inline neighbor records count as one ``neighbor_index`` transaction, while
    their bytes are split between ``neighbor_index`` and ``lowdim``.
    """

    index_transactions: int = 0
    index_bytes: int = 0
    lowdim_transactions: int = 0
    lowdim_bytes: int = 0
    highdim_transactions: int = 0
    highdim_bytes: int = 0

    @property
    def transactions(self) -> int:
        return self.index_transactions + self.lowdim_transactions + self.highdim_transactions

    @property
    def bytes(self) -> int:
        return self.index_bytes + self.lowdim_bytes + self.highdim_bytes

    def merge(self, other: "TrafficCounters") -> "TrafficCounters":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def copy(self) -> "TrafficCounters":
        return TrafficCounters(**{f.name: getattr(self, f.name) for f in fields(self)})

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["transactions"] = self.transactions
        out["bytes"] = self.bytes
        return out


@dataclass(frozen=True)
class SizeReport:
    header: int
    directory: int
    index_ids: int
    inline_lowdim: int
    lowdim_table: int
    highdim_table: int

    @property
    def inline_overhead(self) -> int:
        return self.inline_lowdim

    @property
    def total(self) -> int:
        return (
            self.header + self.directory + self.index_ids
            + self.inline_lowdim + self.lowdim_table + self.highdim_table
        )


class StorageImage:
    """Read-only view over a serialized image buffer with metered fetches."""

    def __init__(self, buffer: bytes):
        self.buffer = bytes(buffer)
        if len(self.buffer) < HEADER.size:
            raise ValueError("image truncated: shorter than header")
        magic, version, mode, n, d_high, d_low, num_layers, _ = HEADER.unpack_from(self.buffer, 0)
        if magic != MAGIC:
            raise ValueError(f"bad image magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise ValueError(f"unsupported image version {version}, expected {VERSION}")
        self.mode = LayoutMode(mode)
        self.n, self.d_high, self.d_low, self.num_layers = n, d_high, d_low, num_layers
        if (self.mode == LayoutMode.HIGH_DIM_ONLY) != (d_low == 0):
            raise ValueError("d_low must be 0 exactly for HighDimOnly images")

        pos = HEADER.size
        self._offsets = []
        try:
            for _ in range(num_layers):
                (count,) = DIR_COUNT.unpack_from(self.buffer, pos)
                pos += DIR_COUNT.size
                entries = np.frombuffer(self.buffer, DIR_ENTRY, count, pos)
                pos += entries.nbytes
                offsets = np.full(n, -1, dtype=np.int64)
                offsets[entries["node"].astype(np.int64)] = entries["offset"].astype(np.int64)
                self._offsets.append(offsets)
        except (struct.error, ValueError, IndexError) as exc:
            raise ValueError(f"image directory corrupt or truncated at byte {pos}") from exc
        self._dir_end = pos
        self._lowdim_record_bytes = d_low * FLOAT_BYTES if self.mode == LayoutMode.INLINE_LOWDIM else 0

        raw = np.frombuffer(self.buffer, np.uint8)
        self._degrees = []
        index_end = pos
        for offsets in self._offsets:
            present = offsets[offsets >= 0]
            if present.size and int(present.max()) + RECORD_HEADER_BYTES > len(self.buffer):
                raise ValueError("image truncated: record offset past end of buffer")
            degs = raw[present].astype(np.int64) | (raw[present + 1].astype(np.int64) << 8)
            self._degrees.append(degs)
            if present.size:
                last = int(np.argmax(present))
                index_end = max(
                    index_end,
                    int(present[last]) + RECORD_HEADER_BYTES
                    + int(degs[last]) * (ID_BYTES + self._lowdim_record_bytes),
                )

        self.highdim_offset = len(self.buffer) - n * d_high * FLOAT_BYTES
        self.lowdim_offset = (
            self.highdim_offset - n * d_low * FLOAT_BYTES
            if self.mode == LayoutMode.SEPARATE_LOWDIM
            else self.highdim_offset
        )
        if self.lowdim_offset != index_end:
            raise ValueError(
                f"image size mismatch: index region ends at byte {index_end}, "
                f"vector tables start at byte {self.lowdim_offset}"
            )
        self._high = np.frombuffer(self.buffer, "<f4", n * d_high, self.highdim_offset).reshape(n, d_high)
        self._low = (
            np.frombuffer(self.buffer, "<f4", n * d_low, self.lowdim_offset).reshape(n, d_low)
            if self.mode == LayoutMode.SEPARATE_LOWDIM
            else None
        )

    def __len__(self) -> int:
        return len(self.buffer)

    def _record_offset(self, node: int, layer: int) -> int:
        if not 0 <= layer < self.num_layers or not 0 <= node < self.n:
            raise KeyError(f"node {node} is not present at layer {layer}")
        off = int(self._offsets[layer][node])
        if off < 0:
            raise KeyError(f"node {node} is not present at layer {layer}")
        return off

    def fetch_neighbor_record(
        self, node: int, layer: int, counters: Optional[TrafficCounters] = None
    ) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Neighbor ids of ``node`` at ``layer`` (and their low-dim rows if inline).

        Logs exactly one transaction.
        """
        off = self._record_offset(node, layer)
        buf = self.buffer
        deg = buf[off] | (buf[off + 1] << 8)
        ids = np.frombuffer(buf, "<u4", deg, off + RECORD_HEADER_BYTES)
        low = None
        id_bytes = RECORD_HEADER_BYTES + deg * ID_BYTES
        low_bytes = deg * self._lowdim_record_bytes
        if self.mode == LayoutMode.INLINE_LOWDIM:
            low = np.frombuffer(buf, "<f4", deg * self.d_low, off + id_bytes).reshape(deg, self.d_low)
        if counters is not None:
            counters.index_transactions += 1
            counters.index_bytes += id_bytes
            counters.lowdim_bytes += low_bytes
        return ids, low

    def fetch_lowdim(self, node: int, counters: Optional[TrafficCounters] = None) -> np.ndarray:
        if self.mode != LayoutMode.SEPARATE_LOWDIM:
            raise ValueError(f"fetch_lowdim requires a SeparateLowDim image, this one is {self.mode.name}")
        if not 0 <= node < self.n:
            raise IndexError(f"node id {node} out of range [0, {self.n})")
        if counters is not None:
            counters.lowdim_transactions += 1
            counters.lowdim_bytes += self.d_low * FLOAT_BYTES
        return self._low[node]

    def fetch_lowdim_many(self, nodes: np.ndarray, counters: Optional[TrafficCounters] = None) -> np.ndarray:
        """Equivalent to one :meth:`fetch_lowdim` per id: logs ``len(nodes)`` transactions."""
        if self.mode != LayoutMode.SEPARATE_LOWDIM:
            raise ValueError(f"fetch_lowdim requires a SeparateLowDim image, this one is {self.mode.name}")
        if counters is not None:
            counters.lowdim_transactions += len(nodes)
            counters.lowdim_bytes += len(nodes) * self.d_low * FLOAT_BYTES
        return self._low[nodes]

    def fetch_highdim(self, node: int, counters: Optional[TrafficCounters] = None) -> np.ndarray:
        if not 0 <= node < self.n:
            raise IndexError(f"node id {node} out of range [0, {self.n})")
        if counters is not None:
            counters.highdim_transactions += 1
            counters.highdim_bytes += self.d_high * FLOAT_BYTES
        return self._high[node]

    def size_report(self) -> SizeReport:
        return size_report(self)


def build_image(g: HnswGraph, ds_high, ds_low=None, mode=LayoutMode.INLINE_LOWDIM) -> StorageImage:
    """Serialize ``g`` and its vectors into an image of the requested layout."""
    mode = LayoutMode.parse(mode)
    high = as_dataset(ds_high, name="ds_high")
    n, d_high = high.shape
    if n != g.n:
        raise ValueError(f"ds_high has {n} rows but the graph has {g.n} nodes")
    if mode == LayoutMode.HIGH_DIM_ONLY:
        low, d_low = None, 0
    else:
        if ds_low is None:
            raise ValueError(f"{mode.name} needs the low-dimensional dataset")
        low = as_dataset(ds_low, name="ds_low")
        if low.shape[0] != n:
            raise ValueError(f"ds_low has {low.shape[0]} rows but ds_high has {n}")
        d_low = low.shape[1]

    layer_nodes = [g.nodes_at(l) for l in range(g.num_layers)]
    dir_size = sum(DIR_COUNT.size + DIR_ENTRY.itemsize * len(nodes) for nodes in layer_nodes)
    out = io.BytesIO()
    out.write(HEADER.pack(MAGIC, VERSION, int(mode), n, d_high, d_low, g.num_layers, 0))

    records = io.BytesIO()
    directory = []
    base = HEADER.size + dir_size
    for layer, nodes in enumerate(layer_nodes):
        entries = np.empty(len(nodes), DIR_ENTRY)
        for j, node in enumerate(nodes):
            nb = g.adjacency[layer][node]
            entries[j] = (node, base + records.tell())
            records.write(struct.pack("<H", len(nb)))
            records.write(nb.astype("<u4").tobytes())
            if mode == LayoutMode.INLINE_LOWDIM:
                records.write(low[nb].astype("<f4").tobytes())
        directory.append(entries)
    for entries in directory:
        out.write(DIR_COUNT.pack(len(entries)))
        out.write(entries.tobytes())
    out.write(records.getvalue())
    if mode == LayoutMode.SEPARATE_LOWDIM:
        out.write(low.astype("<f4").tobytes())
    out.write(high.astype("<f4").tobytes())
    return StorageImage(out.getvalue())


def size_report(img: StorageImage) -> SizeReport:
    """Per-table byte sizes of ``img``; ``total`` equals ``len(img.buffer)``."""
    n_records = sum(d.size for d in img._degrees)
    total_degree = sum(int(d.sum()) for d in img._degrees)
    index_ids = n_records * RECORD_HEADER_BYTES + total_degree * ID_BYTES
    inline = total_degree * img._lowdim_record_bytes
    return SizeReport(
        header=HEADER.size,
        directory=img._dir_end - HEADER.size,
        index_ids=index_ids,
        inline_lowdim=inline,
        lowdim_table=img.n * img.d_low * FLOAT_BYTES if img.mode == LayoutMode.SEPARATE_LOWDIM else 0,
        highdim_table=img.n * img.d_high * FLOAT_BYTES,
    )


def inline_overhead_estimate(n_points: int, degree: int, d_low: int) -> int:
    """Bytes added by inlining ``degree`` low-dim neighbor rows for ``n_points`` records."""
    return n_points * degree * d_low * FLOAT_BYTES


def energy_estimate(counters, pj_per_bit: float) -> float:
    """Modeled DRAM energy in picojoules: ``bytes * 8 * pj_per_bit``.

    ``counters`` may be a :class:`TrafficCounters` or a plain byte count.
    """
    if not pj_per_bit > 0:
        raise ValueError(f"pj_per_bit must be positive, got {pj_per_bit}")
    nbytes = counters.bytes if isinstance(counters, TrafficCounters) else int(counters)
    if nbytes < 0:
        raise ValueError(f"byte count must be non-negative, got {nbytes}")
    return nbytes * 8 * pj_per_bit
