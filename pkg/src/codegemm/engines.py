"""GEMM executors over a QuantizedLayer, with exact operation counters.

Three interchangeable engines compute Y = W @ X for a weight matrix W of
shape (M, K) and an input X of shape (K, N):

* dense_gemm: reference row-by-column multiply of an explicit matrix.
* dequant_gemm: decodes the layer first. "naive" order materializes the
  reconstructed matrix and runs dense_gemm; "mirrored" order replays, per
  output element, the exact float32 operation sequence of codegemm_gemm
  while reading centroids directly (no tables).
* codegemm_gemm: per K-tile and input column, precomputes every
  centroid-segment inner product into a partial-sum table (psum book), then
  gathers entries by code.

Canonical accumulation order (the contract that makes the mirrored oracle
bit-exact): tiles ascend along K, segments ascend inside a tile, codebooks
ascend inside a segment, and the length-v inner products accumulate in
index order, all in binary32 with widen-before-multiply semantics. Each
output element keeps a single running accumulator over globally ascending
segments, so output bits here are independent of t_w as well as of t_h and
worker count (t_h partitions rows; every output element is written by
exactly one worker with a fixed operation sequence).

Counters tally semantic events: one multiply-accumulate per weight element
touched (mac_dense), per table entry component (mac_build), and one
lookup+add per (codebook, segment, output element) pair (lookups,
mac_read_adds).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError, ShapeError
from .quantizer import Codebook, QuantConfig, QuantizedLayer, reconstruct
from .tensors import Matrix

DEFAULT_TILE_WIDTH = 32
DEFAULT_TILE_HEIGHT = 2048


@dataclass(frozen=True)
class TileConfig:
    """Tile shape: t_w elements along K, t_h rows per row-block."""

    t_w: int = DEFAULT_TILE_WIDTH
    t_h: int = DEFAULT_TILE_HEIGHT

    def __post_init__(self):
        if self.t_w < 1 or self.t_h < 1:
            raise ConfigError(f"tile dims must be >= 1, got ({self.t_w}, {self.t_h})")

    def validate_for(self, cfg: QuantConfig) -> None:
        if self.t_w % cfg.v != 0 or self.t_w < cfg.v:
            raise ConfigError(
                f"t_w={self.t_w} must be a multiple of v={cfg.v} and >= v"
            )
        g = cfg.g
        if g == -1:
            return
        aligned = (self.t_w <= g and g % self.t_w == 0) or self.t_w % g == 0
        if not aligned:
            raise ConfigError(
                f"t_w={self.t_w} straddles group boundaries for g={g}"
            )


@dataclass
class OpCounters:
    """Exact multiply-accumulate and lookup tallies, split by phase."""

    mac_build: int = 0
    mac_read_adds: int = 0
    lookups: int = 0
    mac_dense: int = 0
    psum_entries_per_tile: int = 0

    @property
    def build_fraction(self) -> float:
        return phase_split(self)[0]


def phase_split(counters: OpCounters) -> tuple[float, float]:
    """Fraction of table-phase MACs spent building vs reading.

    Exact rational, reported as binary64. Raises ValueError when both
    build and read tallies are zero.
    """
    total = counters.mac_build + counters.mac_read_adds
    if total == 0:
        raise ValueError("no build/read operations recorded")
    build = Fraction(counters.mac_build, total)
    return float(build), float(1 - build)


@dataclass
class Psumbook:
    """Precomputed centroid-input inner products for one tile and column.

    entries[t, j, i] is the binary32 dot product of centroid i of codebook t
    with input segment j of the tile, accumulated in index order.
    """

    entries: np.ndarray  # (m, t_w // v, 2**b) float32

    @property
    def entry_count(self) -> int:
        return int(self.entries.size)


def _psum_tables(books32: list[np.ndarray], x_tile32: np.ndarray, v: int) -> np.ndarray:
    """Tables for all columns of a tile: (m, segments, 2**b, n) float32.

    Accumulates each inner product in ascending element order with separate
    multiply and add roundings, the same per-entry sequence the mirrored
    dequantization path uses.
    """
    width, n = x_tile32.shape
    segs = width // v
    m = len(books32)
    k = books32[0].shape[0]
    tables = np.zeros((m, segs, k, n), dtype=np.float32)
    for t in range(m):
        book = books32[t]
        for j in range(segs):
            tab = tables[t, j]
            base = j * v
            for kk in range(v):
                tab += book[:, kk : kk + 1] * x_tile32[base + kk][None, :]
    return tables


def build_psumbook(x_tile, books, counters: OpCounters | None = None) -> Psumbook:
    """Build the partial-sum table for one input column of one tile.

    Args:
        x_tile: t_w input values (any float dtype; widened to binary32).
        books: the m codebooks.
        counters: optional tally; mac_build grows by m * 2**b * t_w.
    """
    x32 = np.asarray(x_tile, dtype=np.float32).reshape(-1)
    books = list(books)
    if not books:
        raise ConfigError("at least one codebook required")
    v = books[0].vector_len
    if x32.size == 0 or x32.size % v != 0:
        raise ConfigError(f"tile width {x32.size} not divisible by v={v}")
    books32 = [b.widened() if isinstance(b, Codebook) else np.asarray(b, np.float32) for b in books]
    tables = _psum_tables(books32, x32[:, None], v)
    if counters is not None:
        counters.mac_build += len(books32) * books32[0].shape[0] * x32.size
    return Psumbook(tables[..., 0])


def dense_gemm(w: Matrix, x: Matrix, accumulate: str = "binary32"):
    """Reference GEMM: Y[r, c] = sum_k W[r, k] * X[k, c], ascending k.

    Operands widen from binary16 to the requested accumulation precision;
    the result stays in that precision (round to a Matrix only at the file
    boundary). Returns (values, counters) with mac_dense = M*N*K.
    """
    if accumulate == "binary32":
        dt = np.float32
    elif accumulate == "binary64":
        dt = np.float64
    else:
        raise ConfigError(f"unknown accumulate mode {accumulate!r}")
    if w.cols != x.rows:
        raise ShapeError(f"W is {w.rows}x{w.cols} but X is {x.rows}x{x.cols}")
    m_rows, k_len, n = w.rows, w.cols, x.cols
    wt = w.data.T.astype(dt, order="C")  # contiguous (K, M) for cache-friendly k sweeps
    x_wide = x.data.astype(dt)
    y = np.zeros((m_rows, n), dtype=dt)
    for kk in range(k_len):
        y += wt[kk][:, None] * x_wide[kk][None, :]
    counters = OpCounters(mac_dense=m_rows * n * k_len)
    return y, counters


def _check_layer_input(q: QuantizedLayer, x: Matrix) -> None:
    if q.cols != x.rows:
        raise ShapeError(f"layer is {q.rows}x{q.cols} but X is {x.rows}x{x.cols}")


def dequant_gemm(q: QuantizedLayer, x: Matrix, order: str = "naive"):
    """Dequantization baseline: decode centroids, then multiply.

    naive: materialize the reconstructed binary16 matrix and run dense_gemm
    in binary32 (scales applied per weight element, with per-element
    rounding to binary16).

    mirrored: skip materialization; per output element, walk segments in
    ascending order, compute each codebook's centroid-segment inner product
    in index order, sum across codebooks, multiply by the group scale, and
    accumulate. This is the exact operation sequence of codegemm_gemm and
    serves as its bit-exact oracle.

    Both orders count mac_dense = M*N*K (the dense-equivalent work).
    """
    _check_layer_input(q, x)
    if order == "naive":
        values, _ = dense_gemm(reconstruct(q), x, "binary32")
        return values, OpCounters(mac_dense=q.rows * x.cols * q.cols)
    if order != "mirrored":
        raise ConfigError(f"unknown dequant order {order!r}")

    cfg = q.config
    v = cfg.v
    x32 = x.widened()
    books32 = [b.widened() for b in q.books]
    scales32 = q.scales.widened()
    seg_groups = q.segment_groups()
    codes = [p.codes for p in q.planes]
    n = x.cols

    y = np.zeros((q.rows, n), dtype=np.float32)
    for seg in range(q.segments):
        base = seg * v
        seg_sum = np.zeros((q.rows, n), dtype=np.float32)
        for t in range(cfg.m):
            chosen = books32[t][codes[t][:, seg]]  # (M, v)
            psum = np.zeros((q.rows, n), dtype=np.float32)
            for kk in range(v):
                psum += chosen[:, kk : kk + 1] * x32[base + kk][None, :]
            seg_sum += psum
        y += scales32[:, seg_groups[seg]][:, None] * seg_sum
    return y, OpCounters(mac_dense=q.rows * n * q.cols)


def _tile_spans(k_len: int, t_w: int) -> list[tuple[int, int]]:
    """Ascending (start, width) tiles; a final partial tile keeps K % t_w."""
    spans = []
    start = 0
    while start < k_len:
        width = min(t_w, k_len - start)
        spans.append((start, width))
        start += width
    return spans


def codegemm_gemm(
    q: QuantizedLayer,
    x: Matrix,
    tiles: TileConfig | None = None,
    threads: int = 1,
):
    """Lookup-table GEMM: gather precomputed partial sums by code.

    For each K-tile, the psum tables for all input columns are built once
    (the build barrier), then row-blocks of t_h rows consume them, possibly
    on a thread pool. Each output element is owned by one worker and its
    accumulation order is fixed, so results are bit-identical to
    dequant_gemm(..., "mirrored") for every t_h and thread count.

    Returns (values float32, counters) with
        mac_build     = m * 2**b * K * N
        mac_read_adds = m * M * (K / v) * N
        lookups       = mac_read_adds
    """
    _check_layer_input(q, x)
    tiles = tiles if tiles is not None else TileConfig()
    cfg = q.config
    tiles.validate_for(cfg)
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")

    v, m = cfg.v, cfg.m
    k_count = 2**cfg.b
    x32 = x.widened()
    books32 = [b.widened() for b in q.books]
    scales32 = q.scales.widened()
    seg_groups = q.segment_groups()
    codes = [p.codes for p in q.planes]
    n = x.cols

    y = np.zeros((q.rows, n), dtype=np.float32)
    counters = OpCounters()
    row_blocks = [
        (r0, min(r0 + tiles.t_h, q.rows)) for r0 in range(0, q.rows, tiles.t_h)
    ]

    def consume(block: tuple[int, int], tables: np.ndarray, seg0: int) -> None:
        r0, r1 = block
        segs_here = tables.shape[1]
        for j in range(segs_here):
            seg = seg0 + j
            seg_sum = np.zeros((r1 - r0, n), dtype=np.float32)
            for t in range(m):
                seg_sum += tables[t, j][codes[t][r0:r1, seg]]
            y[r0:r1] += scales32[r0:r1, seg_groups[seg]][:, None] * seg_sum

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 and len(row_blocks) > 1 else None
    try:
        for start, width in _tile_spans(q.cols, tiles.t_w):
            tables = _psum_tables(books32, x32[start : start + width], v)
            counters.mac_build += m * k_count * width * n
            if counters.psum_entries_per_tile == 0:
                counters.psum_entries_per_tile = m * k_count * (width // v)
            seg0 = start // v
            if pool is not None:
                list(pool.map(lambda blk: consume(blk, tables, seg0), row_blocks))
            else:
                for block in row_blocks:
                    consume(block, tables, seg0)
    finally:
        if pool is not None:
            pool.shutdown()

    events = m * q.rows * q.segments * n
    counters.mac_read_adds = events
    counters.lookups = events
    return y, counters
