"""Additive codebook quantization of weight matrices.

Pipeline: partition each row into length-v vectors, normalize groups of g
consecutive weights by their max-abs scale, then fit m codebooks greedily,
each one a k-means clustering (k = 2**b) of the residual left by the
previous stages. A weight vector is stored as one b-bit code per codebook
plus the shared group scale.

Determinism contract: identical (matrix, config) inputs produce a
bit-identical QuantizedLayer regardless of worker count. All randomness
flows from the config seed; stage t uses seed XOR t so adding codebooks
never perturbs earlier stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IntegrityError
from .tensors import Matrix, encode_f16_array

_F16 = np.dtype("<f2")

# Residual SSE is monotone per stage in exact arithmetic; this slack only
# absorbs binary32 rounding of the residual update.
_SSE_SLACK = 1e-6

# Scratch budget (elements) for the (chunk, k, v) distance array; the chunk
# size adapts so large codebooks (k up to 2**16) stay inside it.
_DIST_SCRATCH_ELEMS = 1 << 24


@dataclass(frozen=True)
class QuantConfig:
    """Hyperparameters of the quantization pipeline.

    Attributes:
        v: vector length (elements per code).
        m: number of additive codebooks.
        b: bits per code; each codebook holds 2**b centroids.
        g: normalization group size in elements, or -1 for one scale per row.
        seed: 64-bit seed for codebook fitting.
        kmeans_iters: max Lloyd iterations per codebook.
    """

    v: int
    m: int
    b: int
    g: int = -1
    seed: int = 0
    kmeans_iters: int = 25

    def __post_init__(self):
        if self.v < 1:
            raise ConfigError(f"v must be >= 1, got {self.v}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if not 1 <= self.b <= 16:
            raise ConfigError(f"b must be in [1, 16], got {self.b}")
        if self.g != -1:
            if self.g < self.v:
                raise ConfigError(f"g must be >= v (got g={self.g}, v={self.v})")
            if self.g % self.v != 0:
                raise ConfigError(f"g must be a multiple of v (got g={self.g}, v={self.v})")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")
        if self.kmeans_iters < 1:
            raise ConfigError("kmeans_iters must be >= 1")

    def group_size_for(self, cols: int) -> int:
        """Effective group size: g, or the whole row when g == -1."""
        return cols if self.g == -1 else self.g

    def validate_shape(self, rows: int, cols: int) -> None:
        """Check the divisibility rules against a target matrix shape."""
        if rows < 1 or cols < 1:
            raise ConfigError(f"matrix dims must be >= 1, got {rows}x{cols}")
        if cols % self.v != 0:
            raise ConfigError(f"cols={cols} not divisible by v={self.v}")
        g_eff = self.group_size_for(cols)
        if cols % g_eff != 0:
            raise ConfigError(f"cols={cols} not divisible by g={self.g}")


@dataclass(frozen=True)
class Codebook:
    """2**b centroid vectors of length v, stored as binary16."""

    entries: np.ndarray  # (2**b, v) float16

    def __post_init__(self):
        e = self.entries
        if e.ndim != 2 or e.dtype != _F16:
            raise IntegrityError("codebook entries must be a 2-D float16 array")
        k = e.shape[0]
        if k < 2 or k & (k - 1):
            raise IntegrityError(f"codebook entry count {k} is not a power of two >= 2")
        if not np.all(np.isfinite(e.astype(np.float32))):
            raise IntegrityError("codebook entries must be finite")
        e.flags.writeable = False

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def vector_len(self) -> int:
        return self.entries.shape[1]

    def widened(self) -> np.ndarray:
        return self.entries.astype(np.float32)


@dataclass(frozen=True)
class ScalePlane:
    """Per-group normalization scales, rows x (cols / g_eff), binary16."""

    scales: np.ndarray  # (rows, groups) float16

    def __post_init__(self):
        s = self.scales
        if s.ndim != 2 or s.dtype != _F16:
            raise IntegrityError("scales must be a 2-D float16 array")
        wide = s.astype(np.float32)
        if not np.all(np.isfinite(wide)) or not np.all(wide > 0.0):
            raise IntegrityError("scales must be finite and strictly positive")
        s.flags.writeable = False

    def widened(self) -> np.ndarray:
        return self.scales.astype(np.float32)


@dataclass(frozen=True)
class CodePlane:
    """Code indices for one codebook, rows x (cols / v), each < 2**b."""

    codes: np.ndarray  # (rows, segments) uint16

    def __post_init__(self):
        c = self.codes
        if c.ndim != 2 or c.dtype != np.uint16:
            raise IntegrityError("codes must be a 2-D uint16 array")
        c.flags.writeable = False


@dataclass(frozen=True)
class QuantizedLayer:
    """The compressed form of one weight matrix."""

    rows: int
    cols: int
    config: QuantConfig
    scales: ScalePlane
    planes: tuple[CodePlane, ...]
    books: tuple[Codebook, ...]

    def __post_init__(self):
        cfg = self.config
        cfg.validate_shape(self.rows, self.cols)
        if len(self.planes) != cfg.m or len(self.books) != cfg.m:
            raise IntegrityError(
                f"expected {cfg.m} planes and books, got "
                f"{len(self.planes)} planes / {len(self.books)} books"
            )
        segs = self.cols // cfg.v
        groups = self.cols // cfg.group_size_for(self.cols)
        if self.scales.scales.shape != (self.rows, groups):
            raise IntegrityError(
                f"scales shape {self.scales.scales.shape} != {(self.rows, groups)}"
            )
        for plane in self.planes:
            if plane.codes.shape != (self.rows, segs):
                raise IntegrityError(
                    f"plane shape {plane.codes.shape} != {(self.rows, segs)}"
                )
            if plane.codes.max(initial=0) >= 2**cfg.b:
                raise IntegrityError(f"code out of range for b={cfg.b}")
        for book in self.books:
            if book.entries.shape != (2**cfg.b, cfg.v):
                raise IntegrityError(
                    f"codebook shape {book.entries.shape} != {(2 ** cfg.b, cfg.v)}"
                )

    @property
    def segments(self) -> int:
        """Number of length-v segments per row."""
        return self.cols // self.config.v

    @property
    def groups(self) -> int:
        return self.cols // self.config.group_size_for(self.cols)

    def segment_groups(self) -> np.ndarray:
        """Group index of each segment (segments never straddle groups)."""
        v = self.config.v
        g_eff = self.config.group_size_for(self.cols)
        return (np.arange(self.segments) * v) // g_eff

    def bitwise_equal(self, other: "QuantizedLayer") -> bool:
        """Compare all persisted content (kmeans_iters is not persisted)."""
        a, b = self.config, other.config
        if (self.rows, self.cols, a.v, a.m, a.b, a.g, a.seed) != (
            other.rows,
            other.cols,
            b.v,
            b.m,
            b.b,
            b.g,
            b.seed,
        ):
            return False
        if not np.array_equal(
            self.scales.scales.view(np.uint16), other.scales.scales.view(np.uint16)
        ):
            return False
        for p, q in zip(self.planes, other.planes):
            if not np.array_equal(p.codes, q.codes):
                return False
        for p, q in zip(self.books, other.books):
            if not np.array_equal(
                p.entries.view(np.uint16), q.entries.view(np.uint16)
            ):
                return False
        return True


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k, dim) float64
    assignments: np.ndarray  # (n,) int64
    sse: float
    iterations: int = field(default=0)


def compute_scales(w: Matrix, g: int) -> ScalePlane:
    """Per-group max-abs scales, rounded to binary16.

    A group of g consecutive weights in a row (the whole row when g == -1)
    shares one scale. All-zero groups get scale 1.0 so normalization is
    always defined. Input values are binary16, so max-abs is exactly
    representable and the stored scale equals the effective one.
    """
    g_eff = w.cols if g == -1 else g
    if g_eff < 1 or w.cols % g_eff != 0:
        raise ConfigError(f"cols={w.cols} not divisible by g={g}")
    wide = np.abs(w.widened())
    grouped = wide.reshape(w.rows, w.cols // g_eff, g_eff)
    maxes = grouped.max(axis=2)
    maxes[maxes == 0.0] = 1.0
    return ScalePlane(maxes.astype(_F16))


def partition_vectors(values, v: int) -> np.ndarray:
    """Split rows into length-v vectors, row-major.

    Vector (r, j) holds elements [j*v, (j+1)*v) of row r; the output stacks
    them in (r, j) order, shape (rows*cols/v, v).

    Args:
        values: a Matrix or any 2-D array.
        v: vector length; must divide the column count.
    """
    arr = values.widened() if isinstance(values, Matrix) else np.asarray(values)
    if arr.ndim != 2:
        raise ConfigError("partition_vectors expects a 2-D input")
    rows, cols = arr.shape
    if cols % v != 0:
        raise ConfigError(f"cols={cols} not divisible by v={v}")
    return arr.reshape(rows * (cols // v), v)


def _nearest(points: np.ndarray, centroids: np.ndarray):
    """Assign each point to its nearest centroid (squared Euclidean).

    Ties break to the lowest centroid index. Distances are evaluated
    elementwise in chunks, never through a matmul, so results do not depend
    on BLAS threading.

    Returns:
        (assignments int64, per-point squared distance in the points dtype)
    """
    n = points.shape[0]
    assign = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=points.dtype)
    chunk = max(1, min(4096, _DIST_SCRATCH_ELEMS // max(1, centroids.size)))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = points[start:stop, None, :] - centroids[None, :, :]
        d2 = np.square(diff).sum(axis=2)
        idx = np.argmin(d2, axis=1)
        assign[start:stop] = idx
        dists[start:stop] = d2[np.arange(stop - start), idx]
    return assign, dists


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: D^2-weighted sampling from the seeded generator."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=points.dtype)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = np.square(points - centroids[0]).sum(axis=1)
    for i in range(1, k):
        total = float(d2.sum())
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # All points already coincide with a chosen centroid.
            idx = int(rng.integers(n))
        centroids[i] = points[idx]
        d2 = np.minimum(d2, np.square(points - centroids[i]).sum(axis=1))
    return centroids


def kmeans_fit(points, k: int, seed: int = 0, iters: int = 25) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    The returned assignments are nearest-centroid with respect to the
    returned centroids (ties to the lowest index), and the objective is
    checked to be non-increasing on every iteration. Clusters that lose all
    members are re-seeded to the point currently farthest from its centroid.

    Args:
        points: (n, dim) array, n >= 1.
        k: cluster count, >= 1.
        seed: generator seed.
        iters: max Lloyd iterations, >= 1.

    Returns:
        KMeansResult with float64 centroids, int64 assignments, and the
        within-cluster sum of squared distances.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("kmeans_fit needs a non-empty (n, dim) point array")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    n, dim = pts.shape
    rng = np.random.default_rng(seed)

    centroids = _kmeanspp_init(pts, k, rng)
    assign, d2 = _nearest(pts, centroids)
    sse = float(d2.sum())
    iterations = 0

    for _ in range(iters):
        iterations += 1
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        sums = np.empty((k, dim), dtype=np.float64)
        for d in range(dim):
            sums[:, d] = np.bincount(assign, weights=pts[:, d], minlength=k)
        new_centroids = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1.0)[:, None], 0.0)

        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # Re-seed dead clusters with the points worst served right now.
            order = np.argsort(-d2, kind="stable")
            for slot, cluster in enumerate(empty):
                new_centroids[cluster] = pts[order[slot % n]]

        new_assign, new_d2 = _nearest(pts, new_centroids)
        new_sse = float(new_d2.sum())
        if new_sse > sse * (1.0 + 1e-12) + 1e-30:
            raise IntegrityError(
                f"k-means objective increased: {sse!r} -> {new_sse!r}"
            )
        converged = bool(np.array_equal(new_assign, assign))
        centroids, assign, d2, sse = new_centroids, new_assign, new_d2, new_sse
        if converged:
            break

    return KMeansResult(centroids, assign, sse, iterations)


def quantize_layer(w: Matrix, cfg: QuantConfig) -> QuantizedLayer:
    """Quantize a weight matrix into scales, codebooks, and code planes.

    Stage t (1-based) fits k-means with seed cfg.seed XOR t on the residual
    left by prior stages; centroids are rounded to binary16 before codes are
    assigned and before the residual is updated, so the stored codebook is
    exactly the effective one. The residual SSE is checked to be
    non-increasing after every stage.
    """
    cfg.validate_shape(w.rows, w.cols)
    wide = w.widened()
    if not np.all(np.isfinite(wide)):
        raise ConfigError("weights must be finite")

    rows, cols = w.rows, w.cols
    v, k = cfg.v, 2**cfg.b
    g_eff = cfg.group_size_for(cols)
    scales = compute_scales(w, cfg.g)

    per_element = np.repeat(scales.widened(), g_eff, axis=1)
    residual = partition_vectors(wide / per_element, v).copy()

    sse_prev = float(np.square(residual.astype(np.float64)).sum())
    books: list[Codebook] = []
    planes: list[CodePlane] = []
    segs = cols // v

    for stage in range(1, cfg.m + 1):
        fit = kmeans_fit(residual, k, seed=cfg.seed ^ stage, iters=cfg.kmeans_iters)
        entries = encode_f16_array(fit.centroids).view(_F16)
        book32 = entries.astype(np.float32)
        # Codes are re-assigned against the rounded centroids so that stored
        # codes are optimal for the stored codebook.
        codes, _ = _nearest(residual, book32)
        residual -= book32[codes]

        sse = float(np.square(residual.astype(np.float64)).sum())
        if sse > sse_prev * (1.0 + _SSE_SLACK) + 1e-12:
            raise IntegrityError(
                f"stage {stage} residual SSE increased: {sse_prev!r} -> {sse!r}"
            )
        sse_prev = sse

        books.append(Codebook(entries))
        planes.append(CodePlane(codes.astype(np.uint16).reshape(rows, segs)))

    return QuantizedLayer(rows, cols, cfg, scales, tuple(planes), tuple(books))


def reconstruct(q: QuantizedLayer) -> Matrix:
    """Decode a quantized layer back to a binary16 matrix.

    Each element is scale * (sum of its centroid components over the m
    codebooks), accumulated in binary32 in codebook order, then rounded to
    binary16.
    """
    cfg = q.config
    v = cfg.v
    segs = q.segments
    books32 = [book.widened() for book in q.books]
    scales32 = q.scales.widened()
    seg_groups = q.segment_groups()

    out = np.empty((q.rows, q.cols), dtype=_F16)
    # Chunk rows to bound the (rows, segs, v) gather scratch.
    chunk = max(1, min(q.rows, 8 * 1024 * 1024 // max(1, segs * v)))
    for start in range(0, q.rows, chunk):
        stop = min(start + chunk, q.rows)
        acc = np.zeros((stop - start, segs, v), dtype=np.float32)
        for t in range(cfg.m):
            acc += books32[t][q.planes[t].codes[start:stop]]
        acc *= scales32[start:stop][:, seg_groups, None]
        out[start:stop] = acc.reshape(stop - start, q.cols).astype(_F16)
    return Matrix(out, copy=False)


def quant_error(w, w_hat) -> float:
    """Relative Frobenius error ||W - What||_F / ||W||_F in binary64."""
    a = w.widened(np.float64) if isinstance(w, Matrix) else np.asarray(w, dtype=np.float64)
    b = (
        w_hat.widened(np.float64)
        if isinstance(w_hat, Matrix)
        else np.asarray(w_hat, dtype=np.float64)
    )
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    denom = float(np.linalg.norm(a))
    if denom == 0.0:
        raise ValueError("reference matrix has zero Frobenius norm")
    return float(np.linalg.norm(a - b)) / denom


def pack_codes(plane: CodePlane, b: int) -> bytes:
    """Pack codes into a little-endian-bit-first stream, byte-padded.

    Code i occupies bits [i*b, (i+1)*b) of the stream, least significant bit
    first; bit p of the stream lives in byte p // 8 at position p % 8.
    """
    if not 1 <= b <= 16:
        raise ConfigError(f"b must be in [1, 16], got {b}")
    codes = plane.codes.reshape(-1).astype(np.uint32)
    if codes.size and int(codes.max()) >= 2**b:
        raise ValueError(f"code {int(codes.max())} out of range for b={b}")
    bits = (codes[:, None] >> np.arange(b, dtype=np.uint32)) & 1
    return np.packbits(bits.astype(np.uint8).reshape(-1), bitorder="little").tobytes()


def unpack_codes(data: bytes, rows: int, segments: int, b: int) -> CodePlane:
    """Inverse of pack_codes for a (rows, segments) plane."""
    if not 1 <= b <= 16:
        raise ConfigError(f"b must be in [1, 16], got {b}")
    count = rows * segments
    need = (count * b + 7) // 8
    if len(data) < need:
        raise ValueError(f"packed stream too short: {len(data)} < {need} bytes")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=need), bitorder="little")
    bits = bits[: count * b].reshape(count, b).astype(np.uint32)
    codes = (bits << np.arange(b, dtype=np.uint32)).sum(axis=1, dtype=np.uint32)
    return CodePlane(codes.astype(np.uint16).reshape(rows, segments))


def random_layer(rows: int, cols: int, cfg: QuantConfig, seed: int | None = None) -> QuantizedLayer:
    """Synthesize a layer with Gaussian codebooks/scales and uniform codes.

    Engine behavior does not depend on stored values, so benchmarks and
    counter tests use this instead of fitting k-means at scale. Fully
    deterministic for a given (shape, cfg, seed).
    """
    cfg.validate_shape(rows, cols)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    k, v = 2**cfg.b, cfg.v
    segs = cols // v
    groups = cols // cfg.group_size_for(cols)

    scales = ScalePlane(
        (np.abs(rng.standard_normal((rows, groups))) * 0.25 + 0.5).astype(_F16)
    )
    books = tuple(
        Codebook((rng.standard_normal((k, v)) * 0.5).astype(_F16)) for _ in range(cfg.m)
    )
    planes = tuple(
        CodePlane(rng.integers(0, k, size=(rows, segs), dtype=np.uint16))
        for _ in range(cfg.m)
    )
    return QuantizedLayer(rows, cols, cfg, scales, planes, books)
