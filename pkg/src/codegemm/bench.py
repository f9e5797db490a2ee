"""Benchmark harness: shape suites, timing protocol, CSV records.

Shape convention follows the usual inference-bench notation: a record
(M, N, K) means batch size M, output features N, reduction length K. The
engines in this package multiply a weight matrix (rows x cols) by an input
(cols x batch), so a bench shape maps to rows=N, cols=K, input=(K, M).

Timing protocol: the monotonic clock is read around the engine call only
(no file I/O); each shape runs `warmup` untimed repeats followed by
`repeats` timed ones, reporting the median and the minimum in microseconds.
Quantized layers are synthesized from seeded generators (engine timing does
not depend on stored values), so suites run without a fitting pass.

Built-in suites list the linear layers of one decoder block as (N, K)
shapes with their per-block multiplicities; the attention projections are
all counted at the full hidden size. CSV output has one row per unique
shape; per-block totals (sum of multiplicity * median) go to the JSON
summary.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass
from statistics import median

import numpy as np

from .accounting import bit_breakdown, predict_complexity
from .engines import OpCounters, TileConfig, codegemm_gemm, dense_gemm, dequant_gemm, phase_split
from .errors import CodeGemmError, ConfigError
from .quantizer import QuantConfig, QuantizedLayer, random_layer, reconstruct
from .tensors import Matrix

ENGINES = ("dense", "dequant", "dequant-mirrored", "codegemm")

CSV_HEADER = [
    "M",
    "N",
    "K",
    "engine",
    "v",
    "m",
    "b",
    "g",
    "tw",
    "th",
    "threads",
    "wall_us_median",
    "wall_us_min",
    "mac_build",
    "mac_read",
    "mac_dense",
    "lookups",
    "build_fraction",
    "q_bar",
]

# One decoder block of linear layers: (name, out_features, in_features,
# per-block multiplicity). Attention q/k/v/o are counted at hidden x hidden.
SUITES = {
    "llama8b": (
        ("attn_proj", 4096, 4096, 4),
        ("mlp_gate_up", 14336, 4096, 2),
        ("mlp_down", 4096, 14336, 1),
    ),
    "llama70b": (
        ("attn_proj", 8192, 8192, 4),
        ("mlp_gate_up", 28672, 8192, 2),
        ("mlp_down", 8192, 28672, 1),
    ),
}


@dataclass(frozen=True)
class ShapeSpec:
    """One benchmark shape: batch M, output N, reduction K."""

    m_batch: int
    n_out: int
    k_in: int
    multiplicity: int = 1
    name: str = ""


@dataclass
class BenchRecord:
    """One CSV row: a (shape, engine) measurement."""

    shape: ShapeSpec
    engine: str
    cfg: QuantConfig
    tiles: TileConfig
    threads: int
    wall_us_median: float
    wall_us_min: float
    counters: OpCounters
    build_fraction: float | None
    q_bar: float

    def to_row(self) -> list:
        return [
            self.shape.m_batch,
            self.shape.n_out,
            self.shape.k_in,
            self.engine,
            self.cfg.v,
            self.cfg.m,
            self.cfg.b,
            self.cfg.g,
            self.tiles.t_w,
            self.tiles.t_h,
            self.threads,
            self.wall_us_median,
            self.wall_us_min,
            self.counters.mac_build,
            self.counters.mac_read_adds,
            self.counters.mac_dense,
            self.counters.lookups,
            "" if self.build_fraction is None else self.build_fraction,
            self.q_bar,
        ]


def suite_shapes(suite: str, batches=(1,)) -> list[ShapeSpec]:
    """Expand a built-in suite name or a shape CSV path into ShapeSpecs.

    A CSV file must carry the header M,N,K (extra columns are rejected);
    its rows pass through unchanged with multiplicity 1.
    """
    if suite in SUITES:
        return [
            ShapeSpec(m_batch=mb, n_out=n, k_in=k, multiplicity=mult, name=name)
            for mb in batches
            for (name, n, k, mult) in SUITES[suite]
        ]
    if not os.path.exists(suite):
        raise ConfigError(f"unknown suite {suite!r} (not a built-in, not a file)")
    shapes = []
    with open(suite, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["M", "N", "K"]:
            raise ConfigError(f"{suite}: shape CSV must have header M,N,K")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ConfigError(f"{suite}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                mb, n, k = (int(c) for c in row)
            except ValueError as exc:
                raise ConfigError(f"{suite}:{lineno}: non-integer shape") from exc
            shapes.append(ShapeSpec(m_batch=mb, n_out=n, k_in=k, name=f"row{lineno}"))
    if not shapes:
        raise ConfigError(f"{suite}: no shapes found")
    return shapes


def bench_input(shape: ShapeSpec, seed: int) -> Matrix:
    """Seeded Gaussian input of shape (K, M_batch), binary16."""
    rng = np.random.default_rng((seed, shape.k_in, shape.m_batch, 0x1A))
    return Matrix.from_array(rng.standard_normal((shape.k_in, shape.m_batch)))


def bench_layer(shape: ShapeSpec, cfg: QuantConfig, seed: int) -> QuantizedLayer:
    """Seeded synthetic layer of shape (N_out, K)."""
    return random_layer(shape.n_out, shape.k_in, cfg, seed=(seed ^ shape.n_out ^ shape.k_in))


def run_engine(
    engine: str,
    layer: QuantizedLayer,
    x: Matrix,
    tiles: TileConfig,
    threads: int,
):
    """Dispatch one engine run; returns (values, counters)."""
    if engine == "dense":
        return dense_gemm(reconstruct(layer), x, "binary32")
    if engine == "dequant":
        return dequant_gemm(layer, x, "naive")
    if engine == "dequant-mirrored":
        return dequant_gemm(layer, x, "mirrored")
    if engine == "codegemm":
        return codegemm_gemm(layer, x, tiles, threads=threads)
    raise ConfigError(f"unknown engine {engine!r} (choose from {', '.join(ENGINES)})")


def time_engine(
    engine: str,
    layer: QuantizedLayer,
    x: Matrix,
    tiles: TileConfig,
    threads: int,
    repeats: int,
    warmup: int,
):
    """Run the timing protocol; returns (median_us, min_us, counters)."""
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    if warmup < 0:
        raise ConfigError(f"warmup must be >= 0, got {warmup}")
    counters = None
    for _ in range(warmup):
        _, counters = run_engine(engine, layer, x, tiles, threads)
    samples = []
    for _ in range(repeats):
        start = time.perf_counter_ns()
        _, counters = run_engine(engine, layer, x, tiles, threads)
        samples.append((time.perf_counter_ns() - start) / 1000.0)
    return round(median(samples), 3), round(min(samples), 3), counters


def run_bench(
    shapes: list[ShapeSpec],
    cfg: QuantConfig,
    engines=("codegemm", "dequant"),
    tiles: TileConfig | None = None,
    threads: int = 1,
    repeats: int = 20,
    warmup: int = 3,
    seed: int = 0,
) -> list[BenchRecord]:
    """Measure every (shape, engine) pair.

    Counters are verified against the analytic predictions for every run;
    a mismatch raises IntegrityError (it would mean the engine and the
    model disagree about the work performed).
    """
    tiles = tiles if tiles is not None else TileConfig()
    records = []
    for shape in shapes:
        layer = bench_layer(shape, cfg, seed)
        x = bench_input(shape, seed)
        predicted = predict_complexity(cfg, shape.n_out, shape.m_batch, shape.k_in, tiles.t_w)
        q_bar = float(bit_breakdown(cfg, shape.n_out, shape.k_in).q_bar)
        for engine in engines:
            med, lo, counters = time_engine(engine, layer, x, tiles, threads, repeats, warmup)
            _check_counters(engine, counters, predicted)
            frac = None
            if counters.mac_build + counters.mac_read_adds > 0:
                frac = phase_split(counters)[0]
            records.append(
                BenchRecord(
                    shape=shape,
                    engine=engine,
                    cfg=cfg,
                    tiles=tiles,
                    threads=threads,
                    wall_us_median=med,
                    wall_us_min=lo,
                    counters=counters,
                    build_fraction=frac,
                    q_bar=q_bar,
                )
            )
    return records


def _check_counters(engine: str, counters: OpCounters, predicted) -> None:
    if engine == "codegemm":
        ok = (
            counters.mac_build == predicted.c_build
            and counters.mac_read_adds == predicted.c_read
            and counters.lookups == predicted.c_read
        )
    else:
        ok = counters.mac_dense == predicted.c_dense
    if not ok:
        raise CodeGemmError(
            f"{engine}: instrumented counters disagree with predictions: "
            f"{counters} vs {predicted}"
        )


def write_csv(records: list[BenchRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(rec.to_row())


def block_totals(records: list[BenchRecord]) -> dict:
    """Per (engine, batch) sum of multiplicity * median wall time (us)."""
    totals: dict = {}
    for rec in records:
        key = (rec.engine, rec.shape.m_batch)
        totals[key] = totals.get(key, 0.0) + rec.shape.multiplicity * rec.wall_us_median
    return {
        f"{engine}@M={batch}": round(total, 3)
        for (engine, batch), total in sorted(totals.items())
    }
