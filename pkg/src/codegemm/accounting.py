"""Exact bit-budget and operation-count arithmetic.

Everything here is pure integer/rational math (fractions.Fraction), so
reported averages reproduce to printed precision without floating-point
rounding concerns. Floats appear only at the reporting boundary.

For an (M x K) layer quantized with (v, m, b, g):

    stored bits = 16 * m * 2**b * v        (codebooks, binary16 elements)
                + b * m * M * (K / v)      (codes)
                + 16 * M * (K / g_eff)     (scales; g_eff = K when g == -1)

    average bits per weight q_bar = stored bits / (M * K)

Lookup-engine work for input width N and tile width t_w:

    c_build = m * 2**b * K * N      (table construction MACs)
    c_read  = m * M * (K / v) * N   (lookup-accumulate events)
    c_dense = M * N * K             (dense-equivalent MACs)
    reduction factor = c_read / c_dense = m / v
    table entries per tile-column = m * 2**b * t_w / v
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product

from .errors import ConfigError
from .quantizer import QuantConfig

F16_BITS = 16


@dataclass(frozen=True)
class BitBreakdown:
    """Average bits per weight, split by where the bits live."""

    q_code: Fraction
    q_codebook: Fraction
    q_norm: Fraction
    q_bar: Fraction
    total_bits: int

    def to_dict(self) -> dict:
        return {
            "q_code": float(self.q_code),
            "q_codebook": float(self.q_codebook),
            "q_norm": float(self.q_norm),
            "q_bar": float(self.q_bar),
            "total_bits": self.total_bits,
            "exact": {
                "q_code": str(self.q_code),
                "q_codebook": str(self.q_codebook),
                "q_norm": str(self.q_norm),
                "q_bar": str(self.q_bar),
            },
        }


@dataclass(frozen=True)
class ComplexityPrediction:
    """Analytic operation counts for one GEMM shape and config."""

    c_build: int
    c_read: int
    c_dense: int
    reduction_factor: Fraction
    psumbook_entries_per_tile: int
    codebook_elements: int

    @property
    def build_fraction(self) -> Fraction:
        return Fraction(self.c_build, self.c_build + self.c_read)

    def to_dict(self) -> dict:
        return {
            "c_build": self.c_build,
            "c_read": self.c_read,
            "c_dense": self.c_dense,
            "reduction_factor": float(self.reduction_factor),
            "reduction_factor_exact": str(self.reduction_factor),
            "build_fraction": float(self.build_fraction),
            "psumbook_entries_per_tile": self.psumbook_entries_per_tile,
            "codebook_elements": self.codebook_elements,
        }


def bit_breakdown(cfg: QuantConfig, rows: int, cols: int) -> BitBreakdown:
    """Exact per-weight bit budget of a quantized (rows x cols) matrix."""
    cfg.validate_shape(rows, cols)
    g_eff = cfg.group_size_for(cols)
    weights = rows * cols

    s_codebook = F16_BITS * cfg.m * 2**cfg.b * cfg.v
    s_code = cfg.b * cfg.m * rows * (cols // cfg.v)
    s_norm = F16_BITS * rows * (cols // g_eff)

    return BitBreakdown(
        q_code=Fraction(s_code, weights),
        q_codebook=Fraction(s_codebook, weights),
        q_norm=Fraction(s_norm, weights),
        q_bar=Fraction(s_codebook + s_code + s_norm, weights),
        total_bits=s_codebook + s_code + s_norm,
    )


def predict_complexity(
    cfg: QuantConfig, rows: int, n: int, cols: int, t_w: int
) -> ComplexityPrediction:
    """Exact operation counts for Y = W @ X with W (rows x cols), X (cols x n)."""
    cfg.validate_shape(rows, cols)
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if t_w % cfg.v != 0 or t_w < cfg.v:
        raise ConfigError(f"t_w={t_w} must be a multiple of v={cfg.v} and >= v")
    k = 2**cfg.b
    return ComplexityPrediction(
        c_build=cfg.m * k * cols * n,
        c_read=cfg.m * rows * (cols // cfg.v) * n,
        c_dense=rows * n * cols,
        reduction_factor=Fraction(cfg.m, cfg.v),
        psumbook_entries_per_tile=cfg.m * k * (t_w // cfg.v),
        codebook_elements=cfg.m * k * cfg.v,
    )


def predicted_build_fraction(cfg: QuantConfig, rows: int) -> Fraction:
    """Build share of table-phase MACs: 2**b * v / (2**b * v + M).

    Independent of both K and N (they cancel in the exact ratio).
    """
    kv = 2**cfg.b * cfg.v
    return Fraction(kv, kv + rows)


def enumerate_configs(
    target_qbar,
    tolerance,
    rows: int,
    cols: int,
    vs=(1, 2, 4, 8, 16),
    ms=(1, 2, 3, 4),
    bs=(1, 2, 4, 8, 16),
    gs=(-1, 16, 32, 64, 128),
) -> list[tuple[QuantConfig, BitBreakdown]]:
    """All valid configs whose q_bar lies within target +/- tolerance.

    Sorted by (q_bar, reduction factor m/v), then by the config tuple for a
    stable order. Returns an empty list when nothing matches.
    """
    target = Fraction(target_qbar)
    tol = Fraction(tolerance)
    out = []
    for v, m, b, g in product(vs, ms, bs, gs):
        try:
            cfg = QuantConfig(v=v, m=m, b=b, g=g)
            cfg.validate_shape(rows, cols)
        except ConfigError:
            continue
        bd = bit_breakdown(cfg, rows, cols)
        if abs(bd.q_bar - target) <= tol:
            out.append((cfg, bd))
    out.sort(key=lambda it: (it[1].q_bar, Fraction(it[0].m, it[0].v), it[0].v, it[0].m, it[0].b, it[0].g))
    return out


def aqlm_codebook_bytes(m: int, b: int, v: int) -> int:
    """Bytes a dequantization kernel needs to cache all m full codebooks."""
    if m < 1 or v < 1:
        raise ConfigError(f"m and v must be >= 1, got m={m}, v={v}")
    if not 1 <= b <= 16:
        raise ConfigError(f"b must be in [1, 16], got {b}")
    return m * 2**b * v * 2
