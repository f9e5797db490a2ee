"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with `pytest -s tests/test_acceptance.py` to see them
as they complete).

Criteria 2, 3, 4, and 9 share one randomized sweep of 200 quantize+multiply
cases (session fixture) so the whole suite stays inside its time budget.
"""

import itertools
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pytest

from codegemm import (
    Matrix,
    QuantConfig,
    TileConfig,
    aqlm_codebook_bytes,
    bit_breakdown,
    codegemm_gemm,
    dequant_gemm,
    kmeans_fit,
    pack_codes,
    payload_bits,
    phase_split,
    predict_complexity,
    quant_error,
    quantize_layer,
    random_layer,
    reconstruct,
    serialize,
    deserialize,
    unpack_codes,
)
from codegemm.bench import ShapeSpec, bench_input, bench_layer, time_engine
from codegemm.quantizer import CodePlane

SWEEP_SEED = 20260808
V_SET = (2, 4, 8, 16)
M_SET = (1, 2, 3)
B_SET = (2, 4, 8)
G_KINDS = ("row", "v", "2v", "32")


def report(number: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[acceptance] criterion {number} {name}: {status}{suffix}")
    assert ok, f"criterion {number} {name} failed {suffix}"


@dataclass
class SweepCase:
    v: int
    m: int
    b: int
    g: int
    rows: int
    cols: int
    n: int
    bit_exact: bool
    rel_l2_vs_f64: float
    mac_build: int
    mac_read_adds: int
    lookups: int
    psum_entries_per_tile: int


def _draw_case(v, m, b, g_kind, rng):
    g = {"row": -1, "v": v, "2v": 2 * v, "32": 32}[g_kind]
    base = v if g == -1 else g
    cols = base * int(rng.integers(1, max(1, 512 // base) + 1))
    rows = int(round(512 ** rng.random()))
    while (rows * cols // v) * (2**b) > 250_000 and rows > 1:
        rows = max(1, rows // 2)
    n = int(rng.integers(1, 9))
    return rows, cols, n, g


@pytest.fixture(scope="session")
def oracle_sweep():
    """200 randomized cases: quantize, run both engine paths, keep scalars."""
    rng = np.random.default_rng(SWEEP_SEED)
    specs = [
        (v, m, b) + _draw_case(v, m, b, gk, rng)
        for v, m, b in itertools.product(V_SET, M_SET, B_SET)
        for gk in G_KINDS
    ]
    while len(specs) < 196:
        v = V_SET[rng.integers(len(V_SET))]
        m = M_SET[rng.integers(len(M_SET))]
        b = B_SET[rng.integers(len(B_SET))]
        specs.append((v, m, b) + _draw_case(v, m, b, G_KINDS[rng.integers(4)], rng))
    # pin the size caps (cheap k-means: b=2)
    specs.append((2, 3, 2, 512, 1024, 8, -1))
    specs.append((4, 2, 2, 512, 1024, 8, 32))
    specs.append((16, 1, 2, 512, 1024, 8, 32))
    specs.append((8, 1, 2, 512, 1024, 8, 8))

    cases = []
    for v, m, b, rows, cols, n, g in specs:
        cfg = QuantConfig(
            v=v, m=m, b=b, g=g, seed=int(rng.integers(2**32)), kmeans_iters=1
        )
        w = Matrix.from_array(rng.standard_normal((rows, cols)))
        layer = quantize_layer(w, cfg)
        x = Matrix.from_array(rng.standard_normal((cols, n)))

        y_fast, counters = codegemm_gemm(layer, x)
        y_mirror, _ = dequant_gemm(layer, x, "mirrored")
        bit_exact = bool(np.array_equal(y_fast.view(np.uint32), y_mirror.view(np.uint32)))

        oracle = reconstruct(layer).widened(np.float64) @ x.widened(np.float64)
        rel = float(np.linalg.norm(y_fast - oracle) / np.linalg.norm(oracle))

        cases.append(
            SweepCase(
                v=v, m=m, b=b, g=g, rows=rows, cols=cols, n=n,
                bit_exact=bit_exact,
                rel_l2_vs_f64=rel,
                mac_build=counters.mac_build,
                mac_read_adds=counters.mac_read_adds,
                lookups=counters.lookups,
                psum_entries_per_tile=counters.psum_entries_per_tile,
            )
        )
    return cases


def test_criterion_1_reference_bit_breakdowns():
    printed = {
        (4, 1, 8, -1): (2.0, 0.001, 0.004, 2.005),
        (8, 2, 8, -1): (2.0, 0.004, 0.004, 2.008),
        (16, 4, 8, -1): (2.0, 0.016, 0.004, 2.020),
        (8, 1, 8, 16): (1.0, 0.002, 1.000, 2.002),
        (16, 3, 8, 32): (1.5, 0.012, 0.500, 2.012),
    }
    start = time.perf_counter()
    worst = 0.0
    for (v, m, b, g), expected in printed.items():
        bd = bit_breakdown(QuantConfig(v=v, m=m, b=b, g=g), 4096, 4096)
        got = (float(bd.q_code), float(bd.q_codebook), float(bd.q_norm), float(bd.q_bar))
        worst = max(worst, max(abs(a - e) for a, e in zip(got, expected)))
    elapsed = time.perf_counter() - start
    report(
        1,
        "bit budget table at 4096x4096",
        worst <= 0.0005 and elapsed < 1.0,
        f"max deviation {worst:.6f}, {elapsed:.3f}s",
    )


def test_criterion_2_bit_exact_equivalence(oracle_sweep):
    spanned = {
        "v": {c.v for c in oracle_sweep},
        "m": {c.m for c in oracle_sweep},
        "b": {c.b for c in oracle_sweep},
    }
    coverage_ok = (
        spanned["v"] >= set(V_SET)
        and spanned["m"] >= set(M_SET)
        and spanned["b"] >= set(B_SET)
        and any(c.g == -1 for c in oracle_sweep)
        and any(c.g == c.v for c in oracle_sweep)
        and any(c.g == 2 * c.v for c in oracle_sweep)
        and any(c.g == 32 for c in oracle_sweep)
        and max(c.rows for c in oracle_sweep) == 512
        and max(c.cols for c in oracle_sweep) == 1024
        and max(c.n for c in oracle_sweep) == 8
    )
    mismatches = sum(not c.bit_exact for c in oracle_sweep)
    report(
        2,
        "lookup engine bit-identical to mirrored dequant",
        len(oracle_sweep) >= 200 and mismatches == 0 and coverage_ok,
        f"{len(oracle_sweep)} cases, {mismatches} mismatches",
    )


def test_criterion_3_numeric_soundness(oracle_sweep):
    worst = max(c.rel_l2_vs_f64 for c in oracle_sweep)

    # the large decode-shape case: batch 1, out 4096, reduction 14336
    cfg = QuantConfig(v=4, m=1, b=8, g=128, seed=0)
    layer = random_layer(4096, 14336, cfg, seed=1)
    x = Matrix.from_array(np.random.default_rng(2).standard_normal((14336, 1)))
    y, _ = codegemm_gemm(layer, x)
    oracle = reconstruct(layer).widened(np.float64) @ x.widened(np.float64)
    rel_big = float(np.linalg.norm(y - oracle) / np.linalg.norm(oracle))

    report(
        3,
        "relative L2 vs binary64 dense on reconstructed weights <= 1e-3",
        worst <= 1e-3 and rel_big <= 1e-3,
        f"worst sweep {worst:.2e}, large shape {rel_big:.2e}",
    )


def test_criterion_4_counter_identities(oracle_sweep):
    exact = all(
        c.mac_build == c.m * 2**c.b * c.cols * c.n
        and c.mac_read_adds == c.m * c.rows * (c.cols // c.v) * c.n
        and c.lookups == c.mac_read_adds
        and Fraction(c.mac_read_adds, c.rows * c.n * c.cols) == Fraction(c.m, c.v)
        for c in oracle_sweep
    )
    report(4, "instrumented counters equal closed forms", exact, f"{len(oracle_sweep)} cases")


def test_criterion_5_build_fraction_batch_invariant():
    ok = True
    details = []
    for rows in (2048, 4096):
        cfg = QuantConfig(v=4, m=1, b=8, g=-1, seed=0)
        layer = random_layer(rows, 512, cfg, seed=rows)
        expected = Fraction(2**8 * 4, 2**8 * 4 + rows)
        fractions_seen = set()
        for n in (1, 4, 8):
            x = Matrix.from_array(np.random.default_rng(n).standard_normal((512, n)))
            _, counters = codegemm_gemm(layer, x)
            frac = Fraction(counters.mac_build, counters.mac_build + counters.mac_read_adds)
            fractions_seen.add(frac)
            ok = ok and phase_split(counters)[0] == float(expected)
        ok = ok and fractions_seen == {expected}
        details.append(f"M={rows}: {float(expected):.4f}")
    report(5, "build fraction independent of batch", ok, "; ".join(details))


def test_criterion_6_residual_monotonicity():
    w = Matrix.from_array(np.random.default_rng(256).standard_normal((256, 256)))
    errs = []
    for m in (1, 2, 3, 4):
        cfg = QuantConfig(v=8, m=m, b=4, g=32, seed=2026, kmeans_iters=25)
        errs.append(quant_error(w, reconstruct(quantize_layer(w, cfg))))
    monotone = all(a >= b for a, b in zip(errs, errs[1:]))
    report(
        6,
        "reconstruction error non-increasing in codebook count",
        monotone,
        " -> ".join(f"{e:.4f}" for e in errs),
    )


def test_criterion_7_kmeans_invariants():
    res = kmeans_fit(np.array([[0.0], [0.0], [10.0], [10.0]]), 2, seed=0, iters=20)
    separable_ok = res.sse == 0.0

    from itertools import product as iproduct

    def brute(pts, k):
        best = np.inf
        for assign in iproduct(range(k), repeat=len(pts)):
            sse = 0.0
            for c in range(k):
                members = pts[[i for i in range(len(pts)) if assign[i] == c]]
                if len(members):
                    sse += float(((members - members.mean(axis=0)) ** 2).sum())
            best = min(best, sse)
        return best

    rng = np.random.default_rng(7)
    tiny_ok = True
    for trial in range(10):
        n = int(rng.integers(2, 11))
        k = int(rng.integers(1, 4))
        pts = rng.standard_normal((n, int(rng.integers(1, 4))))
        res = kmeans_fit(pts, k, seed=trial, iters=60)
        tiny_ok = tiny_ok and res.sse >= brute(pts, k) - 1e-9
        dists = ((pts[:, None, :] - res.centroids[None]) ** 2).sum(axis=2)
        tiny_ok = tiny_ok and bool(np.array_equal(res.assignments, np.argmin(dists, axis=1)))

    # the per-iteration objective check runs inside kmeans_fit; exercise it
    for trial in range(5):
        pts = rng.standard_normal((200, 3))
        kmeans_fit(pts, 8, seed=trial, iters=30)

    report(7, "k-means objective and assignment invariants", separable_ok and tiny_ok)


def test_criterion_8_round_trips(tmp_path):
    rng = np.random.default_rng(88)
    pack_ok = True
    for b in range(1, 17):
        codes = rng.integers(0, 2**b, size=(5, 11), dtype=np.uint16)
        back = unpack_codes(pack_codes(CodePlane(codes), b), 5, 11, b)
        pack_ok = pack_ok and bool(np.array_equal(back.codes, codes))

    file_ok = True
    bits_ok = True
    for i in range(50):
        v = int(rng.choice([1, 2, 4, 8, 16]))
        m = int(rng.integers(1, 4))
        b = int(rng.integers(1, 17))
        g = int(rng.choice([-1, v, 2 * v, 4 * v]))
        base = v if g == -1 else g
        cols = base * int(rng.integers(1, 9))
        rows = int(rng.integers(1, 33))
        cfg = QuantConfig(v=v, m=m, b=b, g=g, seed=i)
        layer = random_layer(rows, cols, cfg, seed=i)
        path = tmp_path / f"layer{i}.cgmm"
        serialize(layer, path)
        file_ok = file_ok and deserialize(path).bitwise_equal(layer)
        bits_ok = bits_ok and payload_bits(layer) == bit_breakdown(cfg, rows, cols).total_bits

    report(
        8,
        "pack/unpack, file round trip, payload bits == q_bar*M*K",
        pack_ok and file_ok and bits_ok,
    )


def test_criterion_9_space_model(oracle_sweep):
    table_ok = all(
        c.psum_entries_per_tile == c.m * 2**c.b * (min(32, c.cols) // c.v)
        for c in oracle_sweep
    )
    formula_ok = all(
        c.psum_entries_per_tile
        == predict_complexity(
            QuantConfig(v=c.v, m=c.m, b=c.b, g=c.g), c.rows, c.n, c.cols, min(32, c.cols)
        ).psumbook_entries_per_tile
        for c in oracle_sweep
    )
    mb_ok = aqlm_codebook_bytes(1, 16, 8) == 1_048_576
    report(
        9,
        "table size matches space model; 2**16-entry codebook is 1 MiB",
        table_ok and formula_ok and mb_ok,
    )


def test_criterion_10_soft_cpu_benchmark():
    cfg = QuantConfig(v=4, m=1, b=8, g=128, seed=0)
    shape = ShapeSpec(m_batch=1, n_out=8192, k_in=8192)
    layer = bench_layer(shape, cfg, 0)
    x = bench_input(shape, 0)
    tiles = TileConfig(t_w=32, t_h=2048)

    fast_med, _, _ = time_engine("codegemm", layer, x, tiles, 1, repeats=5, warmup=1)
    base_med, _, _ = time_engine("dequant", layer, x, tiles, 1, repeats=5, warmup=1)
    ratio = fast_med / base_med
    flag = "" if ratio <= 1.0 else " [FLAG: lookup engine slower than dequant baseline]"
    # report-only: records the ratio, never fails on timing
    print(
        f"[acceptance] criterion 10 soft benchmark: codegemm {fast_med:.0f}us, "
        f"dequant {base_med:.0f}us, ratio {ratio:.3f}{flag}"
    )
    report(10, "soft benchmark recorded", True, f"ratio {ratio:.3f}")
