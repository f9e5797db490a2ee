"""Command-line front end: quantize, reconstruct, gemm, bits, predict, bench, sweep, error.

Conventions:
  * Success prints a JSON summary to stdout and exits 0.
  * Library/IO failures print {"error": {...}} to stderr and exit 1.
  * Flag misuse is an argparse usage error, exit 2.
  * All non-timing outputs (tensors, layer files, counter fields) are
    byte-identical across re-runs with the same flags; only wall_us fields
    vary.
  * Weight matrices are addressed as --rows x --cols; bench/sweep shapes
    use the (M, N, K) = (batch, out_features, reduction) convention.

Thread count resolves as --threads, else the CODEGEMM_THREADS environment
variable, else machine parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import accounting, bench, storage
from .engines import TileConfig, phase_split
from .errors import CodeGemmError
from .quantizer import QuantConfig, quant_error, quantize_layer, reconstruct
from .tensors import Matrix, load_tensor, save_tensor


def _resolve_threads(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("CODEGEMM_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise CodeGemmError(f"CODEGEMM_THREADS={env!r} is not an integer") from None
    return max(1, os.cpu_count() or 1)


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _config_from_args(args, seed_default: int = 0) -> QuantConfig:
    return QuantConfig(
        v=args.v,
        m=args.m,
        b=args.b,
        g=args.g,
        seed=getattr(args, "seed", seed_default),
        kmeans_iters=getattr(args, "iters", 25),
    )


def _int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise CodeGemmError(f"{flag} expects comma-separated integers, got {text!r}") from None


def _parse_shapes(text: str) -> list[bench.ShapeSpec]:
    shapes = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        pieces = part.lower().split("x")
        if len(pieces) != 3:
            raise CodeGemmError(f"shape {part!r} is not MxNxK")
        m_batch, n_out, k_in = (int(p) for p in pieces)
        shapes.append(bench.ShapeSpec(m_batch=m_batch, n_out=n_out, k_in=k_in, name=part))
    if not shapes:
        raise CodeGemmError("no shapes given")
    return shapes


def cmd_quantize(args) -> int:
    cfg = _config_from_args(args)
    if args.input is not None:
        w = load_tensor(args.input)
        if args.rows is not None and args.rows != w.rows:
            raise CodeGemmError(f"--rows {args.rows} != tensor rows {w.rows}")
        if args.cols is not None and args.cols != w.cols:
            raise CodeGemmError(f"--cols {args.cols} != tensor cols {w.cols}")
    else:
        if args.rows is None or args.cols is None:
            raise CodeGemmError("--rows and --cols are required without --input")
        rng = np.random.default_rng(cfg.seed)
        w = Matrix.from_array(rng.standard_normal((args.rows, args.cols)))

    layer = quantize_layer(w, cfg)
    storage.serialize(layer, args.out)
    breakdown = accounting.bit_breakdown(cfg, w.rows, w.cols)
    summary = {
        "out": os.fspath(args.out),
        "rows": w.rows,
        "cols": w.cols,
        "config": {"v": cfg.v, "m": cfg.m, "b": cfg.b, "g": cfg.g, "seed": cfg.seed, "kmeans_iters": cfg.kmeans_iters},
        "relative_error": quant_error(w, reconstruct(layer)),
        "payload_bits": storage.payload_bits(layer),
    }
    summary.update(breakdown.to_dict())
    _emit(summary)
    return 0


def cmd_reconstruct(args) -> int:
    layer = storage.deserialize(args.layer)
    w_hat = reconstruct(layer)
    save_tensor(w_hat, args.out)
    summary = {"out": os.fspath(args.out), "rows": w_hat.rows, "cols": w_hat.cols}
    if args.ref is not None:
        summary["relative_error"] = quant_error(load_tensor(args.ref), w_hat)
    _emit(summary)
    return 0


def cmd_gemm(args) -> int:
    layer = storage.deserialize(args.layer)
    x = load_tensor(args.x)
    tiles = TileConfig(t_w=args.tw, t_h=args.th)
    threads = _resolve_threads(args.threads)

    start = time.perf_counter_ns()
    values, counters = bench.run_engine(args.engine, layer, x, tiles, threads)
    wall_us = (time.perf_counter_ns() - start) / 1000.0

    save_tensor(Matrix.from_array(values), args.out)
    counter_doc = {
        "engine": args.engine,
        "rows": layer.rows,
        "cols": layer.cols,
        "n": x.cols,
        "tw": tiles.t_w,
        "th": tiles.t_h,
        "threads": threads,
        "mac_build": counters.mac_build,
        "mac_read_adds": counters.mac_read_adds,
        "mac_dense": counters.mac_dense,
        "lookups": counters.lookups,
        "psum_entries_per_tile": counters.psum_entries_per_tile,
    }
    if counters.mac_build + counters.mac_read_adds > 0:
        counter_doc["build_fraction"] = phase_split(counters)[0]
    if args.counters is not None:
        with open(args.counters, "w") as fh:
            json.dump(counter_doc, fh, indent=2)
            fh.write("\n")
    _emit({"out": os.fspath(args.out), "wall_us": wall_us, **counter_doc})
    return 0


def cmd_bits(args) -> int:
    if args.target is None:
        required = {"--v": args.v, "--m": args.m, "--b": args.b}
        missing = [flag for flag, value in required.items() if value is None]
        if missing:
            raise CodeGemmError(f"breakdown mode requires {', '.join(missing)}")
        cfg = QuantConfig(
            v=int(args.v), m=int(args.m), b=int(args.b), g=int(args.g) if args.g is not None else -1
        )
        breakdown = accounting.bit_breakdown(cfg, args.rows, args.cols)
        _emit(
            {
                "rows": args.rows,
                "cols": args.cols,
                "config": {"v": cfg.v, "m": cfg.m, "b": cfg.b, "g": cfg.g},
                **breakdown.to_dict(),
            }
        )
        return 0

    vs = _int_list(args.v, "--v") if args.v is not None else (1, 2, 4, 8, 16)
    ms = _int_list(args.m, "--m") if args.m is not None else (1, 2, 3, 4)
    bs = _int_list(args.b, "--b") if args.b is not None else (1, 2, 4, 8, 16)
    gs = _int_list(args.g, "--g") if args.g is not None else (-1, 16, 32, 64, 128)
    matches = accounting.enumerate_configs(
        args.target, args.tol, args.rows, args.cols, vs=vs, ms=ms, bs=bs, gs=gs
    )
    _emit(
        {
            "rows": args.rows,
            "cols": args.cols,
            "target": args.target,
            "tol": args.tol,
            "count": len(matches),
            "configs": [
                {"v": cfg.v, "m": cfg.m, "b": cfg.b, "g": cfg.g, **bd.to_dict()}
                for cfg, bd in matches
            ],
        }
    )
    return 0


def cmd_predict(args) -> int:
    cfg = QuantConfig(v=args.v, m=args.m, b=args.b, g=args.g)
    prediction = accounting.predict_complexity(cfg, args.rows, args.batch, args.cols, args.tw)
    _emit(
        {
            "rows": args.rows,
            "cols": args.cols,
            "batch": args.batch,
            "tw": args.tw,
            "config": {"v": cfg.v, "m": cfg.m, "b": cfg.b, "g": cfg.g},
            **prediction.to_dict(),
        }
    )
    return 0


def cmd_error(args) -> int:
    ref = load_tensor(args.ref)
    approx = load_tensor(args.approx)
    _emit({"relative_error": quant_error(ref, approx)})
    return 0


def _bench_common(args, shapes, tw_values, th_values) -> int:
    cfg = QuantConfig(v=args.v, m=args.m, b=args.b, g=args.g, seed=args.seed)
    engines = [e.strip() for e in args.engines.split(",") if e.strip()]
    for engine in engines:
        if engine not in bench.ENGINES:
            raise CodeGemmError(f"unknown engine {engine!r} (choose from {', '.join(bench.ENGINES)})")
    threads = _resolve_threads(args.threads)
    records = []
    for tw in tw_values:
        for th in th_values:
            records.extend(
                bench.run_bench(
                    shapes,
                    cfg,
                    engines=engines,
                    tiles=TileConfig(t_w=tw, t_h=th),
                    threads=threads,
                    repeats=args.repeats,
                    warmup=args.warmup,
                    seed=args.seed,
                )
            )
    bench.write_csv(records, args.out)
    _emit(
        {
            "out": os.fspath(args.out),
            "rows": len(records),
            "engines": engines,
            "threads": threads,
            "config": {"v": cfg.v, "m": cfg.m, "b": cfg.b, "g": cfg.g, "seed": cfg.seed},
            "block_totals_us": bench.block_totals(records),
        }
    )
    return 0


def cmd_bench(args) -> int:
    batches = _int_list(args.batch, "--batch")
    shapes = bench.suite_shapes(args.suite, batches=batches)
    return _bench_common(args, shapes, [args.tw], [args.th])


def cmd_sweep(args) -> int:
    shapes = _parse_shapes(args.shapes)
    tw_values = _int_list(args.tw, "--tw")
    th_values = _int_list(args.th, "--th")
    return _bench_common(args, shapes, tw_values, th_values)


def _add_quant_flags(p: argparse.ArgumentParser, with_seed: bool = True) -> None:
    p.add_argument("--v", type=int, required=True, help="vector length")
    p.add_argument("--m", type=int, required=True, help="number of codebooks")
    p.add_argument("--b", type=int, required=True, help="bits per code")
    p.add_argument("--g", type=int, default=-1, help="group size, -1 for row-wise")
    if with_seed:
        p.add_argument("--seed", type=int, default=0, help="generator seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codegemm",
        description="Codebook quantization with dequantization and lookup-table GEMM engines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="fit codebooks and write a layer file")
    p.add_argument("--input", help="CGT1 tensor to quantize (seeded Gaussian when omitted)")
    p.add_argument("--rows", type=int, help="rows of the generated matrix (or check --input)")
    p.add_argument("--cols", type=int, help="cols of the generated matrix (or check --input)")
    _add_quant_flags(p)
    p.add_argument("--iters", type=int, default=25, help="max Lloyd iterations per codebook")
    p.add_argument("--out", required=True, help="output layer file (CGMM)")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("reconstruct", help="decode a layer file back to a tensor")
    p.add_argument("--layer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ref", help="optional reference tensor for a relative-error report")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("gemm", help="multiply a layer by an input tensor")
    p.add_argument("--layer", required=True)
    p.add_argument("--x", required=True, help="input tensor (K x N)")
    p.add_argument("--engine", required=True, choices=bench.ENGINES)
    p.add_argument("--tw", type=int, default=32)
    p.add_argument("--th", type=int, default=2048)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True, help="output tensor path")
    p.add_argument("--counters", help="also write the counter JSON here")
    p.set_defaults(func=cmd_gemm)

    p = sub.add_parser("bits", help="bit budget of a config, or enumerate configs near a target")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--v", help="vector length (comma list with --target)")
    p.add_argument("--m", help="codebooks (comma list with --target)")
    p.add_argument("--b", help="bits per code (comma list with --target)")
    p.add_argument("--g", help="group size (comma list with --target)")
    p.add_argument("--target", type=float, help="enumerate configs near this q_bar")
    p.add_argument("--tol", type=float, default=0.05)
    p.set_defaults(func=cmd_bits)

    p = sub.add_parser("predict", help="analytic operation counts for one GEMM")
    p.add_argument("--rows", type=int, required=True, help="weight rows")
    p.add_argument("--cols", type=int, required=True, help="weight cols (reduction)")
    p.add_argument("--batch", type=int, default=1, help="input columns")
    _add_quant_flags(p, with_seed=False)
    p.add_argument("--tw", type=int, default=32)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="time engines over a shape suite, write CSV")
    p.add_argument("--suite", required=True, help="llama8b, llama70b, or a shape CSV path")
    p.add_argument("--engines", default="codegemm,dequant")
    p.add_argument("--batch", default="1", help="comma list of batch sizes for built-in suites")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    _add_quant_flags(p)
    p.add_argument("--tw", type=int, default=32)
    p.add_argument("--th", type=int, default=2048)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="bench over a tile-size grid")
    p.add_argument("--shapes", default="1x4096x4096,1x8192x8192", help="comma list of MxNxK")
    p.add_argument("--engines", default="codegemm")
    p.add_argument("--tw", default="32,64,128", help="comma list of tile widths")
    p.add_argument("--th", default="2048,4096", help="comma list of tile heights")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    _add_quant_flags(p)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("error", help="relative Frobenius error between two tensors")
    p.add_argument("--ref", required=True)
    p.add_argument("--approx", required=True)
    p.set_defaults(func=cmd_error)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CodeGemmError as exc:
        json.dump(
            {"error": {"type": type(exc).__name__, "message": str(exc)}},
            sys.stderr,
        )
        sys.stderr.write("\n")
        return 1
    except (OSError, ValueError) as exc:
        json.dump(
            {"error": {"type": type(exc).__name__, "message": str(exc)}},
            sys.stderr,
        )
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
