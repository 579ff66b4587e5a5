"""Command-line surface: quantize, prepack, bench, nmse, tune.

All commands support --json for machine-readable output; every error path
exits nonzero after printing a single line ``error:<CODE>: message`` to
stderr.  Random data uses numpy's PCG64 generator seeded by --seed, so
reported numbers are reproducible bit for bit for a given seed.
"""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import fileio, tuner
from .core import (DEFAULT_GROUP_SIZE, DEFAULT_LANES, TileConfig,
                   dequantize, quantize_weights)
from .errors import BitLutError, ParameterError
from .kernel import KernelStats, KernelVariant, mpgemm
from .oracle import reference_gemm, reference_mpgemm
from .weight_prep import (decompose_bits, deserialize, pad_weights,
                          prepare_weights, serialize, unpack_planes)

VARIANT_CHOICES = [v.value for v in KernelVariant]
SCHEMA_VERSION = 1


def _parse_shape(text: str, want_n: bool):
    parts = text.lower().split("x")
    try:
        if want_n and len(parts) == 3:
            m, k, n = (int(p) for p in parts)
        elif len(parts) == 2:
            m, k, n = int(parts[0]), int(parts[1]), 1
        else:
            raise ValueError(text)
    except ValueError:
        raise ParameterError(
            f"shape must be MxK{'xN' if want_n else ''}, got {text!r}") \
            from None
    if m < 1 or k < 1 or n < 1:
        raise ParameterError(f"shape dimensions must be positive: {text!r}")
    return m, k, n


def _emit(payload: dict, as_json: bool, lines) -> None:
    if as_json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for line in lines:
            print(line)


def _tile_from_args(args) -> TileConfig:
    return TileConfig(n_tile=getattr(args, "tile_n", 1),
                      m_tile=args.tile_m, k_tile=args.tile_k,
                      g=args.g, lanes=args.lanes)


def cmd_quantize(args) -> int:
    mat = fileio.read_matrix(args.input)
    qw = quantize_weights(mat, args.bits, args.group_size,
                          refine=not args.no_refine)
    fileio.write_quantized(args.output, qw)
    err = np.abs(dequantize(qw).to_array() - mat.to_array())
    denom = float(np.sqrt((mat.to_array() ** 2).mean())) or 1.0
    rel_rms = float(np.sqrt((err ** 2).mean())) / denom
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "quantize",
        "output": str(args.output),
        "shape": {"m": qw.m, "k": qw.k},
        "bits": qw.bits,
        "group_size": qw.group_size,
        "max_abs_error": float(err.max()),
        "mean_abs_error": float(err.mean()),
        "relative_rms_error": rel_rms,
    }
    _emit(payload, args.json, [
        f"quantized {qw.m}x{qw.k} to {qw.bits}-bit "
        f"(group_size={qw.group_size}) -> {args.output}",
        f"max abs error  {err.max():.6g}",
        f"mean abs error {err.mean():.6g}",
        f"relative RMS   {rel_rms:.6g}",
    ])
    return 0


def cmd_prepack(args) -> int:
    qw = fileio.read_quantized(args.input)
    tile = _tile_from_args(args)
    if args.pad:
        qw = pad_weights(qw, tile.m_tile, tile.k_tile)
    pw = prepare_weights(qw, tile)
    with open(args.output, "wb") as f:
        f.write(serialize(pw))
    verified = None
    if args.verify:
        reread = deserialize(open(args.output, "rb").read())
        original = decompose_bits(qw, tile.g)
        recovered = unpack_planes(reread)
        verified = all(
            np.array_equal(o.indices, r.indices)
            for o, r in zip(original, recovered))
        if not verified:
            raise BitLutError("round-trip verification failed")
    n_tiles = (pw.m // tile.m_tile) * ((pw.k // tile.g)
                                       // tile.k_groups_per_tile)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "prepack",
        "output": str(args.output),
        "shape": {"m": pw.m, "k": pw.k},
        "bits": pw.bits,
        "g": pw.g,
        "group_size": pw.group_size,
        "tile": {"n_tile": tile.n_tile, "m_tile": tile.m_tile,
                 "k_tile": tile.k_tile, "lanes": tile.lanes},
        "planes": pw.bits,
        "plane_bytes": pw.plane_bytes,
        "payload_bytes": pw.bits * pw.plane_bytes,
        "index_slots": pw.index_slots,
        "tiles_per_plane": n_tiles,
        "verified": verified,
    }
    _emit(payload, args.json, [
        f"packed {pw.m}x{pw.k} {pw.bits}-bit (g={pw.g}) -> {args.output}",
        f"planes          {pw.bits} x {pw.plane_bytes} bytes",
        f"payload bytes   {pw.bits * pw.plane_bytes}",
        f"index slots     {pw.index_slots}",
        f"tiles per plane {n_tiles}",
    ] + ([f"round-trip verified: {verified}"] if args.verify else []))
    return 0


def _bench_one(path: str, args) -> dict:
    pw = deserialize(open(path, "rb").read())
    variant = KernelVariant(args.variant)
    n = args.n if args.op == "gemm" else 1
    rng = np.random.default_rng(args.seed)
    a = rng.standard_normal((n, pw.k), dtype=np.float32)
    stats = KernelStats()
    mpgemm(a, pw, variant=variant, threads=args.threads, stats=stats)
    samples = []
    for _ in range(max(0, args.warmup - 1)):
        mpgemm(a, pw, variant=variant, threads=args.threads)
    for _ in range(args.reps):
        t0 = time.perf_counter()
        mpgemm(a, pw, variant=variant, threads=args.threads)
        samples.append(time.perf_counter() - t0)
    weight_bytes = pw.bits * pw.plane_bytes
    median = float(np.median(samples))
    return {
        "file": str(path),
        "op": args.op,
        "shape": {"m": pw.m, "k": pw.k, "n": n},
        "bits": pw.bits,
        "g": pw.g,
        "group_size": pw.group_size,
        "variant": variant.value,
        "threads": args.threads,
        "reps": args.reps,
        "warmup": args.warmup,
        "seed": args.seed,
        "latency_s": {
            "median": median,
            "mean": float(np.mean(samples)),
            "min": float(np.min(samples)),
            "samples": samples,
        },
        "weight_bytes": weight_bytes,
        "weight_bytes_per_s": weight_bytes / median,
        "lookups_per_output": stats.lookups // (pw.m * n),
        "lookups_total": stats.lookups,
        "lut_builds": stats.lut_builds,
        "machine_id": tuner.machine_id(pw.tile.lanes),
    }


def cmd_bench(args) -> int:
    reports = [_bench_one(path, args) for path in args.files]
    bit_scaling = None
    if len(reports) > 1:
        ordered = sorted(reports, key=lambda r: r["bits"], reverse=True)
        meds = [r["latency_s"]["median"] for r in ordered]
        bit_scaling = {
            "bits": [r["bits"] for r in ordered],
            "median_latency_s": meds,
            "nonincreasing_with_fewer_bits": all(
                meds[i + 1] <= meds[i] for i in range(len(meds) - 1)),
        }
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "bench",
        "reports": reports,
        "bit_scaling": bit_scaling,
    }
    lines = []
    for r in reports:
        lat = r["latency_s"]
        lines.append(
            f"{r['file']}: {r['shape']['m']}x{r['shape']['k']} "
            f"{r['bits']}-bit {r['variant']} ({r['op']}, n={r['shape']['n']}, "
            f"threads={r['threads']})")
        lines.append(
            f"  median {lat['median'] * 1e3:.3f} ms   mean "
            f"{lat['mean'] * 1e3:.3f} ms   min {lat['min'] * 1e3:.3f} ms")
        lines.append(
            f"  weight bytes/s {r['weight_bytes_per_s']:.3e}   lookups/out "
            f"{r['lookups_per_output']}   lut builds {r['lut_builds']}")
    if bit_scaling is not None:
        lines.append(
            f"bit scaling {bit_scaling['bits']}: medians "
            f"{['%.3f ms' % (t * 1e3) for t in bit_scaling['median_latency_s']]} "
            f"nonincreasing={bit_scaling['nonincreasing_with_fewer_bits']}")
    _emit(payload, args.json, lines)
    return 0


def _nmse(y: np.ndarray, y_hat: np.ndarray) -> float:
    return float(((y - y_hat) ** 2).sum() / (y ** 2).sum())


def cmd_nmse(args) -> int:
    m, k, n = _parse_shape(args.shape, want_n=True)
    rng = np.random.default_rng(args.seed)
    w = rng.standard_normal((m, k), dtype=np.float32)
    a = rng.standard_normal((n, k), dtype=np.float32)
    qw = quantize_weights(w, args.bits, args.group_size)
    tile = _tile_from_args(args)
    qp = pad_weights(qw, tile.m_tile, tile.k_tile)
    a_pad = np.zeros((n, qp.k), dtype=np.float32)
    a_pad[:, :k] = a
    pw = prepare_weights(qp, tile)

    y = reference_gemm(a, w)
    baseline = _nmse(y, reference_mpgemm(a, qw))
    wanted = VARIANT_CHOICES if args.variant == "all" else [args.variant]
    results = []
    for name in wanted:
        out = mpgemm(a_pad, pw, variant=KernelVariant(name),
                     threads=args.threads)[:, :m]
        results.append({"variant": name, "nmse": _nmse(y, out)})
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "nmse",
        "shape": {"m": m, "k": k, "n": n},
        "bits": args.bits,
        "g": args.g,
        "group_size": args.group_size,
        "seed": args.seed,
        "baseline_nmse": baseline,
        "variants": results,
    }
    lines = [f"shape {m}x{k}x{n}, {args.bits}-bit group-{args.group_size}, "
             f"seed {args.seed}",
             f"  {'dequantize-reference':22s} {baseline:.6e}"]
    lines += [f"  {r['variant']:22s} {r['nmse']:.6e}" for r in results]
    _emit(payload, args.json, lines)
    return 0


def cmd_tune(args) -> int:
    m, k, _ = _parse_shape(args.shape, want_n=False)
    result = tuner.tune((m, k), args.bits, variant=args.variant,
                        budget_ms=args.budget_ms, g=args.g,
                        lanes=args.lanes, group_size=args.group_size,
                        cache_path=args.tune_cache, seed=args.seed)
    cfg = result.cfg
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "tune",
        "key": {"m": m, "k": k, "bits": args.bits, "g": args.g,
                "machine_id": result.key[4]},
        "cfg": {"n_tile": cfg.n_tile, "m_tile": cfg.m_tile,
                "k_tile": cfg.k_tile, "lanes": cfg.lanes, "g": cfg.g},
        "throughput_bytes_per_s": result.throughput,
        "timestamp": result.timestamp,
    }
    _emit(payload, args.json, [
        f"shape {m}x{k} bits={args.bits} g={args.g} "
        f"machine={result.key[4]}",
        f"best cfg: n_tile={cfg.n_tile} m_tile={cfg.m_tile} "
        f"k_tile={cfg.k_tile} lanes={cfg.lanes}",
        f"throughput {result.throughput:.3e} weight bytes/s",
    ])
    return 0


def _add_tile_flags(p, with_n: bool = True):
    if with_n:
        p.add_argument("--tile-n", type=int, default=1,
                       help="activation rows per block")
    p.add_argument("--tile-m", type=int, default=32,
                   help="output channels per tile")
    p.add_argument("--tile-k", type=int, default=128,
                   help="reduction elements per tile")
    p.add_argument("--lanes", type=int, default=DEFAULT_LANES,
                   help="byte-parallel lookup width")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bitlut",
        description="Lookup-table mixed-precision GEMM kernels and tools")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="quantize a raw real matrix file")
    p.add_argument("input", help="raw matrix file (LMRM)")
    p.add_argument("-o", "--output", required=True,
                   help="quantized output file (LMQW)")
    p.add_argument("--bits", type=int, default=4, choices=range(1, 5))
    p.add_argument("--group-size", type=int, default=DEFAULT_GROUP_SIZE)
    p.add_argument("--no-refine", action="store_true",
                   help="disable the scale search/refit")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("prepack", help="pack quantized weights for the kernels")
    p.add_argument("input", help="quantized weight file (LMQW)")
    p.add_argument("-o", "--output", required=True,
                   help="packed output file (LMPW)")
    p.add_argument("--g", type=int, default=4, choices=range(1, 9))
    _add_tile_flags(p)
    p.add_argument("--pad", action="store_true",
                   help="pad M/K up to the tile grid instead of failing")
    p.add_argument("--verify", action="store_true",
                   help="re-read the file and check the bit planes round-trip")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_prepack)

    p = sub.add_parser("bench", help="benchmark kernels on packed weights")
    p.add_argument("files", nargs="+", help="packed weight files (LMPW)")
    p.add_argument("--op", choices=["gemv", "gemm"], default="gemv")
    p.add_argument("--n", type=int, default=8,
                   help="activation rows for --op gemm")
    p.add_argument("--variant", choices=VARIANT_CHOICES, default="vector-q8")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("nmse", help="error analysis against the unquantized "
                                    "reference on Gaussian data")
    p.add_argument("--shape", required=True, help="MxKxN, e.g. 4096x4096x1")
    p.add_argument("--bits", type=int, default=4, choices=range(1, 5))
    p.add_argument("--group-size", type=int, default=DEFAULT_GROUP_SIZE)
    p.add_argument("--g", type=int, default=4, choices=range(1, 9))
    _add_tile_flags(p, with_n=False)
    p.add_argument("--variant", choices=VARIANT_CHOICES + ["all"],
                   default="all")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_nmse)

    p = sub.add_parser("tune", help="search tile configurations for a shape")
    p.add_argument("--shape", required=True, help="MxK, e.g. 4096x4096")
    p.add_argument("--bits", type=int, default=4, choices=range(1, 5))
    p.add_argument("--g", type=int, default=4, choices=range(1, 9))
    p.add_argument("--lanes", type=int, default=DEFAULT_LANES)
    p.add_argument("--group-size", type=int, default=DEFAULT_GROUP_SIZE)
    p.add_argument("--variant", choices=VARIANT_CHOICES, default="vector-q8")
    p.add_argument("--budget-ms", type=float, default=2000.0)
    p.add_argument("--tune-cache", default=None,
                   help="cache file for tuning results")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_tune)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BitLutError as e:
        print(f"error:{e.code}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error:EIO: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
