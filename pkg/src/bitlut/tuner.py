"""Tile-configuration search by direct micro-benchmarking.

For a given (M, K, bits, g) on the current machine, candidate tile
configurations are benchmarked with synthetic weights and the fastest is
cached in a line-delimited text file keyed by shape and machine.
"""
from __future__ import annotations

import hashlib
import os
import platform
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (DEFAULT_GROUP_SIZE, DEFAULT_LANES, TileConfig,
                   indices_per_byte, quantize_weights)
from .errors import ParameterError, TuningError
from .kernel import KernelVariant, mpgemv, validate_kernel_config
from .weight_prep import prepare_weights

CACHE_RECORD_VERSION = "v1"
DEFAULT_SCRATCH_BUDGET = 32 * 1024  # bytes of real-mode table entries


@dataclass(frozen=True)
class TuneResult:
    """Winning configuration for one (shape, bits, g, machine) key."""

    key: tuple  # (m, k, bits, g, machine_id)
    cfg: TileConfig
    throughput: float  # packed weight bytes processed per second
    timestamp: float


def machine_id(lanes: int = DEFAULT_LANES) -> str:
    """Stable identifier for the benchmarking substrate."""
    brand = platform.processor() or platform.machine() or "unknown"
    try:
        with open("/proc/cpuinfo") as f:
            for line in f:
                if line.lower().startswith("model name"):
                    brand = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    digest = hashlib.sha256(f"{brand}|lanes={lanes}".encode()).hexdigest()
    return digest[:12]


def enumerate_configs(m: int, k: int, bits: int, g: int,
                      lanes: int = DEFAULT_LANES,
                      scratch_budget: int = DEFAULT_SCRATCH_BUDGET,
                      group_size: int = DEFAULT_GROUP_SIZE) -> list[TileConfig]:
    """Candidate tile configs for a shape, filtered by divisibility and
    by the table working-set budget (bytes of real-mode entries).

    m_tile sweeps powers of two in [lanes, 256] that divide m; k_tile
    sweeps g * 2^j up to 256 that divide k and pack into whole bytes;
    n_tile in {1, 4, 8}.
    """
    if scratch_budget <= 0:
        raise TuningError("scratch budget must be positive")
    per = indices_per_byte(g)
    m_tiles = []
    mt = lanes
    while mt <= 256:
        if m % mt == 0:
            m_tiles.append(mt)
        mt *= 2
    k_tiles = []
    kt = g
    while kt <= 256:
        if k % kt == 0 and (kt // g) % per == 0 and k % group_size == 0:
            k_tiles.append(kt)
        kt *= 2
    configs = []
    for n_tile in (1, 4, 8):
        for m_tile in m_tiles:
            for k_tile in k_tiles:
                cfg = TileConfig(n_tile=n_tile, m_tile=m_tile,
                                 k_tile=k_tile, g=g, lanes=lanes)
                ws_bytes = cfg.lut_working_set_entries() * 4
                if ws_bytes > scratch_budget:
                    continue
                try:
                    validate_kernel_config(cfg, bits, group_size, m, k)
                except Exception:
                    continue
                configs.append(cfg)
    return configs


def _bench_config(cfg: TileConfig, qw, a_row, variant: KernelVariant,
                  warmups: int, reps: int) -> float:
    pw = prepare_weights(qw, cfg)
    for _ in range(warmups):
        mpgemv(a_row, pw, cfg=cfg, variant=variant)
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        mpgemv(a_row, pw, cfg=cfg, variant=variant)
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def _selection_key(cfg: TileConfig, throughput: float):
    # fastest first; ties broken by smaller working set, then smaller m_tile
    return (-throughput, cfg.lut_working_set_entries(), cfg.m_tile)


def tune(shape: tuple[int, int], bits: int,
         variant: KernelVariant | str = KernelVariant.VECTOR_QUANTIZED,
         budget_ms: float = 2000.0, g: int = 4,
         lanes: int = DEFAULT_LANES,
         group_size: int = DEFAULT_GROUP_SIZE,
         cache_path: str | os.PathLike | None = None,
         warmups: int = 2, reps: int = 5,
         seed: int = 0,
         measurements_out: list | None = None) -> TuneResult:
    """Benchmark candidate configs for a shape and return the fastest.

    Runs each candidate ``reps`` times after ``warmups`` warmup calls and
    compares medians; stops starting new candidates once ``budget_ms`` is
    spent.  A cache hit short-circuits the search entirely.  When given,
    ``measurements_out`` receives every (cfg, throughput) pair measured.
    """
    m, k = shape
    variant = KernelVariant(variant)
    if reps < 1 or warmups < 0:
        raise ParameterError("reps must be >= 1 and warmups >= 0")
    key = (m, k, bits, g, machine_id(lanes))
    if cache_path is not None:
        cached = load_cached(cache_path, key)
        if cached is not None:
            return cached
    configs = enumerate_configs(m, k, bits, g, lanes=lanes,
                                group_size=group_size)
    if not configs:
        raise TuningError(
            f"no viable tile configuration for shape {m}x{k}, bits={bits}, "
            f"g={g}: all candidates rejected by divisibility or budget")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((m, k), dtype=np.float32)
    a_row = rng.standard_normal(k, dtype=np.float32)
    qw = quantize_weights(w, bits, group_size, refine=False)
    payload = bits * m * (k // g) // indices_per_byte(g)

    deadline = time.perf_counter() + budget_ms / 1000.0
    measured = []
    for cfg in configs:
        med = _bench_config(cfg, qw, a_row, variant, warmups, reps)
        measured.append((cfg, payload / med))
        if measurements_out is not None:
            measurements_out.append((cfg, payload / med))
        if time.perf_counter() > deadline:
            break
    best_cfg, best_tp = min(measured, key=lambda ct: _selection_key(*ct))
    result = TuneResult(key=key, cfg=best_cfg, throughput=best_tp,
                        timestamp=time.time())
    if cache_path is not None:
        store_cached(cache_path, result)
    return result


def _format_record(r: TuneResult) -> str:
    m, k, bits, g, mach = r.key
    cfg = r.cfg
    fields = [CACHE_RECORD_VERSION, str(m), str(k), str(bits), str(g), mach,
              f"{cfg.n_tile},{cfg.m_tile},{cfg.k_tile},{cfg.lanes}",
              repr(r.throughput), repr(r.timestamp)]
    return "\t".join(fields)


def _parse_record(line: str) -> TuneResult | None:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 9 or parts[0] != CACHE_RECORD_VERSION:
        return None
    try:
        m, k, bits, g = (int(p) for p in parts[1:5])
        mach = parts[5]
        nt, mt, kt, lanes = (int(p) for p in parts[6].split(","))
        throughput = float(parts[7])
        timestamp = float(parts[8])
    except ValueError:
        return None
    cfg = TileConfig(n_tile=nt, m_tile=mt, k_tile=kt, g=g, lanes=lanes)
    return TuneResult(key=(m, k, bits, g, mach), cfg=cfg,
                      throughput=throughput, timestamp=timestamp)


def load_cached(path, key) -> TuneResult | None:
    p = Path(path)
    if not p.exists():
        return None
    for line in p.read_text().splitlines():
        rec = _parse_record(line)
        if rec is not None and rec.key == tuple(key):
            return rec
    return None


def store_cached(path, result: TuneResult) -> None:
    """Insert or replace the record for result.key with atomic rewrite."""
    p = Path(path)
    lines = []
    if p.exists():
        for line in p.read_text().splitlines():
            rec = _parse_record(line)
            if rec is None or rec.key != result.key:
                lines.append(line)
    lines.append(_format_record(result))
    fd, tmp = tempfile.mkstemp(dir=str(p.parent) or ".",
                               prefix=p.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write("\n".join(lines) + "\n")
        os.replace(tmp, p)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
