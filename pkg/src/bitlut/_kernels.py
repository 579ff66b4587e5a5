"""Numba-jitted inner loops: group quantizer and the lookup-accumulate kernels.

Layout contract shared with weight_prep (layout version 1): per bit plane,
bytes are ordered [m-block][k-block][lane-block][unit], one unit packing
``indices_per_byte(g)`` consecutive k-groups for ``lanes`` adjacent output
channels.  ``decode[b, t]`` recovers the t-th index held by byte value b.

Mirror consolidation is applied at lookup time: an index with the top bit
set reads the complementary slot of the stored half-table and negates it
(branchless via xor/add).
"""
from __future__ import annotations

import numpy as np
from numba import njit

INT32_MAX = 2**31 - 1


@njit(cache=True)
def quantize_groups(x, half, nstep, q_out, d_out):
    """Round-to-nearest quantization of each row of ``x`` (one group per row).

    Baseline scale maps the signed extreme to exactly -half.  When
    nstep > 0, candidate inverse scales around the baseline are tried and
    the best rounding (by least-squares score) keeps a refit scale.
    """
    ng, gs = x.shape
    for gi in range(ng):
        amax = np.float32(0.0)
        smax = np.float32(0.0)
        for j in range(gs):
            ax = abs(x[gi, j])
            if ax > amax:
                amax = ax
                smax = x[gi, j]
        if amax == 0.0:
            d_out[gi] = 0.0
            for j in range(gs):
                q_out[gi, j] = half
            continue
        inv = np.float32(-half) / smax
        if nstep == 0:
            d = smax / np.float32(-half)
            for j in range(gs):
                l = int(round(x[gi, j] * inv))
                if l < -half:
                    l = -half
                if l > half - 1:
                    l = half - 1
                q_out[gi, j] = l + half
            d_out[gi] = d
            continue
        best_score = np.float32(-1.0)
        best_inv = inv
        for t in range(-nstep, nstep + 1):
            cand = (np.float32(-half) + np.float32(0.1) * np.float32(t)) / smax
            sumlx = np.float32(0.0)
            suml2 = np.float32(0.0)
            for j in range(gs):
                l = int(round(x[gi, j] * cand))
                if l < -half:
                    l = -half
                if l > half - 1:
                    l = half - 1
                sumlx += x[gi, j] * l
                suml2 += np.float32(l * l)
            if suml2 > 0.0 and sumlx * sumlx > best_score * suml2:
                best_score = sumlx * sumlx / suml2
                best_inv = cand
        sumlx = np.float32(0.0)
        suml2 = np.float32(0.0)
        for j in range(gs):
            l = int(round(x[gi, j] * best_inv))
            if l < -half:
                l = -half
            if l > half - 1:
                l = half - 1
            q_out[gi, j] = l + half
            sumlx += x[gi, j] * l
            suml2 += np.float32(l * l)
        d_out[gi] = sumlx / suml2 if suml2 > 0.0 else np.float32(0.0)


@njit(cache=True, nogil=True)
def gemv_real(planes, decode, tabs, wscales, rowsums, out, stats,
              K, bits, g, per, m_tile, k_tile, lanes, group_size, mb0, mb1):
    """Reference-semantics row kernel: real half-tables, lane-blocked walk."""
    KG = K // g
    ktg = k_tile // g
    gpg = group_size // g
    mask = np.int32((1 << g) - 1)
    gshift = g - 1
    n_kb = K // k_tile
    n_lb = m_tile // lanes
    mb_bytes = m_tile * KG // per
    NQ = K // group_size
    stage = np.zeros(m_tile, dtype=np.float32)
    buf = np.zeros(lanes, dtype=np.uint8)
    lookups = 0
    for i in range(bits):
        pf = np.float32(0.5 * (1 << i))
        for mb in range(mb0, mb1):
            for j in range(m_tile):
                stage[j] = 0.0
            pos = mb * mb_bytes
            for kb in range(n_kb):
                for lb in range(n_lb):
                    moff = lb * lanes
                    for u in range(ktg // per):
                        kgu = kb * ktg + u * per
                        for j in range(lanes):
                            buf[j] = planes[i, pos + j]
                        for t in range(per):
                            kg = kgu + t
                            for j in range(lanes):
                                idx = np.int32(decode[buf[j], t])
                                s = idx >> gshift
                                eff = idx ^ (mask * s)
                                v = tabs[kg, eff]
                                if s == 1:
                                    v = -v
                                stage[moff + j] += v
                            lookups += lanes
                            if (kg + 1) % gpg == 0:
                                gq = kg // gpg
                                f = pf
                                for j in range(lanes):
                                    m = mb * m_tile + moff + j
                                    out[m] += f * wscales[m, gq] * stage[moff + j]
                                    stage[moff + j] = 0.0
                        pos += lanes
    for m in range(mb0 * m_tile, mb1 * m_tile):
        s = np.float32(0.0)
        for gq in range(NQ):
            s += wscales[m, gq] * rowsums[gq]
        out[m] -= np.float32(0.5) * s
    stats[0] += lookups


@njit(cache=True, nogil=True)
def gemv_q8_vector(planes, decode, qtabs, tscales, wscales, rowsums, out, stats,
                   K, bits, g, per, m_tile, k_tile, lanes, group_size, mb0, mb1):
    """Quantized-table row kernel, byte-parallel flavor (lanes-wide inner loop)."""
    KG = K // g
    ktg = k_tile // g
    gpg = group_size // g
    mask = np.int32((1 << g) - 1)
    gshift = g - 1
    n_kb = K // k_tile
    n_lb = m_tile // lanes
    mb_bytes = m_tile * KG // per
    NQ = K // group_size
    stage = np.zeros(m_tile, dtype=np.int32)
    buf = np.zeros(lanes, dtype=np.uint8)
    lookups = 0
    for i in range(bits):
        pf = np.float32(0.5 * (1 << i))
        for mb in range(mb0, mb1):
            for j in range(m_tile):
                stage[j] = 0
            pos = mb * mb_bytes
            for kb in range(n_kb):
                for lb in range(n_lb):
                    moff = lb * lanes
                    for u in range(ktg // per):
                        kgu = kb * ktg + u * per
                        for j in range(lanes):
                            buf[j] = planes[i, pos + j]
                        for t in range(per):
                            kg = kgu + t
                            for j in range(lanes):
                                idx = np.int32(decode[buf[j], t])
                                s = idx >> gshift
                                eff = idx ^ (mask * s)
                                v = np.int32(qtabs[kg, eff])
                                stage[moff + j] += (v ^ -s) + s
                            lookups += lanes
                            if (kg + 1) % gpg == 0:
                                gq = kg // gpg
                                f = pf * tscales[gq]
                                for j in range(lanes):
                                    m = mb * m_tile + moff + j
                                    out[m] += f * wscales[m, gq] * np.float32(stage[moff + j])
                                    stage[moff + j] = 0
                        pos += lanes
    for m in range(mb0 * m_tile, mb1 * m_tile):
        s = np.float32(0.0)
        for gq in range(NQ):
            s += wscales[m, gq] * rowsums[gq]
        out[m] -= np.float32(0.5) * s
    stats[0] += lookups


@njit(cache=True, nogil=True)
def gemv_q8_scalar(planes, decode, qtabs, tscales, wscales, rowsums, out, stats,
                   K, bits, g, per, m_tile, k_tile, lanes, group_size, mb0, mb1):
    """Quantized-table row kernel, one output channel at a time.

    Same integer arithmetic as gemv_q8_vector in the same per-channel
    order, so outputs are bit-identical; only the parallelization
    (loop nesting) differs.
    """
    KG = K // g
    ktg = k_tile // g
    gpg = group_size // g
    mask = np.int32((1 << g) - 1)
    gshift = g - 1
    n_kb = K // k_tile
    n_lb = m_tile // lanes
    span_bytes = m_tile * ktg // per
    lb_bytes = lanes * ktg // per
    mb_bytes = m_tile * KG // per
    NQ = K // group_size
    lookups = 0
    for i in range(bits):
        pf = np.float32(0.5 * (1 << i))
        for mb in range(mb0, mb1):
            for lb in range(n_lb):
                for j in range(lanes):
                    m = mb * m_tile + lb * lanes + j
                    acc = np.int32(0)
                    for kb in range(n_kb):
                        base = mb * mb_bytes + kb * span_bytes + lb * lb_bytes + j
                        for u in range(ktg // per):
                            b = planes[i, base + u * lanes]
                            for t in range(per):
                                kg = kb * ktg + u * per + t
                                idx = np.int32(decode[b, t])
                                s = idx >> gshift
                                eff = idx ^ (mask * s)
                                v = np.int32(qtabs[kg, eff])
                                acc += (v ^ -s) + s
                                lookups += 1
                                if (kg + 1) % gpg == 0:
                                    gq = kg // gpg
                                    out[m] += pf * tscales[gq] * wscales[m, gq] * np.float32(acc)
                                    acc = 0
    for m in range(mb0 * m_tile, mb1 * m_tile):
        s = np.float32(0.0)
        for gq in range(NQ):
            s += wscales[m, gq] * rowsums[gq]
        out[m] -= np.float32(0.5) * s
    stats[0] += lookups


@njit(cache=True, nogil=True)
def gemv_q8_fast_agg(planes, decode, qtabs, tscales, wscales, rowsums, out, stats,
                     K, bits, g, per, m_tile, k_tile, lanes, group_size,
                     seg_len, depth, bias_corr, mb0, mb1):
    """Fast-aggregation row kernel: int8 averaging trees instead of exact sums.

    Per output channel and table-scale segment, the seg_len lookup results
    of each bit plane are folded by a balanced rounding-halving-add tree,
    the per-plane results are folded again by a halving chain that realizes
    the power-of-two plane weights, and one rescale plus one probabilistic
    bias correction recovers an estimate of the exact combined partial.
    """
    KG = K // g
    ktg = k_tile // g
    gpg = group_size // g
    mask = np.int32((1 << g) - 1)
    gshift = g - 1
    n_kb = K // k_tile
    n_lb = m_tile // lanes
    span_bytes = m_tile * ktg // per
    lb_bytes = lanes * ktg // per
    mb_bytes = m_tile * KG // per
    NQ = K // group_size
    scale_back = np.float32(1 << (depth + bits - 1))
    tree = np.zeros(seg_len, dtype=np.int32)
    lookups = 0
    for mb in range(mb0, mb1):
        for kb in range(n_kb):
            for lb in range(n_lb):
                for seg in range(ktg // seg_len):
                    kg0 = kb * ktg + seg * seg_len
                    gq = kg0 // gpg
                    span0 = mb * mb_bytes + kb * span_bytes + lb * lb_bytes
                    for j in range(lanes):
                        m = mb * m_tile + lb * lanes + j
                        h = np.int32(0)
                        for i in range(bits):
                            for s_ in range(seg_len):
                                kg_in_span = seg * seg_len + s_
                                b = planes[i, span0
                                           + (kg_in_span // per) * lanes + j]
                                t = kg_in_span % per
                                idx = np.int32(decode[b, t])
                                sg = idx >> gshift
                                eff = idx ^ (mask * sg)
                                v = np.int32(qtabs[kg0 + s_, eff])
                                tree[s_] = (v ^ -sg) + sg
                            lookups += seg_len
                            width = seg_len
                            while width > 1:
                                half_w = width // 2
                                for p in range(half_w):
                                    tree[p] = (tree[2 * p] + tree[2 * p + 1] + 1) >> 1
                                width = half_w
                            r = tree[0]
                            if i == 0:
                                h = (r + 1) >> 1
                            else:
                                h = (h + r + 1) >> 1
                        est = np.float32(h) * scale_back - bias_corr
                        out[m] += wscales[m, gq] * tscales[gq] * est
    for m in range(mb0 * m_tile, mb1 * m_tile):
        s = np.float32(0.0)
        for gq in range(NQ):
            s += wscales[m, gq] * rowsums[gq]
        out[m] -= np.float32(0.5) * s
    stats[0] += lookups
