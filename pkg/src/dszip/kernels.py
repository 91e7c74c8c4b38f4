"""Hot integer kernels behind the coder, in two interchangeable backends.

The per-symbol range-coder loops and the frequency quantizer are the only
compute-bound code outside BLAS matmuls, so they carry numba ``@njit``
versions. A fallback backend runs the same loops interpreted (and the
quantizer fully vectorized in numpy) for installs without numba.

Select with the ``DSZIP_BACKEND`` environment variable: ``numba`` (default
when importable) or ``numpy``. Both backends do identical integer arithmetic,
so bitstreams and tables are byte-for-byte the same either way; only speed
differs. ``benchmarks/backend_bench.py`` measures the gap.

Coder scheme: 32-bit range coder, 16-bit frequency precision, byte-wise
renormalization. State per stream is (low, range, cache, ncache) where
``cache``/``ncache`` hold bytes whose final value still depends on a possible
carry out of ``low``. Renormalization emits bytes until range >= 2^24. Each
stream pays a fixed 4-byte tail at flush and nothing up front.
"""

from __future__ import annotations

import os

import numpy as np

TOP = 1 << 24
MASK32 = (1 << 32) - 1
PRECISION = 16
TOTAL = 1 << PRECISION
_KEYSCALE = float(1 << 40)

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# quantizer
# ---------------------------------------------------------------------------
# floor(p * 65536), then +1 to the largest remainders until the table sums to
# 65536, then raise zeros to 1 stealing from the current maximum. Remainder
# ties break toward the lower index; the composite integer sort key makes
# every key distinct so any sort algorithm yields the same order.

def _quantize_rows(probs, freq, r0, r1):
    a = probs.shape[1]
    t = np.empty(a, dtype=np.float64)
    keys = np.empty(a, dtype=np.int64)
    for k in range(r0, r1):
        deficit = TOTAL
        for i in range(a):
            t[i] = probs[k, i] * 65536.0
            vi = int(t[i])
            freq[k, i] = vi
            deficit -= vi
        if deficit < 0 or deficit > a:
            return k
        if deficit > 0:
            for i in range(a):
                fr = t[i] - int(t[i])
                keys[i] = int(fr * _KEYSCALE) * 256 + (a - 1 - i)
            order = np.argsort(keys)
            for j in range(a - deficit, a):
                freq[k, order[j]] += 1
        zeros = 0
        imax = 0
        vmax = -1
        for i in range(a):
            v = freq[k, i]
            if v > vmax:
                vmax = v
                imax = i
            if v == 0:
                zeros += 1
        if zeros > 0:
            if vmax - zeros < 1:
                return k
            freq[k, imax] = vmax - zeros
            for i in range(a):
                if freq[k, i] == 0:
                    freq[k, i] = 1
    return -1


def _np_quantize_rows(probs, freq, r0, r1):
    """Vectorized quantizer, identical output to the row loop."""
    a = probs.shape[1]
    t = probs[r0:r1] * 65536.0
    v = t.astype(np.int64)  # t >= 0, truncation == floor
    deficit = TOTAL - v.sum(axis=1)
    bad = np.nonzero((deficit < 0) | (deficit > a))[0]
    if bad.size:
        return int(bad[0]) + r0
    frac = t - v
    keys = (frac * _KEYSCALE).astype(np.int64) * 256 + (a - 1 - np.arange(a, dtype=np.int64))
    order = np.argsort(keys, axis=1)
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.broadcast_to(np.arange(a, dtype=np.int64), order.shape), axis=1)
    v += rank >= (a - deficit)[:, None]
    zeros = (v == 0).sum(axis=1)
    rows = np.arange(v.shape[0])
    imax = v.argmax(axis=1)
    vmax = v[rows, imax]
    bad = np.nonzero(vmax - zeros < 1)[0]
    if bad.size:
        return int(bad[0]) + r0
    v[rows, imax] = vmax - zeros
    np.maximum(v, 1, out=v)
    freq[r0:r1] = v
    return -1


# ---------------------------------------------------------------------------
# range coder loops
# ---------------------------------------------------------------------------
# All state lives in caller-owned int64 arrays indexed by stream, so the same
# functions serve the serial path, the pipelined consumer, and the per-worker
# row ranges of parallel decode.

def _encode_step(cum, syms, low, rng, cache, ncache, buf, blen, r0, r1):
    for k in range(r0, r1):
        s = int(syms[k])
        c0 = int(cum[k, s])
        c1 = int(cum[k, s + 1])
        if c1 <= c0:
            return k
        r = int(rng[k]) >> 16
        lo = int(low[k]) + c0 * r
        rg = (c1 - c0) * r
        ca = int(cache[k])
        nc = int(ncache[k])
        n = int(blen[k])
        while rg < TOP:
            if lo < 0xFF000000 or lo > MASK32:
                carry = lo >> 32
                if nc > 0:
                    buf[k, n] = (ca + carry) & 0xFF
                    n += 1
                    for _ in range(nc - 1):
                        buf[k, n] = (0xFF + carry) & 0xFF
                        n += 1
                ca = (lo >> 24) & 0xFF
                nc = 0
            nc += 1
            lo = (lo << 8) & MASK32
            rg <<= 8
        low[k] = lo
        rng[k] = rg
        cache[k] = ca
        ncache[k] = nc
        blen[k] = n
    return -1


def _flush(low, cache, ncache, buf, blen, r0, r1):
    # five shifts push every live bit of low through the carry cache; the
    # final cached byte is a zero the decoder never needs
    for k in range(r0, r1):
        lo = int(low[k])
        ca = int(cache[k])
        nc = int(ncache[k])
        n = int(blen[k])
        for _ in range(5):
            if lo < 0xFF000000 or lo > MASK32:
                carry = lo >> 32
                if nc > 0:
                    buf[k, n] = (ca + carry) & 0xFF
                    n += 1
                    for _ in range(nc - 1):
                        buf[k, n] = (0xFF + carry) & 0xFF
                        n += 1
                ca = (lo >> 24) & 0xFF
                nc = 0
            nc += 1
            lo = (lo << 8) & MASK32
        low[k] = lo
        cache[k] = ca
        ncache[k] = nc
        blen[k] = n
    return -1


def _prime(payload, off, dlen, pos, code, rng, r0, r1):
    for k in range(r0, r1):
        if dlen[k] < 4:
            return k
        base = int(off[k])
        cd = 0
        for j in range(4):
            cd = (cd << 8) | int(payload[base + j])
        code[k] = cd
        pos[k] = 4
        rng[k] = MASK32
    return -1


def _decode_step(cum, payload, off, dlen, pos, code, rng, out, r0, r1):
    for k in range(r0, r1):
        r = int(rng[k]) >> 16
        cd = int(code[k])
        dv = cd // r
        if dv >= TOTAL:
            return k, 1
        lo_ = 0
        hi_ = cum.shape[1] - 1
        while hi_ - lo_ > 1:
            mid = (lo_ + hi_) >> 1
            if int(cum[k, mid]) <= dv:
                lo_ = mid
            else:
                hi_ = mid
        s = lo_
        c0 = int(cum[k, s])
        c1 = int(cum[k, s + 1])
        cd -= c0 * r
        rg = (c1 - c0) * r
        p = int(pos[k])
        base = int(off[k])
        lim = int(dlen[k])
        while rg < TOP:
            if p >= lim:
                return k, 2
            cd = ((cd << 8) | int(payload[base + p])) & MASK32
            p += 1
            rg <<= 8
        pos[k] = p
        code[k] = cd
        rng[k] = rg
        out[k] = s
    return -1, 0


_PY_IMPLS = {
    "quantize_rows": _np_quantize_rows,
    "encode_step": _encode_step,
    "flush": _flush,
    "prime": _prime,
    "decode_step": _decode_step,
}

BACKENDS: dict[str, dict] = {"numpy": _PY_IMPLS}

if HAS_NUMBA:
    _jit = njit(cache=True, nogil=True)
    BACKENDS["numba"] = {
        "quantize_rows": _jit(_quantize_rows),
        "encode_step": _jit(_encode_step),
        "flush": _jit(_flush),
        "prime": _jit(_prime),
        "decode_step": _jit(_decode_step),
    }


def _pick_backend() -> str:
    want = os.environ.get("DSZIP_BACKEND", "").strip().lower()
    if want:
        if want not in BACKENDS:
            avail = ", ".join(sorted(BACKENDS))
            raise RuntimeError(f"DSZIP_BACKEND={want!r} unavailable (have: {avail})")
        return want
    return "numba" if HAS_NUMBA else "numpy"


BACKEND = _pick_backend()

quantize_rows = BACKENDS[BACKEND]["quantize_rows"]
encode_step = BACKENDS[BACKEND]["encode_step"]
flush = BACKENDS[BACKEND]["flush"]
prime = BACKENDS[BACKEND]["prime"]
decode_step = BACKENDS[BACKEND]["decode_step"]
