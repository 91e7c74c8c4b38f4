"""Frequency tables and the batched range coder.

The model-to-coder interface is the quantized frequency table: probabilities
in, integer frequencies summing to exactly 65536 out. Coding operates on B
independent bitstreams at once; each stream has its own (low, range, carry
cache) state and its own output buffer, which is what lets decode workers
split streams without touching shared state.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import CorruptionError

ALPHABET = 256


def quantize(probs: np.ndarray) -> np.ndarray:
    """Quantize probability rows to integer frequencies summing to 65536.

    Deterministic: floor(p * 65536), largest-remainder redistribution with
    ties to the lower index, then zeros raised to 1 at the expense of the
    current maximum. Raises ValueError if a row is not a distribution.
    """
    p = np.ascontiguousarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != ALPHABET:
        raise ValueError(f"expected (rows, {ALPHABET}) probabilities, got {p.shape}")
    freq = np.empty(p.shape, dtype=np.int64)
    bad = kernels.quantize_rows(p, freq, 0, p.shape[0])
    if bad >= 0:
        raise ValueError(f"row {bad} does not sum to 1 within quantizer tolerance")
    return freq


def cum_from_freq(freq: np.ndarray) -> np.ndarray:
    """Prefix sums: (R, 256) frequencies to (R, 257) cumulative bounds."""
    r = freq.shape[0]
    cum = np.empty((r, ALPHABET + 1), dtype=np.int64)
    cum[:, 0] = 0
    np.cumsum(freq, axis=1, out=cum[:, 1:])
    return cum


def uniform_cum(n_streams: int) -> np.ndarray:
    """Cumulative table of the uniform code used for warmup symbols."""
    row = np.arange(ALPHABET + 1, dtype=np.int64) * (kernels.TOTAL // ALPHABET)
    return np.tile(row, (n_streams, 1))


class BatchEncoder:
    """Range-encodes one symbol per stream per call across B streams."""

    def __init__(self, n_streams: int, initial_capacity: int = 4096):
        self.n = n_streams
        self.low = np.zeros(n_streams, dtype=np.int64)
        self.rng = np.full(n_streams, kernels.MASK32, dtype=np.int64)
        self.cache = np.zeros(n_streams, dtype=np.int64)
        self.ncache = np.zeros(n_streams, dtype=np.int64)
        self.buf = np.zeros((n_streams, initial_capacity), dtype=np.uint8)
        self.blen = np.zeros(n_streams, dtype=np.int64)
        self._done = False

    def _ensure_capacity(self, extra: int) -> None:
        # worst case per stream per symbol: the whole carry cache plus the
        # renormalization shifts
        need = int(self.blen.max() + self.ncache.max()) + extra
        cap = self.buf.shape[1]
        if need > cap:
            new = np.zeros((self.n, max(cap * 2, need)), dtype=np.uint8)
            new[:, :cap] = self.buf
            self.buf = new

    def encode(self, cum: np.ndarray, syms: np.ndarray, r0: int = 0,
               r1: int | None = None, step: int = -1) -> None:
        """Encode syms[r0:r1] against table rows cum[r0:r1]."""
        assert not self._done, "encoder already finished"
        if r1 is None:
            r1 = self.n
        self._ensure_capacity(8)
        s = np.ascontiguousarray(syms, dtype=np.int64)
        bad = kernels.encode_step(cum, s, self.low, self.rng, self.cache,
                                  self.ncache, self.buf, self.blen, r0, r1)
        if bad >= 0:
            raise CorruptionError(bad, step, "symbol has zero frequency")

    def finish(self) -> list[bytes]:
        """Flush carry state and return one byte string per stream."""
        assert not self._done, "encoder already finished"
        self._done = True
        self._ensure_capacity(16)
        kernels.flush(self.low, self.cache, self.ncache, self.buf, self.blen,
                      0, self.n)
        return [self.buf[k, :self.blen[k]].tobytes() for k in range(self.n)]


class BatchDecoder:
    """Mirror of BatchEncoder reading from a flat payload buffer.

    ``offsets``/``lengths`` locate each stream inside ``payload``. Streams
    decode independently, so callers may decode disjoint row ranges from
    different threads.
    """

    def __init__(self, payload: np.ndarray, offsets: np.ndarray,
                 lengths: np.ndarray):
        self.n = len(offsets)
        self.payload = payload
        self.off = np.ascontiguousarray(offsets, dtype=np.int64)
        self.dlen = np.ascontiguousarray(lengths, dtype=np.int64)
        self.pos = np.zeros(self.n, dtype=np.int64)
        self.code = np.zeros(self.n, dtype=np.int64)
        self.rng = np.zeros(self.n, dtype=np.int64)
        bad = kernels.prime(self.payload, self.off, self.dlen, self.pos,
                            self.code, self.rng, 0, self.n)
        if bad >= 0:
            raise CorruptionError(bad, -1, "stream shorter than coder tail")

    def decode(self, cum: np.ndarray, out: np.ndarray, r0: int, r1: int,
               step: int) -> None:
        """Decode one symbol for each stream in [r0, r1) into out."""
        bad, why = kernels.decode_step(cum, self.payload, self.off, self.dlen,
                                       self.pos, self.code, self.rng, out,
                                       r0, r1)
        if bad >= 0:
            detail = "truncated stream" if why == 2 else "invalid code value"
            raise CorruptionError(bad, step, detail)
