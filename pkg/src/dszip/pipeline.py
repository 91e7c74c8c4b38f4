"""Execution strategies: stream partitioning, serial and pipelined
compression, and barrier-synchronized parallel decompression.

All three executors drive the model through the identical sequence of
predict and train calls, so their outputs are byte-for-byte interchangeable.
The serial path is the reference; the pipelined path overlaps the coder with
model work through a two-slot ping-pong buffer; the parallel decoder fans the
per-stream decode out to worker threads between two barriers per step.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .coder import BatchDecoder, BatchEncoder, cum_from_freq, quantize, uniform_cum
from .config import ModelConfig
from .model import LN2, Predictor

__all__ = [
    "StreamPartition",
    "PingPongBuffer",
    "CompressResult",
    "run_serial_compress",
    "run_pipelined_compress",
    "run_parallel_decompress",
    "throughput_report",
]


@dataclass(frozen=True)
class StreamPartition:
    """Maps a flat byte string onto a (n_streams, stream_length) grid.

    Stream k covers bytes [k * stream_length, (k+1) * stream_length); the
    last stream is zero padded. Decoders reproduce the pad and truncate.
    """

    original_length: int
    n_streams: int
    stream_length: int

    @classmethod
    def from_length(cls, length: int, n_streams: int) -> "StreamPartition":
        stream_length = -(-length // n_streams) if length else 0
        return cls(length, n_streams, stream_length)

    @property
    def pad(self) -> int:
        return self.n_streams * self.stream_length - self.original_length

    def split(self, data: bytes) -> np.ndarray:
        if len(data) != self.original_length:
            raise ValueError("data length does not match partition")
        flat = np.zeros(self.n_streams * self.stream_length, dtype=np.uint8)
        flat[:self.original_length] = np.frombuffer(data, dtype=np.uint8)
        return flat.reshape(self.n_streams, self.stream_length)

    def join(self, mat: np.ndarray) -> bytes:
        return mat.reshape(-1)[:self.original_length].tobytes()


class _Slot:
    __slots__ = ("state", "step", "cum", "targets", "warmup")

    def __init__(self) -> None:
        self.state = "empty"
        self.step = -1
        self.cum = None
        self.targets = None
        self.warmup = False


_LEGAL = {
    ("empty", "filling"),
    ("filling", "full"),
    ("full", "draining"),
    ("draining", "empty"),
}


class PingPongBuffer:
    """Two-slot handoff between the model thread and the coder thread.

    The producer fills slot (step mod 2) while the consumer drains the other;
    payloads move by reference, never copied. Slot states walk the cycle
    empty -> filling -> full -> draining -> empty, and any other transition
    is a protocol violation. ``trace`` receives (slot_index, old, new) for
    every transition, which tests use to audit the protocol.
    """

    def __init__(self, trace=None):
        self._slots = (_Slot(), _Slot())
        self._cond = threading.Condition()
        self._trace = trace
        self._exc: BaseException | None = None

    def _set(self, slot: _Slot, new: str) -> None:
        old = slot.state
        assert (old, new) in _LEGAL, f"illegal slot transition {old} -> {new}"
        slot.state = new
        if self._trace is not None:
            self._trace((self._slots.index(slot), old, new))

    def _wait_for(self, slot: _Slot, state: str) -> None:
        # a slot that already reached the wanted state stays usable after an
        # abort; only a wait that could block forever raises
        with self._cond:
            while slot.state != state:
                if self._exc is not None:
                    raise self._exc
                self._cond.wait(timeout=0.1)

    def acquire_fill(self, step: int) -> _Slot:
        slot = self._slots[step % 2]
        self._wait_for(slot, "empty")
        with self._cond:
            self._set(slot, "filling")
        return slot

    def commit_fill(self, slot: _Slot) -> None:
        with self._cond:
            self._set(slot, "full")
            self._cond.notify_all()

    def acquire_drain(self, step: int) -> _Slot:
        slot = self._slots[step % 2]
        self._wait_for(slot, "full")
        with self._cond:
            self._set(slot, "draining")
        return slot

    def commit_drain(self, slot: _Slot) -> None:
        slot.cum = None
        slot.targets = None
        with self._cond:
            self._set(slot, "empty")
            self._cond.notify_all()

    def abort(self, exc: BaseException) -> None:
        """Wake both sides with ``exc``; first abort wins."""
        with self._cond:
            if self._exc is None:
                self._exc = exc
            self._cond.notify_all()


@dataclass
class CompressResult:
    streams: list
    cfg: ModelConfig
    partition: StreamPartition
    losses: list = field(default_factory=list)
    elapsed: float = 0.0
    metrics: list | None = None


class _MetricsTape:
    """Per-step records for the --metrics flag; one dict per model step."""

    def __init__(self, phase: str, bytes_per_step: int):
        self.phase = phase
        self.bytes_per_step = bytes_per_step
        self.records: list = []
        self.t0 = time.perf_counter()

    def record(self, step: int, loss: float, model: Predictor) -> None:
        elapsed = time.perf_counter() - self.t0
        rec = {
            "phase": self.phase,
            "step": step,
            "loss_nats": loss,
            "bits_per_byte": loss / LN2,
            "elapsed_s": elapsed,
            "kb_per_min": ((step + 1) * self.bytes_per_step / 1024.0)
            / max(elapsed / 60.0, 1e-9),
        }
        if model.alpha_stats is not None:
            mean, lo, hi = model.alpha_stats
            rec.update(alpha_mean=mean, alpha_min=lo, alpha_max=hi)
        self.records.append(rec)


def _prepare(data: bytes, cfg: ModelConfig):
    cfg = cfg.shrink_to_fit(len(data))
    cfg.validate()
    part = StreamPartition.from_length(len(data), cfg.batch)
    mat = part.split(data)
    warm = min(cfg.ctx_len, part.stream_length)
    return cfg, part, mat, warm


def run_serial_compress(data: bytes, cfg: ModelConfig, variant: str = "full",
                        coder_delay: float = 0.0,
                        collect_metrics: bool = False) -> CompressResult:
    """Reference executor: predict, encode, train for one step at a time."""
    t0 = time.perf_counter()
    if not data:
        return CompressResult([], cfg, StreamPartition.from_length(0, cfg.batch))
    cfg, part, mat, warm = _prepare(data, cfg)
    steps = part.stream_length
    model = Predictor(cfg, variant) if steps > warm else None
    tape = _MetricsTape("compress", cfg.batch) if collect_metrics else None
    enc = BatchEncoder(cfg.batch)
    ucum = uniform_cum(cfg.batch)
    losses: list = []
    for i in range(steps):
        if i < warm:
            cum = ucum
        else:
            probs = model.predict(mat[:, i - cfg.ctx_len:i])
            cum = cum_from_freq(quantize(probs))
        if coder_delay:
            time.sleep(coder_delay)
        enc.encode(cum, mat[:, i], step=i)
        if i >= warm:
            losses.append(model.train_step(mat[:, i]))
            if tape is not None:
                tape.record(i, losses[-1], model)
    return CompressResult(enc.finish(), cfg, part, losses,
                          time.perf_counter() - t0,
                          tape.records if tape else None)


def run_pipelined_compress(data: bytes, cfg: ModelConfig,
                           variant: str = "full", coder_delay: float = 0.0,
                           collect_metrics: bool = False,
                           trace=None) -> CompressResult:
    """Two-stage executor, byte-identical to the serial path.

    The producer thread runs predict/quantize/train; the calling thread
    drains the ping-pong buffer and encodes. The table for step i is always
    built from the model state before the step-i update, exactly as in the
    serial loop, so overlap changes timing only.
    """
    t0 = time.perf_counter()
    if not data:
        return CompressResult([], cfg, StreamPartition.from_length(0, cfg.batch))
    cfg, part, mat, warm = _prepare(data, cfg)
    steps = part.stream_length
    model = Predictor(cfg, variant) if steps > warm else None
    tape = _MetricsTape("compress", cfg.batch) if collect_metrics else None
    buf = PingPongBuffer(trace=trace)
    losses: list = []
    producer_exc: list = []

    def produce() -> None:
        try:
            for i in range(steps):
                if i < warm:
                    cum = None
                else:
                    probs = model.predict(mat[:, i - cfg.ctx_len:i])
                    cum = cum_from_freq(quantize(probs))
                slot = buf.acquire_fill(i)
                slot.step = i
                slot.cum = cum
                slot.targets = mat[:, i]
                slot.warmup = cum is None
                buf.commit_fill(slot)
                # train after handing the table off so the coder overlaps
                # with the backward pass
                if i >= warm:
                    losses.append(model.train_step(mat[:, i]))
                    if tape is not None:
                        tape.record(i, losses[-1], model)
        except BaseException as exc:  # noqa: BLE001 - must cross the thread
            producer_exc.append(exc)
            buf.abort(exc)

    worker = threading.Thread(target=produce, name="dszip-model", daemon=True)
    worker.start()
    enc = BatchEncoder(cfg.batch)
    ucum = uniform_cum(cfg.batch)
    try:
        for i in range(steps):
            slot = buf.acquire_drain(i)
            cum = ucum if slot.warmup else slot.cum
            targets = slot.targets
            if coder_delay:
                time.sleep(coder_delay)
            enc.encode(cum, targets, step=i)
            buf.commit_drain(slot)
    except BaseException as exc:
        buf.abort(exc)
        worker.join()
        if producer_exc:
            raise producer_exc[0] from None
        raise
    worker.join()
    if producer_exc:
        raise producer_exc[0]
    return CompressResult(enc.finish(), cfg, part, losses,
                          time.perf_counter() - t0,
                          tape.records if tape else None)


def clamp_workers(workers: int, n_streams: int) -> int:
    """Largest worker count <= requested that divides the stream count."""
    w = max(1, min(int(workers), n_streams))
    while n_streams % w:
        w -= 1
    return w


def run_parallel_decompress(payload: np.ndarray, offsets: np.ndarray,
                            lengths: np.ndarray, cfg: ModelConfig,
                            original_length: int, workers: int = 1,
                            decode_delay: float = 0.0,
                            want_losses: bool = False,
                            collect_metrics: bool = False):
    """Decode all streams, replaying the compressor's model updates.

    Each step: the coordinator publishes the step's cumulative table, two
    barriers bracket the workers' decode of their disjoint stream ranges,
    then the coordinator trains on the decoded column. Any exception on
    either side breaks the barriers so nobody blocks forever.
    """
    if original_length == 0:
        return (b"", []) if want_losses else b""
    part = StreamPartition.from_length(original_length, cfg.batch)
    steps = part.stream_length
    warm = min(cfg.ctx_len, steps)
    nw = clamp_workers(workers, cfg.batch)
    model = Predictor(cfg) if steps > warm else None
    tape = _MetricsTape("decompress", cfg.batch) if collect_metrics else None
    dec = BatchDecoder(payload, offsets, lengths)
    mat = np.zeros((cfg.batch, steps), dtype=np.uint8)
    out = np.zeros(cfg.batch, dtype=np.int64)
    ucum = uniform_cum(cfg.batch)
    published: list = [None]
    start = threading.Barrier(nw + 1)
    done = threading.Barrier(nw + 1)
    worker_exc: list = []
    losses: list = []

    def decode_rows(lo: int, hi: int) -> None:
        try:
            for i in range(steps):
                start.wait()
                dec.decode(published[0], out, lo, hi, step=i)
                if decode_delay:
                    time.sleep(decode_delay * (hi - lo))
                done.wait()
        except threading.BrokenBarrierError:
            return
        except BaseException as exc:  # noqa: BLE001 - must cross the thread
            worker_exc.append(exc)
            start.abort()
            done.abort()

    rows_per = cfg.batch // nw
    threads = [threading.Thread(target=decode_rows,
                                args=(k * rows_per, (k + 1) * rows_per),
                                name=f"dszip-decode-{k}", daemon=True)
               for k in range(nw)]
    for t in threads:
        t.start()
    try:
        for i in range(steps):
            if i < warm:
                published[0] = ucum
            else:
                probs = model.predict(mat[:, i - cfg.ctx_len:i])
                published[0] = cum_from_freq(quantize(probs))
            start.wait()
            done.wait()
            mat[:, i] = out
            if i >= warm:
                losses.append(model.train_step(mat[:, i]))
                if tape is not None:
                    tape.record(i, losses[-1], model)
    except threading.BrokenBarrierError:
        for t in threads:
            t.join()
        if worker_exc:
            raise worker_exc[0] from None
        raise
    except BaseException:
        start.abort()
        done.abort()
        for t in threads:
            t.join()
        raise
    for t in threads:
        t.join()
    data = part.join(mat)
    if want_losses:
        return data, losses
    if collect_metrics:
        return data, tape.records
    return data


def throughput_report(n_bytes: int, compress_s: float,
                      decompress_s: float) -> dict:
    """Throughputs in KB/min; total uses 2*size over the summed wall time."""
    kb = n_bytes / 1024.0
    return {
        "n_bytes": n_bytes,
        "compress_s": compress_s,
        "decompress_s": decompress_s,
        "compress_kb_min": kb / max(compress_s / 60.0, 1e-12),
        "decompress_kb_min": kb / max(decompress_s / 60.0, 1e-12),
        "total_kb_min": 2.0 * kb / max((compress_s + decompress_s) / 60.0,
                                       1e-12),
    }
