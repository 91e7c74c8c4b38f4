"""Self-describing container: header, checksums, file level entry points.

Layout (little endian)::

    0   magic          4s   "FADE"
    4   version        u16
    6   original_len   u64
    14  batch          u32  \\
    18  ctx_len        u32   |
    22  embed_dim      u32   |
    26  cache_dim      u32   | model geometry
    30  mix_dim        u32   |
    34  expand_dim     u32   |
    38  conv_kernel    u32  /
    42  lr, beta1, beta2, adam_eps   4 x f64 (exact bit patterns)
    74  seed           u64
    82  fingerprint    u64  (build identity, warn-only on mismatch)
    90  stream_lengths batch x u64
    ..  header_crc     u32  (crc32 of everything above)
    ..  payload_crc    u32
    ..  payload        concatenated streams

A decoder needs nothing outside the container: the header carries every
field required to rebuild the identical model state from the seed.
"""

from __future__ import annotations

import json
import platform
import struct
import sys
import time
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ModelConfig
from .errors import FormatError, IntegrityError
from .pipeline import (CompressResult, run_parallel_decompress,
                       run_pipelined_compress, run_serial_compress)

MAGIC = b"FADE"
VERSION = 1
_FIXED = struct.Struct("<4sHQ7I4dQQ")
_CRCS = struct.Struct("<II")
_MAX_STREAMS = 1 << 20

__all__ = [
    "ContainerInfo",
    "header_size",
    "build_fingerprint",
    "compress_bytes",
    "decompress_bytes",
    "compress_file",
    "decompress_file",
    "inspect_blob",
    "inspect_file",
    "unpack_header",
    "compression_ratio",
    "weighted_score",
]


def header_size(n_streams: int) -> int:
    """Container overhead in bytes for a given stream count."""
    return _FIXED.size + 8 * n_streams + _CRCS.size


@dataclass(frozen=True)
class ContainerInfo:
    version: int
    original_length: int
    cfg: ModelConfig | None  # None for the empty-input container
    fingerprint: int
    stream_lengths: tuple

    @property
    def header_size(self) -> int:
        return header_size(len(self.stream_lengths))


def build_fingerprint(cfg: ModelConfig) -> int:
    """Hash of everything that could change the float trajectory."""
    tag = "|".join([
        f"dszip {__version__}",
        f"numpy {np.__version__}",
        f"python {sys.version_info.major}.{sys.version_info.minor}",
        np.dtype(cfg.dtype).name,
        platform.machine(),
    ])
    return zlib.crc32(tag.encode())


def _pack(result: CompressResult) -> bytes:
    cfg = result.cfg
    lens = [len(s) for s in result.streams]
    head = _FIXED.pack(
        MAGIC, VERSION, result.partition.original_length,
        len(lens), cfg.ctx_len, cfg.embed_dim, cfg.cache_dim,
        cfg.mix_dim, cfg.expand_dim, cfg.conv_kernel,
        cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
        cfg.seed, build_fingerprint(cfg),
    ) + struct.pack(f"<{len(lens)}Q", *lens)
    payload = b"".join(result.streams)
    return head + _CRCS.pack(zlib.crc32(head), zlib.crc32(payload)) + payload


def unpack_header(blob: bytes):
    """Parse and verify a container; returns (ContainerInfo, payload bytes).

    Malformed structure raises FormatError; checksum mismatches raise
    IntegrityError.
    """
    if len(blob) < _FIXED.size:
        raise FormatError("container shorter than fixed header")
    (magic, version, orig, batch, ctx_len, embed_dim, cache_dim, mix_dim,
     expand_dim, conv_kernel, lr, beta1, beta2, adam_eps, seed,
     fingerprint) = _FIXED.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError("bad magic, not a dszip container")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    if batch > _MAX_STREAMS:
        raise FormatError(f"implausible stream count {batch}")
    head_end = _FIXED.size + 8 * batch
    if len(blob) < head_end + _CRCS.size:
        raise FormatError("container truncated inside header")
    lengths = struct.unpack_from(f"<{batch}Q", blob, _FIXED.size)
    hcrc, pcrc = _CRCS.unpack_from(blob, head_end)
    if zlib.crc32(blob[:head_end]) != hcrc:
        raise IntegrityError("header checksum mismatch")
    payload = blob[head_end + _CRCS.size:]
    if len(payload) != sum(lengths):
        raise FormatError("payload length does not match stream table")
    if zlib.crc32(payload) != pcrc:
        raise IntegrityError("payload checksum mismatch")
    cfg = None
    if batch:
        cfg = ModelConfig(ctx_len=ctx_len, embed_dim=embed_dim,
                          cache_dim=cache_dim, mix_dim=mix_dim,
                          expand_dim=expand_dim, batch=batch,
                          conv_kernel=conv_kernel, lr=lr, beta1=beta1,
                          beta2=beta2, adam_eps=adam_eps, seed=seed,
                          workers=1)
    return ContainerInfo(version, orig, cfg, fingerprint, lengths), payload


def compress_bytes(data: bytes, cfg: ModelConfig, pipelined: bool = True,
                   variant: str = "full", collect_metrics: bool = False):
    """Compress to a container blob; returns (blob, CompressResult)."""
    run = run_pipelined_compress if pipelined else run_serial_compress
    result = run(data, cfg, variant=variant, collect_metrics=collect_metrics)
    return _pack(result), result


def decompress_bytes(blob: bytes, workers: int = 1) -> bytes:
    """Decode a container blob back to the original bytes."""
    info, payload = unpack_header(blob)
    if info.original_length == 0:
        return b""
    expect = build_fingerprint(info.cfg)
    if info.fingerprint != expect:
        warnings.warn(
            "container build fingerprint mismatch "
            f"({info.fingerprint:#x} vs {expect:#x}); the float trajectory "
            "is only guaranteed to reproduce on the build that wrote it",
            RuntimeWarning, stacklevel=2)
    lengths = np.array(info.stream_lengths, dtype=np.int64)
    offsets = np.zeros(len(lengths), dtype=np.int64)
    np.cumsum(lengths[:-1], out=offsets[1:])
    pay = np.frombuffer(payload, dtype=np.uint8)
    return run_parallel_decompress(pay, offsets, lengths, info.cfg,
                                   info.original_length, workers=workers)


def _write_metrics(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def compress_file(in_path, out_path, cfg: ModelConfig, pipelined: bool = True,
                  metrics_path=None, variant: str = "full") -> dict:
    data = Path(in_path).read_bytes()
    t0 = time.perf_counter()
    blob, result = compress_bytes(data, cfg, pipelined=pipelined,
                                  variant=variant,
                                  collect_metrics=metrics_path is not None)
    elapsed = time.perf_counter() - t0
    Path(out_path).write_bytes(blob)
    if metrics_path is not None:
        _write_metrics(metrics_path, result.metrics or [])
    return {
        "original_bytes": len(data),
        "compressed_bytes": len(blob),
        "ratio": compression_ratio(len(data), len(blob)),
        "bits_per_byte": 8.0 * len(blob) / len(data) if data else 0.0,
        "seconds": elapsed,
        "kb_per_min": (len(data) / 1024.0) / max(elapsed / 60.0, 1e-12),
        "n_streams": len(result.streams),
        "pipelined": pipelined,
    }


def decompress_file(in_path, out_path, workers: int = 1) -> dict:
    blob = Path(in_path).read_bytes()
    t0 = time.perf_counter()
    data = decompress_bytes(blob, workers=workers)
    elapsed = time.perf_counter() - t0
    Path(out_path).write_bytes(data)
    return {
        "original_bytes": len(data),
        "compressed_bytes": len(blob),
        "seconds": elapsed,
        "kb_per_min": (len(data) / 1024.0) / max(elapsed / 60.0, 1e-12),
        "workers": workers,
    }


def inspect_blob(blob: bytes) -> dict:
    info, payload = unpack_header(blob)
    lens = info.stream_lengths
    out = {
        "version": info.version,
        "original_length": info.original_length,
        "n_streams": len(lens),
        "header_bytes": info.header_size,
        "payload_bytes": len(payload),
        "total_bytes": len(blob),
        "ratio": compression_ratio(info.original_length, len(blob)),
        "fingerprint": f"{info.fingerprint:#010x}",
        "checksums_ok": True,  # unpack_header raises otherwise
    }
    if info.cfg is not None:
        c = info.cfg
        out.update(ctx_len=c.ctx_len, embed_dim=c.embed_dim,
                   cache_dim=c.cache_dim, mix_dim=c.mix_dim,
                   expand_dim=c.expand_dim, conv_kernel=c.conv_kernel,
                   lr=c.lr, beta1=c.beta1, beta2=c.beta2,
                   adam_eps=c.adam_eps, seed=c.seed,
                   stream_min=min(lens), stream_max=max(lens),
                   stream_mean=sum(lens) / len(lens))
    return out


def inspect_file(path) -> dict:
    return inspect_blob(Path(path).read_bytes())


def compression_ratio(original_bytes: int, compressed_bytes: int) -> float:
    """Original over compressed; 0 for empty input."""
    if original_bytes <= 0 or compressed_bytes <= 0:
        return 0.0
    return original_bytes / compressed_bytes


def weighted_score(cr: float, tp: float, cr_min: float, cr_max: float,
                   tp_min: float, tp_max: float, weight: float = 0.5) -> float:
    """Convex blend of min-max normalized ratio and throughput.

    Degenerate ranges (max == min) contribute 0 to their term.
    """
    def norm(v, lo, hi):
        return (v - lo) / (hi - lo) if hi > lo else 0.0

    return weight * norm(cr, cr_min, cr_max) + \
        (1.0 - weight) * norm(tp, tp_min, tp_max)
