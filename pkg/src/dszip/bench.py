"""Corpus analysis and benchmark harnesses.

The analysis half characterizes why learned prediction pays off on a given
input: how the local symbol entropy moves through the file, how much mutual
information survives at long lags (what a short fixed context cannot see),
and how self-similar distant regions are. The harness half sweeps files
through compress/decompress cycles and compares model variants under equal
seeds and step counts.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .container import (compress_bytes, compression_ratio, decompress_bytes,
                        header_size, weighted_score)
from .model import VARIANTS, Predictor
from .pipeline import run_serial_compress, throughput_report

__all__ = [
    "order0_entropy",
    "local_entropy_profile",
    "mutual_information_decay",
    "self_similarity_matrix",
    "run_sweep",
    "run_ablation",
]


def _entropy_bits(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())


def order0_entropy(data: bytes) -> float:
    """Empirical byte entropy in bits per byte."""
    arr = np.frombuffer(data, dtype=np.uint8)
    return _entropy_bits(np.bincount(arr, minlength=256))


def local_entropy_profile(data: bytes, window: int = 4096,
                          stride: int | None = None) -> np.ndarray:
    """Order-0 entropy of each window, in bits/byte, along the file."""
    if window < 1:
        raise ValueError("window must be positive")
    stride = window if stride is None else stride
    arr = np.frombuffer(data, dtype=np.uint8)
    starts = range(0, max(len(arr) - window + 1, 1), stride)
    return np.array([_entropy_bits(np.bincount(arr[s:s + window],
                                               minlength=256))
                     for s in starts])


def mutual_information_decay(data: bytes, lags, seed: int = 0) -> np.ndarray:
    """Plug-in mutual information between bytes ``lag`` apart, per lag.

    The plug-in estimator is biased upward by roughly (K-1)^2/(2N ln 2)
    bits, which would swamp small signals, so the same estimator is run on
    a lag-destroyed control (second byte shuffled) and subtracted.
    """
    arr = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    rng = np.random.default_rng(seed)
    out = np.empty(len(lags))
    for j, lag in enumerate(lags):
        if lag < 1 or lag >= len(arr):
            raise ValueError(f"lag {lag} outside (0, len)")
        a, b = arr[:-lag], arr[lag:]

        def mi(x, y):
            joint = np.bincount(x * 256 + y, minlength=65536)
            return (_entropy_bits(np.bincount(x, minlength=256))
                    + _entropy_bits(np.bincount(y, minlength=256))
                    - _entropy_bits(joint))

        out[j] = mi(a, b) - mi(a, rng.permutation(b))
    return out


def self_similarity_matrix(data: bytes, n_blocks: int = 16) -> np.ndarray:
    """Cosine similarity between byte-histogram signatures of file blocks."""
    arr = np.frombuffer(data, dtype=np.uint8)
    if n_blocks < 1 or len(arr) < n_blocks:
        raise ValueError("need at least one byte per block")
    bounds = np.linspace(0, len(arr), n_blocks + 1, dtype=np.int64)
    hists = np.stack([np.bincount(arr[bounds[i]:bounds[i + 1]], minlength=256)
                      for i in range(n_blocks)]).astype(np.float64)
    norms = np.linalg.norm(hists, axis=1, keepdims=True)
    unit = hists / np.maximum(norms, 1e-30)
    return unit @ unit.T


def run_sweep(paths, cfg: ModelConfig, pipelined: bool = True,
              workers: int = 1, weight: float = 0.5) -> dict:
    """Compress and decompress each file, verify losslessness, and score.

    Scores use min-max bounds taken over the sweep itself, so they are only
    comparable within one report.
    """
    rows = []
    for path in paths:
        data = Path(path).read_bytes()
        t0 = time.perf_counter()
        blob, _ = compress_bytes(data, cfg, pipelined=pipelined)
        t_c = time.perf_counter() - t0
        t0 = time.perf_counter()
        back = decompress_bytes(blob, workers=workers)
        t_d = time.perf_counter() - t0
        if back != data:
            raise AssertionError(f"round trip mismatch on {path}")
        rep = throughput_report(len(data), t_c, t_d)
        rows.append({
            "file": str(path),
            "bytes": len(data),
            "compressed_bytes": len(blob),
            "ratio": compression_ratio(len(data), len(blob)),
            "bits_per_byte": 8.0 * len(blob) / len(data) if data else 0.0,
            "order0_entropy": order0_entropy(data),
            **{k: rep[k] for k in ("compress_kb_min", "decompress_kb_min",
                                   "total_kb_min")},
        })
    bounds = {
        "cr_min": min(r["ratio"] for r in rows),
        "cr_max": max(r["ratio"] for r in rows),
        "tp_min": min(r["total_kb_min"] for r in rows),
        "tp_max": max(r["total_kb_min"] for r in rows),
    }
    for r in rows:
        r["score"] = weighted_score(r["ratio"], r["total_kb_min"],
                                    bounds["cr_min"], bounds["cr_max"],
                                    bounds["tp_min"], bounds["tp_max"],
                                    weight=weight)
    return {"files": rows, "bounds": bounds, "weight": weight}


def run_ablation(data: bytes, cfg: ModelConfig, variants=VARIANTS,
                 final_fraction: float = 0.25) -> dict:
    """Compress ``data`` once per variant under identical seed and steps.

    Reports the container-equivalent ratio and the mean training NLL over
    the final ``final_fraction`` of steps, where the slow-adapting variants
    have stopped catching up.
    """
    out = {}
    for variant in variants:
        res = run_serial_compress(data, cfg, variant=variant)
        payload = sum(len(s) for s in res.streams)
        total = header_size(len(res.streams)) + payload
        tail = res.losses[-max(1, int(len(res.losses) * final_fraction)):]
        out[variant] = {
            "ratio": compression_ratio(len(data), total),
            "bits_per_byte": 8.0 * total / len(data) if data else 0.0,
            "nll_final_quarter": float(np.mean(tail)) if res.losses else 0.0,
            "steps": len(res.losses),
            "active_params": Predictor(res.cfg, variant).active_param_count(),
        }
    return out
