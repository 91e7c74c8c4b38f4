"""Model and run configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the byte predictor.

    ``hidden_dim`` is always ``ctx_len * embed_dim``; it is derived, not set.
    The same config must be used for compression and decompression, which is
    why every field here is recorded in the container header.
    """

    ctx_len: int = 16            # symbols of context per prediction
    embed_dim: int = 32          # per-symbol embedding width
    cache_dim: int = 4096        # rolling cache width (multiple of embed_dim)
    mix_dim: int = 128           # per-stream mixer width
    expand_dim: int = 8192       # width of the gated expansion block
    batch: int = 512             # number of parallel streams
    alphabet: int = 256
    conv_kernel: int = 3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    workers: int = 8
    dtype: np.dtype = field(default=np.dtype(np.float32), compare=False)

    @property
    def hidden_dim(self) -> int:
        return self.ctx_len * self.embed_dim

    def validate(self) -> "ModelConfig":
        if self.ctx_len < 1:
            raise UsageError(f"ctx_len must be >= 1, got {self.ctx_len}")
        if self.embed_dim < 1:
            raise UsageError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.cache_dim < self.embed_dim or self.cache_dim % self.embed_dim:
            raise UsageError(
                f"cache_dim must be a positive multiple of embed_dim, "
                f"got {self.cache_dim} with embed_dim {self.embed_dim}"
            )
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise UsageError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if self.batch < 1:
            raise UsageError(f"batch must be >= 1, got {self.batch}")
        if self.alphabet != 256:
            raise UsageError("alphabet is fixed at 256 for byte streams")
        if self.workers < 1 or self.batch % self.workers:
            raise UsageError(
                f"workers must divide batch, got workers={self.workers} batch={self.batch}"
            )
        if not (0.0 < self.lr):
            raise UsageError(f"lr must be positive, got {self.lr}")
        if np.dtype(self.dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise UsageError(f"dtype must be float32 or float64, got {self.dtype}")
        return self

    def shrink_to_fit(self, length: int) -> "ModelConfig":
        """Halve the stream count until the input is long enough to feed it.

        Tiny inputs would otherwise produce streams shorter than the context
        window for no benefit. Bottoms out at a single stream. Workers are
        clamped so they still divide the stream count.
        """
        b = self.batch
        while b > 1 and b * self.ctx_len > length:
            b //= 2
        w = min(self.workers, b)
        while b % w:
            w -= 1
        if b == self.batch and w == self.workers:
            return self
        return replace(self, batch=b, workers=w)
