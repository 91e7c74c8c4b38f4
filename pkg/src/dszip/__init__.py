"""dszip: lossless byte compression with an online-trained dual-stream predictor."""

from .config import ModelConfig
from .errors import (CorruptionError, DszipError, FormatError, IntegrityError,
                     ModelDivergenceError, UsageError)

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "DszipError",
    "FormatError",
    "IntegrityError",
    "CorruptionError",
    "ModelDivergenceError",
    "UsageError",
    "__version__",
]
