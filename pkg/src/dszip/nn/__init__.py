from . import ops
from .optim import Adam
from .tensor import Tensor

__all__ = ["ops", "Adam", "Tensor"]
