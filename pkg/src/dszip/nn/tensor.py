"""Array-valued reverse-mode autodiff.

A Tensor wraps one numpy array plus an optional gradient. Operations build a
graph by recording parent links and a backward closure; ``backward()`` walks
the graph once in reverse topological order. Gradients accumulate by sum, so
a tensor consumed by several consumers receives every contribution.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = ()):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = parents

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accum_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from this tensor, seeding with ones."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        # iterative post-order DFS; recursion would overflow on deep graphs
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.accum_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Build a graph node; drops the closure if no parent tracks gradients."""
    if needs_grad(*parents):
        out = Tensor(data, parents=parents)
        out._backward = backward
        return out
    return Tensor(data)
