"""Reverse-mode autodiff over numpy arrays.

Each node stores its value, a gradient accumulator and a closure that pushes
its gradient into its parents.  Layers are fused ops (see ``ops``) so the tape
stays short even for recurrent encoders.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


class Tensor:
    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad")

    def __init__(self, value, parents=(), backward=None, requires_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self._backward = backward
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __len__(self):
        return self.value.shape[0]

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        order = _topological(self)
        for node in order:
            if node is not self and node._backward is not None:
                node.grad = np.zeros_like(node.value)
        seed = np.ones_like(self.value) if grad is None else np.asarray(grad, dtype=np.float64)
        if seed.shape != self.value.shape:
            raise ShapeError(f"seed gradient {seed.shape} != value {self.value.shape}")
        self.grad = self.grad + seed
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order
