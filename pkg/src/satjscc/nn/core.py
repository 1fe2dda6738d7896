"""Parameter tensors and the layer protocol.

A layer caches what it needs during ``forward`` and consumes it in the next
``backward``; parameter gradients accumulate into ``Tensor.grad``.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    """A trainable array with a gradient slot of identical shape."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value)
        self.grad = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def accumulate(self, grad: np.ndarray):
        if grad.shape != self.value.shape:
            raise ShapeError(f"gradient shape {grad.shape} != value shape {self.value.shape}")
        if self.grad is None:
            self.grad = grad.astype(self.value.dtype, copy=True)
        else:
            self.grad += grad

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.value.dtype})"


class Layer:
    """Base class. Sub-layers and Tensors stored as attributes (or in lists
    of layers) are discovered in declaration order."""

    training = True

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, attr in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(attr, Tensor):
                yield full, attr
            elif isinstance(attr, Layer):
                yield from attr.named_params(full + ".")
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Layer):
                        yield from item.named_params(f"{full}.{i}.")

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def num_params(self) -> int:
        return sum(p.size for p in self.params())

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def sublayers(self) -> Iterator["Layer"]:
        for name, attr in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(attr, Layer):
                yield attr
                yield from attr.sublayers()
            elif isinstance(attr, (list, tuple)):
                for item in attr:
                    if isinstance(item, Layer):
                        yield item
                        yield from item.sublayers()

    def train(self, mode: bool = True):
        self.training = mode
        for layer in self.sublayers():
            layer.training = mode
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        for p in self.params():
            p.value = p.value.astype(dtype)
            p.grad = None
        return self


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad
