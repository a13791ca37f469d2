"""Named parameter state for networks: values, gradients, velocities."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DimensionError


@dataclass
class Parameter:
    """One named array of model state.

    Trainable parameters carry gradient and velocity buffers of the same
    shape; non-trainable state (running statistics) carries neither.
    """

    name: str
    value: np.ndarray
    trainable: bool = True
    grad: np.ndarray | None = field(init=False)
    velocity: np.ndarray | None = field(init=False)

    def __post_init__(self) -> None:
        self.value = np.ascontiguousarray(self.value)
        if self.trainable:
            self.grad = np.zeros_like(self.value)
            self.velocity = np.zeros_like(self.value)
        else:
            self.grad = None
            self.velocity = None

    def check(self) -> None:
        if self.trainable and (self.grad.shape != self.value.shape
                               or self.velocity.shape != self.value.shape):
            raise DimensionError(f"parameter {self.name}: buffer shape mismatch")


class ParameterSet:
    """Ordered, named collection of parameters.

    Ordering is fixed by insertion and stable across runs built from the
    same network spec, which pins the serialization layout and the gradient
    accumulation order.
    """

    def __init__(self) -> None:
        self._params: list[Parameter] = []
        self._by_name: dict[str, Parameter] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Parameter:
        if name in self._by_name:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, value, trainable)
        self._params.append(p)
        self._by_name[name] = p
        return p

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def __getitem__(self, name: str) -> Parameter:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def trainable(self) -> Iterator[Parameter]:
        return (p for p in self._params if p.trainable)

    def names(self) -> list[str]:
        return [p.name for p in self._params]

    def zero_grad(self) -> None:
        for p in self.trainable():
            p.grad.fill(0.0)

    def count_scalars(self, trainable_only: bool = True) -> int:
        return sum(p.value.size for p in self._params
                   if p.trainable or not trainable_only)

    def copy(self) -> "ParameterSet":
        """Deep copy of values (gradients and velocities reset)."""
        out = ParameterSet()
        for p in self._params:
            out.add(p.name, p.value.copy(), p.trainable)
        return out

    def astype(self, dtype) -> "ParameterSet":
        out = ParameterSet()
        for p in self._params:
            out.add(p.name, p.value.astype(dtype), p.trainable)
        return out
