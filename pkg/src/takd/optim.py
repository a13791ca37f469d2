"""SGD with Nesterov momentum, weight decay, and a step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .params import ParameterSet


@dataclass(frozen=True)
class OptimizerConfig:
    """Optimizer hyperparameters.

    ``schedule`` lists (epoch, lr) drop points: from the given epoch onward
    the learning rate becomes that value, until the next drop point.
    """

    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    nesterov: bool = True
    schedule: tuple[tuple[int, float], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        epochs = [e for e, _ in self.schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ConfigError("schedule epochs must be strictly increasing")
        if any(lr <= 0 for _, lr in self.schedule):
            raise ConfigError("schedule learning rates must be positive")
        object.__setattr__(self, "schedule", tuple((int(e), float(lr))
                                                   for e, lr in self.schedule))

    def lr_at(self, epoch: int) -> float:
        lr = self.learning_rate
        for drop_epoch, drop_lr in self.schedule:
            if epoch >= drop_epoch:
                lr = drop_lr
        return lr

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "nesterov": self.nesterov,
            "schedule": [[e, lr] for e, lr in self.schedule],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OptimizerConfig":
        return cls(
            learning_rate=float(data.get("learning_rate", 0.1)),
            momentum=float(data.get("momentum", 0.9)),
            weight_decay=float(data.get("weight_decay", 0.0)),
            nesterov=bool(data.get("nesterov", True)),
            schedule=tuple((int(e), float(lr)) for e, lr in data.get("schedule", [])),
        )


def sgd_nesterov_step(params: ParameterSet, cfg: OptimizerConfig,
                      lr: float | None = None) -> None:
    """One in-place update of every trainable parameter.

    With decay applied first (g <- g + wd*w), the velocity update is
    v <- mu*v + g; the parameter moves by lr*(g + mu*v) in Nesterov mode
    and by lr*v otherwise.  mu=0, wd=0 reduces exactly to w <- w - lr*g.
    """
    step_lr = cfg.learning_rate if lr is None else lr
    mu = cfg.momentum
    wd = cfg.weight_decay
    for p in params.trainable():
        g = p.grad
        if wd != 0.0:
            g = g + np.asarray(wd, dtype=p.value.dtype) * p.value
        v = p.velocity
        v *= np.asarray(mu, dtype=v.dtype)
        v += g
        if cfg.nesterov:
            update = g + np.asarray(mu, dtype=v.dtype) * v
        else:
            update = v
        p.value -= np.asarray(step_lr, dtype=p.value.dtype) * update
