"""Central-finite-difference verification of the engine's gradients.

Checks run on a float64 copy of the network so that difference-quotient
roundoff stays far below the pass tolerance; the analytic gradient is
computed by the same ops at the same precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Var, cross_entropy, softmax_with_temperature
from .errors import ParameterError
from .models import TrainedModel

LossFn = Callable[[Var, np.ndarray], Var]


def _default_loss(logits: Var, labels: np.ndarray) -> Var:
    return cross_entropy(softmax_with_temperature(logits, 1.0), labels)


@dataclass
class ParameterCheck:
    name: str
    max_rel_err: float
    worst_index: int
    checked: int
    passed: bool


@dataclass
class GradCheckReport:
    entries: list[ParameterCheck]
    tolerance: float
    h: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"gradient check {status}: max rel err {self.max_rel_err:.3e} "
                f"over {sum(e.checked for e in self.entries)} entries "
                f"(tol {self.tolerance:g}, h {self.h:g})")


def _probe_indices(size: int, max_entries: int | None) -> np.ndarray:
    if max_entries is None or size <= max_entries:
        return np.arange(size)
    return np.unique(np.linspace(0, size - 1, max_entries).astype(np.int64))


def gradient_check(model: TrainedModel, batch: tuple[np.ndarray, np.ndarray],
                   h: float = 1e-3, tolerance: float = 1e-4,
                   loss_fn: LossFn | None = None, training: bool = True,
                   max_entries: int | None = None,
                   corruption: tuple[str, int] | None = None) -> GradCheckReport:
    """Compare analytic gradients against (f(w+h) - f(w-h)) / 2h per entry.

    ``corruption`` is a self-test hook: add 1.0 to one analytic gradient
    entry (by parameter name and flat index) before comparison, which must
    make the check fail.
    """
    if h <= 0:
        raise ParameterError("finite-difference step h must be positive")
    loss_fn = loss_fn or _default_loss
    x, labels = batch
    net = model.network.astype(np.float64)
    x64 = np.ascontiguousarray(x, dtype=np.float64)

    def loss_value() -> float:
        logits, _ = net.forward(x64, training)
        return float(loss_fn(logits, labels).value)

    logits, param_vars = net.forward(x64, training)
    loss = loss_fn(logits, labels)
    loss.backward()
    analytic = {}
    for p in net.params.trainable():
        var = param_vars.get(p.name)
        g = var.grad if var is not None and var.grad is not None \
            else np.zeros_like(p.value)
        analytic[p.name] = np.array(g, dtype=np.float64).reshape(-1)
    if corruption is not None:
        name, idx = corruption
        analytic[name][idx] += 1.0

    entries = []
    for p in net.params.trainable():
        flat = p.value.reshape(-1)
        idxs = _probe_indices(flat.size, max_entries)
        worst = 0.0
        worst_idx = -1
        a = analytic[p.name]
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            plus = loss_value()
            flat[i] = orig - h
            minus = loss_value()
            flat[i] = orig
            fd = (plus - minus) / (2.0 * h)
            rel = abs(a[i] - fd) / max(abs(a[i]), abs(fd), 1e-2)
            if rel > worst:
                worst = rel
                worst_idx = int(i)
        entries.append(ParameterCheck(p.name, worst, worst_idx, len(idxs),
                                      worst < tolerance))
    return GradCheckReport(entries, tolerance, h)
