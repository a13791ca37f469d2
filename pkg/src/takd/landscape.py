"""Loss-surface scans around trained parameters, with filter normalization.

Two random parameter-space directions are rescaled blockwise (per conv
filter, per dense output row) to the norms of the model's own blocks, so
surfaces of differently scaled networks are comparable.  The grid evaluates
the supervised loss over an (a, b) lattice at parameters w + a*delta + b*eta
in float64 eval mode; the model itself is never modified.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import cross_entropy, softmax_with_temperature
from .data import Dataset
from .errors import ParameterError
from .models import TrainedModel
from .params import ParameterSet
from .rng import RandomStream


def _block_views(name: str, arr: np.ndarray) -> list[np.ndarray]:
    """Filter blocks: conv kernels and dense rows group by output unit."""
    if arr.ndim >= 2:
        return [arr[i] for i in range(arr.shape[0])]
    return [arr]


def _is_direction_param(name: str, arr: np.ndarray) -> bool:
    """Weights only: biases and normalization parameters stay zero."""
    return name.endswith(".weight") and arr.ndim >= 2


def filter_normalized_directions(model: TrainedModel, seed: int
                                 ) -> tuple[ParameterSet, ParameterSet]:
    """Two deterministic perturbation directions shaped like the parameters."""
    out = []
    for tag in ("delta", "eta"):
        direction = ParameterSet()
        for p in model.parameters:
            if not _is_direction_param(p.name, p.value):
                direction.add(p.name, np.zeros_like(p.value, dtype=np.float64),
                              p.trainable)
                continue
            stream = RandomStream(seed, f"landscape/{tag}/{p.name}")
            d = stream.normal(p.value.size).reshape(p.value.shape)
            for w_block, d_block in zip(_block_views(p.name, p.value),
                                        _block_views(p.name, d)):
                w_norm = float(np.linalg.norm(w_block.astype(np.float64)))
                d_norm = float(np.linalg.norm(d_block))
                if w_norm == 0.0 or d_norm == 0.0:
                    d_block[...] = 0.0
                else:
                    d_block *= w_norm / d_norm
            direction.add(p.name, d, p.trainable)
        out.append(direction)
    return out[0], out[1]


@dataclass
class LossSurface:
    grid: np.ndarray  # (steps, steps) float64
    offsets: np.ndarray  # coordinates along each axis
    radius: float
    center_loss: float
    seed: int
    non_finite: list[tuple[int, int]] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.grid.shape[0]


def dataset_loss(model: TrainedModel, x: np.ndarray, y: np.ndarray,
                 params: ParameterSet | None = None) -> float:
    """Mean supervised loss in float64 eval mode, optionally at substituted
    parameter values."""
    net = model.network
    if params is not None:
        from .models import Network
        net = Network(net.spec, params)
    total = 0.0
    count = 0
    for start in range(0, len(x), 2048):
        xb = np.ascontiguousarray(x[start:start + 2048], dtype=np.float64)
        yb = y[start:start + 2048]
        logits, _ = net.forward(xb, training=False)
        loss = cross_entropy(softmax_with_temperature(logits, 1.0), yb)
        total += float(loss.value) * len(xb)
        count += len(xb)
    return total / count


def loss_surface(model: TrainedModel, dataset: Dataset, delta: ParameterSet,
                 eta: ParameterSet, radius: float = 1.0,
                 steps: int = 41, split: str = "test",
                 seed: int = 0) -> LossSurface:
    """Scan the loss over the plane spanned by two directions.

    ``steps`` must be odd so the exact parameter point is a grid cell; the
    center cell equals the model's own loss bit for bit.
    """
    if steps < 1 or steps % 2 == 0:
        raise ParameterError("steps must be a positive odd integer")
    if radius < 0:
        raise ParameterError("radius must be nonnegative")
    x = dataset.x_test if split == "test" else dataset.x_train
    y = dataset.y_test if split == "test" else dataset.y_train
    if len(x) == 0:
        x, y = dataset.x_train, dataset.y_train

    mid = steps // 2
    step_size = radius / mid if mid else 0.0
    offsets = (np.arange(steps) - mid) * step_size  # center is exactly 0.0

    base = model.parameters.astype(np.float64)
    probe = base.copy()
    grid = np.empty((steps, steps), dtype=np.float64)
    non_finite: list[tuple[int, int]] = []
    for i, a in enumerate(offsets):
        for j, b in enumerate(offsets):
            for p in probe:
                p.value[...] = base[p.name].value
                if a != 0.0:
                    p.value += a * delta[p.name].value
                if b != 0.0:
                    p.value += b * eta[p.name].value
            val = dataset_loss(model, x, y, params=probe)
            grid[i, j] = val
            if not np.isfinite(val):
                non_finite.append((i, j))
    return LossSurface(grid, offsets, radius, grid[mid, mid], seed, non_finite)


def flatness_metric(surface: LossSurface) -> float:
    """Mean loss increase over the ring of cells at unit coordinate radius.

    A cell belongs to the ring when its (a, b) distance from the origin is
    within half a grid step of 1.0; lower values mean a flatter minimum.
    Invariant under adding a constant to the whole surface.
    """
    offs = surface.offsets
    steps = surface.steps
    if steps < 2 or surface.radius < 1.0:
        raise ParameterError("surface must extend to unit radius")
    step_size = offs[1] - offs[0]
    aa, bb = np.meshgrid(offs, offs, indexing="ij")
    rr = np.sqrt(aa * aa + bb * bb)
    ring = np.abs(rr - 1.0) <= step_size / 2.0 + 1e-12
    if not ring.any():
        raise ParameterError("no grid cells fall on the unit ring")
    return float((surface.grid[ring] - surface.center_loss).mean())


def write_surface_csv(surface: LossSurface, path) -> None:
    """Header a,b,loss; one row per cell in row-major order, 9 significant
    digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["a", "b", "loss"])
        for i, a in enumerate(surface.offsets):
            for j, b in enumerate(surface.offsets):
                writer.writerow([f"{a:.9g}", f"{b:.9g}",
                                 f"{surface.grid[i, j]:.9g}"])


def read_surface_csv(path) -> LossSurface:
    with open(path, "r", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["a", "b", "loss"]:
        raise ParameterError("not a surface CSV (expected header a,b,loss)")
    data = [(float(a), float(b), float(v)) for a, b, v in rows[1:]]
    offsets = sorted({a for a, _, _ in data})
    steps = len(offsets)
    grid = np.full((steps, steps), np.nan)
    index = {a: i for i, a in enumerate(offsets)}
    for a, b, v in data:
        grid[index[a], index[b]] = v
    mid = steps // 2
    return LossSurface(grid, np.array(offsets), max(offsets), grid[mid, mid], 0)
