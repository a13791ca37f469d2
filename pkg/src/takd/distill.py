"""Distillation losses and the NOKD/BLKD/TAKD training procedures.

The student objective combines supervised cross-entropy with a softened
logit-matching term:

    loss = (1 - lam) * CE(softmax(a_s), y) + lam * tau^2 * KL(y_t || y_s)

where y_s and y_t are the temperature-softened student and teacher
distributions.  KL(teacher || student) is the standard distillation form;
only the student side carries gradient, the teacher is detached.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .data import Dataset
from .errors import ConfigError, ParameterError, PathError
from .models import NetworkSpec, TrainedModel, build_model, mode_for_path
from .optim import OptimizerConfig, sgd_nesterov_step
from .records import config_hash
from .rng import RandomStream


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 4.0
    lam: float = 0.5
    epochs: int = 60
    batch_size: int = 64
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    track_epochs: bool = True

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "lam": self.lam,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "optimizer": self.optimizer.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DistillConfig":
        return cls(
            temperature=float(d.get("temperature", 4.0)),
            lam=float(d.get("lam", 0.5)),
            epochs=int(d.get("epochs", 60)),
            batch_size=int(d.get("batch_size", 64)),
            optimizer=OptimizerConfig.from_dict(d.get("optimizer", {})),
            seed=int(d.get("seed", 0)),
        )

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def with_seed(self, seed: int) -> "DistillConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class DistillationPath:
    """Ordered sizes, teacher first; length 1 means training from scratch."""

    sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 1:
            raise PathError("a path needs at least one size")
        if any(a <= b for a, b in zip(sizes, sizes[1:])):
            raise PathError(f"path sizes must strictly decrease, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    def __len__(self) -> int:
        return len(self.sizes)

    def __iter__(self):
        return iter(self.sizes)


def softmax_np(logits: np.ndarray, tau: float) -> np.ndarray:
    """Detached temperature softmax (teacher side)."""
    scaled = logits / np.asarray(tau, dtype=logits.dtype)
    shifted = scaled - scaled.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def kd_loss(student_logits: Var, teacher_logits: np.ndarray | Var,
            tau: float) -> Var:
    """tau^2-scaled KL between softened teacher and student distributions.

    Differentiable with respect to the student logits only.  The node is
    fused: the value is the clamped KL of the two softened distributions,
    the backward pass uses the analytic form tau*(y_s - y_t)/batch, which
    is exact for the unclamped loss and identically zero when the logits
    match bit for bit.
    """
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    t_val = teacher_logits.value if isinstance(teacher_logits, Var) \
        else np.asarray(teacher_logits)
    if t_val.shape != student_logits.value.shape:
        raise ParameterError("student and teacher logits must share a shape")
    dtype = student_logits.dtype
    y_t = softmax_np(t_val.astype(dtype, copy=False), tau)
    y_s = softmax_np(student_logits.value, tau)
    batch = y_s.shape[0]
    floor = np.asarray(ad.PROB_FLOOR, dtype=dtype)
    s = np.maximum(y_s, floor)
    t = np.maximum(y_t, floor)
    value = float(tau * tau) * (t * (np.log(t) - np.log(s))).sum() / batch
    out = Var(np.asarray(value, dtype=dtype), (student_logits,))

    def backward(g: np.ndarray) -> None:
        grad = (np.asarray(tau, dtype=dtype) / batch) * (y_s - y_t)
        ad.accumulate_grad(student_logits, grad * g)

    out._backward = backward
    return out


def student_loss(student_logits: Var, teacher_logits: np.ndarray | Var | None,
                 labels: np.ndarray, cfg: DistillConfig) -> Var:
    """Combined objective; endpoints reduce exactly to their single term."""
    lam = cfg.lam
    if lam > 0.0 and teacher_logits is None:
        raise ConfigError("lam > 0 requires teacher logits")
    if lam == 0.0:
        return ad.cross_entropy(
            ad.softmax_with_temperature(student_logits, 1.0), labels)
    kd = kd_loss(student_logits, teacher_logits, cfg.temperature)
    if lam == 1.0:
        return kd
    ce = ad.cross_entropy(
        ad.softmax_with_temperature(student_logits, 1.0), labels)
    return ce * (1.0 - lam) + kd * lam


def make_loss_fn(cfg: DistillConfig, teacher_logits: np.ndarray | None):
    """Closure (logits, labels) -> loss Var, for gradient checking."""
    def fn(logits: Var, labels: np.ndarray) -> Var:
        t = teacher_logits
        if t is not None and t.dtype != logits.dtype:
            t = t.astype(logits.dtype)
        return student_loss(logits, t, labels, cfg)
    return fn


def evaluate_accuracy(model: TrainedModel, x: np.ndarray, y: np.ndarray,
                      batch_size: int = 1024) -> float:
    """Eval-mode top-1 accuracy."""
    if len(x) == 0:
        return float("nan")
    hits = 0
    for start in range(0, len(x), batch_size):
        logits = model.network.logits(x[start:start + batch_size],
                                      training=False)
        hits += int((logits.argmax(axis=1) == y[start:start + batch_size]).sum())
    return hits / len(x)


def train(spec: NetworkSpec, dataset: Dataset, cfg: DistillConfig,
          teacher: TrainedModel | None = None) -> TrainedModel:
    """Shuffled mini-batch SGD on the student objective.

    Without a teacher, lam is forced to 0 and the result is a from-scratch
    (NOKD) model.  Teacher logits are computed once in eval mode over the
    training set; teacher parameters are never touched.
    """
    lam = cfg.lam
    if teacher is None:
        lam = 0.0
    else:
        if teacher.spec.num_classes != spec.num_classes:
            raise ConfigError(
                f"teacher emits {teacher.spec.num_classes} classes, "
                f"student needs {spec.num_classes}")
        if tuple(teacher.spec.input_shape) != tuple(spec.input_shape):
            raise ConfigError("teacher and student input shapes differ")
    eff_cfg = replace(cfg, lam=lam)

    model = build_model(spec, cfg.seed)
    net = model.network
    x_train, y_train = dataset.x_train, dataset.y_train
    n = len(x_train)
    if n == 0:
        raise ConfigError("dataset has no training rows")

    teacher_logits = None
    if teacher is not None and lam > 0.0:
        out = []
        for start in range(0, n, 4096):
            out.append(teacher.network.logits(x_train[start:start + 4096],
                                              training=False))
        teacher_logits = np.concatenate(out, axis=0)

    shuffle = RandomStream(cfg.seed, f"shuffle/{spec.family}-{spec.size}")
    epoch_train_acc: list[float] = []
    epoch_test_acc: list[float] = []
    for epoch in range(cfg.epochs):
        lr = cfg.optimizer.lr_at(epoch)
        perm = shuffle.permutation(n)
        hits = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb = np.ascontiguousarray(x_train[idx])
            yb = y_train[idx]
            tb = teacher_logits[idx] if teacher_logits is not None else None
            net.params.zero_grad()
            logits, param_vars = net.forward(xb, training=True)
            loss = student_loss(logits, tb, yb, eff_cfg)
            if not np.isfinite(loss.value):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, row {start}")
            loss.backward()
            net.accumulate_gradients(param_vars)
            sgd_nesterov_step(net.params, cfg.optimizer, lr)
            hits += int((logits.value.argmax(axis=1) == yb).sum())
        if cfg.track_epochs:
            epoch_train_acc.append(hits / n)
            epoch_test_acc.append(
                evaluate_accuracy(model, dataset.x_test, dataset.y_test))

    path = (teacher.path + (spec.size,)) if teacher is not None \
        else (spec.size,)
    model.provenance.update({
        "mode": mode_for_path(path),
        "path": list(path),
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
    })
    model.metrics.update({
        "train_acc": evaluate_accuracy(model, x_train, y_train),
        "test_acc": evaluate_accuracy(model, dataset.x_test, dataset.y_test),
        "epoch_train_acc": epoch_train_acc,
        "epoch_test_acc": epoch_test_acc,
    })
    return model


def distill_chain(path: DistillationPath | Sequence[int],
                  specs: Mapping[int, NetworkSpec], dataset: Dataset,
                  cfg: DistillConfig | Sequence[DistillConfig],
                  pretrained_root: TrainedModel | None = None
                  ) -> list[TrainedModel]:
    """Train along a path: the head from scratch (or reuse a pre-trained
    root), then each size distilled from its predecessor.  Returns every
    model in order; the last one is the student."""
    if not isinstance(path, DistillationPath):
        path = DistillationPath(tuple(path))
    sizes = path.sizes
    for s in sizes:
        if s not in specs:
            raise ConfigError(f"no network spec registered for size {s}")
    if isinstance(cfg, DistillConfig):
        cfgs = [cfg] * len(sizes)
    else:
        cfgs = list(cfg)
        if len(cfgs) != len(sizes):
            raise ConfigError(
                f"need one config per path entry ({len(sizes)}), got {len(cfgs)}")

    models: list[TrainedModel] = []
    if pretrained_root is not None:
        if pretrained_root.spec.size != sizes[0]:
            raise ConfigError("pretrained root size does not match path head")
        models.append(pretrained_root)
    else:
        models.append(train(specs[sizes[0]], dataset, cfgs[0], None))
    for i, size in enumerate(sizes[1:], start=1):
        models.append(train(specs[size], dataset, cfgs[i], teacher=models[-1]))
    return models
