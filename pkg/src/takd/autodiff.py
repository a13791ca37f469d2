"""Reverse-mode differentiation over numpy arrays.

The engine is a recorded tape of ``Var`` nodes.  Each op computes its value
eagerly and registers a backward closure; ``backward()`` walks the tape in
reverse topological order with a fixed, single-threaded accumulation order,
so gradients are bit-reproducible for identical graphs.

Values are float32 by default (training) but every op is dtype-agnostic:
promoting the leaves to float64 yields a float64 graph, which the gradient
checker and the loss-surface scanner use to keep finite-difference and
closed-form comparisons out of float32 roundoff.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimensionError, DomainError, ParameterError

PROB_FLOOR = 1e-12  # probabilities are clamped here before any log


class Var:
    """A node in the recorded computation graph."""

    __slots__ = ("value", "grad", "parents", "_backward")

    def __init__(self, value: np.ndarray, parents: tuple["Var", ...] = (),
                 backward: Callable[[np.ndarray], None] | None = None):
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def detach(self) -> np.ndarray:
        return self.value

    def backward(self) -> None:
        """Accumulate gradients of this scalar node into every ancestor."""
        if self.value.size != 1:
            raise ParameterError("backward() requires a scalar loss node")
        order = _topo_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Small arithmetic surface, enough for composing losses and test toys.

    def __add__(self, other: "Var | float") -> "Var":
        if not isinstance(other, Var):
            other = Var(np.asarray(other, dtype=self.dtype))
        out = Var(self.value + other.value, (self, other))

        def backward(g: np.ndarray) -> None:
            _accumulate(self, _unbroadcast(g, self.value.shape))
            _accumulate(other, _unbroadcast(g, other.value.shape))

        out._backward = backward
        return out

    def __sub__(self, other: "Var | float") -> "Var":
        return self + (other * -1.0 if isinstance(other, Var) else -other)

    def __mul__(self, other: "Var | float") -> "Var":
        if not isinstance(other, Var):
            other = Var(np.asarray(other, dtype=self.dtype))
        out = Var(self.value * other.value, (self, other))

        def backward(g: np.ndarray) -> None:
            _accumulate(self, _unbroadcast(g * other.value, self.value.shape))
            _accumulate(other, _unbroadcast(g * self.value, other.value.shape))

        out._backward = backward
        return out

    __radd__ = __add__
    __rmul__ = __mul__


def _topo_order(root: Var) -> list[Var]:
    """Iterative DFS topological order; parent order fixed at graph build."""
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(node: Var, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = g.copy()
    else:
        node.grad += g


accumulate_grad = _accumulate  # for custom fused nodes outside this module


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to ``shape`` (supports the leading-axis broadcast we use)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def constant(value: np.ndarray | float, dtype=np.float32) -> Var:
    """A leaf with no gradient path (e.g. detached teacher logits)."""
    return Var(np.asarray(value, dtype=dtype))


def leaf(value: np.ndarray) -> Var:
    """A differentiable leaf; callers read .grad after backward()."""
    return Var(np.asarray(value))


# ---------------------------------------------------------------------------
# Layers


def dense(x: Var, weights: Var, bias: Var) -> Var:
    """Affine map: out[b, o] = sum_i weights[o, i] * x[b, i] + bias[o]."""
    if x.value.ndim != 2 or weights.value.ndim != 2:
        raise DimensionError("dense expects 2-d input and 2-d weights")
    if x.value.shape[1] != weights.value.shape[1]:
        raise DimensionError(
            f"dense: input features {x.value.shape[1]} != weight fan-in "
            f"{weights.value.shape[1]}")
    if bias.value.shape != (weights.value.shape[0],):
        raise DimensionError("dense: bias shape must be (out,)")
    out = Var(x.value @ weights.value.T + bias.value, (x, weights, bias))

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g @ weights.value)
        _accumulate(weights, g.T @ x.value)
        _accumulate(bias, g.sum(axis=0))

    out._backward = backward
    return out


def _im2col(x: np.ndarray, ksize: int, padding: int) -> tuple[np.ndarray, tuple[int, int]]:
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = h + 2 * padding - ksize + 1
    ow = w + 2 * padding - ksize + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (ksize, ksize), axis=(2, 3))
    # (b, c, oh, ow, k, k) -> (b, c*k*k, oh*ow)
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * ksize * ksize, oh * ow)
    return np.ascontiguousarray(cols), (oh, ow)


def _col2im(cols: np.ndarray, x_shape: tuple[int, ...], ksize: int,
            padding: int) -> np.ndarray:
    b, c, h, w = x_shape
    oh = h + 2 * padding - ksize + 1
    ow = w + 2 * padding - ksize + 1
    grad = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols6 = cols.reshape(b, c, ksize, ksize, oh, ow)
    for ki in range(ksize):
        for kj in range(ksize):
            grad[:, :, ki:ki + oh, kj:kj + ow] += cols6[:, :, ki, kj]
    if padding:
        grad = grad[:, :, padding:-padding, padding:-padding]
    return grad


def conv2d(x: Var, kernels: Var, bias: Var, padding: int = 1) -> Var:
    """3x3 cross-correlation with zero padding; padding=1 preserves H and W."""
    if x.value.ndim != 4 or kernels.value.ndim != 4:
        raise DimensionError("conv2d expects (B,C,H,W) input and (O,C,3,3) kernels")
    out_ch, in_ch, kh, kw = kernels.value.shape
    if (kh, kw) != (3, 3):
        raise DimensionError("conv2d kernels must be 3x3")
    if x.value.shape[1] != in_ch:
        raise DimensionError(
            f"conv2d: input channels {x.value.shape[1]} != kernel channels {in_ch}")
    if bias.value.shape != (out_ch,):
        raise DimensionError("conv2d: bias shape must be (out_channels,)")
    b = x.value.shape[0]
    cols, (oh, ow) = _im2col(x.value, 3, padding)
    kmat = kernels.value.reshape(out_ch, in_ch * 9)
    out_flat = np.einsum("ok,bkp->bop", kmat, cols) + bias.value[None, :, None]
    out = Var(out_flat.reshape(b, out_ch, oh, ow).astype(x.dtype, copy=False),
              (x, kernels, bias))

    def backward(g: np.ndarray) -> None:
        gf = g.reshape(b, out_ch, oh * ow)
        _accumulate(kernels,
                    np.einsum("bop,bkp->ok", gf, cols).reshape(kernels.value.shape))
        gcols = np.einsum("ok,bop->bkp", kmat, gf)
        _accumulate(x, _col2im(gcols, x.value.shape, 3, padding))
        _accumulate(bias, gf.sum(axis=(0, 2)))

    out._backward = backward
    return out


def maxpool2d(x: Var, kernel: int = 3, stride: int = 2) -> Var:
    """Max over kernel windows; gradient routes to the first (row-major) argmax."""
    if x.value.ndim != 4:
        raise DimensionError("maxpool2d expects (B,C,H,W) input")
    b, c, h, w = x.value.shape
    if h < kernel or w < kernel:
        raise DimensionError(
            f"maxpool2d: spatial dims ({h},{w}) smaller than kernel {kernel}")
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.value, (kernel, kernel),
                                                       axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (b,c,oh,ow,k,k)
    flat = windows.reshape(b, c, oh, ow, kernel * kernel)
    arg = flat.argmax(axis=-1)  # np.argmax takes the first maximum
    out = Var(np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0], (x,))

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(x.value)
        ki, kj = np.divmod(arg, kernel)
        bi, ci, oi, oj = np.indices((b, c, oh, ow), sparse=False)
        rows = oi * stride + ki
        colsx = oj * stride + kj
        np.add.at(gx, (bi, ci, rows, colsx), g)
        _accumulate(x, gx)

    out._backward = backward
    return out


def relu(x: Var) -> Var:
    """max(0, x); gradient passes only where x > 0."""
    mask = x.value > 0
    out = Var(np.where(mask, x.value, np.zeros((), dtype=x.dtype)), (x,))

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * mask)

    out._backward = backward
    return out


def flatten(x: Var) -> Var:
    """Reshape (B, ...) to (B, -1) in row-major order."""
    b = x.value.shape[0]
    out = Var(x.value.reshape(b, -1), (x,))

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g.reshape(x.value.shape))

    out._backward = backward
    return out


def batch_scale_shift(x: Var, gamma: Var, beta: Var, running_mean: np.ndarray,
                      running_var: np.ndarray, training: bool,
                      momentum: float = 0.1, eps: float = 1e-5) -> Var:
    """Learnable scale-and-shift after normalization over the batch.

    Train mode normalizes with batch statistics and updates the running
    buffers in place; eval mode uses the running statistics only.  Dense
    activations normalize per unit (axis 0), conv activations per channel
    (axes 0, 2, 3).
    """
    axes = (0,) if x.value.ndim == 2 else (0, 2, 3)
    shape = [1] * x.value.ndim
    shape[1] = x.value.shape[1]
    gview = gamma.value.reshape(shape)
    bview = beta.value.reshape(shape)
    if training:
        mean = x.value.mean(axis=axes)
        var = x.value.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * var.astype(running_var.dtype)
        inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
        xhat = (x.value - mean.reshape(shape)) * inv_std.reshape(shape)
        out = Var(gview * xhat + bview, (x, gamma, beta))
        m = x.value.size // x.value.shape[1]

        def backward(g: np.ndarray) -> None:
            _accumulate(gamma, (g * xhat).sum(axis=axes))
            _accumulate(beta, g.sum(axis=axes))
            gxhat = g * gview
            term1 = gxhat
            term2 = gxhat.mean(axis=axes).reshape(shape)
            term3 = xhat * (gxhat * xhat).mean(axis=axes).reshape(shape)
            _accumulate(x, (term1 - term2 - term3) * inv_std.reshape(shape))

        out._backward = backward
        return out

    inv_std = 1.0 / np.sqrt(running_var + eps)
    scale = (gview * inv_std.reshape(shape)).astype(x.dtype, copy=False)
    shift = (bview - gview * running_mean.reshape(shape) * inv_std.reshape(shape))
    out = Var(x.value * scale + shift.astype(x.dtype, copy=False), (x, gamma, beta))
    xv = x.value

    def backward_eval(g: np.ndarray) -> None:
        _accumulate(gamma, (g * (xv - running_mean.reshape(shape))
                            * inv_std.reshape(shape)).sum(axis=axes))
        _accumulate(beta, g.sum(axis=axes))
        _accumulate(x, g * scale)

    out._backward = backward_eval
    return out


# ---------------------------------------------------------------------------
# Losses


def softmax_with_temperature(logits: Var, tau: float = 1.0) -> Var:
    """Row-wise softmax of logits / tau, computed with max subtraction."""
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    if logits.value.ndim != 2:
        raise DimensionError("softmax expects (batch, classes) logits")
    scaled = logits.value / np.asarray(tau, dtype=logits.dtype)
    shifted = scaled - scaled.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    out = Var(probs, (logits,))

    def backward(g: np.ndarray) -> None:
        inner = (g * probs).sum(axis=1, keepdims=True)
        _accumulate(logits, (probs * (g - inner)) / np.asarray(tau, dtype=logits.dtype))

    out._backward = backward
    return out


def cross_entropy(probabilities: Var, labels: np.ndarray) -> Var:
    """Mean over the batch of -log p[label], with the probability floor."""
    p = probabilities.value
    if p.ndim != 2:
        raise DimensionError("cross_entropy expects (batch, classes) probabilities")
    labels = np.asarray(labels)
    if labels.shape != (p.shape[0],):
        raise DimensionError("labels must be one class index per batch row")
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= p.shape[1]:
        raise IndexError("label out of range")
    batch = p.shape[0]
    rows = np.arange(batch)
    picked = p[rows, labels]
    clamped = np.maximum(picked, np.asarray(PROB_FLOOR, dtype=p.dtype))
    out = Var(np.asarray(-np.log(clamped).mean(), dtype=p.dtype), (probabilities,))

    def backward(g: np.ndarray) -> None:
        gp = np.zeros_like(p)
        live = picked > PROB_FLOOR  # clamped entries get no gradient
        gp[rows, labels] = np.where(live, -1.0 / (clamped * batch), 0.0) * g
        _accumulate(probabilities, gp)

    out._backward = backward
    return out


def kl_divergence(source: Var, target: Var | np.ndarray) -> Var:
    """Mean over the batch of sum_c target * (log target - log source).

    This is KL(target || source): ``target`` is the reference distribution
    (the teacher in distillation), ``source`` the one being trained.  Both
    operands are clamped at the probability floor before logs, so identical
    inputs give exactly zero.
    """
    tgt = target.value if isinstance(target, Var) else np.asarray(target)
    src = source.value
    if src.shape != tgt.shape:
        raise DimensionError("kl_divergence operands must share a shape")
    if (src < 0).any() or (tgt < 0).any():
        raise DomainError("kl_divergence requires nonnegative entries")
    batch = src.shape[0]
    floor = np.asarray(PROB_FLOOR, dtype=src.dtype)
    s = np.maximum(src, floor)
    t = np.maximum(tgt, floor)
    out = Var(np.asarray((t * (np.log(t) - np.log(s))).sum() / batch,
                         dtype=src.dtype), (source,))

    def backward(g: np.ndarray) -> None:
        gs = np.where(src > PROB_FLOOR, -t / s / batch, 0.0) * g
        _accumulate(source, gs.astype(src.dtype, copy=False))

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Scalar helpers for toy losses and tests


def square_sum(x: Var) -> Var:
    """sum(x**2), a scalar."""
    out = Var(np.asarray((x.value * x.value).sum(), dtype=x.dtype), (x,))

    def backward(g: np.ndarray) -> None:
        _accumulate(x, 2.0 * x.value * g)

    out._backward = backward
    return out


def mean_all(x: Var) -> Var:
    out = Var(np.asarray(x.value.mean(), dtype=x.dtype), (x,))

    def backward(g: np.ndarray) -> None:
        _accumulate(x, np.full_like(x.value, 1.0 / x.value.size) * g)

    out._backward = backward
    return out
