"""Network family builders, the runtime network, and the model container format.

The "size" of a network is its count of hidden dense layers (mlp family) or
convolutional layers (plain-cnn family), the workbench's capacity proxy.
Desk-scale defaults are width-32 MLPs with sizes 1..5; the CIFAR-style CNN
layouts are shipped as named configs for users with more compute.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import FormatError, SpecError
from .params import ParameterSet
from .rng import RandomStream

MAGIC = b"TAKD"
FORMAT_VERSION = 1

MODE_INIT = "INIT"
MODE_NOKD = "NOKD"
MODE_BLKD = "BLKD"
MODE_TAKD = "TAKD"


def mode_for_path(path: tuple[int, ...]) -> str:
    """Training mode implied by a distillation path's length."""
    if len(path) == 0:
        return MODE_INIT
    if len(path) == 1:
        return MODE_NOKD
    if len(path) == 2:
        return MODE_BLKD
    return MODE_TAKD


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # dense | conv | maxpool | flatten
    units: int = 0  # dense output units / conv output channels
    normalize: bool = False
    activation: str | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "units": self.units,
                "normalize": self.normalize, "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(kind=d["kind"], units=int(d.get("units", 0)),
                   normalize=bool(d.get("normalize", False)),
                   activation=d.get("activation"))


@dataclass(frozen=True)
class NetworkSpec:
    family: str  # mlp | plain-cnn
    size: int
    layers: tuple[LayerSpec, ...]
    num_classes: int
    input_shape: tuple[int, ...]
    name: str = ""

    def __post_init__(self) -> None:
        if self.family not in ("mlp", "plain-cnn"):
            raise SpecError(f"unknown family {self.family!r}")
        if self.size < 1:
            raise SpecError("size must be a positive integer")
        if self.num_classes < 1:
            raise SpecError("num_classes must be a positive integer")
        if not self.layers or self.layers[-1].kind != "dense":
            raise SpecError("last layer must be a dense logit layer")
        if self.layers[-1].units != self.num_classes:
            raise SpecError("last layer must output num_classes logits")
        counted = self._size_proxy_count()
        if counted != self.size:
            raise SpecError(
                f"size {self.size} != counted proxy layers {counted}")

    def _size_proxy_count(self) -> int:
        if self.family == "mlp":
            return sum(1 for l in self.layers[:-1] if l.kind == "dense")
        return sum(1 for l in self.layers if l.kind == "conv")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "size": self.size,
            "layers": [l.to_dict() for l in self.layers],
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            family=d["family"],
            size=int(d["size"]),
            layers=tuple(LayerSpec.from_dict(l) for l in d["layers"]),
            num_classes=int(d["num_classes"]),
            input_shape=tuple(int(x) for x in d["input_shape"]),
            name=d.get("name", ""),
        )


def mlp_spec(size: int, input_dim: int = 2, width: int = 32,
             num_classes: int = 3, normalize: bool = False) -> NetworkSpec:
    """Width-``width`` MLP with ``size`` hidden relu layers."""
    layers = [LayerSpec("dense", width, normalize, "relu") for _ in range(size)]
    layers.append(LayerSpec("dense", num_classes))
    return NetworkSpec("mlp", size, tuple(layers), num_classes, (input_dim,),
                       name=f"mlp-{size}w{width}")


def cnn_spec(size: int, input_shape: tuple[int, int, int] = (1, 8, 8),
             base_channels: int = 4, num_classes: int = 3,
             normalize: bool = True) -> NetworkSpec:
    """Small plain CNN: ``size`` 3x3 conv layers in blocks of two, pooling
    between blocks while the spatial extent allows it, then the logit layer."""
    layers: list[LayerSpec] = []
    channels = base_channels
    spatial = min(input_shape[1], input_shape[2])
    for i in range(size):
        layers.append(LayerSpec("conv", channels, normalize, "relu"))
        end_of_block = (i % 2 == 1) or (i == size - 1)
        if end_of_block and spatial >= 3:
            layers.append(LayerSpec("maxpool"))
            spatial = (spatial - 3) // 2 + 1
            channels *= 2
    layers.append(LayerSpec("flatten"))
    layers.append(LayerSpec("dense", num_classes))
    return NetworkSpec("plain-cnn", size, tuple(layers), num_classes,
                       input_shape, name=f"cnn-{size}c{base_channels}")


# CIFAR-style plain CNN layouts, by conv-layer count.  "c" entries are conv
# channels (normalized, relu), "m" is a 3x3/stride-2 maxpool, "f" entries are
# hidden dense units (relu).
_CIFAR_PLANS: dict[tuple[int, int], tuple] = {
    (10, 2): ("c16", "m", "c16", "m"),
    (10, 4): ("c16", "c16", "m", "c32", "c32", "m"),
    (10, 6): ("c16", "c16", "m", "c32", "c32", "m", "c64", "c64", "m"),
    (10, 8): ("c16", "c16", "m", "c32", "c32", "m", "c64", "c64", "m",
              "c128", "c128", "m", "f64"),
    (10, 10): ("c32", "c32", "m", "c64", "c64", "m", "c128", "c128", "m",
               "c256", "c256", "c256", "c256", "m", "f128"),
    (100, 2): ("c32", "m", "c32", "m"),
    (100, 4): ("c32", "c32", "m", "c64", "c64", "m"),
    (100, 6): ("c32", "c32", "m", "c64", "c64", "m", "c128", "c128"),
    (100, 8): ("c32", "c32", "m", "c64", "c64", "m", "c128", "c128", "m",
               "c256", "c256", "m", "f64"),
    (100, 10): ("c32", "c32", "m", "c64", "c64", "m", "c128", "c128", "m",
                "c256", "c256", "c256", "c256", "m", "f512"),
}


def cifar_cnn_spec(size: int, num_classes: int = 10) -> NetworkSpec:
    """Named full-scale plain-CNN configs (32x32x3 inputs, 10 or 100 classes)."""
    key = (num_classes, size)
    if key not in _CIFAR_PLANS:
        raise SpecError(f"no cifar cnn config for size={size}, classes={num_classes}")
    layers: list[LayerSpec] = []
    for item in _CIFAR_PLANS[key]:
        if item == "m":
            layers.append(LayerSpec("maxpool"))
        elif item.startswith("c"):
            layers.append(LayerSpec("conv", int(item[1:]), True, "relu"))
        else:
            layers.append(LayerSpec("dense", int(item[1:]), False, "relu"))
    # dense hidden layers sit after the conv stack, so flatten goes before
    # the first dense entry
    first_dense = next((i for i, l in enumerate(layers) if l.kind == "dense"),
                       len(layers))
    layers.insert(first_dense, LayerSpec("flatten"))
    layers.append(LayerSpec("dense", num_classes))
    return NetworkSpec("plain-cnn", size, tuple(layers), num_classes, (3, 32, 32),
                       name=f"cifar{num_classes}-cnn-{size}")


# ---------------------------------------------------------------------------
# Runtime


class _NormState:
    def __init__(self, scale, shift, mean, var):
        self.scale = scale
        self.shift = shift
        self.mean = mean
        self.var = var


def _pool_top2_gap(x: np.ndarray, kernel: int = 3, stride: int = 2) -> float:
    """Smallest margin between the max and runner-up of any pool window."""
    windows = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel),
                                                       axis=(2, 3))
    flat = windows[:, :, ::stride, ::stride].reshape(
        x.shape[0], x.shape[1], -1, kernel * kernel)
    top2 = np.partition(flat, kernel * kernel - 2, axis=-1)[..., -2:]
    return float((top2[..., 1] - top2[..., 0]).min())


class Network:
    """A network spec bound to concrete parameter arrays."""

    def __init__(self, spec: NetworkSpec, params: ParameterSet):
        self.spec = spec
        self.params = params
        self._norms: dict[int, _NormState] = {}
        for i, layer in enumerate(spec.layers):
            if layer.kind in ("dense", "conv") and layer.normalize:
                self._norms[i] = _NormState(
                    params[f"layer{i}.norm_scale"], params[f"layer{i}.norm_shift"],
                    params[f"layer{i}.norm_mean"], params[f"layer{i}.norm_var"])

    def forward(self, x: np.ndarray, training: bool,
                trace: list | None = None) -> tuple[Var, dict[str, Var]]:
        """Run the network, returning logits and the parameter Vars used.

        When ``trace`` is a list it collects nonsmoothness margins: the
        smallest |input| feeding each relu and the smallest top-two window
        gap of each maxpool.  Finite-difference checks use these to pick
        evaluation points away from kinks.
        """
        dtype = x.dtype
        param_vars: dict[str, Var] = {}

        def pvar(name: str) -> Var:
            v = Var(self.params[name].value.astype(dtype, copy=False))
            param_vars[name] = v
            return v

        h = Var(x)
        for i, layer in enumerate(self.spec.layers):
            if layer.kind == "dense":
                if h.value.ndim != 2:
                    raise SpecError(f"layer{i}: dense input must be 2-d "
                                    f"(got shape {h.value.shape}); add a flatten")
                h = ad.dense(h, pvar(f"layer{i}.weight"), pvar(f"layer{i}.bias"))
            elif layer.kind == "conv":
                h = ad.conv2d(h, pvar(f"layer{i}.weight"), pvar(f"layer{i}.bias"))
            elif layer.kind == "maxpool":
                if trace is not None:
                    trace.append(("pool_gap", _pool_top2_gap(h.value)))
                h = ad.maxpool2d(h)
            elif layer.kind == "flatten":
                h = ad.flatten(h)
            else:
                raise SpecError(f"unknown layer kind {layer.kind!r}")
            if layer.kind in ("dense", "conv") and layer.normalize:
                ns = self._norms[i]
                h = ad.batch_scale_shift(
                    h, pvar(f"layer{i}.norm_scale"), pvar(f"layer{i}.norm_shift"),
                    ns.mean.value, ns.var.value, training)
            if layer.activation == "relu":
                if trace is not None:
                    trace.append(("relu_margin", float(np.abs(h.value).min())))
                h = ad.relu(h)
        return h, param_vars

    def smoothness_margin(self, x: np.ndarray, training: bool = True) -> float:
        """Distance of this evaluation point from the nearest relu/argmax
        kink, as seen by one forward pass."""
        trace: list = []
        self.forward(np.ascontiguousarray(x), training, trace=trace)
        return min((v for _, v in trace), default=float("inf"))

    def logits(self, x: np.ndarray, training: bool = False,
               dtype=np.float32) -> np.ndarray:
        """Eval-path forward without keeping the tape."""
        out, _ = self.forward(np.ascontiguousarray(x, dtype=dtype), training)
        return out.value

    def accumulate_gradients(self, param_vars: dict[str, Var]) -> None:
        for name, var in param_vars.items():
            p = self.params[name]
            if p.trainable and var.grad is not None:
                p.grad += var.grad.astype(p.grad.dtype, copy=False)

    def astype(self, dtype) -> "Network":
        return Network(self.spec, self.params.astype(dtype))

    def copy(self) -> "Network":
        return Network(self.spec, self.params.copy())


def _init_params(spec: NetworkSpec, seed: int) -> ParameterSet:
    """He-style init: weights N(0, sqrt(2/fan_in)) from a named substream per
    parameter, zero biases, identity normalization, unit running variance."""
    params = ParameterSet()
    shapes = _parameter_shapes(spec)
    for name, shape, trainable, kind in shapes:
        if kind == "weight":
            fan_in = int(np.prod(shape[1:]))
            stream = RandomStream(seed, f"init/{spec.family}-{spec.size}/{name}")
            std = np.sqrt(2.0 / fan_in)
            value = stream.normal(int(np.prod(shape)), std=std)
            params.add(name, value.reshape(shape).astype(np.float32), trainable)
        elif kind in ("bias", "shift", "mean"):
            params.add(name, np.zeros(shape, dtype=np.float32), trainable)
        else:  # scale, var
            params.add(name, np.ones(shape, dtype=np.float32), trainable)
    return params


def _parameter_shapes(spec: NetworkSpec) -> list[tuple[str, tuple[int, ...], bool, str]]:
    """Walk the layer chain, yielding (name, shape, trainable, kind)."""
    out: list[tuple[str, tuple[int, ...], bool, str]] = []
    shape = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        if layer.kind == "dense":
            if len(shape) != 1:
                raise SpecError(f"layer{i}: dense after shape {shape}; add a flatten")
            out.append((f"layer{i}.weight", (layer.units, shape[0]), True, "weight"))
            out.append((f"layer{i}.bias", (layer.units,), True, "bias"))
            shape = (layer.units,)
        elif layer.kind == "conv":
            if len(shape) != 3:
                raise SpecError(f"layer{i}: conv needs (C,H,W) input, got {shape}")
            out.append((f"layer{i}.weight", (layer.units, shape[0], 3, 3), True,
                        "weight"))
            out.append((f"layer{i}.bias", (layer.units,), True, "bias"))
            shape = (layer.units, shape[1], shape[2])
        elif layer.kind == "maxpool":
            if len(shape) != 3 or shape[1] < 3 or shape[2] < 3:
                raise SpecError(f"layer{i}: maxpool needs spatial dims >= 3, "
                                f"got {shape}")
            shape = (shape[0], (shape[1] - 3) // 2 + 1, (shape[2] - 3) // 2 + 1)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        else:
            raise SpecError(f"unknown layer kind {layer.kind!r}")
        if layer.kind in ("dense", "conv") and layer.normalize:
            ch = layer.units
            out.append((f"layer{i}.norm_scale", (ch,), True, "scale"))
            out.append((f"layer{i}.norm_shift", (ch,), True, "shift"))
            out.append((f"layer{i}.norm_mean", (ch,), False, "mean"))
            out.append((f"layer{i}.norm_var", (ch,), False, "var"))
    return out


def model_capacity(spec: NetworkSpec) -> int:
    """Exact count of trainable scalar parameters."""
    return sum(int(np.prod(shape)) for _, shape, trainable, _
               in _parameter_shapes(spec) if trainable)


@dataclass
class TrainedModel:
    """Weights plus provenance: how this model came to be."""

    network: Network
    provenance: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        path = tuple(self.provenance.get("path", ()))
        mode = self.provenance.get("mode", mode_for_path(path))
        if mode != mode_for_path(path):
            raise SpecError(f"mode {mode} inconsistent with path {path}")
        self.provenance["mode"] = mode
        self.provenance["path"] = list(path)

    @property
    def spec(self) -> NetworkSpec:
        return self.network.spec

    @property
    def parameters(self) -> ParameterSet:
        return self.network.params

    @property
    def mode(self) -> str:
        return self.provenance["mode"]

    @property
    def path(self) -> tuple[int, ...]:
        return tuple(self.provenance["path"])

    @property
    def test_accuracy(self) -> float:
        return float(self.metrics.get("test_acc", float("nan")))


def build_model(spec: NetworkSpec, seed: int) -> TrainedModel:
    """Initialize an untrained model and validate the layer chain by running
    a dummy batch through it."""
    params = _init_params(spec, seed)
    net = Network(spec, params)
    dummy = np.zeros((2,) + tuple(spec.input_shape), dtype=np.float32)
    logits = net.logits(dummy, training=False)
    if logits.shape != (2, spec.num_classes):
        raise SpecError(f"spec produces logits of shape {logits.shape}, "
                        f"expected (2, {spec.num_classes})")
    return TrainedModel(net, provenance={"mode": MODE_INIT, "path": [],
                                         "seed": seed, "config_hash": ""})


# ---------------------------------------------------------------------------
# Container format
#
# magic "TAKD" | version u32 LE | header-JSON length u64 LE | header JSON
# (spec, provenance, metrics, array manifest) | per-array f32 LE data in
# manifest order | CRC32 (u32 LE) of all preceding bytes.


def serialize_model(model: TrainedModel) -> bytes:
    manifest = []
    blobs = []
    for p in model.parameters:
        arr = np.ascontiguousarray(p.value, dtype="<f4")
        manifest.append({"name": p.name, "shape": list(arr.shape),
                         "trainable": p.trainable})
        blobs.append(arr.tobytes())
    header = json.dumps({
        "spec": model.spec.to_dict(),
        "provenance": model.provenance,
        "metrics": model.metrics,
        "arrays": manifest,
    }, sort_keys=True).encode("utf-8")
    body = b"".join([MAGIC, struct.pack("<I", FORMAT_VERSION),
                     struct.pack("<Q", len(header)), header] + blobs)
    return body + struct.pack("<I", zlib.crc32(body))


def deserialize_model(data: bytes) -> TrainedModel:
    if len(data) < 20:
        raise FormatError("model stream truncated: missing header")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported container version {version}")
    body, crc_bytes = data[:-4], data[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(body):
        raise FormatError("CRC mismatch: stream corrupted")
    header_len = struct.unpack_from("<Q", data, 8)[0]
    header_end = 16 + header_len
    if header_end > len(body):
        raise FormatError("model stream truncated: header extends past payload")
    try:
        header = json.loads(data[16:header_end].decode("utf-8"))
        spec = NetworkSpec.from_dict(header["spec"])
        manifest = header["arrays"]
    except (ValueError, KeyError, SpecError) as exc:
        raise FormatError(f"invalid model header: {exc}") from exc
    params = ParameterSet()
    offset = header_end
    for entry in manifest:
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape)) * 4
        if offset + nbytes > len(body):
            raise FormatError("model stream truncated: array data missing")
        arr = np.frombuffer(data, dtype="<f4", count=int(np.prod(shape)),
                            offset=offset).reshape(shape).copy()
        params.add(entry["name"], arr, bool(entry["trainable"]))
        offset += nbytes
    if offset != len(body):
        raise FormatError("trailing bytes after final array")
    expected = [(n, s) for n, s, _, _ in _parameter_shapes(spec)]
    actual = [(p.name, p.value.shape) for p in params]
    if expected != actual:
        raise FormatError("array manifest does not match the network spec")
    return TrainedModel(Network(spec, params), provenance=header["provenance"],
                        metrics=header["metrics"])


def save_model(model: TrainedModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())


def specs_for_sizes(sizes, family: str = "mlp", input_dim: int = 2,
                    width: int = 32, num_classes: int = 3) -> Mapping[int, NetworkSpec]:
    """Convenience ladder: one spec per size with shared family settings."""
    if family == "mlp":
        return {s: mlp_spec(s, input_dim, width, num_classes) for s in sizes}
    return {s: cnn_spec(s, num_classes=num_classes) for s in sizes}
