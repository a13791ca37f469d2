"""Datasets: IDX ingestion and deterministic synthetic generators."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError
from .rng import RandomStream

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
TARGET_STD = 0.5  # features are centred and rescaled to this deviation


@dataclass
class Dataset:
    """Train/test feature arrays with class labels.

    Splits are disjoint by construction (a single seeded shuffle assigns
    each row to exactly one split).
    """

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    num_classes: int
    normalization: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self) -> None:
        for y in (self.y_train, self.y_test):
            if y.size and (y.min() < 0 or y.max() >= self.num_classes):
                raise ConfigError("labels must lie in [0, num_classes)")

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return tuple(self.x_train.shape[1:])

    def as_flat(self) -> "Dataset":
        """View with features flattened to (N, features)."""
        if self.x_train.ndim == 2:
            return self
        return Dataset(self.x_train.reshape(len(self.x_train), -1),
                       self.y_train,
                       self.x_test.reshape(len(self.x_test), -1),
                       self.y_test, self.num_classes, self.normalization,
                       self.name)

    def with_test(self, other: "Dataset") -> "Dataset":
        """Use another dataset's training rows as this one's test split."""
        if other.num_classes != self.num_classes:
            raise ConfigError("test split has a different class count")
        return Dataset(self.x_train, self.y_train, other.x_train, other.y_train,
                       self.num_classes, self.normalization, self.name)


def _read_idx(path, expected_magic: int):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header")
    magic = struct.unpack_from(">I", raw, 0)[0]
    if magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x}, "
                          f"expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    payload = raw[header_len:]
    expected = int(np.prod(dims))
    if len(payload) != expected:
        raise FormatError(f"{path}: payload holds {len(payload)} bytes, "
                          f"dimensions require {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, normalize: bool = True,
             split: str = "train") -> Dataset:
    """Load an IDX image/label file pair.

    Image files carry big-endian magic 0x00000803 followed by count, rows
    and cols as big-endian u32 and raw pixel bytes; label files carry magic
    0x00000801, a count, and raw class bytes.  With ``normalize`` the pixels
    are centred to zero mean and rescaled to deviation 0.5 using statistics
    of the loaded set (recorded in the normalization metadata).
    """
    images = _read_idx(images_path, IDX_IMAGE_MAGIC)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"image count {images.shape[0]} != label count "
                          f"{labels.shape[0]}")
    x = images.astype(np.float32).reshape(images.shape[0], 1,
                                          images.shape[1], images.shape[2])
    meta: dict = {"source": "idx", "normalized": bool(normalize)}
    if normalize:
        mean = float(x.mean())
        std = float(x.std())
        scale = TARGET_STD / std if std > 0 else 0.0
        x = ((x - mean) * scale).astype(np.float32)
        meta.update({"pixel_mean": mean, "pixel_std": std,
                     "target_std": TARGET_STD})
    y = labels.astype(np.int64)
    num_classes = int(y.max()) + 1 if y.size else 1
    empty_x = np.empty((0,) + x.shape[1:], dtype=np.float32)
    empty_y = np.empty(0, dtype=np.int64)
    if split == "train":
        return Dataset(x, y, empty_x, empty_y, num_classes, meta, "idx")
    return Dataset(empty_x, empty_y, x, y, num_classes, meta, "idx")


def write_idx_images(path, images: np.ndarray) -> None:
    """Write (N, R, C) uint8 images in IDX layout."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def gen_synthetic(kind: str, n: int, classes: int, noise: float,
                  seed: int, turns: float = 1.72) -> Dataset:
    """Deterministic 2-d toy datasets with an 80/20 train/test split.

    blobs: Gaussian clusters centred on the unit circle.
    spirals: ``classes`` interleaved arms winding ``turns`` revolutions.
    """
    if kind not in ("blobs", "spirals"):
        raise ConfigError(f"unknown synthetic kind {kind!r}")
    if n < classes * 10:
        raise ConfigError(f"need n >= {classes * 10} for {classes} classes")
    labels = np.arange(n, dtype=np.int64) % classes
    stream = RandomStream(seed, f"synthetic/{kind}")
    if kind == "blobs":
        angles = 2.0 * np.pi * labels / classes
        centers = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        x = centers + noise * stream.normal(2 * n).reshape(n, 2)
    else:
        t = np.empty(n, dtype=np.float64)
        for c in range(classes):
            rows = np.nonzero(labels == c)[0]
            t[rows] = np.linspace(0.05, 1.0, len(rows))
        theta = 2.0 * np.pi * (turns * t + labels / classes)
        radius = t
        x = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        x = x + noise * t[:, None] * stream.normal(2 * n).reshape(n, 2)

    split_stream = RandomStream(seed, f"synthetic/{kind}/split")
    perm = split_stream.permutation(n)
    n_train = int(round(n * 0.8))
    train_idx, test_idx = perm[:n_train], perm[n_train:]

    mean = x[train_idx].mean(axis=0)
    std = x[train_idx].std(axis=0)
    scale = np.where(std > 0, TARGET_STD / np.where(std > 0, std, 1.0), 0.0)
    xn = ((x - mean) * scale).astype(np.float32)
    meta = {"source": kind, "noise": noise, "seed": seed,
            "feature_mean": mean.tolist(), "feature_std": std.tolist(),
            "target_std": TARGET_STD}
    if kind == "spirals":
        meta["turns"] = turns
    return Dataset(xn[train_idx], labels[train_idx], xn[test_idx],
                   labels[test_idx], classes, meta, kind)
