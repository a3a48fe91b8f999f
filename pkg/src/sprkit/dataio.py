"""Datasets: synthetic generators, IDX files, normalization and augmentation."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "Dataset",
    "Stats",
    "gen_synthetic",
    "train_test",
    "load_idx",
    "write_idx",
    "normalize",
    "apply_stats",
    "augment",
    "dump_dataset",
    "load_dataset",
]

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Stats:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class Dataset:
    inputs: np.ndarray  # (n, features) or (n, C, H, W), float64
    labels: np.ndarray  # (n,) int64
    n_classes: int
    split: str = "train"
    stats: Stats | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError("inputs and labels disagree on the sample count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError("label outside the class range")

    def __len__(self):
        return self.labels.size

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.inputs.shape[1:]

    @property
    def is_image(self) -> bool:
        return self.inputs.ndim == 4


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

_BASE_PATTERNS = np.array(
    [
        [[0, 0, 0], [1, 1, 1], [0, 0, 0]],  # horizontal bar
        [[0, 1, 0], [0, 1, 0], [0, 1, 0]],  # vertical bar
        [[1, 0, 0], [0, 1, 0], [0, 0, 1]],  # diagonal
        [[0, 0, 1], [0, 1, 0], [1, 0, 0]],  # anti-diagonal
        [[1, 0, 1], [0, 1, 0], [1, 0, 1]],  # cross
        [[1, 1, 1], [1, 0, 1], [1, 1, 1]],  # ring
    ],
    dtype=np.float64,
)


def _balanced_labels(n, classes, rng):
    labels = np.arange(n) % classes
    return rng.permutation(labels)


def gen_synthetic(
    kind: str,
    n: int,
    classes: int = 2,
    noise: float = 0.1,
    seed: int = 0,
    channels: int = 3,
    size: int = 8,
) -> Dataset:
    """Deterministic toy classification data.

    ``blobs``/``moons``/``rings`` give 2-d points; ``tiny-images`` gives
    ``channels x size x size`` images, each carrying one class-specific 3x3
    pattern (with a class-specific colour) at a random position over
    Gaussian background noise.
    """
    if n < classes or classes < 2:
        raise DataError("need n >= classes >= 2")
    if noise < 0:
        raise DataError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, classes, rng)
    if kind == "blobs":
        angle = 2 * np.pi * np.arange(classes) / classes
        centers = 3.0 * np.stack([np.cos(angle), np.sin(angle)], axis=1)
        x = centers[labels] + noise * rng.standard_normal((n, 2))
    elif kind == "moons":
        if classes != 2:
            raise DataError("moons has exactly 2 classes")
        t = rng.uniform(0, np.pi, n)
        x = np.where(
            labels[:, None] == 0,
            np.stack([np.cos(t), np.sin(t)], axis=1),
            np.stack([1 - np.cos(t), 0.5 - np.sin(t)], axis=1),
        )
        x = x + noise * rng.standard_normal((n, 2))
    elif kind == "rings":
        t = rng.uniform(0, 2 * np.pi, n)
        r = 1.0 + labels
        x = np.stack([r * np.cos(t), r * np.sin(t)], axis=1) + noise * rng.standard_normal((n, 2))
    elif kind == "tiny-images":
        if size < 4:
            raise DataError("tiny-images needs size >= 4")
        pat_rng = np.random.default_rng([seed, 7])
        pats = [_BASE_PATTERNS[c] for c in range(min(classes, len(_BASE_PATTERNS)))]
        while len(pats) < classes:
            pats.append((pat_rng.random((3, 3)) < 0.5).astype(np.float64))
        colours = 0.5 + 0.5 * pat_rng.random((classes, channels))
        x = noise * rng.standard_normal((n, channels, size, size))
        pos = rng.integers(0, size - 2, size=(n, 2))
        for i in range(n):
            c = labels[i]
            r0, c0 = pos[i]
            x[i, :, r0 : r0 + 3, c0 : c0 + 3] += colours[c][:, None, None] * pats[c]
    else:
        raise DataError(f"unknown synthetic kind {kind!r}")
    return Dataset(x, labels, classes)


def train_test(kind: str, n_train: int, n_test: int, classes: int, noise: float, seed: int, **kw):
    """Draw one pool and split it, so train and test never share a sample."""
    full = gen_synthetic(kind, n_train + n_test, classes, noise, seed, **kw)
    train = Dataset(full.inputs[:n_train], full.labels[:n_train], classes, "train")
    test = Dataset(full.inputs[n_train:], full.labels[n_train:], classes, "test")
    return train, test


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------


def _read_idx(path, magic_expected: int, ndim: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4 + 4 * ndim:
        raise DataError(f"{path}: truncated header")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic != magic_expected:
        raise DataError(f"{path}: bad magic 0x{magic:08x}")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    start = 4 + 4 * ndim
    count = int(np.prod(dims))
    if len(data) - start < count:
        raise DataError(f"{path}: truncated payload")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=start).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int | None = None, split: str = "train") -> Dataset:
    """Read an IDX image file (magic 0x803) and label file (magic 0x801).

    Pixels are scaled to [0, 1]; images get a singleton channel axis.
    """
    images = _read_idx(images_path, IDX_IMAGES, 3)
    labels = _read_idx(labels_path, IDX_LABELS, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(images[:, None].astype(np.float64) / 255.0, labels.astype(np.int64), n_classes, split)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (3-d images or 1-d labels)."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise DataError("IDX payload must be uint8")
    magic = {3: IDX_IMAGES, 1: IDX_LABELS}.get(array.ndim)
    if magic is None:
        raise DataError("only 1-d label and 3-d image arrays are supported")
    head = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    Path(path).write_bytes(head + array.tobytes())


def idx_arrays(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`load_idx` for single-channel datasets."""
    imgs = np.rint(ds.inputs[:, 0] * 255.0).astype(np.uint8)
    return imgs, ds.labels.astype(np.uint8)


# ---------------------------------------------------------------------------
# normalization / augmentation
# ---------------------------------------------------------------------------


def _axes(x):
    return (0, 2, 3) if x.ndim == 4 else (0,)


def normalize(ds: Dataset, floor: float = 1e-8) -> tuple[Dataset, Stats]:
    """Per-channel standardization with statistics from ``ds`` itself."""
    if len(ds) == 0:
        raise DataError("cannot normalize an empty dataset")
    axes = _axes(ds.inputs)
    stats = Stats(ds.inputs.mean(axis=axes), np.maximum(ds.inputs.std(axis=axes), floor))
    return apply_stats(ds, stats), stats


def apply_stats(ds: Dataset, stats: Stats) -> Dataset:
    shape = (1, -1, 1, 1) if ds.inputs.ndim == 4 else (1, -1)
    x = (ds.inputs - stats.mean.reshape(shape)) / stats.std.reshape(shape)
    return replace(ds, inputs=x, stats=stats)


def augment(
    batch: np.ndarray,
    policy: str = "crop+flip",
    pad: int = 1,
    seed: int = 0,
    epoch: int = 0,
    batch_index: int = 0,
    force_flip: bool | None = None,
) -> np.ndarray:
    """Zero-pad, random-crop back to size, then flip horizontally with p=0.5.

    The random stream is keyed by ``(seed, epoch, batch_index)``.
    ``force_flip`` overrides the coin (True: flip all, False: flip none).
    """
    if policy == "none":
        return batch
    if policy != "crop+flip":
        raise DataError(f"unknown augmentation policy {policy!r}")
    if batch.ndim != 4:
        raise DataError("augmentation needs image batches (N, C, H, W)")
    n, _, h, w = batch.shape
    if pad < 0 or pad >= min(h, w):
        raise DataError("pad must be in [0, image size)")
    rng = np.random.default_rng([seed, epoch, batch_index])
    out = np.empty_like(batch)
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else batch
    offs = rng.integers(0, 2 * pad + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    if force_flip is not None:
        flips[:] = force_flip
    for i in range(n):
        r, c = offs[i]
        img = padded[i, :, r : r + h, c : c + w]
        out[i] = img[:, :, ::-1] if flips[i] else img
    return out


# ---------------------------------------------------------------------------
# flat binary container
# ---------------------------------------------------------------------------

_SPRD = b"SPRD"


def dump_dataset(path, ds: Dataset) -> None:
    """``SPRD | u32 ndim | u32 n_classes | u32 dims... | f8 inputs | i4 labels`` (all LE)."""
    shape = ds.inputs.shape
    head = _SPRD + struct.pack(f"<II{len(shape)}I", len(shape), ds.n_classes, *shape)
    body = ds.inputs.astype("<f8").tobytes() + ds.labels.astype("<i4").tobytes()
    Path(path).write_bytes(head + body)


def load_dataset(path, split: str = "train") -> Dataset:
    data = Path(path).read_bytes()
    if data[:4] != _SPRD:
        raise DataError("bad magic")
    ndim, n_classes = struct.unpack_from("<II", data, 4)
    shape = struct.unpack_from(f"<{ndim}I", data, 12)
    off = 12 + 4 * ndim
    count = int(np.prod(shape))
    if len(data) != off + 8 * count + 4 * shape[0]:
        raise DataError("truncated dataset file")
    x = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
    y = np.frombuffer(data, dtype="<i4", count=shape[0], offset=off + 8 * count)
    return Dataset(x.astype(np.float64), y.astype(np.int64), n_classes, split)
