"""Dataset ingestion: IDX files, downsampling, bundled digits, synthetic blobs.

Every loader produces float64 features scaled into [0, 1] and integer class
labels.  The desk-scale default is the bundled 8x8 digits set (a real
downsampled handwritten-digit corpus); IDX loading covers full MNIST when
the files are available locally, and synthetic Gaussian blobs provide a
dependency-free fast corpus.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


class DataFormatError(ValueError):
    """Malformed dataset file."""


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (n, d), float64 in [0, 1]
    labels: np.ndarray  # (n,), int64
    split: str  # "train" or "test"

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or labels.ndim != 1 or inputs.shape[0] != labels.shape[0]:
            raise ValueError("inputs must be (n, d) with one label per row")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def read_idx(path) -> np.ndarray:
    """Parse an IDX file.

    Images (magic 0x00000803) come back as float64 scaled by 1/255 with
    shape (count, rows, cols); labels (magic 0x00000801) as int64.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_MAGIC_LABELS:
        ndim = 1
    elif magic == IDX_MAGIC_IMAGES:
        ndim = 3
    else:
        raise DataFormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise DataFormatError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    payload = raw[header_len:]
    expected = int(np.prod(dims))
    if len(payload) != expected:
        raise DataFormatError(f"{path}: payload has {len(payload)} bytes, header promises {expected}")
    values = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    if magic == IDX_MAGIC_LABELS:
        return values.astype(np.int64)
    return values.astype(np.float64) / 255.0


def downsample(images: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping mean pooling over the two trailing spatial dims."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return np.asarray(images, dtype=np.float64)
    images = np.asarray(images, dtype=np.float64)
    n, h, w = images.shape
    if h % factor or w % factor:
        raise ValueError(f"spatial dims ({h}, {w}) not divisible by factor {factor}")
    return images.reshape(n, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def _stratified_split(
    inputs: np.ndarray, labels: np.ndarray, rng: np.random.Generator, train_fraction: float = 0.8
) -> tuple[Dataset, Dataset]:
    """Per-class split (at least one training point per class), then shuffle."""
    train_idx, test_idx = [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.size)]
        n_train = max(1, int(np.floor(train_fraction * members.size)))
        train_idx.extend(members[:n_train])
        test_idx.extend(members[n_train:])
    train_idx = np.array(train_idx, dtype=np.int64)
    test_idx = np.array(test_idx, dtype=np.int64)
    train_idx = train_idx[rng.permutation(train_idx.size)]
    test_idx = test_idx[rng.permutation(test_idx.size)]
    return (
        Dataset(inputs[train_idx], labels[train_idx], "train"),
        Dataset(inputs[test_idx], labels[test_idx], "test"),
    )


def gen_synthetic(num_points: int, num_classes: int, dim: int, seed: int, separation: float = 4.0) -> tuple[Dataset, Dataset]:
    """Isotropic Gaussian blobs, one per class, on a scaled simplex.

    Class c is centered at separation * e_c (so num_classes <= dim), unit
    noise, features min-max scaled into [0, 1] over the full corpus,
    stratified 80/20 split.  Fully deterministic per seed.
    """
    if num_points < num_classes or num_classes < 2:
        raise ValueError("need at least one point per class and two classes")
    if num_classes > dim:
        raise ValueError("simplex placement requires num_classes <= dim")
    rng = np.random.default_rng(seed)
    base = num_points // num_classes
    counts = [base + (1 if c < num_points % num_classes else 0) for c in range(num_classes)]
    xs, ys = [], []
    for cls, count in enumerate(counts):
        center = np.zeros(dim)
        center[cls] = separation
        xs.append(center + rng.standard_normal((count, dim)))
        ys.append(np.full(count, cls, dtype=np.int64))
    inputs = np.concatenate(xs)
    labels = np.concatenate(ys)
    lo = inputs.min(axis=0)
    span = inputs.max(axis=0) - lo
    span[span == 0.0] = 1.0
    inputs = (inputs - lo) / span
    return _stratified_split(inputs, labels, rng)


def load_digits_dataset(seed: int) -> tuple[Dataset, Dataset]:
    """Bundled 8x8 handwritten digits (1797 samples, 10 classes)."""
    try:
        from sklearn.datasets import load_digits
    except ImportError as exc:  # pragma: no cover
        raise DataFormatError("dataset 'digits' needs scikit-learn (pip install scikit-learn)") from exc
    bunch = load_digits()
    inputs = bunch.data.astype(np.float64) / 16.0
    labels = bunch.target.astype(np.int64)
    rng = np.random.default_rng(seed)
    return _stratified_split(inputs, labels, rng)


def load_idx_dataset(
    train_images: str,
    train_labels: str,
    test_images: str,
    test_labels: str,
    downsample_factor: int = 1,
    train_limit: int | None = None,
    test_limit: int | None = None,
) -> tuple[Dataset, Dataset]:
    """MNIST-style IDX quadruple, optionally pooled and truncated."""

    def build(images_path, labels_path, limit, split):
        images = read_idx(images_path)
        labels = read_idx(labels_path)
        if images.ndim != 3:
            raise DataFormatError(f"{images_path}: expected an image file")
        if labels.ndim != 1:
            raise DataFormatError(f"{labels_path}: expected a label file")
        if images.shape[0] != labels.shape[0]:
            raise DataFormatError("image/label count mismatch")
        if limit is not None:
            images, labels = images[:limit], labels[:limit]
        images = downsample(images, downsample_factor)
        return Dataset(images.reshape(images.shape[0], -1), labels, split)

    return (
        build(train_images, train_labels, train_limit, "train"),
        build(test_images, test_labels, test_limit, "test"),
    )
