"""MNIST-format data handling.

Parses standard IDX image/label files (optionally gzip-compressed, detected
by extension), scales pixels to [0, 1], and provides deterministic splits,
class-stratified subsets, and shuffled minibatches.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
IMAGE_SIZE = 28
NUM_CLASSES = 10

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


@dataclass(frozen=True)
class Dataset:
    """Images [n, 1, 28, 28] in [0, 1] with one-hot labels [n, 10]."""

    images: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.images.shape[0]

    def class_labels(self) -> np.ndarray:
        return self.labels.argmax(axis=1)

    def take(self, indices) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices])


@dataclass(frozen=True)
class DataSplits:
    """The three evaluation roles a fitness evaluation needs."""

    train: Dataset
    validation: Dataset
    test: Dataset


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def load_idx(images_path, labels_path) -> Dataset:
    """Loads an IDX image/label file pair into a normalized Dataset."""
    raw = _read_bytes(images_path)
    if len(raw) < 16:
        raise ValueError(f"truncated IDX image file: {images_path}")
    magic, count, rows, cols = struct.unpack(">4i", raw[:16])
    if magic != IMAGE_MAGIC:
        raise ValueError(
            f"bad magic 0x{magic:08x} in {images_path}, expected 0x{IMAGE_MAGIC:08x}"
        )
    if (rows, cols) != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(
            f"image dimension mismatch in {images_path}: got {rows}x{cols}, "
            f"expected {IMAGE_SIZE}x{IMAGE_SIZE}"
        )
    if len(raw) < 16 + count * rows * cols:
        raise ValueError(f"truncated IDX image file: {images_path}")
    pixels = np.frombuffer(raw, np.uint8, count * rows * cols, offset=16)
    images = (pixels.astype(np.float32) / 255.0).reshape(count, 1, rows, cols)

    raw = _read_bytes(labels_path)
    if len(raw) < 8:
        raise ValueError(f"truncated IDX label file: {labels_path}")
    magic, label_count = struct.unpack(">2i", raw[:8])
    if magic != LABEL_MAGIC:
        raise ValueError(
            f"bad magic 0x{magic:08x} in {labels_path}, expected 0x{LABEL_MAGIC:08x}"
        )
    if label_count != count:
        raise ValueError(
            f"label count mismatch: {labels_path} has {label_count} labels for "
            f"{count} images"
        )
    if len(raw) < 8 + label_count:
        raise ValueError(f"truncated IDX label file: {labels_path}")
    values = np.frombuffer(raw, np.uint8, label_count, offset=8)
    if values.size and values.max() >= NUM_CLASSES:
        raise ValueError(
            f"label out of range in {labels_path}: max value {values.max()}"
        )
    one_hot = np.zeros((count, NUM_CLASSES), np.float32)
    one_hot[np.arange(count), values] = 1.0
    return Dataset(images, one_hot)


def split(dataset: Dataset, validation_count: int, seed) -> tuple[Dataset, Dataset]:
    """Seeded shuffle then partition into (train, validation)."""
    n = len(dataset)
    if not 0 < validation_count < n:
        raise ValueError(
            f"validation count must be in (0, {n}), got {validation_count}"
        )
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.take(perm[validation_count:]), dataset.take(perm[:validation_count])


def subset(dataset: Dataset, count: int, seed) -> Dataset:
    """Class-stratified random subset; per-class counts differ by at most 1."""
    n = len(dataset)
    if count > n:
        raise ValueError(f"subset of {count} requested from {n} samples")
    if count < 0:
        raise ValueError(f"subset count must be non-negative, got {count}")
    classes = dataset.class_labels()
    gen = np.random.default_rng(seed)
    picks = []
    for label in range(NUM_CLASSES):
        quota = count // NUM_CLASSES + (1 if label < count % NUM_CLASSES else 0)
        pool = np.flatnonzero(classes == label)
        if quota > pool.size:
            raise ValueError(
                f"class {label} has only {pool.size} samples, need {quota}"
            )
        picks.append(gen.choice(pool, size=quota, replace=False))
    indices = gen.permutation(np.concatenate(picks))
    return dataset.take(indices)


def batches(dataset: Dataset, batch_size: int, rng):
    """Yields one epoch of shuffled (images, labels) minibatches.

    The final short batch is included; every sample appears exactly once.
    """
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    n = len(dataset)
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


def _find_idx(data_dir: Path, stem: str) -> Path:
    for candidate in (data_dir / stem, data_dir / (stem + ".gz")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no IDX file {stem}[.gz] under {data_dir}")


def load_splits(
    data_dir,
    validation_count: int = 5000,
    seed=0,
    train_subset: int | None = None,
    val_subset: int | None = None,
    test_subset: int | None = None,
) -> DataSplits:
    """Loads the standard file quartet and applies the split/subset protocol.

    The full training file is split into train/validation; optional subset
    sizes then shrink each role with class-stratified sampling.
    """
    data_dir = Path(data_dir)
    full_train = load_idx(_find_idx(data_dir, TRAIN_IMAGES), _find_idx(data_dir, TRAIN_LABELS))
    test = load_idx(_find_idx(data_dir, TEST_IMAGES), _find_idx(data_dir, TEST_LABELS))
    train, validation = split(full_train, validation_count, seed)
    if train_subset is not None:
        train = subset(train, train_subset, seed + 1)
    if val_subset is not None:
        validation = subset(validation, val_subset, seed + 2)
    if test_subset is not None:
        test = subset(test, test_subset, seed + 3)
    return DataSplits(train, validation, test)
