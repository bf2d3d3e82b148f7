"""Procedural handwritten-digit dataset in IDX format.

Renders 5x7 dot-matrix digit glyphs, upsamples them, and distorts each
sample with a random affine warp (rotation, scale, shear, translation),
blur, and pixel noise.  The result is a drop-in substitute for a
28x28 grayscale digit corpus: same file names, same IDX encoding, same
label range.  Generation is deterministic per seed, so the files are
byte-identical across machines.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data import (
    IMAGE_SIZE,
    NUM_CLASSES,
    TEST_IMAGES,
    TEST_LABELS,
    TRAIN_IMAGES,
    TRAIN_LABELS,
)

IMAGE_MAGIC = 0x803
LABEL_MAGIC = 0x801

DEFAULT_TRAIN_COUNT = 60000
DEFAULT_TEST_COUNT = 10000

# 5x7 dot-matrix digit faces, one row string per scanline
_FONT = {
    0: ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    1: ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    2: ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    3: ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    4: ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    5: ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    6: ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    7: ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    8: ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    9: ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}

_GLYPH_ROWS = 18
_GLYPH_COLS = 14

MAX_ROTATION_DEG = 12.0
SCALE_RANGE = (0.85, 1.15)
MAX_SHEAR = 0.15
MAX_JITTER_PX = 2.0
BLUR_SIGMA_RANGE = (0.4, 0.8)
NOISE_STD = 0.04


def _upsampled_glyphs() -> np.ndarray:
    """Bilinear upsample of the font faces to [10, 18, 14] in [0, 1]."""
    glyphs = np.empty((NUM_CLASSES, _GLYPH_ROWS, _GLYPH_COLS))
    for digit, rows in _FONT.items():
        face = np.array([[float(ch) for ch in row] for row in rows])
        scaled = ndimage.zoom(
            face, (_GLYPH_ROWS / face.shape[0], _GLYPH_COLS / face.shape[1]), order=1
        )
        glyphs[digit] = np.clip(scaled, 0.0, 1.0)
    return glyphs


def _canvas_for(glyph: np.ndarray) -> np.ndarray:
    canvas = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    top = (IMAGE_SIZE - glyph.shape[0]) // 2
    left = (IMAGE_SIZE - glyph.shape[1]) // 2
    canvas[top:top + glyph.shape[0], left:left + glyph.shape[1]] = glyph
    return canvas


def render_digit(canvas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One distorted uint8 sample from a centered glyph canvas."""
    angle = np.deg2rad(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG))
    scale = rng.uniform(*SCALE_RANGE)
    shear = rng.uniform(-MAX_SHEAR, MAX_SHEAR)
    jitter = rng.uniform(-MAX_JITTER_PX, MAX_JITTER_PX, size=2)
    blur_sigma = rng.uniform(*BLUR_SIGMA_RANGE)
    noise = rng.normal(0.0, NOISE_STD, size=canvas.shape)

    cos, sin = np.cos(angle), np.sin(angle)
    rotation = np.array([[cos, -sin], [sin, cos]])
    shear_mat = np.array([[1.0, shear], [0.0, 1.0]])
    matrix = rotation @ shear_mat / scale
    center = (np.array(canvas.shape) - 1.0) / 2.0
    offset = center - matrix @ center + jitter
    warped = ndimage.affine_transform(canvas, matrix, offset=offset, order=1)
    blurred = ndimage.gaussian_filter(warped, blur_sigma)
    noisy = np.clip(blurred + noise, 0.0, 1.0)
    return np.rint(noisy * 255.0).astype(np.uint8)


def generate_split(count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Images [count, 28, 28] uint8 and labels [count] uint8, classes round-robin."""
    glyphs = _upsampled_glyphs()
    canvases = [_canvas_for(glyphs[digit]) for digit in range(NUM_CLASSES)]
    images = np.empty((count, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    labels = np.empty(count, dtype=np.uint8)
    for i in range(count):
        digit = i % NUM_CLASSES
        images[i] = render_digit(canvases[digit], rng)
        labels[i] = digit
    return images, labels


def write_idx_images(path: Path, images: np.ndarray) -> None:
    count, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IMAGE_MAGIC, count, rows, cols))
        fh.write(np.ascontiguousarray(images, dtype=np.uint8).tobytes())


def write_idx_labels(path: Path, labels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", LABEL_MAGIC, labels.shape[0]))
        fh.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())


def generate_dataset(
    data_dir: str | Path,
    train_count: int = DEFAULT_TRAIN_COUNT,
    test_count: int = DEFAULT_TEST_COUNT,
    seed: int = 0,
) -> list[Path]:
    """Write the four-file IDX quartet into ``data_dir``; returns the paths.

    A single sequential generator drives both splits, so the full quartet is
    a pure function of (counts, seed).
    """
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    written = []
    for count, image_name, label_name in (
        (train_count, TRAIN_IMAGES, TRAIN_LABELS),
        (test_count, TEST_IMAGES, TEST_LABELS),
    ):
        images, labels = generate_split(count, rng)
        write_idx_images(data_dir / image_name, images)
        write_idx_labels(data_dir / label_name, labels)
        written.extend([data_dir / image_name, data_dir / label_name])
    return written


def ensure_dataset(
    data_dir: str | Path,
    train_count: int = DEFAULT_TRAIN_COUNT,
    test_count: int = DEFAULT_TEST_COUNT,
    seed: int = 0,
) -> bool:
    """Generate the quartet only if any file is missing; True when generated."""
    data_dir = Path(data_dir)
    names = (TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS)
    if all((data_dir / name).exists() or (data_dir / (name + ".gz")).exists()
           for name in names):
        return False
    generate_dataset(data_dir, train_count, test_count, seed)
    return True
