"""Tests for the procedural digit dataset generator."""

import hashlib

import numpy as np

from highway_evo.data import (NUM_CLASSES, TRAIN_IMAGES, TRAIN_LABELS,
                              load_idx, load_splits)
from highway_evo.synthdigits import (
    ensure_dataset,
    generate_dataset,
    generate_split,
    render_digit,
    _canvas_for,
    _upsampled_glyphs,
)


def quartet_digest(data_dir):
    digest = hashlib.sha256()
    for path in sorted(data_dir.iterdir()):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def test_generation_is_byte_identical_per_seed(tmp_path):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    generate_dataset(a_dir, train_count=50, test_count=20, seed=9)
    generate_dataset(b_dir, train_count=50, test_count=20, seed=9)
    assert quartet_digest(a_dir) == quartet_digest(b_dir)


def test_different_seeds_differ(tmp_path):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    generate_dataset(a_dir, train_count=50, test_count=20, seed=1)
    generate_dataset(b_dir, train_count=50, test_count=20, seed=2)
    assert quartet_digest(a_dir) != quartet_digest(b_dir)


def test_labels_are_round_robin():
    images, labels = generate_split(25, np.random.default_rng(0))
    assert labels.tolist() == [i % NUM_CLASSES for i in range(25)]


def test_quartet_loads_as_splits(tmp_path):
    generate_dataset(tmp_path, train_count=100, test_count=40, seed=0)
    splits = load_splits(tmp_path, validation_count=20, seed=0)
    assert len(splits.train) == 80
    assert len(splits.validation) == 20
    assert len(splits.test) == 40
    assert splits.train.images.shape[1:] == (1, 28, 28)
    assert splits.train.images.dtype == np.float32
    assert 0.0 <= splits.train.images.min() and splits.train.images.max() <= 1.0
    assert set(splits.test.class_labels().tolist()) == set(range(NUM_CLASSES))


def test_render_digit_contract():
    glyphs = _upsampled_glyphs()
    assert glyphs.shape == (NUM_CLASSES, 18, 14)
    assert glyphs.min() >= 0.0 and glyphs.max() <= 1.0
    canvas = _canvas_for(glyphs[3])
    sample = render_digit(canvas, np.random.default_rng(4))
    assert sample.shape == (28, 28)
    assert sample.dtype == np.uint8
    assert sample.max() > 100  # the stroke survives blur and warp


def test_same_class_samples_vary():
    rng = np.random.default_rng(0)
    images, labels = generate_split(20, rng)
    first, second = images[0], images[10]
    assert labels[0] == labels[10]
    assert not np.array_equal(first, second)


def test_ensure_dataset_generates_once(tmp_path):
    assert ensure_dataset(tmp_path, train_count=30, test_count=10, seed=0) is True
    before = quartet_digest(tmp_path)
    assert ensure_dataset(tmp_path, train_count=30, test_count=10, seed=0) is False
    assert quartet_digest(tmp_path) == before


def test_written_idx_headers_match_loader(tmp_path):
    generate_dataset(tmp_path, train_count=30, test_count=10, seed=0)
    dataset = load_idx(tmp_path / TRAIN_IMAGES, tmp_path / TRAIN_LABELS)
    assert dataset.images.shape == (30, 1, 28, 28)
    assert dataset.class_labels().tolist() == [i % NUM_CLASSES for i in range(30)]
