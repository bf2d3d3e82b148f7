"""IDX parsing, split/subset determinism, and minibatch serving tests."""

import gzip
import struct

import numpy as np
import pytest

from highway_evo.data import (
    Dataset,
    batches,
    load_idx,
    load_splits,
    split,
    subset,
)


def image_bytes(count, fill=None):
    """IDX image payload; image i is constant-valued i unless fill is given."""
    header = struct.pack(">4i", 0x00000803, count, 28, 28)
    if fill is None:
        body = np.repeat(
            np.arange(count, dtype=np.uint8), 28 * 28
        ).tobytes()
    else:
        body = bytes([fill]) * (count * 28 * 28)
    return header + body


def label_bytes(count):
    header = struct.pack(">2i", 0x00000801, count)
    return header + bytes(i % 10 for i in range(count))


def write_pair(tmp_path, count, stem="set", compress=False):
    images = tmp_path / (f"{stem}-images" + (".gz" if compress else ""))
    labels = tmp_path / (f"{stem}-labels" + (".gz" if compress else ""))
    img_raw, lab_raw = image_bytes(count), label_bytes(count)
    if compress:
        images.write_bytes(gzip.compress(img_raw))
        labels.write_bytes(gzip.compress(lab_raw))
    else:
        images.write_bytes(img_raw)
        labels.write_bytes(lab_raw)
    return images, labels


def identities(dataset):
    """Recovers the constant-image sample ids written by image_bytes."""
    return set(np.rint(dataset.images[:, 0, 0, 0] * 255.0).astype(int).tolist())


def test_load_idx_shapes_and_scaling(tmp_path):
    images, labels = write_pair(tmp_path, 30)
    data = load_idx(images, labels)
    assert len(data) == 30
    assert data.images.shape == (30, 1, 28, 28)
    assert data.images.dtype == np.float32
    assert data.labels.shape == (30, 10)
    assert np.all(data.labels.sum(axis=1) == 1.0)
    assert np.all((data.images >= 0.0) & (data.images <= 1.0))
    assert data.class_labels().tolist() == [i % 10 for i in range(30)]


def test_pixel_255_scales_to_exactly_one(tmp_path):
    images = tmp_path / "img"
    images.write_bytes(image_bytes(2, fill=255))
    labels = tmp_path / "lab"
    labels.write_bytes(label_bytes(2))
    data = load_idx(images, labels)
    assert np.all(data.images == 1.0)


def test_gzip_detected_by_extension(tmp_path):
    plain_images, plain_labels = write_pair(tmp_path, 12, stem="plain")
    gz_images, gz_labels = write_pair(tmp_path, 12, stem="zipped", compress=True)
    plain = load_idx(plain_images, plain_labels)
    zipped = load_idx(gz_images, gz_labels)
    assert np.array_equal(plain.images, zipped.images)
    assert np.array_equal(plain.labels, zipped.labels)


def test_load_is_reproducible(tmp_path):
    images, labels = write_pair(tmp_path, 25)
    first = load_idx(images, labels)
    second = load_idx(images, labels)
    assert np.array_equal(first.images, second.images)
    assert np.array_equal(first.labels, second.labels)


def test_bad_image_magic(tmp_path):
    images = tmp_path / "img"
    images.write_bytes(struct.pack(">4i", 0xDEAD, 1, 28, 28) + bytes(784))
    labels = tmp_path / "lab"
    labels.write_bytes(label_bytes(1))
    with pytest.raises(ValueError, match="bad magic"):
        load_idx(images, labels)


def test_bad_label_magic(tmp_path):
    images, _ = write_pair(tmp_path, 1)
    labels = tmp_path / "lab"
    labels.write_bytes(struct.pack(">2i", 0x00000803, 1) + bytes(1))
    with pytest.raises(ValueError, match="bad magic"):
        load_idx(images, labels)


def test_truncated_image_file(tmp_path):
    images = tmp_path / "img"
    images.write_bytes(image_bytes(3)[:-100])
    labels = tmp_path / "lab"
    labels.write_bytes(label_bytes(3))
    with pytest.raises(ValueError, match="truncated"):
        load_idx(images, labels)


def test_dimension_mismatch(tmp_path):
    images = tmp_path / "img"
    images.write_bytes(struct.pack(">4i", 0x00000803, 1, 14, 14) + bytes(196))
    labels = tmp_path / "lab"
    labels.write_bytes(label_bytes(1))
    with pytest.raises(ValueError, match="dimension mismatch"):
        load_idx(images, labels)


def test_label_count_mismatch(tmp_path):
    images, _ = write_pair(tmp_path, 4)
    labels = tmp_path / "lab"
    labels.write_bytes(label_bytes(5))
    with pytest.raises(ValueError, match="count mismatch"):
        load_idx(images, labels)


def test_label_out_of_range(tmp_path):
    images, _ = write_pair(tmp_path, 2)
    labels = tmp_path / "lab"
    labels.write_bytes(struct.pack(">2i", 0x00000801, 2) + bytes([3, 10]))
    with pytest.raises(ValueError, match="out of range"):
        load_idx(images, labels)


def test_split_counts_disjoint_exhaustive(tmp_path):
    images, labels = write_pair(tmp_path, 60)
    data = load_idx(images, labels)
    train, val = split(data, 15, seed=5)
    assert len(train) == 45
    assert len(val) == 15
    train_ids, val_ids = identities(train), identities(val)
    assert train_ids.isdisjoint(val_ids)
    assert train_ids | val_ids == set(range(60))


def test_split_is_deterministic(tmp_path):
    images, labels = write_pair(tmp_path, 40)
    data = load_idx(images, labels)
    first = split(data, 10, seed=9)
    second = split(data, 10, seed=9)
    assert np.array_equal(first[0].images, second[0].images)
    assert np.array_equal(first[1].images, second[1].images)


def test_split_rejects_degenerate_counts(tmp_path):
    images, labels = write_pair(tmp_path, 10)
    data = load_idx(images, labels)
    with pytest.raises(ValueError, match="validation count"):
        split(data, 10, seed=0)
    with pytest.raises(ValueError, match="validation count"):
        split(data, 0, seed=0)


def test_subset_is_stratified(tmp_path):
    images, labels = write_pair(tmp_path, 60)
    data = load_idx(images, labels)
    small = subset(data, 20, seed=3)
    assert len(small) == 20
    counts = np.bincount(small.class_labels(), minlength=10)
    assert counts.tolist() == [2] * 10


def test_subset_uneven_count_spreads_remainder(tmp_path):
    images, labels = write_pair(tmp_path, 60)
    data = load_idx(images, labels)
    small = subset(data, 23, seed=3)
    counts = np.bincount(small.class_labels(), minlength=10)
    assert sorted(counts.tolist()) == [2] * 7 + [3] * 3
    assert counts.max() - counts.min() <= 1


def test_subset_full_count_keeps_membership(tmp_path):
    images, labels = write_pair(tmp_path, 30)
    data = load_idx(images, labels)
    same = subset(data, 30, seed=1)
    assert identities(same) == set(range(30))


def test_subset_seeds_change_membership_not_counts(tmp_path):
    images, labels = write_pair(tmp_path, 60)
    data = load_idx(images, labels)
    a = subset(data, 20, seed=1)
    b = subset(data, 20, seed=2)
    assert identities(a) != identities(b)
    assert np.bincount(a.class_labels(), minlength=10).tolist() == \
        np.bincount(b.class_labels(), minlength=10).tolist()


def test_subset_rejects_overdraw(tmp_path):
    images, labels = write_pair(tmp_path, 10)
    data = load_idx(images, labels)
    with pytest.raises(ValueError, match="requested"):
        subset(data, 11, seed=0)


def test_batches_sizes_and_coverage(tmp_path):
    images, labels = write_pair(tmp_path, 10)
    data = load_idx(images, labels)
    served = list(batches(data, 4, np.random.default_rng(0)))
    assert [b[0].shape[0] for b in served] == [4, 4, 2]
    seen = np.concatenate([
        np.rint(b[0][:, 0, 0, 0] * 255.0).astype(int) for b in served
    ])
    assert sorted(seen.tolist()) == list(range(10))


def test_batches_deterministic_given_rng(tmp_path):
    images, labels = write_pair(tmp_path, 17)
    data = load_idx(images, labels)
    first = [b[0] for b in batches(data, 5, np.random.default_rng(77))]
    second = [b[0] for b in batches(data, 5, np.random.default_rng(77))]
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


def test_batches_rejects_bad_batch_size(tmp_path):
    images, labels = write_pair(tmp_path, 5)
    data = load_idx(images, labels)
    with pytest.raises(ValueError, match="batch size"):
        list(batches(data, 0, np.random.default_rng(0)))


def make_quartet(tmp_path, train_count=60, test_count=20):
    (tmp_path / "train-images-idx3-ubyte").write_bytes(image_bytes(train_count))
    (tmp_path / "train-labels-idx1-ubyte").write_bytes(label_bytes(train_count))
    (tmp_path / "t10k-images-idx3-ubyte").write_bytes(image_bytes(test_count))
    (tmp_path / "t10k-labels-idx1-ubyte").write_bytes(label_bytes(test_count))


def test_load_splits_protocol(tmp_path):
    # the validation split is a plain shuffle, so subset quotas need slack
    make_quartet(tmp_path, train_count=200, test_count=60)
    splits = load_splits(
        tmp_path, validation_count=50, seed=0,
        train_subset=100, val_subset=20, test_subset=30,
    )
    assert len(splits.train) == 100
    assert len(splits.validation) == 20
    assert len(splits.test) == 30
    assert np.bincount(splits.train.class_labels(), minlength=10).tolist() == [10] * 10
    train_ids = identities(splits.train)
    val_ids = identities(splits.validation)
    assert train_ids.isdisjoint(val_ids)


def test_load_splits_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="train-images"):
        load_splits(tmp_path, validation_count=5)
