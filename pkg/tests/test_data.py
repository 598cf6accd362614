import gzip
import struct

import numpy as np
import pytest

from conftest import write_idx_images, write_idx_labels
from empir.harness.data import (
    DatasetFormatError,
    load_cifar10,
    load_dataset,
    load_mnist,
    parse_cifar_records,
    parse_idx_images,
    parse_idx_labels,
)

# two 2x3 images written out byte by byte
FIXTURE_IMAGES = bytes.fromhex(
    "00000803" "00000002" "00000002" "00000003"
    "00 ff 80 01 02 03"
    "10 20 30 40 50 fe".replace(" ", "")
)
FIXTURE_LABELS = bytes.fromhex("00000801" "00000002" "07" "00")


def test_hand_authored_idx_fixture():
    pix = parse_idx_images(FIXTURE_IMAGES)
    assert pix.shape == (2, 2, 3)
    assert pix[0].tolist() == [[0, 255, 128], [1, 2, 3]]
    assert pix[1].tolist() == [[16, 32, 48], [64, 80, 254]]
    assert parse_idx_labels(FIXTURE_LABELS).tolist() == [7, 0]


def test_load_mnist_scaling(tmp_path):
    (tmp_path / "t10k-images-idx3-ubyte").write_bytes(FIXTURE_IMAGES)
    (tmp_path / "t10k-labels-idx1-ubyte").write_bytes(FIXTURE_LABELS)
    ds = load_mnist(tmp_path, "test")
    assert ds.images.shape == (2, 2, 3, 1) and ds.images.dtype == np.float32
    assert ds.images[0, 0, 1, 0] == 1.0 and ds.images[0, 0, 0, 0] == 0.0
    assert ds.images[0, 0, 2, 0] == np.float32(128 / 255)
    assert ds.labels.tolist() == [7, 0] and ds.split == "test"


def test_gzip_fallback(tmp_path):
    with gzip.open(tmp_path / "t10k-images-idx3-ubyte.gz", "wb") as fh:
        fh.write(FIXTURE_IMAGES)
    (tmp_path / "t10k-labels-idx1-ubyte").write_bytes(FIXTURE_LABELS)
    assert len(load_mnist(tmp_path)) == 2


def test_idx_errors(tmp_path):
    with pytest.raises(DatasetFormatError, match="magic"):
        parse_idx_images(FIXTURE_LABELS + bytes(8))
    with pytest.raises(DatasetFormatError, match="magic"):
        parse_idx_labels(FIXTURE_IMAGES)
    with pytest.raises(DatasetFormatError, match="truncated"):
        parse_idx_images(FIXTURE_IMAGES[:-1])
    with pytest.raises(DatasetFormatError, match="truncated"):
        parse_idx_labels(FIXTURE_LABELS[:9])
    with pytest.raises(DatasetFormatError):
        parse_idx_images(b"\x00\x00")
    write_idx_images(tmp_path / "t10k-images-idx3-ubyte", np.zeros((3, 2, 2)))
    write_idx_labels(tmp_path / "t10k-labels-idx1-ubyte", np.zeros(2))
    with pytest.raises(DatasetFormatError, match="3 images but 2 labels"):
        load_mnist(tmp_path)


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mnist(tmp_path)


def cifar_record(label, seed):
    rng = np.random.default_rng(seed)
    chw = rng.integers(0, 256, (3, 32, 32), dtype=np.uint8)
    return bytes([label]) + chw.tobytes(), chw


def test_cifar_records_channel_major_to_hwc(tmp_path):
    r0, chw0 = cifar_record(3, 0)
    r1, chw1 = cifar_record(9, 1)
    pix, labels = parse_cifar_records(r0 + r1)
    assert labels.tolist() == [3, 9]
    assert pix.shape == (2, 32, 32, 3)
    assert pix[0, 5, 7, 2] == chw0[2, 5, 7]
    assert pix[1, 31, 0, 0] == chw1[0, 31, 0]
    (tmp_path / "test_batch.bin").write_bytes(r0 + r1)
    ds = load_cifar10(tmp_path, "test")
    assert ds.images.max() <= 1 and ds.images.min() >= 0
    assert ds.images[0, 5, 7, 2] == np.float32(chw0[2, 5, 7] / 255)


def test_cifar_misaligned():
    r0, _ = cifar_record(1, 0)
    with pytest.raises(DatasetFormatError):
        parse_cifar_records(r0[:-1])


def test_load_dataset_dispatch(tmp_path):
    with pytest.raises(ValueError):
        load_dataset("imagenet", tmp_path, "test")


def test_subset():
    from empir.harness.data import Dataset

    ds = Dataset(np.zeros((5, 2, 2, 1), np.float32), np.arange(5), "test")
    assert len(ds.subset(3)) == 3 and ds.subset(None) is ds and ds.subset(10) is ds
