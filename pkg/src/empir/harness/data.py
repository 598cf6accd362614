"""Dataset readers for the MNIST IDX and CIFAR-10 binary formats."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 32 * 32 * 3

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    split: str
    num_classes: int = 10

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int | None) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.split, self.num_classes)


def _read_bytes(path: Path) -> bytes:
    if not path.exists():
        gz = path.with_name(path.name + ".gz")
        if gz.exists():
            path = gz
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def parse_idx_images(buf: bytes) -> np.ndarray:
    if len(buf) < 16:
        raise DatasetFormatError("IDX image file truncated in header")
    magic, count, rows, cols = struct.unpack(">IIII", buf[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetFormatError(f"bad IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    need = 16 + count * rows * cols
    if len(buf) < need:
        raise DatasetFormatError(f"IDX image file truncated: {len(buf)} bytes, header promises {need}")
    pix = np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pix.reshape(count, rows, cols)


def parse_idx_labels(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise DatasetFormatError("IDX label file truncated in header")
    magic, count = struct.unpack(">II", buf[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DatasetFormatError(f"bad IDX label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(buf) < 8 + count:
        raise DatasetFormatError(f"IDX label file truncated: {len(buf)} bytes, header promises {8 + count}")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=8)


def load_mnist(path, split: str = "test") -> Dataset:
    """Read one MNIST split from a directory of (optionally gzipped) IDX files."""
    root = Path(path)
    img_name, lbl_name = MNIST_FILES[split]
    pix = parse_idx_images(_read_bytes(root / img_name))
    labels = parse_idx_labels(_read_bytes(root / lbl_name))
    if len(pix) != len(labels):
        raise DatasetFormatError(f"{len(pix)} images but {len(labels)} labels")
    if labels.size and labels.max() > 9:
        raise DatasetFormatError("label outside 0..9")
    images = (pix.astype(np.float32) / 255.0)[..., None]
    return Dataset(images, labels.astype(np.int64), split)


def parse_cifar_records(buf: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(buf) % CIFAR_RECORD:
        raise DatasetFormatError(f"CIFAR batch of {len(buf)} bytes is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        raise DatasetFormatError("label outside 0..9")
    # stored channel-major (3, 32, 32); transpose to HWC
    pix = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return pix, labels


def load_cifar10(path, split: str = "test") -> Dataset:
    root = Path(path)
    pixels, labels = [], []
    for name in CIFAR_FILES[split]:
        p, l = parse_cifar_records(_read_bytes(root / name))
        pixels.append(p)
        labels.append(l)
    images = np.concatenate(pixels).astype(np.float32) / 255.0
    return Dataset(images, np.concatenate(labels), split)


def load_dataset(name: str, path, split: str) -> Dataset:
    if name == "mnist":
        return load_mnist(path, split)
    if name == "cifar10":
        return load_cifar10(path, split)
    raise ValueError(f"unknown dataset {name!r}")
