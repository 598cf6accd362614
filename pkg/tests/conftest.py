import os
import struct
from pathlib import Path

import numpy as np
import pytest

from empir.tensor import Tensor, backward_tensor

MNIST_DIR = Path(os.environ.get("EMPIR_MNIST_DIR", "/root/data/mnist"))


def numeric_grad(f, arrays, index, h=1e-6):
    """Central differences of scalar ``f(*arrays)`` w.r.t. ``arrays[index]``."""
    x = arrays[index]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(*arrays)
        x[i] = old - h
        fm = f(*arrays)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(op, arrays, rng, h=1e-6):
    """Compare tape gradients of ``sum(op(*tensors) * R)`` against central differences.

    Returns the worst relative error over all inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out_shape = op(*[Tensor(a, dtype=np.float64) for a in arrays]).shape
    proj = rng.standard_normal(out_shape)

    def scalar(*arrs):
        return float((op(*[Tensor(a, dtype=np.float64) for a in arrs]).data * proj).sum())

    ts = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    out = op(*ts)
    backward_tensor(out, proj.astype(np.float64))
    worst = 0.0
    for i, t in enumerate(ts):
        num = numeric_grad(scalar, arrays, i, h)
        ana = t.grad if t.grad is not None else np.zeros_like(num)
        worst = max(worst, rel_error(ana, num))
    return worst


def write_idx_images(path, images: np.ndarray):
    n, r, c = images.shape
    Path(path).write_bytes(struct.pack(">IIII", 0x803, n, r, c) + images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray):
    Path(path).write_bytes(struct.pack(">II", 0x801, len(labels)) + labels.astype(np.uint8).tobytes())


def synthetic_mnist(root: Path, n_train=96, n_test=48, seed=0) -> Path:
    """Tiny learnable MNIST-shaped dataset: class c lights up a c-dependent bar."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)

    def make(n):
        labels = np.arange(n) % 10
        imgs = rng.integers(0, 40, size=(n, 28, 28))
        for i, c in enumerate(labels):
            imgs[i, 2 + 2 * c : 4 + 2 * c, 4:24] = 255
        return imgs, labels

    for prefix, n in (("train", n_train), ("t10k", n_test)):
        imgs, labs = make(n)
        write_idx_images(root / f"{prefix}-images-idx3-ubyte", imgs)
        write_idx_labels(root / f"{prefix}-labels-idx1-ubyte", labs)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_mnist(tmp_path):
    return synthetic_mnist(tmp_path / "mnist")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
