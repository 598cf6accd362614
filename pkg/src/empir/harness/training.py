"""Model training: plain and FGSM-adversarial, with quantization in the loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..quant import QuantConfig
from ..tensor import Adam, Graph, architecture, cross_entropy
from .checkpoint import Checkpoint
from .data import Dataset

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, step: int):
        super().__init__(f"training diverged (non-finite loss) in epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


@dataclass
class TrainResult:
    graph: Graph
    history: list[dict] = field(default_factory=list)

    def checkpoint(self, extra: dict | None = None) -> Checkpoint:
        meta = {"epochs": len(self.history), "history": self.history}
        meta.update(extra or {})
        return Checkpoint.from_graph(self.graph, meta)


def accuracy(model, images: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(model.predict(images) == labels))


def _fgsm_batch(graph: Graph, x: np.ndarray, y: np.ndarray, eps: float) -> np.ndarray:
    # the adversarial copy is produced in inference mode so batch statistics
    # are not polluted by the extra forward pass
    was = graph.training
    graph.training = False
    try:
        grad, _ = graph.input_gradient(x, y)
    finally:
        graph.training = was
    return np.clip(x + eps * np.sign(grad), 0.0, 1.0).astype(x.dtype)


def train_model(
    train: Dataset,
    arch: str = "desk-small",
    quant: QuantConfig | None = None,
    seed: int = 0,
    epochs: int = 10,
    batch_size: int = 128,
    lr: float = 1e-3,
    adv_eps: float | None = None,
    test: Dataset | None = None,
    graph: Graph | None = None,
) -> TrainResult:
    """Train one network with Adam; quantized configs train through the STE.

    With ``adv_eps`` set, each minibatch loss is the mean of the clean loss
    and the loss on FGSM examples regenerated from the current weights.
    ``epochs=0`` returns the seeded initialization untouched.
    """
    if graph is None:
        shape, layers = architecture(arch, train.images.shape[1:])
        graph = Graph(layers, shape, seed=seed, quant=None if quant is None or quant.is_full_precision else quant)
    opt = Adam(lr)
    rng = np.random.default_rng(seed)
    n = len(train.labels)
    history = []
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        graph.training = True
        perm = rng.permutation(n)
        total, seen = 0.0, 0
        for step, start in enumerate(range(0, n, batch_size), 1):
            idx = perm[start : start + batch_size]
            x, y = train.images[idx], train.labels[idx]
            if adv_eps is not None:
                x_adv = _fgsm_batch(graph, x, y, adv_eps)
                clean = cross_entropy(graph.forward(x), y)
                grads = graph.backward(clean)
                adv = cross_entropy(graph.forward(x_adv), y)
                grads_adv = graph.backward(adv)
                loss_val = 0.5 * (float(clean.data) + float(adv.data))
                grads = {k: 0.5 * (grads[k] + grads_adv[k]) for k in graph.params}
            else:
                loss = cross_entropy(graph.forward(x), y)
                loss_val = float(loss.data)
                grads = graph.backward(loss)
            if not np.isfinite(loss_val):
                raise TrainingDivergedError(epoch, step)
            opt.step({k: v.data for k, v in graph.params.items()}, {k: grads[k] for k in graph.params})
            total += loss_val * len(idx)
            seen += len(idx)
        graph.training = False
        record = {"epoch": epoch, "loss": total / seen, "seconds": round(time.perf_counter() - t0, 3)}
        if test is not None:
            record["test_accuracy"] = accuracy(graph, test.images, test.labels)
        history.append(record)
        log.info("epoch %d: %s", epoch, record)
    graph.training = False
    return TrainResult(graph, history)


def train_adversarial_fgsm(train: Dataset, eps: float = 0.3, **kw) -> TrainResult:
    return train_model(train, adv_eps=eps, **kw)


def get_or_train(path, train: Dataset, metadata: dict | None = None, **kw) -> Graph:
    """Load the checkpoint at ``path`` if present, otherwise train and save it."""
    path = Path(path)
    if path.exists():
        return Checkpoint.load(path).to_graph()
    result = train_model(train, **kw)
    meta = {k: v for k, v in kw.items() if k in ("arch", "seed", "epochs", "batch_size", "lr", "adv_eps")}
    meta.update(metadata or {})
    result.checkpoint(meta).save(path)
    return result.graph


__all__ = [
    "TrainResult",
    "TrainingDivergedError",
    "accuracy",
    "get_or_train",
    "train_adversarial_fgsm",
    "train_model",
]
