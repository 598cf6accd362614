"""EMPIR ensembles: M full-precision plus N low-precision members and a combiner."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .quant import QuantConfig, apply_quant
from .tensor.layers import Graph


class Combiner(str, Enum):
    AVERAGING = "averaging"
    MAXVOTE = "maxvote"

    @classmethod
    def parse(cls, text) -> "Combiner":
        if isinstance(text, Combiner):
            return text
        t = str(text).strip().lower().replace("-", "").replace("_", "")
        aliases = {"averaging": cls.AVERAGING, "average": cls.AVERAGING, "avg": cls.AVERAGING,
                   "maxvote": cls.MAXVOTE, "maxvoting": cls.MAXVOTE, "vote": cls.MAXVOTE}
        if t not in aliases:
            raise ValueError(f"unknown combiner {text!r}")
        return aliases[t]


def default_combiner(n_members: int) -> Combiner:
    # averaging does better on pairs, voting on three or more
    return Combiner.AVERAGING if n_members <= 2 else Combiner.MAXVOTE


@dataclass
class Prediction:
    classes: np.ndarray            # (B,)
    member_probs: np.ndarray       # (K, B, C)
    votes: np.ndarray              # (K, B) member argmaxes
    combined: np.ndarray | None    # (B, C) mean probabilities, Averaging only


def combine(member_probs: np.ndarray, combiner: Combiner) -> np.ndarray:
    """Reduce (K, B, C) member probabilities to (B,) classes.

    MaxVote ties are broken by the highest mean probability among the tied
    classes, then by the lowest class index.
    """
    member_probs = np.asarray(member_probs)
    mean = member_probs.mean(axis=0)
    if combiner is Combiner.AVERAGING:
        return mean.argmax(axis=1)
    k, b, c = member_probs.shape
    votes = member_probs.argmax(axis=2)
    counts = np.zeros((b, c), dtype=np.int64)
    np.add.at(counts, (np.broadcast_to(np.arange(b), (k, b)), votes), 1)
    tied = counts == counts.max(axis=1, keepdims=True)
    return np.where(tied, mean, -np.inf).argmax(axis=1)


class Empir:
    """An ensemble of trained graphs sharing input shape and class count."""

    def __init__(self, members: Sequence[Graph], combiner: Combiner | str | None = None):
        members = list(members)
        if not members:
            raise ValueError("an ensemble needs at least one member")
        shapes = {m.input_shape for m in members}
        classes = {m.num_classes for m in members}
        if len(shapes) != 1 or len(classes) != 1:
            raise ValueError("members must share input shape and class count")
        self.members = members
        self.combiner = Combiner.parse(combiner) if combiner is not None else default_combiner(len(members))

    @property
    def quant_configs(self) -> list[QuantConfig]:
        return [m.quant or QuantConfig() for m in self.members]

    @property
    def M(self) -> int:
        return sum(q.is_full_precision for q in self.quant_configs)

    @property
    def N(self) -> int:
        return len(self.members) - self.M

    @property
    def seeds(self) -> list[int]:
        return [m.seed for m in self.members]

    @property
    def input_shape(self):
        return self.members[0].input_shape

    @property
    def num_classes(self) -> int:
        return self.members[0].num_classes

    def describe(self) -> str:
        parts = [q.label() for q in self.quant_configs]
        return f"EMPIR(M={self.M},N={self.N},{self.combiner.value}:{'+'.join(parts)})"

    def member_probs(self, x, batch_size: int = 500) -> np.ndarray:
        return np.stack([m.predict_proba(x, batch_size) for m in self.members])

    def predict_full(self, x, batch_size: int = 500) -> Prediction:
        probs = self.member_probs(x, batch_size)
        classes = combine(probs, self.combiner)
        combined = probs.mean(axis=0) if self.combiner is Combiner.AVERAGING else None
        return Prediction(classes, probs, probs.argmax(axis=2), combined)

    def predict(self, x, batch_size: int = 500) -> np.ndarray:
        return combine(self.member_probs(x, batch_size), self.combiner)

    def predict_proba(self, x, batch_size: int = 500) -> np.ndarray:
        """Mean member probabilities (the Averaging combiner's score)."""
        return self.member_probs(x, batch_size).mean(axis=0)

    def input_gradient(self, x, y, objective=None) -> tuple[np.ndarray, np.ndarray]:
        """Ensemble input gradient of the per-member objective.

        Averaging: mean over all members. MaxVote: per example, mean over the
        members whose vote equals the ensemble's final class; the voting set
        is re-derived on every call. Returns (gradient, ensemble classes at x).
        """
        grads, probs = [], []
        for m in self.members:
            g, _ = m.input_gradient(x, y, objective)
            grads.append(g)
            probs.append(m._last_output.data)
        grads = np.stack(grads)
        probs = np.stack(probs)
        final = combine(probs, self.combiner)
        if self.combiner is Combiner.AVERAGING:
            return grads.mean(axis=0), final
        voted = (probs.argmax(axis=2) == final[None]).astype(grads.dtype)  # (K, B)
        w = voted / voted.sum(axis=0, keepdims=True)
        w = w.reshape(w.shape + (1,) * (grads.ndim - 2))
        return (grads * w).sum(axis=0), final


def build_empir(
    layers,
    input_shape,
    quant_cfgs: Sequence[QuantConfig | None],
    seeds: Sequence[int],
    combiner: Combiner | str | None = None,
) -> Empir:
    """Construct untrained members with identical topology and distinct seeds."""
    if len(seeds) != len(quant_cfgs):
        raise ValueError(f"{len(seeds)} seeds for {len(quant_cfgs)} members")
    if len(set(seeds)) != len(seeds):
        raise ValueError("member seeds must be pairwise distinct (diversity comes from initialization)")
    members = []
    for cfg, seed in zip(quant_cfgs, seeds):
        cfg = cfg or QuantConfig()
        cfg.check_ensemble_member()
        members.append(apply_quant(Graph(layers, input_shape, seed=seed), cfg))
    return Empir(members, combiner)


def predict(empir: Empir, x) -> Prediction:
    return empir.predict_full(x)


def ensemble_gradient(empir: Empir, x, y) -> np.ndarray:
    return empir.input_gradient(x, y)[0]


def confusion_matrix(model, images, labels, num_classes: int | None = None, predictions=None) -> np.ndarray:
    """(true, predicted) count matrix. ``model`` is anything with ``predict``."""
    labels = np.asarray(labels, dtype=np.int64)
    pred = np.asarray(predictions if predictions is not None else model.predict(images), dtype=np.int64)
    c = num_classes or getattr(model, "num_classes", None) or int(max(labels.max(), pred.max()) + 1)
    out = np.zeros((c, c), dtype=np.int64)
    np.add.at(out, (labels, pred), 1)
    return out
