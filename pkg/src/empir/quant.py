"""DoReFa-style k-bit quantization of weights and activations.

Quantization is simulated: values are snapped onto the k-bit grid but kept as
floats. Training and attacks see straight-through gradients, i.e. ``round`` is
treated as the identity and clamping zeroes the gradient outside its domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import autodiff as ad
from .tensor.autodiff import Tensor, round_half_away

FULL = None  # sentinel for a full-precision bit-width

MAX_ENSEMBLE_BITS = 4


@dataclass(frozen=True)
class QuantConfig:
    """Weight and activation bit-widths; ``None`` means full precision."""

    weight_bits: int | None = FULL
    activation_bits: int | None = FULL

    def __post_init__(self):
        for name in ("weight_bits", "activation_bits"):
            k = getattr(self, name)
            if k is not None and (int(k) != k or k < 1):
                raise ValueError(f"{name} must be a positive integer or None, got {k!r}")

    @property
    def is_full_precision(self) -> bool:
        return self.weight_bits is None and self.activation_bits is None

    @property
    def max_bits(self) -> int | None:
        bits = [k for k in (self.weight_bits, self.activation_bits) if k is not None]
        return max(bits) if bits else None

    def check_ensemble_member(self) -> None:
        """Low-precision ensemble members are restricted to 2..4 bits."""
        for k in (self.weight_bits, self.activation_bits):
            if k is not None and not 2 <= k <= MAX_ENSEMBLE_BITS:
                raise ValueError(f"ensemble members must use 2..{MAX_ENSEMBLE_BITS} bits, got {k}")

    def label(self) -> str:
        if self.is_full_precision:
            return "FP"
        fmt = lambda k: "FP" if k is None else str(k)
        return f"w{fmt(self.weight_bits)}a{fmt(self.activation_bits)}"

    @classmethod
    def parse(cls, text: str) -> "QuantConfig":
        """Parse ``FP``, ``4`` (both), or ``w2a4`` / ``2/4`` forms."""
        t = text.strip().lower()
        if t in ("fp", "full", "none", "32"):
            return cls()
        if t.startswith("w") and "a" in t:
            w, a = t[1:].split("a", 1)
        elif "/" in t:
            w, a = t.split("/", 1)
        else:
            w = a = t
        conv = lambda s: None if s in ("fp", "full", "32") else int(s)
        return cls(conv(w), conv(a))


FULL_PRECISION = QuantConfig()


def _levels(k: int) -> int:
    if k < 1:
        raise ValueError(f"bit-width must be >= 1, got {k}")
    return 2**k - 1


def quantize_unit(x, k: int):
    """Snap values in [0, 1] onto the grid {0, 1/n, ..., 1} with n = 2**k - 1."""
    arr = np.asarray(x)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    n = _levels(k)
    if np.any(arr < 0) or np.any(arr > 1) or np.any(~np.isfinite(arr)):
        raise ValueError("quantize_unit expects values in [0, 1]; clamp first")
    out = np.asarray(round_half_away(arr * n) / n, dtype=arr.dtype)
    return out if out.ndim else out[()]


def quantize_weights(w, k: int) -> np.ndarray:
    """Map a weight tensor onto the symmetric k-bit grid in [-1, 1].

    The tanh-normalization uses one max over the whole tensor. An all-zero
    tensor (max |tanh(w)| == 0) quantizes to all zeros.
    """
    w = np.asarray(w)
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    t = np.tanh(w)
    m = np.abs(t).max() if t.size else 0.0
    if m == 0:
        return np.zeros_like(w)
    u = np.clip(t / (2 * m) + 0.5, 0.0, 1.0)
    return 2 * quantize_unit(u, k) - 1


def quantize_activations(a, k: int) -> np.ndarray:
    """Clamp to [0, 1], then quantize onto the k-bit unit grid."""
    a = np.asarray(a)
    return quantize_unit(np.clip(a, 0.0, 1.0), k)


def ste_backward(upstream, pre_quant_value, domain=(0.0, 1.0)):
    """Straight-through gradient: pass inside the clamping domain, zero outside."""
    lo, hi = domain
    pre = np.asarray(pre_quant_value)
    return np.asarray(upstream) * ((pre >= lo) & (pre <= hi))


# ----------------------------------------------------------------------------
# differentiable (graph) versions


def fake_quant_weights(w: Tensor, k: int, smooth: bool = False) -> Tensor:
    """Graph op for weight quantization.

    Gradients flow analytically through tanh and the max-normalization, with
    only ``round`` replaced by the identity. ``smooth=True`` drops the rounding
    entirely, giving the surrogate function whose exact gradient the
    straight-through path reproduces.
    """
    n = _levels(k)
    t = ad.tanh(w)
    m = ad.abs_max(t)
    if m.data == 0:
        return Tensor(np.zeros_like(w.data))
    u = t / (m * 2.0) + 0.5
    u = ad.clamp(u, 0.0, 1.0)
    scaled = u * float(n)
    q = scaled if smooth else ad.round_ste(scaled)
    return q * (2.0 / n) - 1.0


def fake_quant_activations(a: Tensor, k: int, smooth: bool = False) -> Tensor:
    """Graph op: clamp to [0, 1] and quantize, straight-through inside the clamp."""
    n = _levels(k)
    if smooth:
        return ad.clamp(a, 0.0, 1.0)
    pre = a.data
    inside = (pre >= 0) & (pre <= 1)
    c = np.clip(pre, 0.0, 1.0) * n
    fl = np.floor(c)
    out = (fl + (c - fl >= 0.5)) * (1.0 / n)
    return ad._node(out.astype(pre.dtype), (a,), lambda g: (ste_backward(g, pre),), "quantize_activations")


def apply_quant(graph, cfg: QuantConfig):
    """Return the low-precision variant of ``graph`` under ``cfg``.

    Weight quantization is inserted on every Conv/Dense kernel and activation
    quantization after every ReLU. The network input and the logits stay
    unquantized. A full-precision config returns ``graph`` itself.
    """
    if cfg is None or cfg.is_full_precision:
        return graph
    return graph.with_quant(cfg)
