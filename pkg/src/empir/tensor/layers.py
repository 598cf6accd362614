"""Layer specifications and the parameterized network ("graph") built from them."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class Conv:
    kernel_h: int
    kernel_w: int
    out_channels: int
    stride: int = 1
    padding: str = "same"


@dataclass(frozen=True)
class Dense:
    out_features: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    h: int
    w: int
    stride: int | None = None
    padding: str = "valid"


@dataclass(frozen=True)
class AvgPool:
    h: int
    w: int
    stride: int | None = None
    padding: str = "valid"


@dataclass(frozen=True)
class BatchNorm:
    momentum: float = 0.9
    eps: float = 1e-5


@dataclass(frozen=True)
class Softmax:
    pass


LayerSpec = Union[Conv, Dense, ReLU, MaxPool, AvgPool, BatchNorm, Softmax]

_KINDS = {cls.__name__.lower(): cls for cls in (Conv, Dense, ReLU, MaxPool, AvgPool, BatchNorm, Softmax)}


def validate_layer(spec: LayerSpec) -> None:
    if isinstance(spec, Conv):
        if min(spec.kernel_h, spec.kernel_w, spec.out_channels) < 1:
            raise ValueError(f"conv extents must be positive: {spec}")
    if isinstance(spec, Dense) and spec.out_features < 1:
        raise ValueError(f"dense width must be positive: {spec}")
    if isinstance(spec, (MaxPool, AvgPool)) and min(spec.h, spec.w) < 1:
        raise ValueError(f"pool extents must be positive: {spec}")
    stride = getattr(spec, "stride", 1)
    if stride is not None and stride < 1:
        raise ValueError(f"stride must be >= 1: {spec}")
    padding = getattr(spec, "padding", "same")
    if padding not in ("same", "valid"):
        raise ValueError(f"padding must be 'same' or 'valid': {spec}")
    if isinstance(spec, (MaxPool, AvgPool)) and spec.padding != "valid":
        raise ValueError("pooling supports 'valid' padding only")


def layers_to_json(layers: list[LayerSpec]) -> list[dict]:
    return [{"kind": type(l).__name__.lower(), **asdict(l)} for l in layers]


def layers_from_json(items: list[dict]) -> list[LayerSpec]:
    out = []
    for item in items:
        item = dict(item)
        kind = item.pop("kind")
        out.append(_KINDS[kind](**item))
    return out


ARCHITECTURES: dict[str, tuple[tuple[int, ...], list[LayerSpec]]] = {
    "mnistconv": (
        (28, 28, 1),
        [Conv(8, 8, 64), ReLU(), Conv(6, 6, 128), ReLU(), Conv(5, 5, 128), ReLU(), Dense(10), Softmax()],
    ),
    "cifarconv": (
        (32, 32, 3),
        [
            Conv(5, 5, 32), ReLU(), MaxPool(3, 3),
            Conv(8, 8, 64), ReLU(), AvgPool(3, 3),
            Conv(8, 8, 64), ReLU(), AvgPool(3, 3),
            Dense(64), Dense(10), Softmax(),
        ],
    ),
    "desk-small": (
        (28, 28, 1),
        [Conv(5, 5, 16), ReLU(), MaxPool(2, 2), Conv(5, 5, 32), ReLU(), MaxPool(2, 2), Dense(10), Softmax()],
    ),
}


def architecture(name: str, input_shape: tuple[int, ...] | None = None):
    """Return (input_shape, layers) for a named architecture."""
    try:
        shape, layers = ARCHITECTURES[name]
    except KeyError:
        raise ValueError(f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}") from None
    return tuple(input_shape or shape), list(layers)


class ShapeError(ValueError):
    pass


@dataclass
class _Slot:
    """Resolved per-layer bookkeeping: parameter names plus in/out shapes."""

    index: int
    spec: LayerSpec
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    params: list[str] = field(default_factory=list)


class Graph:
    """A feed-forward network over a list of LayerSpecs.

    ``params`` holds the trainable tensors by name, ``buffers`` the BatchNorm
    running statistics. ``quant`` (a QuantConfig or None) switches on
    simulated low-precision weights/activations in ``forward``. Each forward
    call records a fresh differentiable trace; ``backward`` consumes the most
    recent one.
    """

    def __init__(self, layers, input_shape, seed: int = 0, dtype=np.float32, quant=None, init: bool = True):
        self.layers: list[LayerSpec] = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.quant = quant
        self.training = False
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.slots: list[_Slot] = []
        self._last_input: Tensor | None = None
        self._last_output: Tensor | None = None
        self._resolve(init)

    # -- construction ------------------------------------------------------

    def _resolve(self, init: bool) -> None:
        rng = np.random.default_rng(self.seed)
        shape = self.input_shape
        for i, spec in enumerate(self.layers):
            validate_layer(spec)
            slot = _Slot(i, spec, shape, shape)
            if isinstance(spec, Conv):
                if len(shape) != 3:
                    raise ShapeError(f"layer {i} (conv) needs HWC input, got {shape}")
                h, w, c = shape
                ho, _, _ = ad.conv_output_geometry(h, spec.kernel_h, spec.stride, spec.padding)
                wo, _, _ = ad.conv_output_geometry(w, spec.kernel_w, spec.stride, spec.padding)
                fan_in = spec.kernel_h * spec.kernel_w * c
                self._add_param(slot, f"layer{i}.weight", (spec.kernel_h, spec.kernel_w, c, spec.out_channels), fan_in, rng, init)
                self._add_param(slot, f"layer{i}.bias", (spec.out_channels,), None, rng, init)
                shape = (ho, wo, spec.out_channels)
            elif isinstance(spec, Dense):
                fan_in = int(np.prod(shape))
                self._add_param(slot, f"layer{i}.weight", (fan_in, spec.out_features), fan_in, rng, init)
                self._add_param(slot, f"layer{i}.bias", (spec.out_features,), None, rng, init)
                shape = (spec.out_features,)
            elif isinstance(spec, (MaxPool, AvgPool)):
                if len(shape) != 3:
                    raise ShapeError(f"layer {i} (pool) needs HWC input, got {shape}")
                h, w, c = shape
                s = spec.stride
                ho, _, _ = ad.conv_output_geometry(h, spec.h, s or spec.h, "valid")
                wo, _, _ = ad.conv_output_geometry(w, spec.w, s or spec.w, "valid")
                shape = (ho, wo, c)
            elif isinstance(spec, BatchNorm):
                c = shape[-1]
                for name, val in (("gamma", 1.0), ("beta", 0.0)):
                    key = f"layer{i}.{name}"
                    self.params[key] = Tensor(np.full(c, val, dtype=self.dtype), requires_grad=True, name=key)
                    slot.params.append(key)
                self.buffers[f"layer{i}.running_mean"] = np.zeros(c, dtype=self.dtype)
                self.buffers[f"layer{i}.running_var"] = np.ones(c, dtype=self.dtype)
            elif isinstance(spec, Softmax):
                if i != len(self.layers) - 1:
                    raise ShapeError("softmax must be the final layer")
            slot.out_shape = shape
            self.slots.append(slot)
        if not self.layers or not isinstance(self.layers[-1], Softmax):
            raise ShapeError("the final layer must be Softmax")

    def _add_param(self, slot, name, shape, fan_in, rng, init):
        if fan_in is None:
            data = np.zeros(shape, dtype=self.dtype)
        elif init:
            # He-normal; the per-member seed is also the ensemble's diversity source
            data = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(self.dtype)
        else:
            data = np.zeros(shape, dtype=self.dtype)
        self.params[name] = Tensor(data, requires_grad=True, name=name)
        slot.params.append(name)

    @property
    def num_classes(self) -> int:
        return self.slots[-1].out_shape[-1]

    @property
    def topology(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": layers_to_json(self.layers)}

    def clone(self, dtype=None, quant="keep") -> "Graph":
        """Deep copy of parameters; optionally cast (e.g. float64 test mode) or requantize."""
        g = Graph(
            self.layers,
            self.input_shape,
            seed=self.seed,
            dtype=dtype or self.dtype,
            quant=self.quant if quant == "keep" else quant,
            init=False,
        )
        for k, v in self.params.items():
            g.params[k] = Tensor(v.data.astype(g.dtype, copy=True), requires_grad=True, name=k)
        for k, v in self.buffers.items():
            g.buffers[k] = v.astype(g.dtype, copy=True)
        return g

    def with_quant(self, cfg) -> "Graph":
        return self.clone(quant=cfg)

    def as_double(self) -> "Graph":
        return self.clone(dtype=np.float64)

    # -- evaluation ----------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            if x.shape == self.input_shape:
                x = x[None]
            else:
                raise ShapeError(
                    f"layer 0 ({type(self.layers[0]).__name__}) expects input (batch, "
                    f"{', '.join(map(str, self.input_shape))}), got {x.shape}"
                )
        return x

    def _weight(self, name: str) -> Tensor:
        w = self.params[name]
        kw = getattr(self.quant, "weight_bits", None)
        if kw is None:
            return w
        from ..quant import fake_quant_weights

        return fake_quant_weights(w, kw)

    def logits(self, x, requires_input_grad: bool = False) -> Tensor:
        """Forward to the pre-softmax scores."""
        from ..quant import fake_quant_activations

        xt = Tensor(self._check_input(x), requires_grad=requires_input_grad, name="input")
        self._last_input = xt
        h = xt
        ka = getattr(self.quant, "activation_bits", None)
        for slot in self.slots:
            spec = slot.spec
            if h.shape[1:] != slot.in_shape:
                raise ShapeError(f"layer {slot.index} ({type(spec).__name__}) expected {slot.in_shape}, got {h.shape[1:]}")
            if isinstance(spec, Conv):
                w = self._weight(f"layer{slot.index}.weight")
                h = ad.conv2d(h, w, self.params[f"layer{slot.index}.bias"], spec.stride, spec.padding)
            elif isinstance(spec, Dense):
                if h.ndim > 2:
                    h = ad.flatten(h)
                w = self._weight(f"layer{slot.index}.weight")
                h = ad.dense(h, w, self.params[f"layer{slot.index}.bias"])
            elif isinstance(spec, ReLU):
                h = ad.relu(h)
                if ka is not None:
                    h = fake_quant_activations(h, ka)
            elif isinstance(spec, MaxPool):
                s = spec.stride or None
                h = ad.max_pool2d(h, spec.h, spec.w, (s, s) if s else None)
            elif isinstance(spec, AvgPool):
                s = spec.stride or None
                h = ad.avg_pool2d(h, spec.h, spec.w, (s, s) if s else None)
            elif isinstance(spec, BatchNorm):
                i = slot.index
                h = ad.batch_norm(
                    h,
                    self.params[f"layer{i}.gamma"],
                    self.params[f"layer{i}.beta"],
                    self.buffers[f"layer{i}.running_mean"],
                    self.buffers[f"layer{i}.running_var"],
                    self.training,
                    spec.momentum,
                    spec.eps,
                )
            elif isinstance(spec, Softmax):
                break
        return h

    def forward(self, x, requires_input_grad: bool = False) -> Tensor:
        """Class probabilities for a batch; records the trace for ``backward``."""
        out = ad.softmax(self.logits(x, requires_input_grad))
        self._last_output = out
        return out

    __call__ = forward

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of ``loss`` w.r.t. every parameter and (key ``"input"``) the input."""
        if self._last_input is None:
            raise RuntimeError("backward called before forward")
        for p in self.params.values():
            p.grad = None
        self._last_input.grad = None
        ad.backward(loss)
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.params.items()}
        if self._last_input.requires_grad:
            g = self._last_input.grad
            grads["input"] = g if g is not None else np.zeros_like(self._last_input.data)
        return grads

    def predict_proba(self, x, batch_size: int = 500) -> np.ndarray:
        x = self._check_input(x)
        out = []
        with ad.no_grad():
            for i in range(0, len(x), batch_size):
                out.append(self.forward(x[i : i + batch_size]).data)
        self._last_input = None
        return np.concatenate(out) if out else np.zeros((0, self.num_classes), dtype=self.dtype)

    def predict(self, x, batch_size: int = 500) -> np.ndarray:
        return self.predict_proba(x, batch_size).argmax(axis=1)

    def input_gradient(self, x, y, objective=None) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of the summed per-example objective w.r.t. the input.

        ``objective(logits, probs, labels)`` must return a scalar Tensor that
        sums independent per-example terms (default: summed cross-entropy), so
        row i of the result is example i's own gradient. Returns
        (gradient, predicted classes at x).
        """
        x = self._check_input(x)
        z = self.logits(x, requires_input_grad=True)
        probs = ad.softmax(z)
        self._last_output = probs
        if objective is None:
            loss = ad.cross_entropy(probs, y, reduction="sum")
        else:
            loss = objective(z, probs, np.asarray(y))
        grads = self.backward(loss)
        return grads["input"], probs.data.argmax(axis=1)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.params.items()}
        out.update({f"buffer:{k}": v for k, v in self.buffers.items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            if k.startswith("buffer:"):
                key = k[len("buffer:") :]
                if key not in self.buffers or self.buffers[key].shape != v.shape:
                    raise ValueError(f"unexpected buffer {key} {v.shape}")
                self.buffers[key] = np.array(v, dtype=self.dtype)
            else:
                if k not in self.params or self.params[k].shape != v.shape:
                    raise ValueError(f"unexpected parameter {k} {v.shape}")
                self.params[k] = Tensor(np.array(v, dtype=self.dtype), requires_grad=True, name=k)


def forward(graph: Graph, x) -> Tensor:
    return graph.forward(x)


def backward(graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    return graph.backward(loss)
