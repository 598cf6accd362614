"""White-box attacks (FGSM, BIM, PGD, CW-L2) against graphs and ensembles.

A *target* is anything exposing ``input_gradient(x, y, objective)`` returning
(per-example gradient, predicted classes) and ``predict(x)``; both
:class:`~empir.tensor.layers.Graph` and :class:`~empir.ensemble.Empir` qualify,
so ensembles are attacked through their ensemble gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .tensor import autodiff as ad


@dataclass(frozen=True)
class FGSM:
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("FGSM eps must be > 0")


@dataclass(frozen=True)
class BIM:
    eps: float
    alpha: float
    iterations: int

    def __post_init__(self):
        _check_iterative(self)


@dataclass(frozen=True)
class PGD:
    eps: float
    alpha: float
    iterations: int
    random_start: bool = True
    seed: int = 0

    def __post_init__(self):
        _check_iterative(self)


@dataclass(frozen=True)
class CW:
    iterations: int = 50
    learning_rate: float = 0.01
    initial_c: float = 1.0
    binary_search_steps: int = 3
    confidence: float = 0.0

    def __post_init__(self):
        if self.iterations < 1 or self.binary_search_steps < 1:
            raise ValueError("CW needs iterations >= 1 and binary_search_steps >= 1")
        if self.learning_rate <= 0 or self.initial_c <= 0:
            raise ValueError("CW learning_rate and initial_c must be positive")


AttackSpec = Union[FGSM, BIM, PGD, CW]


def _check_iterative(spec) -> None:
    if not (spec.eps > 0 and spec.alpha > 0):
        raise ValueError("eps and alpha must be > 0")
    if spec.iterations < 1:
        raise ValueError("iterations must be >= 1")
    if spec.alpha > spec.eps:
        raise ValueError(f"alpha ({spec.alpha}) must not exceed eps ({spec.eps})")


# reference attack settings for the two benchmarks
BENCHMARK_ATTACKS = {
    "mnistconv": {
        "cw": CW(iterations=50),
        "fgsm": FGSM(0.3),
        "bim": BIM(0.3, 0.01, 40),
        "pgd": PGD(0.3, 0.01, 40),
    },
    "cifarconv": {
        "cw": CW(iterations=50),
        "fgsm": FGSM(0.1),
        "bim": BIM(0.1, 0.01, 40),
        "pgd": PGD(0.1, 0.01, 40),
    },
}
BENCHMARK_ATTACKS["desk-small"] = BENCHMARK_ATTACKS["mnistconv"]


def _gradient(target, x, y, objective=None):
    g, pred = target.input_gradient(x, y, objective)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite input gradient")
    return g, pred


def _as_inputs(x, y):
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    if x.size and (x.min() < 0 or x.max() > 1):
        raise ValueError("attack inputs must lie in [0, 1]")
    return x, y


def _signed_step(x_cur, grad, step):
    # np.sign(0) == 0, so zero-gradient pixels stay put
    return x_cur + np.float32(step) * np.sign(grad).astype(np.float32)


def fgsm(target, x, y, eps: float, batch_size: int = 500) -> np.ndarray:
    """x + eps * sign(grad_x L), clipped to [0, 1]."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    x, y = _as_inputs(x, y)
    out = np.empty_like(x)
    for s in range(0, len(x), batch_size):
        xb, yb = x[s : s + batch_size], y[s : s + batch_size]
        g, _ = _gradient(target, xb, yb)
        out[s : s + batch_size] = np.clip(_signed_step(xb, g, eps), 0.0, 1.0)
    return out


def _iterate(target, x, y, x_start, eps, alpha, iterations, batch_size, trace=None):
    out = np.empty_like(x)
    e = np.float32(eps)
    for s in range(0, len(x), batch_size):
        xb, yb = x[s : s + batch_size], y[s : s + batch_size]
        lo, hi = xb - e, xb + e
        cur = x_start[s : s + batch_size]
        for _ in range(iterations):
            g, _ = _gradient(target, cur, yb)
            cur = _signed_step(cur, g, alpha)
            cur = np.clip(np.clip(cur, lo, hi), 0.0, 1.0)  # ball projection, then box
            if trace is not None:
                trace.append((s, cur.copy()))
        out[s : s + batch_size] = cur
    return out


def bim(target, x, y, eps: float, alpha: float, iterations: int, batch_size: int = 500, trace=None) -> np.ndarray:
    """Iterated signed steps of size alpha, projected onto the eps-ball and [0, 1]."""
    if alpha > eps or eps < 0 or alpha <= 0 or iterations < 1:
        raise ValueError("need 0 < alpha <= eps and iterations >= 1")
    x, y = _as_inputs(x, y)
    return _iterate(target, x, y, x, eps, alpha, iterations, batch_size, trace)


def pgd(
    target,
    x,
    y,
    eps: float,
    alpha: float,
    iterations: int,
    random_start: bool = True,
    seed: int = 0,
    index_offset: int = 0,
    batch_size: int = 500,
) -> np.ndarray:
    """BIM from a uniform random point of the eps-ball.

    Example i draws its start from a generator seeded with ``seed ^ (index_offset + i)``,
    so results do not depend on batching.
    """
    if alpha > eps or eps < 0 or alpha <= 0 or iterations < 1:
        raise ValueError("need 0 < alpha <= eps and iterations >= 1")
    x, y = _as_inputs(x, y)
    start = x
    if random_start:
        noise = np.empty_like(x)
        for i in range(len(x)):
            rng = np.random.default_rng(seed ^ (index_offset + i))
            noise[i] = rng.uniform(-eps, eps, size=x.shape[1:])
        start = np.clip(x + noise, 0.0, 1.0)
    return _iterate(target, x, y, start, eps, alpha, iterations, batch_size)


# ----------------------------------------------------------------------------
# Carlini-Wagner L2


def cw_margin(logits: ad.Tensor, labels, kappa: float = 0.0) -> ad.Tensor:
    """Sum over the batch of max(Z_true - max_{j != true} Z_j, -kappa)."""
    z = logits.data
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.arange(len(z))
    other = z.copy()
    other[idx, labels] = -np.inf
    j = other.argmax(axis=1)
    margin = z[idx, labels] - z[idx, j]
    active = margin > -kappa
    out = np.asarray(np.maximum(margin, -kappa).sum(), dtype=z.dtype)

    def bw(g):
        gz = np.zeros_like(z)
        gz[idx, labels] += g * active
        gz[idx, j] -= g * active
        return (gz,)

    return ad._node(out, (logits,), bw, "cw_margin")


@dataclass
class CWResult:
    x_adv: np.ndarray
    success: np.ndarray       # (B,) adversarial found
    distortion: np.ndarray    # (B,) L2 norm of the returned perturbation
    constants: np.ndarray     # (B,) final trade-off constants


_W_LIMIT = 8.0  # keeps (tanh(w) + 1) / 2 strictly inside (0, 1) in float32


def cw_l2(target, x, y, spec: CW = CW(), batch_size: int = 500, return_info: bool = False, trace=None):
    """Untargeted CW-L2 in tanh space, Adam steps, binary search over c.

    Returns the lowest-distortion adversarial example found per input, or the
    input itself where none was found (``success`` is False there).
    Inputs already misclassified are returned unchanged with zero distortion.
    """
    x, y = _as_inputs(x, y)
    kappa = spec.confidence

    def objective(logits, probs, labels):
        return cw_margin(logits, labels, kappa)

    xs, succ_all, dist_all, c_all = [], [], [], []
    for s in range(0, len(x), batch_size):
        xb, yb = x[s : s + batch_size], y[s : s + batch_size]
        res = _cw_batch(target, xb, yb, spec, objective, trace)
        xs.append(res.x_adv)
        succ_all.append(res.success)
        dist_all.append(res.distortion)
        c_all.append(res.constants)
    if not xs:
        xs, succ_all, dist_all, c_all = [x], [np.zeros(0, bool)], [np.zeros(0)], [np.zeros(0)]
    result = CWResult(np.concatenate(xs), np.concatenate(succ_all), np.concatenate(dist_all), np.concatenate(c_all))
    return result if return_info else result.x_adv


def _cw_batch(target, xb, yb, spec: CW, objective, trace) -> CWResult:
    b = len(xb)
    feat = tuple(range(1, xb.ndim))
    bshape = (b,) + (1,) * (xb.ndim - 1)
    x64 = xb.astype(np.float64)
    w0 = np.arctanh(np.clip(2 * x64 - 1, -1 + 1e-6, 1 - 1e-6))

    pred0 = target.predict(xb)
    done = pred0 != yb
    best_l2 = np.where(done, 0.0, np.inf)
    best_adv = xb.copy()

    c = np.full(b, spec.initial_c)
    lo = np.zeros(b)
    hi = np.full(b, np.inf)
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    for _ in range(spec.binary_search_steps):
        w = w0.copy()
        m = np.zeros_like(w)
        v = np.zeros_like(w)
        found = np.zeros(b, dtype=bool)
        for t in range(1, spec.iterations + 1):
            th = np.tanh(w)
            xp64 = (th + 1) / 2
            xp = xp64.astype(np.float32)
            if trace is not None:
                trace.append(xp.copy())
            gf, pred = target.input_gradient(xp, yb, objective)
            l2sq = ((xp.astype(np.float64) - x64) ** 2).sum(axis=feat)
            succ = (pred != yb) & ~done
            improve = succ & (l2sq < best_l2)
            best_l2[improve] = l2sq[improve]
            best_adv[improve] = xp[improve]
            found |= succ

            grad_x = 2 * (xp64 - x64) + c.reshape(bshape) * gf.astype(np.float64)
            grad_w = grad_x * (1 - th * th) / 2
            m = beta1 * m + (1 - beta1) * grad_w
            v = beta2 * v + (1 - beta2) * grad_w * grad_w
            step = spec.learning_rate * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
            w = np.clip(w - step, -_W_LIMIT, _W_LIMIT)

        hi = np.where(found, np.minimum(hi, c), hi)
        lo = np.where(found, lo, np.maximum(lo, c))
        c = np.where(np.isfinite(hi), (lo + hi) / 2, c * 10)

    success = np.isfinite(best_l2)
    distortion = np.where(success, np.sqrt(np.where(success, best_l2, 0.0)), 0.0)
    return CWResult(best_adv, success, distortion, c)


# ----------------------------------------------------------------------------


def run_attack(target, x, y, spec: AttackSpec, batch_size: int = 500, index_offset: int = 0) -> np.ndarray:
    if isinstance(spec, FGSM):
        return fgsm(target, x, y, spec.eps, batch_size)
    if isinstance(spec, BIM):
        return bim(target, x, y, spec.eps, spec.alpha, spec.iterations, batch_size)
    if isinstance(spec, PGD):
        return pgd(target, x, y, spec.eps, spec.alpha, spec.iterations, spec.random_start, spec.seed,
                   index_offset, batch_size)
    if isinstance(spec, CW):
        return cw_l2(target, x, y, spec, batch_size)
    raise TypeError(f"unknown attack spec {spec!r}")


def attack_ensemble(empir, x, y, spec: AttackSpec, batch_size: int = 500) -> np.ndarray:
    """Attack an ensemble; every gradient query is the ensemble gradient."""
    return run_attack(empir, x, y, spec, batch_size)


def parse_attack(name: str, eps=None, alpha=None, iters=None, arch: str = "mnistconv", seed: int = 0) -> AttackSpec:
    """Build an AttackSpec from CLI-style fields, defaulting to the benchmark's table values."""
    name = name.lower()
    base = BENCHMARK_ATTACKS.get(arch, BENCHMARK_ATTACKS["mnistconv"])
    if name not in base:
        raise ValueError(f"unknown attack {name!r}; choose from cw, fgsm, bim, pgd")
    d = base[name]
    if isinstance(d, FGSM):
        return FGSM(eps if eps is not None else d.eps)
    if isinstance(d, BIM):
        return BIM(eps if eps is not None else d.eps, alpha if alpha is not None else d.alpha,
                   iters if iters is not None else d.iterations)
    if isinstance(d, PGD):
        return PGD(eps if eps is not None else d.eps, alpha if alpha is not None else d.alpha,
                   iters if iters is not None else d.iterations, True, seed)
    return CW(iterations=iters if iters is not None else d.iterations)
