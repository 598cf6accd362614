import numpy as np
import pytest

from empir.attacks import (
    BIM,
    CW,
    FGSM,
    PGD,
    bim,
    cw_l2,
    cw_margin,
    fgsm,
    parse_attack,
    pgd,
    run_attack,
)
from empir.ensemble import Empir
from empir.tensor import Dense, Graph, Softmax, Tensor, backward_tensor


def linear_model(w, b, seed=0):
    w = np.asarray(w, dtype=np.float64)
    g = Graph([Dense(w.shape[1]), Softmax()], (w.shape[0],), seed=seed, dtype=np.float64)
    g.params["layer0.weight"].data[...] = w
    g.params["layer0.bias"].data[...] = b
    return g


def two_class(margin=0.3, d=8, seed=0):
    """Linear 2-class model with analytic boundary distance from the point x0 = 0.5."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((d, 2))
    x0 = np.full(d, 0.5)
    diff = w[:, 0] - w[:, 1]
    # choose biases so that class 0 wins at x0 by exactly ``margin``
    b = np.array([margin - x0 @ diff, 0.0])
    return linear_model(w, b), x0, margin / np.linalg.norm(diff)


@pytest.fixture
def model():
    rng = np.random.default_rng(5)
    return linear_model(rng.standard_normal((6, 3)), rng.standard_normal(3))


@pytest.fixture
def batch():
    rng = np.random.default_rng(6)
    return rng.uniform(0, 1, (40, 6)).astype(np.float32), rng.integers(0, 3, 40)


def test_fgsm_matches_analytic_sign(model, batch):
    x, y = batch
    p = model.predict_proba(x)
    onehot = np.eye(3)[y]
    # d(CE)/dx for a linear softmax model
    grad = (p - onehot) @ model.params["layer0.weight"].data.T
    expected = np.clip(x + np.float32(0.1) * np.sign(grad).astype(np.float32), 0, 1)
    np.testing.assert_array_equal(fgsm(model, x, y, 0.1), expected)


def test_fgsm_zero_eps_is_identity(model, batch):
    x, y = batch
    np.testing.assert_array_equal(fgsm(model, x, y, 0.0), x)


def test_bim_one_step_equals_fgsm(model, batch):
    x, y = batch
    np.testing.assert_array_equal(bim(model, x, y, 0.2, 0.2, 1), fgsm(model, x, y, 0.2))


def test_pgd_without_restart_equals_bim(model, batch):
    x, y = batch
    np.testing.assert_array_equal(pgd(model, x, y, 0.3, 0.05, 10, random_start=False), bim(model, x, y, 0.3, 0.05, 10))


@pytest.mark.parametrize("attack", ["bim", "pgd"])
def test_budget_and_box_every_iteration(model, batch, attack):
    x, y = batch
    trace = []
    if attack == "bim":
        bim(model, x, y, 0.1, 0.03, 8, trace=trace)
    else:
        from empir.attacks import _iterate

        start = np.clip(x + np.random.default_rng(0).uniform(-0.1, 0.1, x.shape).astype(np.float32), 0, 1)
        _iterate(model, x, y, start, 0.1, 0.03, 8, 500, trace)
    assert len(trace) == 8
    for _, cur in trace:
        assert np.abs(cur - x).max() <= np.float32(0.1) + 1e-7
        assert cur.min() >= 0 and cur.max() <= 1


def test_pgd_is_batch_invariant(model, batch):
    x, y = batch
    whole = pgd(model, x, y, 0.2, 0.05, 5, seed=3)
    parts = np.concatenate([pgd(model, x[:15], y[:15], 0.2, 0.05, 5, seed=3),
                            pgd(model, x[15:], y[15:], 0.2, 0.05, 5, seed=3, index_offset=15)])
    np.testing.assert_array_equal(whole, parts)
    np.testing.assert_array_equal(pgd(model, x, y, 0.2, 0.05, 5, seed=3, batch_size=7), whole)


def test_parameter_validation(model, batch):
    x, y = batch
    with pytest.raises(ValueError):
        bim(model, x, y, 0.1, 0.2, 3)
    with pytest.raises(ValueError):
        fgsm(model, x, y, -0.1)
    with pytest.raises(ValueError):
        fgsm(model, x * 2 + 0.5, y, 0.1)
    with pytest.raises(ValueError):
        FGSM(0.0)
    with pytest.raises(ValueError):
        BIM(0.1, 0.2, 5)


def test_parse_attack_defaults():
    assert parse_attack("fgsm", arch="desk-small") == FGSM(0.3)
    assert parse_attack("bim", arch="cifarconv") == BIM(0.1, 0.01, 40)
    assert parse_attack("pgd", eps=0.2, seed=4) == PGD(0.2, 0.01, 40, True, 4)
    assert parse_attack("cw").iterations == 50
    with pytest.raises(ValueError):
        parse_attack("deepfool")


def test_cw_margin_gradient():
    z = Tensor(np.array([[2.0, 1.0, 3.0], [0.0, 5.0, 1.0]]), requires_grad=True, dtype=np.float64)
    out = cw_margin(z, [0, 1])
    # row 0 is already misclassified: its term is clamped at -kappa = 0
    assert float(out.data) == pytest.approx(0 + (5 - 1))
    backward_tensor(out)
    np.testing.assert_array_equal(z.grad, [[0, 0, 0], [0, 1, -1]])
    # with confidence, margins below -kappa are flat
    z2 = Tensor(np.array([[0.0, 4.0]]), requires_grad=True, dtype=np.float64)
    backward_tensor(cw_margin(z2, [0], kappa=1.0))
    np.testing.assert_array_equal(z2.grad, [[0, 0]])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cw_distortion_near_analytic_boundary(seed):
    g, x0, dist = two_class(0.3, seed=seed)
    res = cw_l2(g, x0[None].astype(np.float32), [0], CW(iterations=1000, binary_search_steps=12, initial_c=1.0),
                return_info=True)
    assert res.success[0]
    assert g.predict(res.x_adv)[0] == 1
    assert dist <= res.distortion[0] * (1 + 1e-4)
    assert res.distortion[0] <= 1.1 * dist


def test_cw_keeps_misclassified_inputs(model, batch):
    x, y = batch
    wrong = model.predict(x) != y
    res = cw_l2(model, x, y, CW(iterations=5, binary_search_steps=1), return_info=True)
    np.testing.assert_array_equal(res.x_adv[wrong], x[wrong])
    assert np.all(res.distortion[wrong] == 0)
    assert res.x_adv.min() >= 0 and res.x_adv.max() <= 1


def test_run_attack_dispatch_and_ensemble(model, batch):
    x, y = batch
    e = Empir([model, linear_model(np.ones((6, 3)), np.zeros(3), 1)], "averaging")
    for spec in (FGSM(0.1), BIM(0.1, 0.05, 2), PGD(0.1, 0.05, 2), CW(iterations=3, binary_search_steps=1)):
        out = run_attack(e, x, y, spec)
        assert out.shape == x.shape
        if not isinstance(spec, CW):
            assert np.abs(out - x).max() <= 0.1 + 1e-6
