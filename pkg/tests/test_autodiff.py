import numpy as np
import pytest

from conftest import gradcheck
from empir.tensor import Tensor, backward_tensor, cross_entropy, no_grad
from empir.tensor import autodiff as ad


def conv_oracle(x, w, b, stride, padding):
    """Direct six-loop correlation with TF-style padding."""
    n, h, wid, cin = x.shape
    kh, kw, _, cout = w.shape
    if padding == "same":
        ho, wo = -(-h // stride), -(-wid // stride)
        ph = max((ho - 1) * stride + kh - h, 0)
        pw = max((wo - 1) * stride + kw - wid, 0)
        top, left = ph // 2, pw // 2
    else:
        ho, wo = (h - kh) // stride + 1, (wid - kw) // stride + 1
        top = left = 0
    out = np.zeros((n, ho, wo, cout))
    for b_ in range(n):
        for i in range(ho):
            for j in range(wo):
                for o in range(cout):
                    acc = b[o]
                    for di in range(kh):
                        for dj in range(kw):
                            r, c = i * stride + di - top, j * stride + dj - left
                            if 0 <= r < h and 0 <= c < wid:
                                acc += x[b_, r, c, :] @ w[di, dj, :, o]
                    out[b_, i, j, o] = acc
    return out


@pytest.mark.parametrize("stride,padding,size,k", [(1, "same", 6, 3), (2, "same", 7, 3), (1, "valid", 6, 5),
                                                   (2, "valid", 9, 4), (1, "same", 5, 4)])
def test_conv_matches_direct_loops(rng, stride, padding, size, k):
    x = rng.standard_normal((2, size, size, 3))
    w = rng.standard_normal((k, k, 3, 4))
    b = rng.standard_normal(4)
    got = ad.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64),
                    stride, padding).data
    np.testing.assert_allclose(got, conv_oracle(x, w, b, stride, padding), rtol=1e-12, atol=1e-12)


def test_conv_geometry():
    assert ad.conv_output_geometry(28, 5, 1, "same") == (28, 2, 2)
    assert ad.conv_output_geometry(28, 8, 2, "same") == (14, 3, 3)
    assert ad.conv_output_geometry(28, 6, 2, "valid")[0] == 12
    with pytest.raises(ValueError):
        ad.conv_output_geometry(3, 5, 1, "valid")


@pytest.mark.parametrize("stride,padding", [(1, "same"), (2, "same"), (1, "valid"), (2, "valid")])
def test_conv_gradients(rng, stride, padding):
    x = rng.standard_normal((2, 6, 6, 2))
    w = rng.standard_normal((3, 3, 2, 3))
    b = rng.standard_normal(3)
    err = gradcheck(lambda x, w, b: ad.conv2d(x, w, b, stride, padding), [x, w, b], rng)
    assert err < 1e-6


def test_elementwise_gradients(rng):
    a = rng.standard_normal((3, 4))
    b = rng.uniform(0.5, 2.0, (3, 4))
    assert gradcheck(lambda a, b: a * b + a / b - b, [a, b], rng) < 1e-7
    assert gradcheck(lambda a: ad.tanh(a), [a], rng) < 1e-7
    assert gradcheck(lambda b: ad.log(b) + ad.exp(b), [b], rng) < 1e-7
    # broadcasting collapses the upstream gradient back to the operand shape
    row = rng.standard_normal((1, 4))
    assert gradcheck(lambda a, r: a * r + r, [a, row], rng) < 1e-7


def test_reductions_and_reshape(rng):
    a = rng.standard_normal((2, 3, 4))
    assert gradcheck(lambda a: ad.sum_(a, axis=1), [a], rng) < 1e-7
    assert gradcheck(lambda a: ad.mean(a, axis=(0, 2)), [a], rng) < 1e-7
    assert gradcheck(lambda a: ad.flatten(a), [a], rng) < 1e-7


def test_dense_and_matmul(rng):
    x = rng.standard_normal((4, 5))
    w = rng.standard_normal((5, 3))
    b = rng.standard_normal(3)
    assert gradcheck(lambda x, w, b: ad.dense(x, w, b), [x, w, b], rng) < 1e-7


def test_pool_gradients(rng):
    x = rng.standard_normal((2, 6, 6, 3))
    assert gradcheck(lambda x: ad.max_pool2d(x, 2, 2), [x], rng) < 1e-7
    assert gradcheck(lambda x: ad.avg_pool2d(x, 3, 3, (2, 2)), [x], rng) < 1e-7


def test_maxpool_ties_go_to_first_element():
    x = Tensor(np.ones((1, 2, 2, 1)), requires_grad=True, dtype=np.float64)
    out = ad.max_pool2d(x, 2, 2)
    backward_tensor(out, np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(x.grad[0, :, :, 0], [[1, 0], [0, 0]])


def test_batchnorm_gradients_train_and_eval(rng):
    x = rng.standard_normal((4, 3, 3, 2))
    gamma = rng.uniform(0.5, 1.5, 2)
    beta = rng.standard_normal(2)
    for training in (True, False):
        def op(x, g, b):
            return ad.batch_norm(x, g, b, np.zeros(2), np.ones(2), training)
        assert gradcheck(op, [x, gamma, beta], rng) < 1e-6


def test_batchnorm_running_stats_update():
    x = np.arange(8, dtype=np.float64).reshape(4, 1, 1, 2)
    rm, rv = np.zeros(2), np.ones(2)
    ad.batch_norm(Tensor(x, dtype=np.float64), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True)
    np.testing.assert_allclose(rm, 0.1 * x.reshape(4, 2).mean(0))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.reshape(4, 2).var(0))


def test_softmax_cross_entropy(rng):
    z = rng.standard_normal((5, 4))
    y = rng.integers(0, 4, 5)
    assert gradcheck(lambda z: ad.softmax(z), [z], rng) < 1e-7
    assert gradcheck(lambda z: cross_entropy(ad.softmax(z), y), [z], rng) < 1e-7
    # the fused path and the generic -log p path agree
    p_plain = Tensor(ad.softmax(Tensor(z)).data, dtype=np.float64)
    fused = cross_entropy(ad.softmax(Tensor(z, dtype=np.float64)), y).data
    np.testing.assert_allclose(cross_entropy(p_plain, y).data, fused, rtol=1e-12)


def test_cross_entropy_validation():
    p = Tensor(np.full((2, 3), 1 / 3))
    with pytest.raises(ValueError):
        cross_entropy(p, [0, 3])
    with pytest.raises(ValueError):
        cross_entropy(p, [0])
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.full((2, 3), 0.5)), [0, 1])


def test_cross_entropy_extreme_logits_are_finite():
    z = Tensor(np.array([[1000.0, -1000.0]]), requires_grad=True, dtype=np.float64)
    loss = cross_entropy(ad.softmax(z), [1])
    backward_tensor(loss)
    assert np.isfinite(loss.data) and loss.data == pytest.approx(2000.0)
    assert np.all(np.isfinite(z.grad))


def test_shared_subexpression_visited_once(rng):
    a = Tensor(rng.standard_normal(3), requires_grad=True, dtype=np.float64)
    h = a * a
    out = (h + h).sum()
    visited = backward_tensor(out)
    np.testing.assert_allclose(a.grad, 4 * a.data)
    assert visited == 3  # mul, add, sum


def test_clamp_is_inclusive():
    a = Tensor(np.array([-0.5, 0.0, 0.5, 1.0, 1.5]), requires_grad=True, dtype=np.float64)
    backward_tensor(ad.clamp(a, 0.0, 1.0).sum())
    np.testing.assert_array_equal(a.grad, [0, 1, 1, 1, 0])


def test_round_half_away_from_zero():
    x = np.array([0.5, 1.5, 2.5, -0.5, -1.5, 0.49, -0.51])
    np.testing.assert_array_equal(ad.round_half_away(x), [1, 2, 3, -1, -2, 0, -1])


def test_no_grad_builds_no_tape():
    a = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        out = a * 2
    assert not out.requires_grad
    with pytest.raises(RuntimeError):
        backward_tensor(out.sum())


def test_backward_requires_upstream_for_vectors():
    a = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ValueError):
        backward_tensor(a * 2)
