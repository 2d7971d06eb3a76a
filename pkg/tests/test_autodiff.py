import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from phgr import autodiff as ad
from phgr.autodiff import Tape, Tensor, backward, grad_check
from phgr.hyperbolic import PoincareSpace


def grads_of(f, *values):
    leaves = [Tensor(np.asarray(v, dtype=float), requires_grad=True) for v in values]
    with Tape() as tape:
        out = f(*leaves)
    g = backward(tape, out, wrt=leaves)
    return [g[t] for t in leaves]


class TestValues:
    def test_softmax_uniform(self):
        np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0, 0.0])).value, [1 / 3] * 3)

    def test_softmax_mask(self):
        out = ad.softmax(Tensor([[1.0, 5.0, 2.0]]), mask=np.array([[True, False, True]])).value
        e = np.exp([1.0, 2.0])
        np.testing.assert_allclose(out, [[e[0] / e.sum(), 0.0, e[1] / e.sum()]])

    def test_atanh_tanh_inverse(self):
        x = np.linspace(-5, 5, 101)
        np.testing.assert_allclose(ad.atanh(ad.tanh(Tensor(x))).value, x, atol=1e-10)

    def test_matmul_identity(self):
        X = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(3)), Tensor(X)).value, X)

    def test_segment_softmax_groups(self):
        out = ad.segment_softmax(Tensor([0.0, 0.0, 1.0, 1.0, 1.0]), np.array([0, 0, 1, 1, 1]), 2).value
        np.testing.assert_allclose(out, [0.5, 0.5, 1 / 3, 1 / 3, 1 / 3])

    def test_segment_sum_empty_segment(self):
        out = ad.segment_sum(Tensor([[1.0], [2.0]]), np.array([0, 2]), 3).value
        np.testing.assert_array_equal(out, [[1.0], [0.0], [2.0]])


class TestBackward:
    def test_sum_gives_ones(self):
        (g,) = grads_of(lambda x: x.sum(), np.arange(5.0))
        np.testing.assert_array_equal(g, np.ones(5))

    def test_square_norm(self):
        x = np.array([1.0, -2.0, 0.5])
        (g,) = grads_of(lambda t: (t * t).sum(), x)
        np.testing.assert_allclose(g, 2 * x)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(ad.ContractError):
            backward(tape, y)

    def test_unreachable_leaf_gets_zeros(self):
        x = Tensor(np.ones(2), requires_grad=True)
        z = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            loss = (x * 3.0).sum()
            _ = z * 2.0
        g = backward(tape, loss, wrt=[x, z])
        np.testing.assert_array_equal(g[z], np.zeros(3))
        np.testing.assert_array_equal(g[x], [3.0, 3.0])

    def test_no_tape_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        y = x * 2.0
        assert not y.requires_grad

    def test_reused_input_accumulates(self):
        (g,) = grads_of(lambda x: (x * x * x).sum(), [2.0])
        np.testing.assert_allclose(g, [12.0])

    def test_broadcast_gradient_shape(self):
        gb, = grads_of(lambda b: (Tensor(np.ones((4, 3))) + b).sum(), np.zeros(3))
        np.testing.assert_array_equal(gb, [4.0, 4.0, 4.0])

    def test_clamped_sqrt_has_zero_gradient(self):
        (g,) = grads_of(lambda x: ad.sqrt(x, floor=1e-6).sum(), [0.0])
        assert g[0] == 0.0

    def test_tapes_are_thread_local(self):
        results = {}

        def work(k):
            x = Tensor(np.full(3, float(k)), requires_grad=True)
            with Tape() as tape:
                loss = (x * x).sum()
            results[k] = backward(tape, loss)[x]

        threads = [threading.Thread(target=work, args=(k,)) for k in range(1, 9)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for k, g in results.items():
            np.testing.assert_array_equal(g, np.full(3, 2.0 * k))


# ---------------------------------------------------------------- gradient checks

RNG = np.random.default_rng(0)
X34 = RNG.normal(size=(3, 4))
POS = RNG.uniform(0.5, 2.0, size=(3, 4))

UNARY = {
    "tanh": lambda x: ad.tanh(x).sum(),
    "sigmoid": lambda x: ad.sigmoid(x).sum(),
    "exp": lambda x: ad.exp(x).sum(),
    "square": lambda x: ad.square(x).sum(),
    "norm": lambda x: ad.norm(x).sum(),
    "softmax": lambda x: (ad.softmax(x, axis=-1) * Tensor(X34)).sum(),
    "mean": lambda x: (ad.mean(x, axis=0) * Tensor(X34[0])).sum(),
    "transpose": lambda x: (ad.transpose(x) @ Tensor(X34)).sum(),
    "concat": lambda x: (ad.concat([x, x * 2.0], axis=-1) * Tensor(np.hstack([X34, X34]))).sum(),
    "take": lambda x: (ad.take(x, (np.array([0, 2, 2]), np.array([1, 3, 3]))) * Tensor([1.0, 2.0, 3.0])).sum(),
    "gather_rows": lambda x: (ad.gather_rows(x, np.array([2, 0, 2])) * Tensor(X34)).sum(),
    "segment_sum": lambda x: (ad.segment_sum(x, np.array([1, 0, 1]), 2) * Tensor(X34[:2])).sum(),
    "segment_softmax": lambda x: (ad.segment_softmax(ad.reshape(x, (12,)), np.repeat([0, 1, 2], 4), 3)
                                  * Tensor(X34.reshape(-1))).sum(),
    "matmul": lambda x: ad.square(ad.matmul(x, Tensor(X34.T))).sum(),
}
POSITIVE = {
    "sqrt": lambda x: ad.sqrt(x).sum(),
    "log": lambda x: ad.log(x).sum(),
    "div": lambda x: (Tensor(X34) / x).sum(),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_grad_check_primitives(name):
    res = grad_check(UNARY[name], X34)
    assert res.passed, (name, res.max_rel_error)


@pytest.mark.parametrize("name", sorted(POSITIVE))
def test_grad_check_positive_domain(name):
    res = grad_check(POSITIVE[name], POS)
    assert res.passed, (name, res.max_rel_error)


def test_grad_check_atanh_interior():
    assert grad_check(lambda x: ad.atanh(x).sum(), RNG.uniform(-0.9, 0.9, size=5)).passed


def test_grad_check_sum_of_squares():
    assert grad_check(lambda x: (x * x).sum(), RNG.normal(size=6), tol=1e-6).passed


def test_grad_check_reports_non_finite():
    res = grad_check(lambda x: ad.log(x - 10.0, floor=0.0).sum() / Tensor(0.0), np.ones(3))
    assert not res.passed
    assert res.max_rel_error == float("inf")


def test_grad_check_poincare_inner_of_exp0():
    space = PoincareSpace()
    b = Tensor(RNG.normal(size=(1, 4)) * 0.4)

    def f(a):
        return space.score(space.exp0(ad.reshape(a, (1, 4))), space.exp0(b)).sum()

    res = grad_check(f, RNG.normal(size=4) * 0.4, step=1e-6)
    assert res.passed, res.max_rel_error


def test_grad_check_detects_wrong_gradient():
    def bad(x):
        # value of sum(x^2) but recorded gradient of sum(x)
        out = ad._emit("bad", np.sum(x.value ** 2), (x,), lambda g: (g * np.ones_like(x.value),))
        return out

    assert not grad_check(bad, np.array([0.3, 2.0])).passed


# ---------------------------------------------------------------- properties

shapes = st.tuples(st.integers(1, 4), st.integers(1, 4))


@settings(max_examples=60, deadline=None)
@given(shapes.flatmap(lambda s: st.tuples(
    arrays(np.float64, s, elements=st.floats(-3, 3)),
    arrays(np.float64, s[1:], elements=st.floats(-3, 3)))))
def test_broadcast_mul_gradients(pair):
    a, b = pair
    ga, gb = grads_of(lambda x, y: (x * y).sum(), a, b)
    np.testing.assert_allclose(ga, np.broadcast_to(b, a.shape))
    np.testing.assert_allclose(gb, a.sum(axis=0))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-20, 20)))
def test_softmax_sums_to_one(x):
    assert ad.softmax(Tensor(x)).value.sum() == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-2, 2)))
def test_linear_ops_exact_gradient(x):
    W = np.arange(6.0).reshape(3, 2)
    (g,) = grads_of(lambda t: ad.matmul(t, Tensor(W)).sum(), x)
    np.testing.assert_allclose(g, np.tile(W.sum(axis=1), (2, 1)))
