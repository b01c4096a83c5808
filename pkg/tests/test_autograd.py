import math

import numpy as np
import pytest

from tata import autograd as ag
from tata.autograd import NumericError, ShapeError, Tensor


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = ag.matmul(Tensor(np.eye(2)), Tensor(a))
        assert np.array_equal(out.values, a)

    def test_hand_product(self):
        out = ag.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.values.tolist() == [[11.0]]

    def test_gradient_of_sum_is_ones_times_bt(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        ag.tensor_sum(ag.matmul(a, b)).backward()
        expected = np.ones((3, 2)) @ b.values.T
        assert np.allclose(a.grad, expected, atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ag.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestSoftmax:
    def test_symmetry(self):
        out = ag.softmax(Tensor([0.0, 0.0]))
        assert np.allclose(out.values, [0.5, 0.5], atol=1e-15)

    def test_stability_under_large_inputs(self):
        out = ag.softmax(Tensor([1000.0, 1000.0]))
        assert np.allclose(out.values, [0.5, 0.5], atol=1e-15)

    def test_hand_case(self):
        out = ag.softmax(Tensor([0.0, math.log(3.0)]))
        assert np.allclose(out.values, [0.25, 0.75], atol=1e-12)

    def test_rows_sum_to_one_and_bounded(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.normal(scale=5.0, size=(4, 7))
            y = ag.softmax(Tensor(x), axis=-1).values
            assert np.abs(y.sum(axis=-1) - 1.0).max() < 1e-12
            assert (y >= 0).all() and (y <= 1).all()

    def test_invalid_axis(self):
        with pytest.raises(ShapeError):
            ag.softmax(Tensor([1.0, 2.0]), axis=3)


class TestLayerNorm:
    def test_constant_row_normalizes_to_zero(self):
        out = ag.layer_norm(Tensor([5.0, 5.0, 5.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        assert np.allclose(out.values, 0.0, atol=1e-10)

    def test_hand_case_population_variance(self):
        out = ag.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        assert np.allclose(out.values, [-1.0, 1.0], atol=1e-4)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        gain = Tensor(rng.normal(size=5))
        bias = Tensor(rng.normal(size=5))
        weights = Tensor(rng.normal(size=(3, 5)))

        def f(x):
            return ag.tensor_sum(ag.mul(ag.layer_norm(x, gain, bias), weights))

        err = ag.grad_check(f, Tensor(rng.normal(size=(3, 5))))
        assert err < 1e-4


class TestDropout:
    def test_eval_is_exact_identity(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        assert ag.dropout(x, 0.5, training=False) is x

    def test_zero_rate_is_identity(self):
        x = Tensor(np.arange(4.0))
        assert ag.dropout(x, 0.0, training=True, rng=np.random.default_rng(0)) is x

    def test_survivor_fraction(self):
        rng = np.random.default_rng(3)
        x = Tensor(np.ones(100_000))
        out = ag.dropout(x, 0.5, training=True, rng=rng)
        fraction = np.count_nonzero(out.values) / x.size
        assert 0.49 <= fraction <= 0.51

    def test_survivors_scaled(self):
        out = ag.dropout(Tensor(np.ones(1000)), 0.25, training=True,
                         rng=np.random.default_rng(4))
        kept = out.values[out.values != 0]
        assert np.allclose(kept, 1.0 / 0.75)

    @pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
    def test_invalid_rate(self, p):
        with pytest.raises(ValueError):
            ag.dropout(Tensor([1.0]), p, training=True, rng=np.random.default_rng(0))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
        ag.tensor_sum(x).backward()
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_dot_hand_calculus(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        ag.dot(x, x).backward()
        assert np.allclose(x.grad, [2.0, 4.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            ag.mul(x, x).backward()

    def test_repeated_backward_accumulates(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = ag.dot(x, x)
        loss.backward()
        loss.backward()
        assert np.allclose(x.grad, [4.0, 8.0])

    def test_backward_after_zero_grad_is_idempotent(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)

        def run():
            x.zero_grad()
            w.zero_grad()
            ag.tensor_sum(ag.gelu(ag.matmul(x, w))).backward()
            return x.grad.copy(), w.grad.copy()

        gx1, gw1 = run()
        gx2, gw2 = run()
        assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


class TestFiniteChecks:
    def test_nan_raises_when_enabled(self):
        with ag.finite_checks(True):
            with pytest.raises(NumericError, match="log"):
                ag.log(Tensor([-1.0]))

    def test_disabled_checks_pass_through(self):
        with ag.finite_checks(False):
            out = ag.log(Tensor([-1.0]))
            assert np.isnan(out.values).all()


class TestGradCheckSuite:
    """Every kernel passes the finite-difference oracle on >= 10 seeds."""

    def test_linear_function_is_exact(self):
        err = ag.grad_check(lambda x: ag.tensor_sum(x), Tensor(np.arange(5.0)))
        assert err < 1e-10

    def test_softmax_cross_entropy(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            logits = Tensor(rng.normal(size=(2, 3)))
            onehot = np.zeros((2, 3))
            onehot[[0, 1], [rng.integers(3), rng.integers(3)]] = 1.0

            def f(l):
                probs = ag.clip_min(ag.softmax(l, axis=-1), 1e-12)
                return ag.scale(ag.tensor_sum(ag.mul(ag.log(probs), Tensor(onehot))), -0.5)

            assert ag.grad_check(f, logits) < 1e-4

    # Weight constants bind at lambda creation (default args), so every
    # finite-difference probe evaluates the same function.
    @pytest.mark.parametrize("name,builder", [
        ("add", lambda r: (lambda a, b: ag.tensor_sum(ag.add(a, b)),
                           [Tensor(r.normal(size=(3, 4))), Tensor(r.normal(size=(3, 4)))])),
        ("add_broadcast", lambda r: (
            lambda a, b, w=Tensor(r.normal(size=(3, 4))): ag.tensor_sum(ag.mul(ag.add(a, b), w)),
            [Tensor(r.normal(size=(3, 4))), Tensor(r.normal(size=4))])),
        ("sub", lambda r: (
            lambda a, b, w=Tensor(r.normal(size=(2, 5))): ag.tensor_sum(ag.mul(ag.sub(a, b), w)),
            [Tensor(r.normal(size=(2, 5))), Tensor(r.normal(size=(2, 5)))])),
        ("mul", lambda r: (lambda a, b: ag.tensor_sum(ag.mul(a, b)),
                           [Tensor(r.normal(size=(4, 2))), Tensor(r.normal(size=(4, 2)))])),
        ("div", lambda r: (lambda a, b: ag.tensor_sum(ag.div(a, b)),
                           [Tensor(r.normal(size=(3, 3))), Tensor(r.normal(size=(3, 3)) + 3.0)])),
        ("scale", lambda r: (lambda x: ag.tensor_sum(ag.scale(x, -2.5)),
                             [Tensor(r.normal(size=(3, 2)))])),
        ("matmul", lambda r: (lambda a, b: ag.tensor_sum(ag.matmul(a, b)),
                              [Tensor(r.normal(size=(3, 4))), Tensor(r.normal(size=(4, 2)))])),
        ("matmul_batched", lambda r: (lambda a, b: ag.tensor_sum(ag.matmul(a, b)),
                                      [Tensor(r.normal(size=(2, 3, 4))), Tensor(r.normal(size=(4, 3)))])),
        ("softmax", lambda r: (
            lambda x, w=Tensor(r.normal(size=(3, 5))): ag.tensor_sum(ag.mul(ag.softmax(x, axis=-1), w)),
            [Tensor(r.normal(size=(3, 5)))])),
        ("gelu", lambda r: (lambda x: ag.tensor_sum(ag.gelu(x)), [Tensor(r.normal(size=7))])),
        ("relu", lambda r: (lambda x: ag.tensor_sum(ag.relu(x)), [Tensor(r.normal(size=9) + 0.2)])),
        ("exp", lambda r: (lambda x: ag.tensor_sum(ag.exp(x)), [Tensor(r.normal(size=5))])),
        ("log", lambda r: (lambda x: ag.tensor_sum(ag.log(x)), [Tensor(r.random(5) + 0.5)])),
        ("sqrt", lambda r: (lambda x: ag.tensor_sum(ag.sqrt(x)), [Tensor(r.random(5) + 0.5)])),
        ("pow", lambda r: (lambda x: ag.tensor_sum(ag.pow_const(x, 3.0)), [Tensor(r.normal(size=5))])),
        ("concat", lambda r: (
            lambda a, b, w=Tensor(r.normal(size=(2, 7))): ag.tensor_sum(ag.mul(ag.concat([a, b], axis=-1), w)),
            [Tensor(r.normal(size=(2, 3))), Tensor(r.normal(size=(2, 4)))])),
        ("mean", lambda r: (lambda x: ag.tensor_mean(x), [Tensor(r.normal(size=(4, 3)))])),
        ("sum_axis", lambda r: (
            lambda x, w=Tensor(r.normal(size=3)): ag.tensor_sum(ag.mul(ag.tensor_sum(x, axis=0), w)),
            [Tensor(r.normal(size=(4, 3)))])),
        ("reshape", lambda r: (
            lambda x, w=Tensor(r.normal(size=6)): ag.tensor_sum(ag.mul(ag.reshape(x, (6,)), w)),
            [Tensor(r.normal(size=(2, 3)))])),
        ("transpose", lambda r: (
            lambda x, w=Tensor(r.normal(size=(3, 2))): ag.tensor_sum(ag.mul(ag.transpose(x, (1, 0)), w)),
            [Tensor(r.normal(size=(2, 3)))])),
        ("take", lambda r: (
            lambda x, w=Tensor(r.normal(size=(2, 4))): ag.tensor_sum(ag.mul(ag.take(x, 1, axis=1), w)),
            [Tensor(r.normal(size=(2, 3, 4)))])),
        ("embedding", lambda r: (
            lambda t, w=Tensor(r.normal(size=(2, 2, 3))): ag.tensor_sum(
                ag.mul(ag.embedding(t, np.array([[0, 2], [2, 1]])), w)),
            [Tensor(r.normal(size=(4, 3)))])),
        ("squared_distance", lambda r: (lambda a, b: ag.tensor_sum(ag.squared_distance(a, b)),
                                        [Tensor(r.normal(size=(3, 4))), Tensor(r.normal(size=(3, 4)))])),
        ("dot", lambda r: (lambda a, b: ag.dot(a, b),
                           [Tensor(r.normal(size=6)), Tensor(r.normal(size=6))])),
        ("l2_norm", lambda r: (lambda x: ag.tensor_sum(ag.l2_norm(x, axis=-1)),
                               [Tensor(r.normal(size=(3, 4)) + 2.0)])),
        ("layer_norm", lambda r: (
            lambda x, g=Tensor(r.normal(size=4)), b=Tensor(r.normal(size=4)),
            w=Tensor(r.normal(size=(3, 4))): ag.tensor_sum(ag.mul(ag.layer_norm(x, g, b), w)),
            [Tensor(r.normal(size=(3, 4)))])),
        ("dropout", lambda r: (lambda x: ag.tensor_sum(
            ag.dropout(x, 0.4, training=True, rng=np.random.default_rng(99))),
            [Tensor(r.normal(size=(4, 4)))])),
    ])
    def test_kernel_grad_check_ten_seeds(self, name, builder):
        composite = name in ("layer_norm", "gelu")
        tol = 1e-3 if composite else 1e-4
        for seed in range(10):
            rng = np.random.default_rng(seed * 7 + 1)
            f, xs = builder(rng)
            assert ag.grad_check(f, xs) < tol, f"{name} failed at seed {seed}"


class TestTensorInvariants:
    def test_shape_matches_value_count(self):
        t = Tensor(np.zeros((3, 5)))
        assert int(np.prod(t.shape)) == t.size

    def test_grad_present_iff_requires_grad(self):
        assert Tensor([1.0], requires_grad=True).grad is not None
        assert Tensor([1.0]).grad is None

    def test_nonfinite_constructor_rejected(self):
        with pytest.raises(NumericError):
            Tensor([np.inf])
