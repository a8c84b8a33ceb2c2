import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modt import autodiff as ad
from modt.errors import ContractViolation, ShapeError


def fd_check(build, shapes, h=1e-3, seed=0, floor=1e-3):
    """Compare tape gradients of scalar build(tensors) against central
    differences; returns the worst relative error over all inputs."""
    rng = np.random.default_rng(seed)
    params = {k: rng.normal(size=s) for k, s in shapes.items()}

    def f(ps):
        with ad.Tape():
            ts = {k: ad.Tensor(v, requires_grad=True) for k, v in ps.items()}
            return float(build(ts).values)

    fd = ad.finite_diff_grad(f, params, h)
    with ad.Tape():
        ts = {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}
        out = build(ts)
        ad.backward(out)
    return max(float(ad.relative_error(ts[k].grad, fd[k], floor=floor).max())
               for k in shapes)


class TestMatmul:
    def test_identity(self):
        a = ad.as_tensor(np.eye(2))
        b = ad.as_tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ad.matmul(a, b).values, b.values)

    def test_hand_computed(self):
        a = ad.as_tensor([[1.0, 0.0], [0.0, 0.0]])
        b = ad.as_tensor([[5.0], [7.0]])
        np.testing.assert_array_equal(ad.matmul(a, b).values, [[5.0], [0.0]])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        c = ad.as_tensor(rng.normal(size=(3, 3)))
        err = fd_check(lambda t: ad.sum_all(ad.mul(ad.matmul(t["a"], t["b"]), c)),
                       {"a": (3, 3), "b": (3, 3)}, floor=1e-6)
        assert err < 1e-6

    def test_shape_mismatch_names_both_shapes(self):
        a = ad.as_tensor(np.zeros((2, 3)))
        b = ad.as_tensor(np.zeros((4, 2)))
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            ad.matmul(a, b)


class TestSoftmax:
    def test_symmetry(self):
        out = ad.softmax_lastdim(ad.as_tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.values, [0.5, 0.5], atol=1e-12)

    def test_stability_no_overflow(self):
        out = ad.softmax_lastdim(ad.as_tensor([1000.0, 0.0])).values
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        c = ad.as_tensor(rng.normal(size=(1, 5)))
        err = fd_check(
            lambda t: ad.sum_all(ad.mul(ad.softmax_lastdim(t["x"]), c)),
            {"x": (1, 5)}, h=1e-4, floor=1e-6)
        assert err < 1e-6

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    def test_rows_sum_to_one_and_nonnegative(self, row):
        out = ad.softmax_lastdim(ad.as_tensor(np.array([row]))).values
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) < 1e-6


class TestLayerNorm:
    def test_constant_input_returns_bias(self):
        x = ad.as_tensor(np.full((1, 3), 7.0))
        g = ad.as_tensor(np.full(3, 2.0))
        b = ad.as_tensor(np.array([1.0, 2.0, 3.0]))
        out = ad.layer_norm(x, g, b).values
        np.testing.assert_allclose(out, [[1.0, 2.0, 3.0]], atol=1e-9)

    def test_zero_mean_input(self):
        x = ad.as_tensor(np.array([[1.0, -1.0]]))
        g = ad.as_tensor(np.ones(2))
        b = ad.as_tensor(np.zeros(2))
        out = ad.layer_norm(x, g, b, eps=1e-5).values
        np.testing.assert_allclose(out, [[1.0, -1.0]], rtol=1e-5)
        expected = 1.0 / np.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(out[0, 0], expected, rtol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        c = ad.as_tensor(rng.normal(size=(3, 6)))
        err = fd_check(
            lambda t: ad.sum_all(ad.mul(ad.layer_norm(t["x"], t["g"], t["b"]), c)),
            {"x": (3, 6), "g": (6,), "b": (6,)}, h=1e-4)
        assert err < 1e-6


class TestBackward:
    def test_square_gradient(self):
        with ad.Tape():
            x = ad.Tensor(np.array(3.0), requires_grad=True)
            loss = ad.mul(x, x)
            ad.backward(loss)
        assert float(x.grad) == pytest.approx(6.0, abs=1e-12)

    def test_accumulation_two_uses(self):
        with ad.Tape():
            x = ad.Tensor(np.array(1.0), requires_grad=True)
            ad.backward(ad.add(x, x))
        assert float(x.grad) == 2.0

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=1, max_value=7))
    def test_accumulation_n_consumers(self, n):
        with ad.Tape():
            x = ad.Tensor(np.array(2.0), requires_grad=True)
            total = ad.scale(x, 1.0)
            for _ in range(n):
                total = ad.add(total, ad.mul(x, x))
            ad.backward(total)
        assert float(x.grad) == pytest.approx(1.0 + 4.0 * n, abs=1e-9)

    def test_non_scalar_raises_contract_violation(self):
        with ad.Tape():
            x = ad.Tensor(np.ones(3), requires_grad=True)
            y = ad.scale(x, 2.0)
            with pytest.raises(ContractViolation):
                ad.backward(y)

    def test_backward_outside_tape_raises(self):
        x = ad.Tensor(np.array(1.0), requires_grad=True)
        with pytest.raises(ContractViolation):
            ad.backward(x)

    def test_repeat_forward_backward_bitwise_identical(self):
        rng = np.random.default_rng(0)
        a0 = rng.normal(size=(4, 4))
        b0 = rng.normal(size=(4, 4))

        def run():
            with ad.Tape():
                a = ad.Tensor(a0.copy(), requires_grad=True)
                b = ad.Tensor(b0.copy(), requires_grad=True)
                y = ad.relu(ad.matmul(a, b))
                loss = ad.sum_all(ad.mul(y, y))
                ad.backward(loss)
            return float(loss.values), a.grad.copy(), b.grad.copy()

        l1, ga1, gb1 = run()
        l2, ga2, gb2 = run()
        assert l1 == l2
        assert np.array_equal(ga1, ga2) and np.array_equal(gb1, gb2)


class TestFiniteDiff:
    def test_quadratic(self):
        grads = ad.finite_diff_grad(
            lambda p: float(p["x"] ** 2), {"x": np.array(3.0)}, h=1e-3)
        assert abs(float(grads["x"]) - 6.0) < 1e-6

    def test_sine_at_zero(self):
        grads = ad.finite_diff_grad(
            lambda p: float(np.sin(p["x"])), {"x": np.array(0.0)}, h=1e-4)
        assert abs(float(grads["x"]) - 1.0) < 1e-8

    def test_two_layer_composite_agreement(self):
        rng = np.random.default_rng(9)
        c = ad.as_tensor(rng.normal(size=(2, 3)))

        def build(ts):
            h1 = ad.relu(ad.add(ad.matmul(ts["x"], ts["w1"]), ts["b1"]))
            h2 = ad.add(ad.matmul(h1, ts["w2"]), ts["b2"])
            return ad.sum_all(ad.mul(h2, c))

        err = fd_check(build, {"x": (2, 4), "w1": (4, 5), "b1": (5,),
                               "w2": (5, 3), "b2": (3,)}, h=1e-3)
        assert err < 1e-4


class TestMiscOps:
    def test_suffix_broadcast_add_gradients(self):
        err = fd_check(lambda t: ad.sum_all(ad.mul(ad.add(t["a"], t["b"]),
                                                   ad.as_tensor(np.arange(24.).reshape(2, 3, 4)))),
                       {"a": (2, 3, 4), "b": (4,)})
        assert err < 1e-6

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.add(ad.as_tensor(np.zeros((2, 3))), ad.as_tensor(np.zeros(2)))

    def test_clip_passthrough_gradient(self):
        with ad.Tape():
            x = ad.Tensor(np.array([-6.0, 0.0, 3.0]), requires_grad=True)
            y = ad.clip(x, -5.0, 2.0)
            ad.backward(ad.sum_all(y))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])
        np.testing.assert_array_equal(y.values, [-5.0, 0.0, 2.0])

    def test_dropout_eval_noop_and_seeded(self):
        x = ad.as_tensor(np.ones((4, 4)))
        assert ad.dropout(x, 0.0, None) is x
        m1 = ad.dropout(x, 0.5, np.random.default_rng(3)).values
        m2 = ad.dropout(x, 0.5, np.random.default_rng(3)).values
        assert np.array_equal(m1, m2)
        kept = m1[m1 > 0]
        np.testing.assert_allclose(kept, 2.0)

    def test_causal_softmax_exact_zero_upper_triangle(self):
        rng = np.random.default_rng(0)
        x = ad.as_tensor(rng.normal(size=(2, 5, 5)))
        y = ad.causal_softmax(x).values
        for i in range(5):
            assert np.all(y[:, i, i + 1:] == 0.0)
            np.testing.assert_allclose(y[:, i, :i + 1].sum(axis=-1), 1.0,
                                       atol=1e-6)

    def test_bce_with_logits_matches_reference(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(3, 4)) * 3
        y = (rng.random((3, 4)) > 0.5).astype(float)
        out = ad.bce_with_logits(ad.as_tensor(z), y).values
        p = 1.0 / (1.0 + np.exp(-z))
        ref = -(y * np.log(p) + (1 - y) * np.log(1 - p))
        np.testing.assert_allclose(out, ref, rtol=1e-10)


def test_independent_tapes_on_separate_threads():
    import threading

    results = {}

    def worker(tag, seed):
        rng = np.random.default_rng(seed)
        a0 = rng.normal(size=(8, 8))
        for _ in range(5):
            with ad.Tape():
                a = ad.Tensor(a0.copy(), requires_grad=True)
                y = ad.relu(ad.matmul(a, a))
                ad.backward(ad.sum_all(ad.mul(y, y)))
            results.setdefault(tag, []).append(a.grad.copy())

    threads = [threading.Thread(target=worker, args=(i, i)) for i in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for tag, grads in results.items():
        for g in grads[1:]:
            assert np.array_equal(g, grads[0])
