import math
import threading
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sern.numerics import (
    ComputeGraph,
    ContractError,
    ShapeError,
    Tensor,
    affine,
    backward,
    concat,
    grad_check,
    index_select,
    log,
    matmul,
    mul,
    sigmoid,
    softmax,
    stack,
    sum_all,
    take,
    tanh_act,
    zero_grad,
)


def param(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def probe(out: Tensor, rng) -> Tensor:
    """Scalar readout with random weights so no gradient component cancels."""
    r = Tensor(rng.standard_normal(out.shape))
    return sum_all(mul(out, r))


# -- forward values ----------------------------------------------------------------


class TestSigmoid:
    def test_symmetry_point(self):
        assert sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_log_three(self):
        assert sigmoid(Tensor([math.log(3.0)])).data[0] == pytest.approx(0.75, abs=1e-15)

    @given(st.floats(-700, 700))
    def test_reflection(self, x):
        y = sigmoid(Tensor([x, -x])).data
        assert y.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.all((y >= 0) & (y <= 1))

    def test_saturates_without_nan(self):
        y = sigmoid(Tensor([-1e4, 1e4, -800.0, 800.0])).data
        assert np.all(np.isfinite(y))
        assert y[0] == 0.0 and y[1] == 1.0


class TestTanh:
    def test_odd_at_zero(self):
        assert tanh_act(Tensor([0.0])).data[0] == 0.0

    def test_log_three(self):
        assert tanh_act(Tensor([math.log(3.0)])).data[0] == pytest.approx(0.8, abs=1e-15)

    @pytest.mark.parametrize("x", [12.0, 15.0, 50.0, 1e4])
    def test_saturation(self, x):
        assert 1.0 - tanh_act(Tensor([x])).data[0] < 1e-9


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)

    def test_logs_of_counts(self):
        y = softmax(Tensor(np.log([1.0, 2.0, 3.0]))).data
        np.testing.assert_allclose(y, [1 / 6, 1 / 3, 1 / 2], atol=1e-15)

    @given(
        arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)),
        st.floats(-1e3, 1e3),
    )
    def test_shift_invariance(self, x, c):
        np.testing.assert_allclose(softmax(Tensor(x + c)).data, softmax(Tensor(x)).data, atol=1e-12)

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e4, 1e4)))
    def test_simplex_for_large_inputs(self, x):
        y = softmax(Tensor(x)).data
        assert np.all(y >= 0)
        assert abs(y.sum() - 1.0) <= 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            softmax(Tensor(np.zeros(0)))

    def test_matrix_rejected(self):
        with pytest.raises(ShapeError):
            softmax(Tensor(np.zeros((2, 2))))


class TestAffine:
    def test_identity(self, rng):
        x = rng.standard_normal(4)
        y = affine(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data
        np.testing.assert_array_equal(y, x)

    def test_zero_weight_returns_bias(self, rng):
        v = rng.standard_normal(3)
        y = affine(Tensor(rng.standard_normal(5)), Tensor(np.zeros((3, 5))), Tensor(v)).data
        np.testing.assert_array_equal(y, v)

    def test_hand_arithmetic(self):
        y = affine(Tensor([1.0, 1.0]), Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([0.0, 0.0])).data
        np.testing.assert_array_equal(y, [3.0, 7.0])

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2,\)|\(2,\).*\(2, 3\)"):
            affine(Tensor([1.0, 2.0]), Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))

    def test_extra_pairs_add_products(self, rng):
        x, h = rng.standard_normal(3), rng.standard_normal(2)
        W, U, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 2)), rng.standard_normal(2)
        y = affine(Tensor(x), Tensor(W), Tensor(b), (Tensor(h), Tensor(U))).data
        np.testing.assert_allclose(y, W @ x + U @ h + b, atol=1e-14)


class TestShapeChecks:
    def test_mul_mismatch(self):
        with pytest.raises(ShapeError):
            mul(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_matmul_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            index_select(param(np.zeros((3, 2))), [3])


# -- backward ----------------------------------------------------------------------


class TestBackward:
    def test_sum_of_squares(self):
        x = param([1.0, 2.0])
        backward(sum_all(mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_sigmoid_at_zero_weight(self):
        w = param([0.0, 0.0, 0.0])
        x = np.array([1.0, -2.0, 0.5])
        backward(sigmoid(matmul(w, Tensor(x))))
        np.testing.assert_allclose(w.grad, 0.25 * x, atol=1e-15)

    def test_unreachable_leaf_gets_zero(self):
        a, b = param([1.0]), param([5.0])
        backward(sum_all(mul(a, a)))
        np.testing.assert_array_equal(b.grad, [0.0])

    def test_non_scalar_loss_is_contract_error(self):
        with pytest.raises(ContractError):
            backward(mul(param([1.0, 2.0]), param([3.0, 4.0])))

    def test_shared_parameter_accumulates(self):
        w = param([2.0])
        y = mul(w, w) + mul(w, Tensor([3.0]))  # w^2 + 3w
        backward(sum_all(y))
        np.testing.assert_allclose(w.grad, [2 * 2.0 + 3.0])

    def test_grads_accumulate_until_zeroed(self):
        w = param([1.0, 1.0])
        for _ in range(2):
            backward(sum_all(mul(w, Tensor([1.0, 2.0]))))
        np.testing.assert_array_equal(w.grad, [2.0, 4.0])
        zero_grad([w])
        np.testing.assert_array_equal(w.grad, [0.0, 0.0])

    def test_sum_of_losses_is_sum_of_grads(self, rng):
        W = param(rng.standard_normal((3, 4)))
        x1, x2 = Tensor(rng.standard_normal(4)), Tensor(rng.standard_normal(4))
        b = Tensor(np.zeros(3))

        def loss(x):
            return sum_all(tanh_act(affine(x, W, b)))

        backward(loss(x1))
        g1 = W.grad.copy()
        zero_grad([W])
        backward(loss(x2))
        g2 = W.grad.copy()
        zero_grad([W])
        backward(loss(x1) + loss(x2))
        np.testing.assert_allclose(W.grad, g1 + g2, rtol=0, atol=1e-14)

    def test_each_node_visited_once(self):
        from sern.numerics import Primitive, apply

        calls = []

        def square_bwd(g, out, a):
            calls.append(1)
            return (2.0 * g * a,)

        square = Primitive("square", lambda a: a * a, square_bwd)
        x = param([1.0, 2.0])
        y = apply(square, x)
        backward(sum_all(y + y + y))
        assert len(calls) == 1
        np.testing.assert_array_equal(x.grad, [6.0, 12.0])

    def test_deep_chain_does_not_recurse(self):
        x = param([0.1])
        y = x
        for _ in range(5000):
            y = mul(y, Tensor([1.0]))
        backward(sum_all(y))
        assert x.grad[0] == 1.0

    def test_index_select_gradient_is_scatter_add(self, rng):
        W = param(rng.standard_normal((6, 3)))
        rows = index_select(W, [5, 2, 5])
        backward(sum_all(rows))
        expected = np.zeros((6, 3))
        expected[5] = 2.0
        expected[2] = 1.0
        np.testing.assert_array_equal(W.grad, expected)

    def test_log_clamp_has_zero_gradient_below_floor(self):
        p = param([0.0, 0.5])
        out = log(p, floor=1e-12)
        np.testing.assert_allclose(out.data, [math.log(1e-12), math.log(0.5)])
        backward(sum_all(out))
        np.testing.assert_allclose(p.grad, [0.0, 2.0])


# -- graph record ------------------------------------------------------------------


class TestComputeGraph:
    def test_records_ops_in_order(self):
        x = param([0.5, -0.5])
        W, b = param(np.eye(2)), param(np.zeros(2))
        with ComputeGraph() as g:
            softmax(sigmoid(affine(x, W, b)))
        assert g.ops() == ["affine", "sigmoid", "softmax"]

    def test_replay_is_bit_identical(self, rng):
        x = Tensor(rng.standard_normal(4))
        W, b = param(rng.standard_normal((3, 4))), param(rng.standard_normal(3))
        with ComputeGraph() as g:
            y = softmax(tanh_act(affine(x, W, b)))
            z = concat([y, sigmoid(y)])
        before = [n.data.copy() for n in g.nodes]
        after = g.replay()
        for a, c in zip(before, after):
            assert np.array_equal(a, c)
        assert np.array_equal(z.data, after[-1])

    def test_replay_tracks_parameter_changes(self):
        w = param([1.0])
        with ComputeGraph() as g:
            y = mul(w, w)
        w.data[0] = 3.0
        g.replay()
        assert y.data[0] == 9.0

    def test_graphs_are_thread_local(self):
        seen = {}

        def worker(name):
            with ComputeGraph() as g:
                for _ in range(50):
                    sigmoid(Tensor([0.0]))
            seen[name] = len(g)

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert seen == {i: 50 for i in range(4)}


# -- grad_check harness ------------------------------------------------------------


class TestGradCheck:
    def test_quadratic(self, rng):
        w = param(rng.standard_normal(5))
        assert grad_check(lambda: sum_all(mul(w, w)), [w]) < 1e-9

    def test_doubled_gradient_is_caught(self, rng):
        from sern.numerics import Primitive, apply

        doubled = Primitive("bad_square", lambda a: a * a, lambda g, out, a: (4.0 * g * a,))
        w = param(rng.uniform(1.0, 2.0, 4))
        err = grad_check(lambda: sum_all(apply(doubled, w)), [w])
        # |4w - 2w| / max(1, 4w, 2w) = 0.5
        assert err == pytest.approx(0.5, abs=1e-6)

    def test_nondeterministic_forward_rejected(self):
        w = param([1.0])
        noise = np.random.default_rng(0)
        with pytest.raises(ContractError):
            grad_check(lambda: sum_all(mul(w, Tensor(noise.standard_normal(1)))), [w])

    def test_epsilon_must_be_positive(self):
        w = param([1.0])
        with pytest.raises(ContractError):
            grad_check(lambda: sum_all(w * w), [w], epsilon=0.0)


# -- gradient fidelity of the primitives (randomised suites) --------------------------

N_CASES = 100


def _cases(seed):
    rng = np.random.default_rng(seed)
    for _ in range(N_CASES):
        yield rng


@pytest.mark.parametrize(
    "name",
    ["sigmoid", "tanh", "softmax", "affine", "affine_pairs", "matmul", "concat", "stack", "take", "index_select", "log"],
)
def test_primitive_gradients(name):
    worst = 0.0
    for rng in _cases(zlib.crc32(name.encode())):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        if name == "sigmoid":
            x = param(rng.normal(0, 3, n))
            ps, f = [x], lambda: probe(sigmoid(x), np.random.default_rng(1))
        elif name == "tanh":
            x = param(rng.normal(0, 2, n))
            ps, f = [x], lambda: probe(tanh_act(x), np.random.default_rng(1))
        elif name == "softmax":
            x = param(rng.normal(0, 2, n))
            ps, f = [x], lambda: probe(softmax(x), np.random.default_rng(1))
        elif name == "affine":
            x, W, b = param(rng.standard_normal(m)), param(rng.standard_normal((n, m))), param(rng.standard_normal(n))
            ps, f = [x, W, b], lambda: probe(affine(x, W, b), np.random.default_rng(1))
        elif name == "affine_pairs":
            x, W, b = param(rng.standard_normal(m)), param(rng.standard_normal((n, m))), param(rng.standard_normal(n))
            h, U = param(rng.standard_normal(n)), param(rng.standard_normal((n, n)))
            ps, f = [x, W, b, h, U], lambda: probe(affine(x, W, b, (h, U)), np.random.default_rng(1))
        elif name == "matmul":
            A, v = param(rng.standard_normal((n, m))), param(rng.standard_normal(m))
            ps, f = [A, v], lambda: probe(matmul(A, v), np.random.default_rng(1))
        elif name == "concat":
            a, b = param(rng.standard_normal(n)), param(rng.standard_normal(m))
            ps, f = [a, b], lambda: probe(concat([a, b]), np.random.default_rng(1))
        elif name == "stack":
            a, b = param(rng.standard_normal(n)), param(rng.standard_normal(n))
            ps, f = [a, b], lambda: probe(stack([a, b, a]), np.random.default_rng(1))
        elif name == "take":
            a = param(rng.standard_normal((n, m)))
            i = int(rng.integers(0, n))
            ps, f = [a], lambda: probe(take(a, i), np.random.default_rng(1))
        elif name == "index_select":
            W = param(rng.standard_normal((n + 1, m)))
            ids = rng.integers(0, n + 1, size=3)
            ps, f = [W], lambda: probe(index_select(W, ids), np.random.default_rng(1))
        else:
            a = param(rng.uniform(0.1, 3.0, n))
            ps, f = [a], lambda: probe(log(a, 1e-12), np.random.default_rng(1))
        worst = max(worst, grad_check(f, ps))
    assert worst < 1e-6, worst
