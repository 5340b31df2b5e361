import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _oracles import central_diff, rel_err
from dpwmixer import tensor as tn
from dpwmixer.errors import ContractError, DimensionError, DivergenceError
from dpwmixer.tensor import Tape, Tensor


def grad_of(fn, *arrays):
    """Tape gradients of scalar ``fn(*tensors)`` for every input array."""
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = fn(*ts)
    tape.backward(loss)
    return [t.grad for t in ts]


def numeric(fn, arrays, k):
    def f(xk):
        args = [Tensor(a) for a in arrays]
        args[k] = Tensor(xk)
        return float(fn(*args).data)

    return central_diff(f, arrays[k].copy())


def weighted(op, shape, seed=0):
    """``sum(op(x) * r)`` with fixed random ``r`` so that every output element matters."""
    r = np.random.default_rng(seed).standard_normal(shape)
    return lambda *ts: tn.sum_(tn.mul(op(*ts), Tensor(r)))


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity_and_direct():
    out = tn.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3], [4]]))
    np.testing.assert_array_equal(out.data, [[3], [4]])
    np.testing.assert_array_equal(tn.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data, [[11]])


def test_matmul_gradient_matches_central_differences():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((3, 2)), rng.standard_normal((2, 4))
    fn = lambda x, y: tn.sum_(tn.matmul(x, y))  # noqa: E731
    ga, gb = grad_of(fn, a, b)
    assert rel_err(ga, numeric(fn, [a, b], 0)) <= 1e-6
    assert rel_err(gb, numeric(fn, [a, b], 1)) <= 1e-6


def test_batched_matmul_gradients():
    rng = np.random.default_rng(2)
    a, w = rng.standard_normal((2, 3, 4, 5)), rng.standard_normal((5, 6))
    fn = weighted(tn.matmul, (2, 3, 4, 6))
    ga, gw = grad_of(fn, a, w)
    assert rel_err(ga, numeric(fn, [a, w], 0)) <= 1e-6
    assert rel_err(gw, numeric(fn, [a, w], 1)) <= 1e-6


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        tn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


# ---------------------------------------------------------------------------
# elementwise, reductions, shape ops


def test_broadcast_add_mul_gradients():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((3,))
    for op in (tn.add, tn.sub, tn.mul):
        fn = weighted(op, (4, 3))
        ga, gb = grad_of(fn, a, b)
        assert ga.shape == a.shape and gb.shape == b.shape
        assert rel_err(gb, numeric(fn, [a, b], 1)) <= 1e-6
        assert rel_err(ga, numeric(fn, [a, b], 0)) <= 1e-6


def test_incompatible_broadcast_rejected():
    with pytest.raises(DimensionError):
        tn.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_sum_gradient_is_all_ones():
    (g,) = grad_of(lambda x: tn.sum_(x), np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(g, np.ones((2, 3)))


def test_loss_sum_of_w_and_quadratic():
    (g,) = grad_of(lambda w: tn.sum_(w), np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(g, [1, 1, 1])
    (g,) = grad_of(lambda w: tn.sum_(w * w), np.array([1.0, -2.0]))
    np.testing.assert_array_equal(g, [2.0, -4.0])


def test_mean_and_axis_sum_gradients():
    x = np.random.default_rng(4).standard_normal((3, 4))
    for fn in (lambda t: tn.mean(t), weighted(lambda t: tn.sum_(t, axis=0), (4,)),
               weighted(lambda t: tn.mean(t, axis=1, keepdims=True), (3, 1))):
        (g,) = grad_of(fn, x)
        assert rel_err(g, numeric(fn, [x], 0)) <= 1e-6


def test_reshape_is_row_major():
    np.testing.assert_array_equal(tn.reshape(Tensor([1, 2, 3, 4]), (2, 2)).data, [[1, 2], [3, 4]])
    with pytest.raises(DimensionError):
        tn.reshape(Tensor([1, 2, 3]), (2, 2))


def test_pad_replicate_tail():
    np.testing.assert_array_equal(tn.pad_replicate_tail(Tensor([5, 7]), 4).data, [5, 7, 7, 7])
    with pytest.raises(DimensionError):
        tn.pad_replicate_tail(Tensor([1, 2, 3]), 2)


def test_shape_op_gradients():
    x = np.random.default_rng(5).standard_normal((2, 3, 5))
    cases = [
        weighted(lambda t: tn.transpose(t, (2, 0, 1)), (5, 2, 3)),
        weighted(lambda t: tn.reshape(t, (6, 5)), (6, 5)),
        weighted(lambda t: tn.slice_(t, 2, 1, 4), (2, 3, 3)),
        weighted(lambda t: tn.pad_replicate_tail(t, 8, axis=-1), (2, 3, 8)),
        weighted(lambda t: tn.concat([t, tn.mul_scalar(t, 2.0)], axis=1), (2, 6, 5)),
    ]
    for fn in cases:
        (g,) = grad_of(fn, x)
        assert rel_err(g, numeric(fn, [x], 0)) <= 1e-6


def test_slice_out_of_range():
    with pytest.raises(DimensionError):
        tn.slice_(Tensor(np.ones(4)), 0, 2, 6)


# ---------------------------------------------------------------------------
# layer norm, gelu, softmax


def test_layer_norm_examples():
    out = tn.layer_norm(Tensor([2.0, 2.0, 2.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, [0, 0, 0])
    out = tn.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-5)
    expected = 1.0 / math.sqrt(1.0 + 1e-5)
    np.testing.assert_allclose(out.data, [-expected, expected], rtol=0, atol=1e-15)
    assert abs(out.data[1]) < 1.0


def test_layer_norm_gradient():
    rng = np.random.default_rng(6)
    x, g, b = rng.standard_normal((4, 8)), rng.standard_normal(8), rng.standard_normal(8)
    fn = weighted(lambda *t: tn.layer_norm(*t), (4, 8))
    grads = grad_of(fn, x, g, b)
    for k in range(3):
        assert rel_err(grads[k], numeric(fn, [x, g, b], k)) <= 1e-6


def test_gelu_values_and_gradient():
    assert tn.gelu(Tensor([0.0])).data[0] == 0.0
    assert 9.999 <= tn.gelu(Tensor([10.0])).data[0] <= 10.0
    x = np.array([-2.0, -0.5, 0.5, 2.0])
    fn = lambda t: tn.sum_(tn.gelu(t))  # noqa: E731
    (g,) = grad_of(fn, x)
    assert rel_err(g, numeric(fn, [x], 0)) <= 1e-6


def test_gelu_matches_tanh_formula():
    x = np.linspace(-4, 4, 41)
    ref = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(tn.gelu(Tensor(x)).data, ref, rtol=1e-13, atol=1e-15)


def test_softmax_examples():
    np.testing.assert_allclose(tn.softmax(Tensor(np.zeros(4))).data, [0.25] * 4, atol=1e-15)
    np.testing.assert_allclose(tn.softmax(Tensor([math.log(2), 0.0])).data, [2 / 3, 1 / 3], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-30, 30)), st.floats(-50, 50))
def test_softmax_shift_invariant(x, c):
    a = tn.softmax(Tensor(x)).data
    b = tn.softmax(Tensor(x + c)).data
    assert np.max(np.abs(a - b)) <= 1e-12
    assert abs(a.sum() - 1.0) <= 1e-12 and np.all(a >= 0)


def test_softmax_gradient_axis0():
    x = np.random.default_rng(7).standard_normal((4, 3))
    fn = weighted(lambda t: tn.softmax(t, axis=0), (4, 3))
    (g,) = grad_of(fn, x)
    assert rel_err(g, numeric(fn, [x], 0)) <= 1e-6


# ---------------------------------------------------------------------------
# tape semantics


def test_no_recording_without_tape_or_grad():
    a = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        tn.mul(Tensor([1.0, 1.0]), Tensor([2.0, 2.0]))
        assert len(tape) == 0
        tn.mul(a, a)
        assert len(tape) == 1


def test_backward_requires_scalar_on_tape():
    a = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        v = a * a
    with pytest.raises(ContractError):
        tape.backward(v)
    with pytest.raises(ContractError):
        tape.backward(tn.sum_(Tensor([1.0]) * Tensor([2.0])))


def test_gradient_accumulates_for_reused_leaf():
    w = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        loss = tn.sum_(tn.add(tn.mul(w, w), w))
    tape.backward(loss)
    np.testing.assert_array_equal(w.grad, [7.0])


def test_debug_mode_flags_non_finite():
    tn.set_debug(True)
    try:
        with pytest.raises(DivergenceError), np.errstate(over="ignore"):
            tn.mul_scalar(Tensor([1e308]), 10.0)
    finally:
        tn.set_debug(False)
