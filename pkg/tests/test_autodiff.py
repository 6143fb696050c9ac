import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jointpred import autodiff as ad
from jointpred.autodiff import Tensor
from jointpred.gradcheck import OP_CASES, check_ops


def test_softmax_uniform():
    out = ad.forward_op("softmax", Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_is_stable_for_large_inputs():
    out = ad.softmax(Tensor([1000.0, 1000.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_layer_norm_of_constant_is_zero():
    out = ad.forward_op("layer_norm", Tensor(np.full(5, 3.7)))
    assert np.all(out.data == 0.0)


def test_smooth_l1_inner_branch():
    # 0.5 * 0.5**2 / 1
    assert ad.forward_op("smooth_l1", Tensor(0.5), Tensor(0.0)).item() == 0.125


def test_smooth_l1_outer_branch():
    assert ad.smooth_l1(Tensor(3.0), Tensor(0.0), 1.0).item() == 2.5


def test_backward_sum_gives_ones():
    x = Tensor(np.array([1.0, -2.0, 5.0]), requires_grad=True)
    ad.backward(ad.reduce_sum(x))
    assert x.grad.tolist() == [1.0, 1.0, 1.0]


def test_backward_sum_of_squares():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ad.backward(ad.reduce_sum(x * x))
    assert x.grad.tolist() == [2.0, 4.0]


def test_smooth_l1_gradient_zero_at_minimum():
    x = Tensor(np.array([0.7]), requires_grad=True)
    ad.backward(ad.reduce_sum(ad.smooth_l1(x, np.array([0.7]))))
    assert x.grad[0] == 0.0


def test_reused_tensor_accumulates():
    # f = sum(x*x) + 3*sum(x)  ->  df/dx = 2x + 3
    x = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
    y = ad.reduce_sum(x * x) + ad.reduce_sum(x) * 3.0
    ad.backward(y)
    np.testing.assert_array_equal(x.grad, 2 * x.data + 3)


def test_grad_buffers_accumulate_across_backward_calls():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ad.backward(ad.reduce_sum(x))
    ad.backward(ad.reduce_sum(x))
    assert x.grad.tolist() == [2.0, 2.0]


def test_backward_requires_scalar_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ad.ShapeError, match="scalar"):
        ad.backward(x * 2.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ad.ShapeError) as e:
        ad.forward_op("matmul", Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    msg = str(e.value)
    assert "matmul" in msg and "(2, 3)" in msg and "(4, 5)" in msg


def test_add_shape_error():
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_unknown_op():
    with pytest.raises(ValueError, match="unknown op"):
        ad.forward_op("conv3d", Tensor(1.0))


def test_min_index_breaks_ties_low():
    assert ad.forward_op("min_index", Tensor([[2.0, 1.0, 1.0]])).tolist() == [1]


def test_grad_check_linear_is_exact():
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert ad.grad_check(lambda t: ad.reduce_sum(t), x) <= 1e-9


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        ad.grad_check(lambda t: ad.reduce_sum(ad.log(t)), np.array([-1.0, 1.0]))


def test_grad_check_rejects_bad_step():
    with pytest.raises(ValueError):
        ad.grad_check(lambda t: ad.reduce_sum(t), np.ones(2), h=0.0)


def test_grad_check_skips_kinks_instead_of_reporting_them():
    # relu at exactly 0: the central difference straddles the kink
    res = ad.grad_check_detail(lambda t: ad.reduce_sum(ad.relu(t)), np.array([0.0, 1.0]))
    assert res.skipped == 1 and res.checked == 1 and res.max_error < 1e-9


def test_piece_trace_distinguishes_active_pieces():
    with ad.piece_trace() as a:
        ad.relu(Tensor([1.0, -1.0]))
    with ad.piece_trace() as b:
        ad.relu(Tensor([1.0, 1.0]))
    with ad.piece_trace() as c:
        ad.relu(Tensor([2.0, -3.0]))
    assert a != b and a == c


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_every_op_gradient(name):
    rep = check_ops(instances=3, seed=7)
    assert rep.results[f"op:{name}"] <= 1e-4
    assert rep.checked[f"op:{name}"] > 0


def test_getitem_advanced_index_accumulates_repeats():
    x = Tensor(np.arange(4.0), requires_grad=True)
    ad.backward(ad.reduce_sum(x[np.array([1, 1, 3])]))
    assert x.grad.tolist() == [0.0, 2.0, 0.0, 1.0]


def test_reduce_max_gradient_goes_to_first_max():
    x = Tensor(np.array([1.0, 3.0, 3.0]), requires_grad=True)
    ad.backward(ad.reduce_max(x, axis=0))
    assert x.grad.tolist() == [0.0, 1.0, 0.0]


def test_matmul_broadcasts_leading_dims():
    a = Tensor(np.random.default_rng(1).normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(np.random.default_rng(2).normal(size=(4, 5)), requires_grad=True)
    ad.backward(ad.reduce_sum(a @ b))
    np.testing.assert_allclose(b.grad, a.data.sum(axis=(0, 1))[:, None] * np.ones((1, 5)))


finite = st.floats(-50, 50, allow_nan=False, width=64)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_forward_ops_are_deterministic(x):
    for kind in ("softmax", "layer_norm", "relu", "exp", "reduce_sum", "reduce_mean"):
        a = ad.forward_op(kind, Tensor(x)).data
        b = ad.forward_op(kind, Tensor(x.copy())).data
        assert np.array_equal(a, b, equal_nan=True)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    s = ad.softmax(Tensor(x)).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(s >= 0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.floats(0.1, 3.0))
def test_smooth_l1_nonnegative_and_symmetric(d, beta):
    a = ad.smooth_l1(Tensor(d), Tensor(np.zeros_like(d)), beta).data
    b = ad.smooth_l1(Tensor(-d), Tensor(np.zeros_like(d)), beta).data
    assert np.all(a >= 0)
    np.testing.assert_array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(st.tuples(st.integers(1, 3), st.integers(1, 4)), st.booleans())
def test_broadcast_add_gradient_sums_over_broadcast_axis(shape, row):
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=shape), requires_grad=True)
    bshape = (1, shape[1]) if row else (shape[0], 1)
    b = Tensor(rng.normal(size=bshape), requires_grad=True)
    ad.backward(ad.reduce_sum(a + b))
    assert b.grad.shape == bshape
    np.testing.assert_array_equal(b.grad, np.full(bshape, shape[0] if row else shape[1], dtype=float))
