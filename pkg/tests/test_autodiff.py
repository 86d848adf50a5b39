import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from interformer import autodiff as ad
from interformer.autodiff import Tensor, backward, no_grad, tensor_create
from interformer.errors import AxisOutOfRange, NonFiniteValue, NonScalarOutput, ShapeMismatch
from interformer.gradcheck import finite_diff_check
from interformer.suites import primitive_suite

from conftest import randt

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def grad_of(fn, *inputs):
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    backward(ad.reduce_sum(fn(*inputs)))
    return [t.grad for t in inputs]


# -- construction ---------------------------------------------------------------


def test_tensor_create_row_major():
    t = tensor_create([2, 3], range(6))
    assert t.shape == (2, 3)
    assert t.data.dtype == np.float64
    assert t.data[1, 0] == 3.0


def test_tensor_create_rejects_wrong_count():
    with pytest.raises(ShapeMismatch):
        tensor_create([2, 3], range(5))


def test_tensor_create_rejects_nonpositive_extent():
    with pytest.raises(ShapeMismatch):
        tensor_create([0, 3], [])


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_construction_rejects_non_finite(bad):
    with pytest.raises(NonFiniteValue):
        Tensor([1.0, bad])


def test_debug_mode_catches_overflow_in_ops():
    ad.set_debug(True)
    try:
        with pytest.raises(NonFiniteValue), np.errstate(over="ignore"):
            ad.exp(Tensor([1000.0]))
    finally:
        ad.set_debug(False)
    with np.errstate(over="ignore"):
        assert not np.isfinite(ad.exp(Tensor([1000.0])).data).all()


# -- backward semantics -----------------------------------------------------------


def test_backward_requires_scalar(rng):
    x = randt(rng, 3, requires_grad=True)
    with pytest.raises(NonScalarOutput):
        backward(x * 2.0)


def test_reused_node_accumulates(rng):
    x = randt(rng, 4)
    (g,) = grad_of(lambda x: x * x + x, x)
    np.testing.assert_allclose(g, 2 * x.data + 1, rtol=0, atol=1e-15)


def test_diamond_graph(rng):
    # y = exp(x) used twice through different paths
    x = randt(rng, 5)

    def f(x):
        y = ad.exp(x)
        return y * ad.sigmoid(y)

    (g,) = grad_of(f, x)
    e = np.exp(x.data)
    s = 1 / (1 + np.exp(-e))
    np.testing.assert_allclose(g, e * s + e * e * s * (1 - s), rtol=1e-13)


def test_broadcast_gradient_is_summed(rng):
    a, b = randt(rng, 3, 4), randt(rng, 4)
    ga, gb = grad_of(lambda a, b: a * b, a, b)
    np.testing.assert_allclose(ga, np.broadcast_to(b.data, (3, 4)))
    np.testing.assert_allclose(gb, a.data.sum(axis=0), rtol=1e-14)


def test_no_grad_builds_no_graph(rng):
    x = randt(rng, 3, requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()
    assert ad.grad_enabled()


def test_leaf_without_requires_grad_gets_no_grad(rng):
    x, w = randt(rng, 3), randt(rng, 3, requires_grad=True)
    backward(ad.reduce_sum(x * w))
    assert x.grad is None
    np.testing.assert_array_equal(w.grad, x.data)


def test_maximum_tie_routes_gradient_to_first(rng):
    a = Tensor([1.0, 2.0])
    b = Tensor([1.0, 3.0])
    ga, gb = grad_of(ad.maximum, a, b)
    np.testing.assert_array_equal(ga, [1.0, 0.0])
    np.testing.assert_array_equal(gb, [0.0, 1.0])


def test_matmul_vector_promotion(rng):
    A, v = randt(rng, 3, 4), randt(rng, 4)
    out = ad.matmul(A, v)
    assert out.shape == (3,)
    gA, gv = grad_of(ad.matmul, A, v)
    np.testing.assert_allclose(gA, np.outer(np.ones(3), v.data))
    np.testing.assert_allclose(gv, A.data.sum(axis=0), rtol=1e-14)


def test_matmul_shape_mismatch(rng):
    with pytest.raises(ShapeMismatch):
        ad.matmul(randt(rng, 3, 4), randt(rng, 3, 4))


def test_axis_out_of_range(rng):
    with pytest.raises(AxisOutOfRange):
        ad.reduce_sum(randt(rng, 3, 4), axis=2)


def test_fancy_getitem_scatters_repeated_indices():
    x = Tensor([1.0, 2.0, 3.0])
    (g,) = grad_of(lambda x: x[np.array([0, 0, 2])], x)
    np.testing.assert_array_equal(g, [2.0, 0.0, 1.0])


def test_pad_and_split_gradients(rng):
    x = randt(rng, 2, 3)
    (g,) = grad_of(lambda x: ad.pad(x, [(1, 1)]) * 3.0, x)
    np.testing.assert_array_equal(g, np.full((2, 3), 3.0))
    (g,) = grad_of(lambda x: ad.split(x, [1, 2], axis=-1)[1], x)
    np.testing.assert_array_equal(g, [[0, 1, 1], [0, 1, 1]])


def test_softmax_is_shift_invariant_and_stable():
    x = Tensor([1000.0, 1001.0, 999.0])
    s = ad.softmax(x).data
    assert np.isfinite(s).all()
    np.testing.assert_allclose(s, ad.softmax(Tensor([0.0, 1.0, -1.0])).data, rtol=1e-15)


def test_sigmoid_extremes_are_finite():
    s = ad.sigmoid(Tensor([-800.0, 0.0, 800.0])).data
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])


def test_topological_order_handles_deep_chain():
    x = Tensor([1.0], requires_grad=True)
    y = x
    for _ in range(5000):  # deeper than the default recursion limit
        y = y * 1.0
    backward(ad.reduce_sum(y))
    assert x.grad[0] == 1.0


# -- properties -----------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite))
def test_softmax_rows_sum_to_one(a):
    s = ad.softmax(Tensor(a), axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 5), elements=finite))
def test_log_softmax_matches_log_of_softmax(a):
    np.testing.assert_allclose(ad.log_softmax(Tensor(a)).data, np.log(ad.softmax(Tensor(a)).data), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4,), elements=finite), arrays(np.float64, (3, 4), elements=finite))
def test_add_mul_gradients_closed_form(b, a):
    A, B = Tensor(a), Tensor(b)
    ga, gb = grad_of(lambda x, y: x * y + x, A, B)
    np.testing.assert_allclose(ga, np.broadcast_to(b, (3, 4)) + 1.0, atol=1e-14)
    np.testing.assert_allclose(gb, a.sum(axis=0), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3,), elements=st.floats(0.1, 5.0)), st.floats(-3.0, 3.0))
def test_power_log_exp_closed_form(a, p):
    x = Tensor(a)
    (g,) = grad_of(lambda x: ad.power(x, p), x)
    np.testing.assert_allclose(g, p * a ** (p - 1), rtol=1e-12)
    (g,) = grad_of(lambda x: ad.log(ad.exp(x)), x)
    np.testing.assert_allclose(g, np.ones(3), rtol=1e-12)


# -- gradient checker -------------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 11])
def test_primitive_suite_passes(seed):
    reports = primitive_suite(seed)
    bad = [r.line() for r in reports if not r.passed]
    assert not bad, "\n".join(bad)
    assert all(r.tolerance == 1e-6 for r in reports)


def _wrong_square(x: Tensor) -> Tensor:
    # forward x^2 with a backward that is off by 1%
    return Tensor._result(x.data * x.data, (x,), lambda g: (g * 2.02 * x.data,), "bad_square")


@pytest.mark.parametrize("precision", ["double", "extended", "auto"])
@pytest.mark.parametrize("batched", [False, True])
def test_checker_flags_wrong_gradient(precision, batched, rng):
    x = randt(rng, 6)
    rep = finite_diff_check(_wrong_square, [x], epsilon=1e-4, tolerance=1e-5, order=4, precision=precision,
                            batched=batched)
    assert not rep.passed
    assert rep.max_rel_err == pytest.approx(0.02 / 2.02, rel=1e-3)


def test_checker_relative_error_floor():
    # analytic and numeric both ~0: relative error uses the 1e-8 floor, not 0/0
    x = Tensor([0.0, 0.0])
    rep = finite_diff_check(lambda x: x * x, [x])
    assert rep.passed and rep.max_rel_err < 1e-6


def test_checker_rejects_bad_epsilon(rng):
    with pytest.raises(ValueError):
        finite_diff_check(ad.exp, [randt(rng, 2)], epsilon=1e-2)


def test_checker_sampling_is_seeded(rng):
    x = randt(rng, 50)
    a = finite_diff_check(ad.sigmoid, [x], max_coords=7, seed=3)
    b = finite_diff_check(ad.sigmoid, [x], max_coords=7, seed=3)
    assert a.n_coords == 7 and a == b


def test_checker_restores_inputs(rng):
    x = randt(rng, 4)
    before = x.data.copy()
    finite_diff_check(ad.exp, [x], batched=True)
    finite_diff_check(ad.exp, [x], precision="auto", order=4, epsilon=1e-4)
    assert x.data.dtype == np.float64 and not x.requires_grad
    np.testing.assert_array_equal(x.data, before)


def test_extended_precision_resolves_tiny_gradients():
    # a 1e4 offset swamps float64 differences of a 1e-3-scale term
    x = Tensor([0.3, -0.7])
    big = Tensor([1e4, 1e4])

    def f(x):
        return x * x * 1e-3 + big

    ext = finite_diff_check(f, [x], precision="extended", tolerance=1e-5)
    dbl = finite_diff_check(f, [x], precision="double", tolerance=1e-5)
    assert ext.passed
    assert dbl.max_rel_err > ext.max_rel_err

