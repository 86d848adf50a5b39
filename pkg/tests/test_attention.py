import numpy as np
import pytest

from interformer import oracles
from interformer.attention import (
    MASK_VALUE,
    MhsaParams,
    relative_mhsa,
    relative_offset_index,
    relative_position_embeddings,
)
from interformer.autodiff import Tensor
from interformer.errors import MaskLengthMismatch, OddDimension, ShapeMismatch
from interformer.gradcheck import finite_diff_check
from interformer.suites import LAYER_CHECK, LAYER_EPS, LAYER_TOL


def random_params(rng, d=8, h=2, scale=0.5):
    p = MhsaParams.init(d, h, rng)
    for t in (p.W_q, p.W_k, p.W_v, p.W_o, p.W_pos):
        t.data[...] = rng.normal(0.0, scale, size=t.shape)
    p.u.data[...] = rng.normal(size=d)
    p.v.data[...] = rng.normal(size=d)
    return p


def naive(x, p, mask=None):
    return oracles.naive_relative_attention(x, p.W_q.data, p.W_k.data, p.W_v.data, p.W_o.data, p.W_pos.data,
                                            p.u.data, p.v.data, p.heads, mask)


# -- position table ----------------------------------------------------------------


def test_offset_zero_row():
    table = relative_position_embeddings(3, 4)
    np.testing.assert_array_equal(table[2], [0.0, 1.0, 0.0, 1.0])


def test_table_height():
    assert relative_position_embeddings(5, 6).shape == (9, 6)


def test_offset_plus_minus_one_sin_mirror():
    table = relative_position_embeddings(4, 8)
    plus, minus = table[2], table[4]  # offsets +1 and -1
    np.testing.assert_allclose(plus[0::2], -minus[0::2], rtol=0, atol=0)
    np.testing.assert_array_equal(plus[1::2], minus[1::2])


def test_table_matches_direct_sinusoid():
    T, d = 4, 6
    table = relative_position_embeddings(T, d)
    for row, off in enumerate(range(T - 1, -T, -1)):
        np.testing.assert_allclose(table[row], oracles.sinusoid(off, d), atol=1e-15)


def test_table_rejects_odd_dim():
    with pytest.raises(OddDimension):
        relative_position_embeddings(3, 5)


def test_offset_index_selects_i_minus_j():
    T = 4
    ii, jj = relative_offset_index(T)
    offsets = np.arange(T - 1, -T, -1)
    for i in range(T):
        for j in range(T):
            assert ii[i, j] == i and offsets[jj[i, j]] == i - j


# -- attention ---------------------------------------------------------------------


def test_single_frame_weight_is_one(rng):
    p = random_params(rng)
    x = rng.normal(size=(1, 8))
    out, w = relative_mhsa(Tensor(x), p, return_weights=True)
    np.testing.assert_array_equal(w.data, np.ones((2, 1, 1)))
    np.testing.assert_allclose(out.data, x @ p.W_v.data @ p.W_o.data, atol=1e-14)


def test_identical_keys_give_uniform_weights(rng):
    p = random_params(rng)
    p.W_pos.data[...] = 0.0
    x = np.tile(rng.normal(size=(1, 8)), (5, 1))
    out, w = relative_mhsa(Tensor(x), p, return_weights=True)
    np.testing.assert_allclose(w.data, 0.2, atol=1e-15)
    np.testing.assert_allclose(out.data, np.tile(x.mean(0) @ p.W_v.data @ p.W_o.data, (5, 1)), atol=1e-13)


def test_matches_naive_per_pair_loops(rng):
    p = random_params(rng)
    x = rng.normal(size=(5, 8))
    diff = np.max(np.abs(relative_mhsa(Tensor(x), p).data - naive(x, p)))
    assert diff < 1e-10


def test_masked_matches_naive(rng):
    p = random_params(rng)
    x = rng.normal(size=(6, 8))
    mask = np.array([1, 1, 0, 1, 0, 1], dtype=bool)
    diff = np.max(np.abs(relative_mhsa(Tensor(x), p, mask=mask).data - naive(x, p, mask)))
    assert diff < 1e-10


def test_reduces_to_standard_attention(rng):
    p = random_params(rng)
    p.W_pos.data[...] = 0.0
    p.u.data[...] = 0.0
    p.v.data[...] = 0.0
    x = rng.normal(size=(5, 8))
    ref = oracles.naive_standard_attention(x, p.W_q.data, p.W_k.data, p.W_v.data, p.W_o.data, 2)
    assert np.max(np.abs(relative_mhsa(Tensor(x), p).data - ref)) < 1e-10


def test_weight_rows_sum_to_one_over_valid_keys(rng):
    p = random_params(rng, scale=2.0)
    mask = np.array([0, 1, 1, 1, 0, 1, 1], dtype=bool)
    _, w = relative_mhsa(Tensor(rng.normal(size=(7, 8))), p, mask=mask, return_weights=True)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-12)
    assert np.all(w.data[..., ~mask] == 0.0)


def test_masked_frame_content_does_not_leak(rng):
    p = random_params(rng)
    x = rng.normal(size=(6, 8))
    mask = np.array([1, 1, 1, 0, 1, 1], dtype=bool)
    a = relative_mhsa(Tensor(x), p, mask=mask).data
    x2 = x.copy()
    x2[3] = rng.normal(size=8) * 100
    b = relative_mhsa(Tensor(x2), p, mask=mask).data
    np.testing.assert_array_equal(a[mask], b[mask])


def test_batched_equals_per_sequence(rng):
    p = random_params(rng)
    x = rng.normal(size=(3, 5, 8))
    out = relative_mhsa(Tensor(x), p).data
    for b in range(3):
        np.testing.assert_allclose(out[b], relative_mhsa(Tensor(x[b]), p).data, rtol=0, atol=1e-15)


def test_mask_value_is_finite_and_underflows():
    assert np.isfinite(MASK_VALUE)
    assert np.exp(MASK_VALUE) == 0.0


def test_errors(rng):
    p = random_params(rng)
    with pytest.raises(ShapeMismatch):
        relative_mhsa(Tensor(rng.normal(size=(5, 6))), p)
    with pytest.raises(MaskLengthMismatch):
        relative_mhsa(Tensor(rng.normal(size=(5, 8))), p, mask=np.ones(4, dtype=bool))
    with pytest.raises(ShapeMismatch):
        MhsaParams.init(6, 4, rng)


@pytest.mark.parametrize("masked", [False, True])
def test_gradients_include_position_terms(masked, rng):
    p = random_params(rng)
    x = Tensor(rng.normal(size=(5, 8)))
    mask = np.array([1, 1, 0, 1, 1], dtype=bool) if masked else None
    R = rng.normal(size=(5, 8))
    names = ["x", "W_q", "W_k", "W_v", "W_o", "W_pos", "u", "v"]
    tensors = [x, p.W_q, p.W_k, p.W_v, p.W_o, p.W_pos, p.u, p.v]

    def f(x, Wq, Wk, Wv, Wo, Wp, u, v):
        q = MhsaParams(Wq, Wk, Wv, Wo, Wp, u, v, 2)
        return relative_mhsa(x, q, mask=mask) * R

    rep = finite_diff_check(f, tensors, epsilon=LAYER_EPS, tolerance=LAYER_TOL, batched=True, **LAYER_CHECK)
    assert rep.passed, rep
    assert rep.n_coords == sum(t.size for t in tensors), names
