import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from avid_acsm.errors import LengthMismatch, NonPositiveTemperature, ShapeMismatch, StaleCache, ZeroNorm
from avid_acsm.numeric import (AdamState, MlpParams, adam_step, cosine, finite_diff_check,
                               init_mlp, l2_normalize, mlp_backward, mlp_forward, softmax_temp)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def vectors(n=st.integers(1, 12)):
    return n.flatmap(lambda k: arrays(np.float64, k, elements=finite))


# -- cosine ------------------------------------------------------------------

@pytest.mark.parametrize("u,v,expected", [
    ([1, 0], [1, 0], 1.0),
    ([1, 0], [0, 1], 0.0),
    ([1, 1], [1, 0], 0.70710678),
])
def test_cosine_examples(u, v, expected):
    assert cosine(u, v) == pytest.approx(expected, abs=1e-8)


def test_cosine_errors():
    with pytest.raises(ZeroNorm):
        cosine([0, 0], [1, 0])
    with pytest.raises(LengthMismatch):
        cosine([1, 0], [1, 0, 0])


# -- l2_normalize ------------------------------------------------------------

def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize([3, 4]), [0.6, 0.8], atol=1e-15)
    u = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(l2_normalize(u), u)
    with pytest.raises(ZeroNorm):
        l2_normalize([0.0, 0.0])


@given(vectors())
def test_l2_normalize_properties(v):
    if np.linalg.norm(v) < 1e-6:
        return
    n = l2_normalize(v)
    assert abs(np.linalg.norm(n) - 1.0) < 1e-9
    assert cosine(n, v) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(l2_normalize(n), n, atol=1e-12, rtol=0)


# -- softmax -----------------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(softmax_temp([0, 0, 0], 1.0), [1 / 3] * 3, atol=1e-15)
    assert softmax_temp([1, 0], 0.01)[0] > 0.999
    # direct scalar evaluation: e^i / sum_j e^j
    expected = [math.exp(i) / sum(math.exp(j) for j in (1, 2, 3)) for i in (1, 2, 3)]
    np.testing.assert_allclose(softmax_temp([1, 2, 3], 1.0), expected, atol=1e-12)
    np.testing.assert_allclose(expected, [0.09003057, 0.24472847, 0.66524096], atol=1e-8)
    with pytest.raises(NonPositiveTemperature):
        softmax_temp([1, 2], 0.0)


@given(vectors(), st.floats(0.01, 10), finite)
def test_softmax_sums_to_one_and_is_shift_invariant(s, tau, c):
    p = softmax_temp(s, tau)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-9
    np.testing.assert_allclose(softmax_temp(s + c, tau), p, atol=1e-9)
    assert np.all(np.isfinite(p))


def test_softmax_low_temperature_is_stable():
    p = softmax_temp([1.0, -1.0, 0.5], 0.001)
    assert np.all(np.isfinite(p))


# -- MLP forward / backward ---------------------------------------------------

def straight_line_forward(p: MlpParams, x):
    """Scalar-loop evaluation, independent of the vectorised path."""
    h = list(map(float, x))
    for w, b, act in zip(p.weights, p.biases, p.activations):
        out = []
        for r in range(w.shape[0]):
            acc = float(b[r])
            for c in range(w.shape[1]):
                acc += float(w[r, c]) * h[c]
            out.append(max(acc, 0.0) if act == "relu" else acc)
        h = out
    return np.array(h)


def test_forward_identity_and_bias_only():
    x = np.array([0.3, -1.2, 2.0])
    ident = MlpParams([np.eye(3)], [np.zeros(3)], ["identity"])
    np.testing.assert_array_equal(mlp_forward(ident, x)[0], x)
    b = np.array([1.0, -2.0])
    bias_only = MlpParams([np.zeros((2, 3))], [b], ["identity"])
    np.testing.assert_array_equal(mlp_forward(bias_only, x)[0], b)


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_straight_line(seed):
    rng = np.random.default_rng(seed)
    p = init_mlp([5, 7, 3], rng)
    p.biases[0][:] = rng.standard_normal(7)
    x = rng.standard_normal(5)
    np.testing.assert_allclose(mlp_forward(p, x)[0], straight_line_forward(p, x), atol=1e-12)
    batch = rng.standard_normal((4, 5))
    np.testing.assert_allclose(mlp_forward(p, batch)[0],
                               np.stack([straight_line_forward(p, r) for r in batch]), atol=1e-12)


def test_forward_length_mismatch():
    p = init_mlp([4, 3], np.random.default_rng(0))
    with pytest.raises(LengthMismatch):
        mlp_forward(p, np.ones(5))


def test_backward_zero_upstream_and_single_layer():
    rng = np.random.default_rng(1)
    p = init_mlp([4, 6, 3], rng)
    x = rng.standard_normal(4)
    _, cache = mlp_forward(p, x)
    dx, grads = mlp_backward(p, cache, np.zeros(3))
    assert not dx.any() and all(not g.any() for g in grads.arrays())

    ident = MlpParams([np.eye(3)], [np.zeros(3)], ["identity"])
    x = np.array([1.0, 2.0, 3.0])
    dy = np.array([0.5, -1.0, 2.0])
    _, cache = mlp_forward(ident, x)
    dx, grads = mlp_backward(ident, cache, dy)
    np.testing.assert_array_equal(dx, dy)
    np.testing.assert_array_equal(grads.weights[0], np.outer(dy, x))


def test_backward_stale_cache():
    rng = np.random.default_rng(2)
    p = init_mlp([4, 6, 3], rng)
    q = init_mlp([4, 5, 3], rng)
    _, cache = mlp_forward(p, np.ones(4))
    with pytest.raises(StaleCache):
        mlp_backward(q, cache, np.ones(3))


@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    p = init_mlp([4, 6, 5, 3], rng)
    for b in p.biases:
        b[:] = 0.1 * rng.standard_normal(b.shape)
    x = rng.standard_normal((3, 4))
    r = rng.standard_normal((3, 3))

    def f(params):
        y, cache = mlp_forward(params, x)
        return float(np.sum(r * y)), mlp_backward(params, cache, r)[1]

    assert finite_diff_check(f, p, 1e-5) < 1e-4


# -- Adam --------------------------------------------------------------------

def test_adam_zero_gradient_is_a_no_op():
    p = init_mlp([3, 2], np.random.default_rng(0))
    new, state = adam_step(p, p.zeros_like(), AdamState.for_params(p), lr=0.1)
    for a, b in zip(new.arrays(), p.arrays()):
        np.testing.assert_array_equal(a, b)
    assert state.step == 1


def test_adam_first_step_has_magnitude_lr():
    p = MlpParams([np.zeros((2, 2))], [np.zeros(2)], ["identity"])
    g = p.with_arrays([np.full((2, 2), 3.0), np.array([-0.5, 2.0])])
    new, _ = adam_step(p, g, AdamState.for_params(p), lr=0.01)
    # bias correction at t=1: update = -lr * g / (|g| + eps)
    np.testing.assert_allclose(new.weights[0], -0.01, rtol=1e-6)
    np.testing.assert_allclose(new.biases[0], [0.01, -0.01], rtol=1e-6)


def test_adam_converges_on_quadratic_bowl():
    x = MlpParams([np.array([[3.0, -2.0]])], [np.array([1.5])], ["identity"])
    state = AdamState.for_params(x)
    for _ in range(500):
        x, state = adam_step(x, x.copy(), state, lr=0.05)   # grad of 0.5|x|^2 is x
    assert np.linalg.norm(x.flat()) < 1e-3
    assert state.step == 500


def test_adam_decoupled_weight_decay_and_shape_check():
    p = MlpParams([np.ones((1, 1))], [np.ones(1)], ["identity"])
    new, _ = adam_step(p, p.zeros_like(), AdamState.for_params(p), lr=0.1, weight_decay=0.5)
    np.testing.assert_allclose(new.weights[0], 0.95)
    other = MlpParams([np.ones((2, 1))], [np.ones(2)], ["identity"])
    with pytest.raises(ShapeMismatch):
        adam_step(p, other, AdamState.for_params(p), lr=0.1)


# -- finite difference checker ----------------------------------------------

def test_finite_diff_check_quadratic_and_constant():
    p = init_mlp([3, 4, 2], np.random.default_rng(3))
    assert finite_diff_check(lambda q: (0.5 * float(q.flat() @ q.flat()), q.copy()), p) < 1e-8
    assert finite_diff_check(lambda q: (7.0, q.zeros_like()), p) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_outputs_finite(seed):
    rng = np.random.default_rng(seed)
    p = init_mlp([3, 5, 2], rng)
    y, cache = mlp_forward(p, 10 * rng.standard_normal((4, 3)))
    dx, grads = mlp_backward(p, cache, rng.standard_normal((4, 2)))
    assert np.all(np.isfinite(y)) and np.all(np.isfinite(dx))
    assert all(np.all(np.isfinite(g)) for g in grads.arrays())
