import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glabigru.errors import NumericError, UsageError
from glabigru.numcore import (
    gaussian_init,
    grad_check,
    make_rng,
    relative_error,
    sigmoid,
    softmax,
    softmax_backward,
    spawn_rngs,
)

finite = st.floats(-700, 700, allow_nan=False)


def test_softmax_examples():
    np.testing.assert_array_equal(softmax([0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(softmax([1000.0, 1000.0, 1000.0]), [1 / 3] * 3, rtol=0, atol=1e-15)
    np.testing.assert_allclose(softmax(np.log([1.0, 2.0, 3.0])), [1 / 6, 2 / 6, 3 / 6], rtol=0, atol=1e-15)


def test_softmax_empty_is_usage_error():
    with pytest.raises(UsageError):
        softmax(np.array([]))


@given(arrays(np.float64, st.integers(1, 30), elements=finite), st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(x, k):
    p = softmax(x)
    assert abs(p.sum() - 1) <= 1e-12
    assert np.all((p >= 0) & (p <= 1))
    assert np.max(np.abs(softmax(x + k) - p)) < 1e-12


def test_softmax_backward_matches_jacobian():
    rng = make_rng(4)
    p = softmax(rng.normal(size=5))
    d = rng.normal(size=5)
    jac = np.diag(p) - np.outer(p, p)
    np.testing.assert_allclose(softmax_backward(p, d), jac @ d, atol=1e-15)


def test_sigmoid_examples():
    assert sigmoid(0.0) == 0.5
    assert abs(sigmoid(50.0) - 1.0) <= 1e-12
    assert abs(sigmoid(math.log(3.0)) - 0.75) <= 1e-15
    assert sigmoid(-1000.0) == 0.0  # no overflow warning
    assert np.all(np.isfinite(sigmoid(np.array([-1e4, 1e4]))))


@given(st.floats(-30, 30))
def test_sigmoid_symmetry(x):
    assert abs(sigmoid(x) + sigmoid(-x) - 1) <= 1e-15


def test_gaussian_init():
    with pytest.raises(UsageError):
        gaussian_init((3,), 0.0, make_rng(1))
    with pytest.raises(UsageError):
        gaussian_init((3,), -1.0, make_rng(1))
    np.testing.assert_array_equal(gaussian_init((4, 4), 0.1, make_rng(7)), gaussian_init((4, 4), 0.1, make_rng(7)))
    w = gaussian_init((1000, 100), 0.1, make_rng(11))
    assert w.dtype == np.float64
    n = w.size
    assert abs(w.mean()) < 3 * 0.1 / math.sqrt(n)
    assert 0.099 <= w.std() <= 0.101


def test_spawned_streams_are_stable_and_distinct():
    a = [g.random(3) for g in spawn_rngs(5, 3)]
    b = [g.random(3) for g in spawn_rngs(5, 3)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a[0], a[1])


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-10, 0.0) == pytest.approx(1e-2)
    assert relative_error(2.0, 1.0) == 0.5


def test_grad_check_square():
    params = {"t": np.array([3.0])}
    rep = grad_check(lambda p: (float(p["t"][0] ** 2), {"t": 2 * p["t"]}), params, h=1e-5)
    (_, analytic, numeric), = rep.samples["t"]
    assert analytic == 6.0
    assert abs(numeric - 6.0) < 1e-9
    assert rep.passed
    assert params["t"][0] == 3.0  # restored


def test_grad_check_constant():
    params = {"a": np.ones((3, 2))}
    rep = grad_check(lambda p: (1.5, {"a": np.zeros((3, 2))}), params)
    assert rep.max_error == 0.0 and rep.passed


def test_grad_check_flags_wrong_gradient():
    params = {"t": np.array([1.0, 2.0])}
    rep = grad_check(lambda p: (float((p["t"] ** 3).sum()), {"t": 2 * p["t"]}), params)
    assert not rep.passed
    assert rep.worst()[0] == "t"


def test_grad_check_rejects_bad_step_and_nondeterminism():
    params = {"t": np.array([1.0])}
    with pytest.raises(UsageError):
        grad_check(lambda p: (0.0, {"t": np.zeros(1)}), params, h=1e-2)
    noise = make_rng(0)
    with pytest.raises(NumericError):
        grad_check(lambda p: (float(noise.random()), {"t": np.zeros(1)}), params)


def test_grad_check_samples_at_least_64_per_tensor():
    params = {"w": make_rng(0).normal(size=(20, 20))}
    rep = grad_check(lambda p: (float((p["w"] ** 2).sum()), {"w": 2 * p["w"]}), params, n_samples=64)
    assert len(rep.samples["w"]) == 64
    assert rep.passed
