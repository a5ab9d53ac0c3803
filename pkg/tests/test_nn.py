"""Numeric kernel properties: softmax invariants, batched softmax
gradients, sigmoid stability, and the finite-difference checker."""

import numpy as np
import pytest

from numembed import nn


def test_softmax_probability_vector_1000_draws():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        logits = rng.normal(size=rng.integers(2, 12)) * 10.0
        tau = float(10.0 ** rng.uniform(-3, 3))
        out = nn.softmax_temperature(logits, tau)
        assert np.all(out >= 0.0)
        assert abs(out.sum() - 1.0) < 1e-12


def test_softmax_shift_invariance():
    rng = np.random.default_rng(1)
    for _ in range(200):
        logits = rng.normal(size=6) * 5.0
        tau = float(10.0 ** rng.uniform(-2, 2))
        c = float(rng.normal() * 100.0)
        a = nn.softmax_temperature(logits, tau)
        b = nn.softmax_temperature(logits + c, tau)
        assert np.max(np.abs(a - b)) < 1e-12


def test_softmax_temperature_limits():
    rng = np.random.default_rng(2)
    for _ in range(50):
        logits = rng.uniform(-1.0, 1.0, size=8)
        out = nn.softmax_temperature(logits, 1e4)
        assert out.max() - out.min() < 1e-3  # near-uniform
        gap_logits = rng.normal(size=8)
        gap_logits[0] = gap_logits.max() + 0.1  # unique max, gap >= 0.1
        out = nn.softmax_temperature(gap_logits, 1e-4)
        assert out.max() > 1.0 - 1e-6  # near one-hot
        assert np.argmax(out) == 0


def test_softmax_rows_matches_scalar():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(7, 5))
    tau = 10.0 ** rng.uniform(-2, 2, size=7)
    rows = nn.softmax_rows(logits, tau)
    for b in range(7):
        assert np.allclose(rows[b], nn.softmax_temperature(logits[b], tau[b]),
                           atol=1e-14)


def test_softmax_rows_backward_finite_diff():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(3, 4))
    tau = 10.0 ** rng.uniform(-1, 1, size=3)
    upstream = rng.normal(size=(3, 4))

    def objective(lg, tv):
        return float((nn.softmax_rows(lg, tv) * upstream).sum())

    probs = nn.softmax_rows(logits, tau)
    d_logits, d_tau = nn.softmax_rows_backward(probs, logits, tau, upstream)
    step = 1e-6
    for b in range(3):
        for h in range(4):
            lp, lm = logits.copy(), logits.copy()
            lp[b, h] += step
            lm[b, h] -= step
            num = (objective(lp, tau) - objective(lm, tau)) / (2 * step)
            assert abs(num - d_logits[b, h]) < 1e-6
        tp, tm = tau.copy(), tau.copy()
        tp[b] += step
        tm[b] -= step
        num = (objective(logits, tp) - objective(logits, tm)) / (2 * step)
        assert abs(num - d_tau[b]) < 1e-5


def test_sigmoid_array_and_scalar():
    xs = np.array([-800.0, -5.0, 0.0, 5.0, 800.0])
    out = nn.sigmoid(xs)
    assert out.shape == xs.shape
    assert np.all((out >= 0.0) & (out <= 1.0))
    assert np.all(np.diff(out) >= 0)
    assert isinstance(nn.sigmoid(2.5), float)
    mat = nn.sigmoid(np.zeros((2, 3)))
    assert mat.shape == (2, 3) and np.all(mat == 0.5)


def test_leaky_relu_grad_is_derivative():
    rng = np.random.default_rng(5)
    x = rng.normal(size=50)
    x = x[np.abs(x) > 1e-3]  # stay clear of the kink
    step = 1e-6
    num = (nn.leaky_relu(x + step, 0.01) - nn.leaky_relu(x - step, 0.01)) \
        / (2 * step)
    assert np.allclose(num, nn.leaky_relu_grad(x, 0.01), atol=1e-9)


def test_finite_diff_step_bounds():
    theta = {"t": np.array([1.0])}
    f = lambda: float(theta["t"][0] ** 2)
    for bad in (1e-7, 1e-2, 0.0):
        with pytest.raises(ValueError):
            nn.finite_diff_check(f, theta, {"t": np.array([2.0])}, step=bad)


def test_finite_diff_nonfinite_objective():
    theta = {"t": np.array([0.0])}
    f = lambda: float("nan")
    with pytest.raises(ValueError, match="non-finite"):
        nn.finite_diff_check(f, theta, {"t": np.array([0.0])})


def test_finite_diff_restores_parameters():
    theta = {"t": np.array([0.3, -0.7])}
    before = theta["t"].copy()
    f = lambda: float((theta["t"] ** 2).sum())
    nn.finite_diff_check(f, theta, {"t": 2.0 * theta["t"]})
    assert np.array_equal(theta["t"], before)


def test_finite_diff_reports_worst_index():
    theta = {"t": np.array([1.0, 1.0])}
    f = lambda: float((theta["t"] ** 2).sum())
    grads = {"t": np.array([2.0, 5.0])}  # second entry wrong
    (rep,) = nn.finite_diff_check(f, theta, grads)
    assert rep.worst_index == 1 and rep.max_rel_error > 0.1
