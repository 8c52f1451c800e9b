import math

import numpy as np
import pytest

from predsim import predict
from predsim.predict import (
    DeadReckoning,
    DegenerateWindowError,
    InsufficientHistoryError,
    Lagrange,
    NoPrediction,
    RegressionSpec,
    SampleWindow,
    dead_reckon,
    extrapolate,
    fit_ols,
    lagrange_extrapolate,
    poly,
    predict_frame,
)

from conftest import make_frames


def lstsq_oracle(times, values, order):
    """Independent reference: numpy lstsq on the Vandermonde matrix."""
    X = np.vander(np.asarray(times), order + 1, increasing=True)
    beta, *_ = np.linalg.lstsq(X, np.asarray(values), rcond=None)
    return beta


def normal_eq_oracle(times, values, order):
    """Explicit normal-equation assembly solved by LAPACK, written separately
    from the production power-sum/elimination path."""
    t = np.asarray(times)
    k = order + 1
    X = np.empty((len(t), k))
    for j in range(k):
        X[:, j] = t**j
    ata = np.zeros((k, k))
    atb = np.zeros(k)
    for i in range(len(t)):
        for r in range(k):
            atb[r] += X[i, r] * values[i]
            for c in range(k):
                ata[r, c] += X[i, r] * X[i, c]
    return np.linalg.solve(ata, atb)


def random_window_times(rng, n, max_span_s=0.7):
    """Sorted jittered sampling grids, the geometry regression actually sees."""
    spacing = rng.uniform(0.004, max_span_s / max(n - 1, 1))
    jitter = rng.uniform(-0.3, 0.3, size=n) * spacing
    t = (np.arange(n) - (n - 1)) * spacing + jitter
    t[-1] = 0.0
    return np.sort(t)


def neville_oracle(times, values, x):
    """Classic Neville recursion, written independently of the library path."""
    t = list(times)
    p = list(values)
    n = len(t)
    for level in range(1, n):
        for i in range(n - level):
            p[i] = ((x - t[i + level]) * p[i] + (t[i] - x) * p[i + 1]) / (t[i] - t[i + level])
    return p[0]


def window_from(times_ms, values):
    w = SampleWindow(capacity=max(2, len(times_ms)))
    for t, v in zip(times_ms, values):
        w.push(t, v)
    return w


# --- fit_ols ----------------------------------------------------------------


def test_fit_exact_line():
    beta = fit_ols(np.array([-0.2, -0.1, 0.0]), np.array([0.0, 1.0, 2.0]), order=1)
    assert np.allclose(beta, [2.0, 10.0], atol=1e-12)


def test_fit_constant_values():
    for order in (1, 2, 3):
        beta = fit_ols(np.linspace(-0.5, 0.0, 8), np.full(8, 7.25), order=order)
        assert np.allclose(beta, [7.25] + [0.0] * order, atol=1e-9)


def test_fit_noisy_quadratic_matches_oracle():
    rng = np.random.Generator(np.random.PCG64(1))
    t = np.linspace(-0.5, 0.0, 10)
    y = 3.0 + 2.0 * t + 5.0 * t * t + rng.normal(0.0, 0.05, size=10)
    beta = fit_ols(t, y, order=2)
    ref = lstsq_oracle(t, y, 2)
    assert np.allclose(beta, ref, rtol=1e-10, atol=1e-12)


def test_fit_matches_oracle_on_random_windows():
    rng = np.random.Generator(np.random.PCG64(2))
    for _ in range(1000):
        order = int(rng.integers(1, 4))
        n = int(rng.integers(order + 1, 20))
        t = random_window_times(rng, n)
        y = rng.normal(0.0, 50.0, size=n)
        beta = fit_ols(t, y, order=order)
        ref = normal_eq_oracle(t, y, order)
        scale = max(1.0, float(np.max(np.abs(ref))))
        assert np.all(np.abs(beta - ref) <= 1e-10 * scale)
        loose = lstsq_oracle(t, y, order)
        assert np.all(np.abs(beta - loose) <= 1e-6 * max(1.0, float(np.max(np.abs(loose)))))


def test_fit_multi_channel_matches_per_channel():
    rng = np.random.Generator(np.random.PCG64(3))
    t = np.sort(rng.uniform(-0.4, 0.0, size=12))
    Y = rng.normal(size=(12, 5))
    multi = fit_ols(t, Y, order=2)
    for c in range(5):
        single = fit_ols(t, Y[:, c], order=2)
        assert np.allclose(multi[:, c], single, atol=1e-12)


def test_fit_singular_without_ridge_raises():
    t = np.array([-0.1, -0.1, -0.1, -0.1])
    y = np.array([1.0, 2.0, 3.0, 4.0])
    with pytest.raises(DegenerateWindowError):
        fit_ols(t, y, order=2, ridge=0.0)
    # A tiny ridge keeps the system solvable.
    beta = fit_ols(t, y, order=2, ridge=1e-9)
    assert np.all(np.isfinite(beta))


def test_fit_insufficient_samples():
    with pytest.raises(InsufficientHistoryError):
        fit_ols(np.array([-0.1, 0.0]), np.array([1.0, 2.0]), order=2)


def test_ridge_shrinks_slope_not_intercept():
    t = np.linspace(-0.3, 0.0, 6)
    y = 4.0 + 10.0 * t
    plain = fit_ols(t, y, order=1, ridge=0.0)
    ridged = fit_ols(t, y, order=1, ridge=0.5)
    assert abs(ridged[1]) < abs(plain[1])
    # Constant channels stay exact because the intercept is unpenalized.
    flat = fit_ols(t, np.full(6, 4.0), order=1, ridge=0.5)
    assert np.allclose(flat, [4.0, 0.0], atol=1e-12)


# --- extrapolate --------------------------------------------------------------


def test_extrapolate_examples():
    assert extrapolate(np.array([2.0, 10.0]), 0.1) == pytest.approx(3.0)
    assert extrapolate(np.array([5.0, -3.0, 2.0]), 0.0) == 5.0
    assert extrapolate(np.array([3.0, 2.0, 5.0]), 0.2) == pytest.approx(3.6)


def test_extrapolate_rejects_negative_horizon():
    with pytest.raises(ValueError):
        extrapolate(np.array([1.0, 2.0]), -0.01)


# --- dead reckoning -----------------------------------------------------------


def test_dead_reckon_examples():
    w = window_from([0.0, 11.0], [5.0, 6.0])
    assert dead_reckon(w, 0.011) == pytest.approx(7.0, abs=1e-12)
    assert dead_reckon(w, 0.0) == pytest.approx(6.0)


def test_dead_reckon_secant_on_parabola():
    # y = t^2 sampled at t = 0.1 s and 0.2 s: secant slope 0.3, so the value
    # carried 0.1 s forward is 0.07 while the true curve reaches 0.09.
    w = window_from([100.0, 200.0], [0.01, 0.04])
    assert dead_reckon(w, 0.1) == pytest.approx(0.07, abs=1e-12)


def test_dead_reckon_duplicate_timestamps():
    with pytest.raises(DegenerateWindowError):
        predict.dead_reckon_multi(np.array([-0.011, -0.011]), np.array([1.0, 2.0]), 0.01)


def test_dead_reckon_needs_two_samples():
    w = SampleWindow(capacity=4)
    w.push(0.0, 1.0)
    with pytest.raises(InsufficientHistoryError):
        dead_reckon(w, 0.01)


# --- Lagrange -----------------------------------------------------------------


def test_lagrange_exact_quadratic():
    w = window_from([0.0, 1000.0, 2000.0], [0.0, 1.0, 4.0])
    # Extrapolating to t = 3 s, i.e. 1 s past the newest sample.
    assert lagrange_extrapolate(w, 1.0) == pytest.approx(9.0, rel=1e-12)


def test_lagrange_two_points_equals_dead_reckoning():
    w = window_from([0.0, 11.0], [5.0, 6.5])
    for h in (0.0, 0.011, 0.04):
        assert lagrange_extrapolate(w, h) == pytest.approx(dead_reckon(w, h), abs=1e-12)


def test_lagrange_matches_neville_oracle():
    rng = np.random.Generator(np.random.PCG64(4))
    for _ in range(200):
        n = int(rng.integers(2, 7))
        t = np.sort(rng.uniform(-0.3, 0.0, size=n))
        while len(np.unique(t)) != n:
            t = np.sort(rng.uniform(-0.3, 0.0, size=n))
        y = rng.normal(size=n)
        got = predict.lagrange_multi(t, y, 0.05)
        ref = neville_oracle(t, y, 0.05)
        assert math.isclose(got, ref, rel_tol=1e-9, abs_tol=1e-9)


def test_lagrange_duplicate_timestamps():
    with pytest.raises(DegenerateWindowError):
        predict.lagrange_multi(np.array([-0.1, -0.1, 0.0]), np.array([1.0, 2.0, 3.0]), 0.01)


def test_lagrange_at_existing_node():
    t = np.array([-0.2, -0.1, 0.0])
    y = np.array([4.0, 5.0, 6.0])
    assert predict.lagrange_multi(t, y, 0.0) == 6.0


# --- predict_frame -------------------------------------------------------------


def test_predict_frame_no_prediction_returns_newest():
    frames = make_frames(5, velocity=[1.0, 0.0, 0.0])
    out = predict_frame(frames, NoPrediction(), h_ms=40.0)
    assert np.array_equal(out, frames[-1].points)


def test_predict_frame_linear_exact_on_straight_lines():
    frames = make_frames(20, velocity=[1.0, -0.5, 0.25])
    h = 40.0
    expected = frames[-1].points + np.array([1.0, -0.5, 0.25]) * h
    for n in (2, 5, 12, 20):
        out = predict_frame(frames, poly(1, n, ridge=0.0), h_ms=h)
        assert np.max(np.abs(out - expected)) <= 1e-9


def test_predict_frame_equivalence_class():
    frames = make_frames(8, velocity=[0.9, 0.1, -0.3], seed=1, sigma=0.5)
    h = 33.0
    dr = predict_frame(frames, DeadReckoning(), h_ms=h)
    lg = predict_frame(frames, Lagrange(2), h_ms=h)
    pr = predict_frame(frames, poly(1, 2, ridge=0.0), h_ms=h)
    assert np.max(np.abs(dr - lg)) <= 1e-12
    assert np.max(np.abs(dr - pr)) <= 1e-12


def test_predict_frame_polynomial_exactness_all_orders():
    rng = np.random.Generator(np.random.PCG64(5))
    times = np.arange(30.0) * 11.0
    for order in (1, 2, 3):
        coeffs = rng.normal(0.0, 1.0, size=(order + 1, 50, 3))
        frames = []
        for i, t in enumerate(times):
            ts = t / 1000.0
            pts = sum(coeffs[j] * ts**j for j in range(order + 1))
            frames.append(predict.TrackedFrame(seq=i, t_ms=t, points=pts))
        h = 47.0
        t_target = (times[-1] + h) / 1000.0
        expected = sum(coeffs[j] * t_target**j for j in range(order + 1))
        for n in (order + 1, order + 5, 25):
            out = predict_frame(frames, poly(order, n, ridge=0.0), h_ms=h)
            scale = max(1.0, float(np.max(np.abs(expected))))
            assert np.max(np.abs(out - expected)) <= 1e-9 * scale


def test_predict_frame_translation_equivariance():
    frames = make_frames(15, velocity=[0.4, 0.0, 0.0], seed=2, sigma=1.0)
    offset = np.array([100.0, -50.0, 25.0])
    shifted = [
        predict.TrackedFrame(seq=f.seq, t_ms=f.t_ms, points=f.points + offset) for f in frames
    ]
    for kind in (DeadReckoning(), Lagrange(3), poly(2, 10, ridge=0.0), poly(2, 10, ridge=1e-9)):
        a = predict_frame(frames, kind, h_ms=30.0)
        b = predict_frame(shifted, kind, h_ms=30.0)
        assert np.max(np.abs(b - (a + offset))) <= 1e-9


def test_predict_frame_time_shift_invariance():
    frames = make_frames(12, velocity=[0.7, 0.2, 0.0], seed=3, sigma=0.8)
    shifted = [
        predict.TrackedFrame(seq=f.seq, t_ms=f.t_ms + 123456.0, points=f.points) for f in frames
    ]
    for kind in (DeadReckoning(), Lagrange(4), poly(2, 8, ridge=0.0)):
        a = predict_frame(frames, kind, h_ms=25.0)
        b = predict_frame(shifted, kind, h_ms=25.0)
        assert np.max(np.abs(a - b)) <= 1e-9


def test_predict_frame_insufficient_history():
    frames = make_frames(3)
    with pytest.raises(InsufficientHistoryError):
        predict_frame(frames, poly(2, 10), h_ms=10.0)
    with pytest.raises(InsufficientHistoryError):
        predict_frame([], NoPrediction(), h_ms=10.0)


# --- SampleWindow ----------------------------------------------------------------


def test_sample_window_eviction():
    w = SampleWindow(capacity=3)
    for i in range(5):
        w.push(float(i), float(i * i))
    assert len(w) == 3
    assert w.newest_t_ms == 4.0
    assert np.allclose(w.times_s(), [-0.002, -0.001, 0.0])
    assert np.allclose(w.values(), [4.0, 9.0, 16.0])


def test_sample_window_rejects_nonincreasing_time():
    w = SampleWindow(capacity=3)
    w.push(5.0, 1.0)
    with pytest.raises(ValueError):
        w.push(5.0, 2.0)


def test_sample_window_capacity_bounds():
    with pytest.raises(ValueError):
        SampleWindow(capacity=1)
    with pytest.raises(ValueError):
        SampleWindow(capacity=61)


def test_regression_spec_validation():
    with pytest.raises(ValueError):
        RegressionSpec(order=4, window=10)
    with pytest.raises(ValueError):
        RegressionSpec(order=2, window=2)
    with pytest.raises(ValueError):
        RegressionSpec(order=1, window=5, ridge=-1.0)
