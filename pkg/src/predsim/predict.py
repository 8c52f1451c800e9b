"""Extrapolation predictors for tracked-point channels.

Every predictor answers the same question: given the recent samples of a
scalar channel, where will it be h seconds from the newest sample? The
polynomial regressors fit least squares through the window and evaluate the
polynomial at t = h; Lagrange runs the interpolating polynomial through all
samples instead; dead reckoning is the secant through the last two.

Times are always expressed in seconds relative to the newest sample (t = 0
at the newest, negative into the past). This keeps the normal equations
well conditioned; fitting against absolute millisecond timestamps would
not survive order 2 or 3.

A frame predictor applies the chosen scalar method independently to the
x, y and z channels of all 50 tracked points. Channels in one frame share
their timestamps, so the fitted normal matrix is shared too and one solve
handles all 150 right-hand sides.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .trace import POINT_COUNT, TrackedFrame

MAX_WINDOW = 60
DEFAULT_RIDGE = 1e-9


class DegenerateWindowError(ValueError):
    """The window cannot support the requested fit (singular or duplicate times)."""


class InsufficientHistoryError(ValueError):
    """Not enough samples yet; the caller should fall back to no prediction."""


class HorizonMismatchError(ValueError):
    """A recurrent model was queried at a horizon it was not trained for."""


@dataclass(frozen=True)
class RegressionSpec:
    order: int
    window: int
    ridge: float = DEFAULT_RIDGE  # never applied to the intercept

    def __post_init__(self):
        if self.order not in (1, 2, 3):
            raise ValueError("order must be 1, 2 or 3")
        if self.window < self.order + 1:
            raise ValueError("window must be at least order + 1")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


@dataclass(frozen=True)
class NoPrediction:
    pass


@dataclass(frozen=True)
class DeadReckoning:
    pass


@dataclass(frozen=True)
class Lagrange:
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("Lagrange needs at least 2 samples")


@dataclass(frozen=True)
class PolyRegression:
    spec: RegressionSpec


@dataclass(frozen=True)
class Recurrent:
    model: object  # rnn.RnnModel; duck-typed to avoid a hard dependency here
    horizon_tol_ms: float = 2.0


PredictorKind = Union[NoPrediction, DeadReckoning, Lagrange, PolyRegression, Recurrent]


def required_history(kind: PredictorKind) -> int:
    if isinstance(kind, NoPrediction):
        return 1
    if isinstance(kind, DeadReckoning):
        return 2
    if isinstance(kind, Lagrange):
        return kind.n
    if isinstance(kind, PolyRegression):
        return kind.spec.window
    if isinstance(kind, Recurrent):
        return int(kind.model.spec.input_len)
    raise TypeError(f"unknown predictor kind: {kind!r}")


class SampleWindow:
    """Bounded time-ordered history of (t_ms, value) samples for one channel."""

    def __init__(self, capacity: int):
        if not 2 <= capacity <= MAX_WINDOW:
            raise ValueError(f"capacity must be in [2, {MAX_WINDOW}]")
        self.capacity = capacity
        self._entries: deque[tuple[float, float]] = deque(maxlen=capacity)

    def push(self, t_ms: float, value: float) -> None:
        if self._entries and t_ms <= self._entries[-1][0]:
            raise ValueError("timestamps must be strictly increasing")
        self._entries.append((t_ms, value))

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def newest_t_ms(self) -> float:
        return self._entries[-1][0]

    @property
    def newest_value(self) -> float:
        return self._entries[-1][1]

    def times_s(self) -> np.ndarray:
        """Times in seconds relative to the newest sample (newest = 0)."""
        t = np.array([e[0] for e in self._entries])
        return (t - t[-1]) / 1000.0

    def values(self) -> np.ndarray:
        return np.array([e[1] for e in self._entries])


# --- least squares ---------------------------------------------------------


def _solve_small(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting for the (k<=4, k) normal system.

    The matrix is symmetrically equilibrated first (power sums of seconds
    span many decades, which would otherwise defeat any fixed pivot
    threshold). After scaling, a pivot below 1e-12 times the largest
    diagonal entry marks the window as rank deficient. b may carry many
    right-hand-side columns.
    """
    a = np.array(a, dtype=float)
    b = np.atleast_2d(np.array(b, dtype=float))
    k = a.shape[0]
    diag = np.abs(np.diag(a))
    scale = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)
    a = a * scale[:, None] * scale[None, :]
    b = b * scale[:, None]
    tol = 1e-12 * max(float(np.max(np.abs(np.diag(a)))), np.finfo(float).tiny)
    for col in range(k):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) < tol:
            raise DegenerateWindowError("normal equations are numerically singular")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        factors = a[col + 1 :, col] / a[col, col]
        a[col + 1 :, col:] -= factors[:, None] * a[col, col:]
        b[col + 1 :] -= factors[:, None] * b[col][None, :]
    x = np.zeros_like(b)
    for row in range(k - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x * scale[:, None]


def _solve_small_batch(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """_solve_small over a stack of systems: a (C, k, k), b (C, k, m).

    Performs the identical equilibrated partial-pivot elimination on every
    system at once. Returns (solutions (C, k, m), ok mask (C,)); systems
    whose pivot collapses are flagged instead of raising, with NaN results.
    """
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    C, k, _ = a.shape
    diag = np.abs(a[:, np.arange(k), np.arange(k)])
    scale = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)
    a = a * scale[:, :, None] * scale[:, None, :]
    b = b * scale[:, :, None]
    tol = 1e-12 * np.maximum(
        np.max(np.abs(a[:, np.arange(k), np.arange(k)]), axis=1), np.finfo(float).tiny
    )
    ok = np.ones(C, dtype=bool)
    rows = np.arange(C)
    for col in range(k):
        piv = col + np.argmax(np.abs(a[:, col:, col]), axis=1)
        ok &= np.abs(a[rows, piv, col]) >= tol
        swap = piv != col
        if np.any(swap):
            sw = np.nonzero(swap)[0]
            a[sw, col], a[sw, piv[sw]] = a[sw, piv[sw]], a[sw, col].copy()
            b[sw, col], b[sw, piv[sw]] = b[sw, piv[sw]], b[sw, col].copy()
        pivot = np.where(a[:, col, col] == 0.0, 1.0, a[:, col, col])
        factors = a[:, col + 1 :, col] / pivot[:, None]
        a[:, col + 1 :, col:] -= factors[:, :, None] * a[:, None, col, col:]
        b[:, col + 1 :] -= factors[:, :, None] * b[:, None, col]
    x = np.zeros_like(b)
    for row in range(k - 1, -1, -1):
        rhs = b[:, row] - np.einsum("cj,cjm->cm", a[:, row, row + 1 :], x[:, row + 1 :])
        denom = np.where(a[:, row, row] == 0.0, 1.0, a[:, row, row])
        x[:, row] = rhs / denom[:, None]
    x = x * scale[:, :, None]
    x[~ok] = np.nan
    return x, ok


def normal_equations(times_s: np.ndarray, values: np.ndarray, order: int, ridge: float):
    """Assemble (X'X + ridge*D, X'y) from power sums; D skips the intercept."""
    t = np.asarray(times_s, dtype=float)
    y = np.asarray(values, dtype=float)
    k = order + 1
    powers = t[:, None] ** np.arange(2 * order + 1)[None, :]  # (n, 2*order+1)
    s = powers.sum(axis=0)
    a = np.empty((k, k))
    for i in range(k):
        a[i] = s[i : i + k]
    if ridge:
        a[np.arange(1, k), np.arange(1, k)] += ridge
    b = powers[:, :k].T @ (y if y.ndim > 1 else y[:, None])
    return a, (b if y.ndim > 1 else b[:, 0])


def fit_ols(times_s, values, order: int, ridge: float = 0.0) -> np.ndarray:
    """Least-squares polynomial coefficients (beta_0..beta_order).

    `values` may be (n,) for one channel or (n, m) for m channels sharing
    the same timestamps; coefficients come back with a matching trailing
    dimension. With ridge = 0 this is the plain normal-equation solution.
    """
    t = np.asarray(times_s, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.ndim != 1 or len(t) != y.shape[0]:
        raise ValueError("times and values must align on the sample axis")
    if len(t) < order + 1:
        raise InsufficientHistoryError(f"need at least {order + 1} samples for order {order}")
    a, b = normal_equations(t, y, order, ridge)
    beta = _solve_small(a, b if y.ndim > 1 else b[:, None])
    return beta if y.ndim > 1 else beta[:, 0]


def extrapolate(coeffs: np.ndarray, h_s: float):
    """Horner evaluation of the fitted polynomial at t = h (seconds ahead)."""
    if h_s < 0:
        raise ValueError("horizon must be >= 0")
    c = np.asarray(coeffs, dtype=float)
    result = c[-1]
    for j in range(c.shape[0] - 2, -1, -1):
        result = result * h_s + c[j]
    return result


# --- simple extrapolators --------------------------------------------------


def dead_reckon(window: SampleWindow, h_s: float) -> float:
    """Secant through the last two samples, carried h seconds forward."""
    if len(window) < 2:
        raise InsufficientHistoryError("dead reckoning needs 2 samples")
    t = window.times_s()
    v = window.values()
    return float(dead_reckon_multi(t[-2:], v[-2:], h_s))


def dead_reckon_multi(times_s: np.ndarray, values: np.ndarray, h_s: float):
    dt = times_s[-1] - times_s[-2]
    if dt == 0:
        raise DegenerateWindowError("duplicate timestamps")
    rate = (values[-1] - values[-2]) / dt
    return values[-1] + h_s * rate


def lagrange_extrapolate(window: SampleWindow, h_s: float) -> float:
    """Value at t = h of the unique polynomial through every sample in the window."""
    return float(lagrange_multi(window.times_s(), window.values(), h_s))


def lagrange_multi(times_s: np.ndarray, values: np.ndarray, h_s: float):
    """Barycentric Lagrange evaluation; values may be (n,) or (n, m)."""
    t = np.asarray(times_s, dtype=float)
    y = np.asarray(values, dtype=float)
    n = len(t)
    diff = t[:, None] - t[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0):
        raise DegenerateWindowError("duplicate timestamps")
    w = 1.0 / diff.prod(axis=1)
    dx = h_s - t
    exact = np.nonzero(dx == 0)[0]
    if len(exact):
        return y[exact[0]]
    q = w / dx
    if y.ndim > 1:
        return (q[:, None] * y).sum(axis=0) / q.sum()
    return (q * y).sum() / q.sum()


# --- frame-level prediction -------------------------------------------------


def predict_frame(history: Sequence[TrackedFrame], kind: PredictorKind, h_ms: float) -> np.ndarray:
    """Predict all 50 points h_ms past the newest sample; (50, 3) result.

    Each of the 150 scalar channels is extrapolated independently. Raises
    InsufficientHistoryError while the window is still warming up; callers
    are expected to fall back to the newest frame.
    """
    if not history:
        raise InsufficientHistoryError("no samples yet")
    if len(history) < required_history(kind):
        raise InsufficientHistoryError(
            f"have {len(history)} samples, need {required_history(kind)}"
        )
    newest = history[-1]
    if isinstance(kind, NoPrediction):
        return newest.points.copy()

    n = required_history(kind)
    recent = list(history)[-max(n, 2) :]
    times_s = np.array([f.t_ms - newest.t_ms for f in recent]) / 1000.0
    values = np.stack([f.points.reshape(-1) for f in recent])  # (n, 150)
    flat = predict_channels(times_s, values, kind, h_ms / 1000.0, newest.points.reshape(-1))
    return flat.reshape(POINT_COUNT, 3)


def predict_channels(
    times_s: np.ndarray,
    values: np.ndarray,
    kind: PredictorKind,
    h_s: float,
    newest_flat: np.ndarray,
) -> np.ndarray:
    """Vectorized core shared by predict_frame and the network simulator."""
    if isinstance(kind, NoPrediction):
        return np.array(newest_flat, dtype=float)
    if isinstance(kind, DeadReckoning):
        return dead_reckon_multi(times_s[-2:], values[-2:], h_s)
    if isinstance(kind, Lagrange):
        return lagrange_multi(times_s[-kind.n :], values[-kind.n :], h_s)
    if isinstance(kind, PolyRegression):
        spec = kind.spec
        beta = fit_ols(times_s[-spec.window :], values[-spec.window :], spec.order, spec.ridge)
        return extrapolate(beta, h_s)
    if isinstance(kind, Recurrent):
        model = kind.model
        if abs(h_s * 1000.0 - model.horizon_ms) > kind.horizon_tol_ms:
            raise HorizonMismatchError(
                f"model trained for {model.horizon_ms} ms, queried at {h_s * 1000.0:.3f} ms"
            )
        n = int(model.spec.input_len)
        windows = values[-n:].T  # (channels, input_len)
        disp = model.forward_batch(windows)
        return values[-1] + disp
    raise TypeError(f"unknown predictor kind: {kind!r}")


def poly(order: int, window: int, ridge: float = DEFAULT_RIDGE) -> PolyRegression:
    return PolyRegression(RegressionSpec(order=order, window=window, ridge=ridge))
