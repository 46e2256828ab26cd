"""Seasonal-trend decomposition by loess over history windows.

The decomposition follows Cleveland's procedure: an inner loop of
detrending, cycle-subseries smoothing, low-pass filtering and trend
smoothing, wrapped in robustness iterations that downweight outlying
residuals with bisquare weights. The residual is defined as
data - seasonal - trend, so the additive identity holds exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import Granularity, HistoryWindow
from .periodicity import PeriodEstimate


class InsufficientCyclesError(ValueError):
    """Window holds fewer than two full seasonal cycles."""


@dataclass(frozen=True)
class StlParams:
    """Decomposition parameters.

    n_p: observations per seasonal cycle.
    n_i: inner-loop passes.
    n_o: robustness (outer) passes.
    n_l: low-pass loess width, odd.
    n_s: seasonal smoother width (>= 7 unless deliberately overridden).
    n_t: trend smoother width, odd.
    """

    n_p: int
    n_i: int = 1
    n_o: int = 5
    n_l: int = 3
    n_s: int = 15
    n_t: int = 5

    def __post_init__(self):
        if self.n_p < 2:
            raise ValueError("n_p must be >= 2")
        if self.n_i < 1:
            raise ValueError("n_i must be >= 1")
        if self.n_o < 0:
            raise ValueError("n_o must be >= 0")
        for name in ("n_l", "n_t"):
            v = getattr(self, name)
            if v < 3 or v % 2 == 0:
                raise ValueError(f"{name} must be odd and >= 3")
        if self.n_s < 1:
            raise ValueError("n_s must be >= 1")


@dataclass(frozen=True)
class StlComponents:
    """Seasonal/trend/residual triple; summing the three reproduces the input."""

    seasonal: np.ndarray
    trend: np.ndarray
    residual: np.ndarray

    def __post_init__(self):
        if not (len(self.seasonal) == len(self.trend) == len(self.residual)):
            raise ValueError("components must share one length")


def _next_odd(x: float) -> int:
    # tolerate float fuzz in products like 1.67 * n_p
    c = math.ceil(x - 1e-9)
    return c if c % 2 == 1 else c + 1


def default_stl_params(period: PeriodEstimate, granularity: Granularity) -> StlParams:
    """Parameter defaults driven by the detected period.

    The period estimate is already expressed in samples at the working
    granularity, so n_p is simply its rounded value for minute, hour and
    day data alike. Trend and low-pass widths scale with n_p.
    """
    if not isinstance(granularity, Granularity):
        raise TypeError("granularity must be a Granularity")
    if period.period is None:
        raise ValueError("cannot derive decomposition parameters without a period")
    n_p = max(2, round(period.period))
    return StlParams(
        n_p=n_p,
        n_i=1,
        n_o=5,
        n_l=_next_odd(n_p),
        n_s=15,
        n_t=_next_odd(1.67 * n_p),
    )


def _weighted_linear_fit(x, y, w, x_eval):
    """Closed-form weighted degree-1 fit; falls back to the weighted mean
    when the design is (numerically) rank deficient."""
    s0 = np.sum(w)
    if s0 <= 0:
        return float(np.mean(y))
    s1 = np.sum(w * x)
    s2 = np.sum(w * x * x)
    t0 = np.sum(w * y)
    t1 = np.sum(w * x * y)
    denom = s0 * s2 - s1 * s1
    if abs(denom) <= 1e-12 * max(abs(s0 * s2), 1.0):
        return float(t0 / s0)
    slope = (s0 * t1 - s1 * t0) / denom
    intercept = (s2 * t0 - s1 * t1) / denom
    return float(intercept + slope * x_eval)


def loess_smooth(values, width: int, degree: int = 1,
                 robustness_weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Locally weighted regression over sample indices with tricube weights.

    Each point is fit from its `width` nearest samples. A width larger than
    twice the series collapses to a single global fit of the given degree.
    """
    y = np.asarray(values, dtype=np.float64)
    n = len(y)
    if width < 3 or width % 2 == 0:
        raise ValueError("width must be odd and >= 3")
    if degree not in (0, 1):
        raise ValueError("degree must be 0 or 1")
    if robustness_weights is not None:
        rw = np.asarray(robustness_weights, dtype=np.float64)
        if len(rw) != n or np.any(rw < 0):
            raise ValueError("robustness weights must be nonnegative and length-match")
    else:
        rw = None
    if n == 0:
        return y.copy()
    if n == 1:
        return y.copy()

    x = np.arange(n, dtype=np.float64)

    if width > 2 * n:
        w = np.ones(n) if rw is None else rw
        if degree == 0 or n < 2:
            s0 = np.sum(w)
            value = float(np.sum(w * y) / s0) if s0 > 0 else float(np.mean(y))
            return np.full(n, value)
        return np.array([_weighted_linear_fit(x, y, w, xi) for xi in x])

    q = min(width, n)
    half = (q - 1) // 2
    starts = np.clip(np.arange(n) - half, 0, n - q)
    idx = starts[:, None] + np.arange(q)[None, :]          # (n, q) neighborhoods
    dist = np.abs(idx - np.arange(n)[:, None]).astype(np.float64)
    h = dist.max(axis=1)
    if width > n:
        h = h * (width / n)
    h = np.maximum(h, 1e-12)
    u = np.minimum(dist / h[:, None], 1.0)
    w = (1.0 - u ** 3) ** 3
    if rw is not None:
        w = w * rw[idx]

    yn = y[idx]
    xn = idx.astype(np.float64)
    s0 = w.sum(axis=1)
    t0 = (w * yn).sum(axis=1)

    if degree == 0:
        out = np.where(s0 > 0, t0 / np.maximum(s0, 1e-300), yn.mean(axis=1))
        return out

    s1 = (w * xn).sum(axis=1)
    s2 = (w * xn * xn).sum(axis=1)
    t1 = (w * xn * yn).sum(axis=1)
    denom = s0 * s2 - s1 * s1
    scale = np.maximum(np.abs(s0 * s2), 1.0)
    ok = (np.abs(denom) > 1e-12 * scale) & (s0 > 0)

    out = np.empty(n)
    safe = np.where(ok, denom, 1.0)
    slope = (s0 * t1 - s1 * t0) / safe
    intercept = (s2 * t0 - s1 * t1) / safe
    out[ok] = (intercept + slope * x)[ok]
    # rank-deficient neighborhoods degrade to the weighted mean
    fallback = np.where(s0 > 0, t0 / np.maximum(s0, 1e-300), yn.mean(axis=1))
    out[~ok] = fallback[~ok]
    return out


def _moving_average(values: np.ndarray, width: int) -> np.ndarray:
    kernel = np.full(width, 1.0 / width)
    return np.convolve(values, kernel, mode="valid")


def _smooth_cycle_subseries(detrended: np.ndarray, n_p: int, n_s: int,
                            rw: np.ndarray) -> np.ndarray:
    """Smooth each phase's subseries and extend it one cycle at both ends.

    Returns an array covering positions -n_p .. n+n_p-1. When the seasonal
    width exceeds the subseries length the smoother degrades to the
    robustness-weighted subseries mean.
    """
    n = len(detrended)
    ext = np.empty(n + 2 * n_p)
    for phase in range(n_p):
        idx = np.arange(phase, n, n_p)
        sub = detrended[idx]
        sub_rw = rw[idx]
        m = len(sub)
        if n_s > m:
            total = sub_rw.sum()
            value = float((sub * sub_rw).sum() / total) if total > 0 else float(sub.mean())
            smoothed = np.full(m, value)
            pre = post = value
        else:
            smoothed = loess_smooth(sub, n_s if n_s % 2 == 1 else n_s + 1, 1, sub_rw)
            if m >= 2:
                pre = 2 * smoothed[0] - smoothed[1]
                post = 2 * smoothed[-1] - smoothed[-2]
            else:
                pre = post = smoothed[0]
        ext[phase] = pre                                  # cycle -1
        ext[n_p + idx] = smoothed
        ext[n_p + phase + m * n_p] = post                 # one cycle past the end
    return ext


def _low_pass(extended: np.ndarray, n_p: int, n_l: int) -> np.ndarray:
    out = _moving_average(extended, n_p)
    out = _moving_average(out, n_p)
    out = _moving_average(out, 3)
    return loess_smooth(out, n_l, 1)


def _initial_trend(data: np.ndarray, n_p: int) -> np.ndarray:
    """Warm-start trend: double moving average over one cycle plus a 3-MA.

    The padding continues the series periodically, shifted by the mean
    per-cycle rise; lag-n_p differences cancel any period-n_p component, so
    line-plus-seasonal inputs extend exactly and the averaged trend starts
    on the line. Starting the inner loop here instead of at zero saves
    several convergence passes.
    """
    rise = float((data[n_p:] - data[:-n_p]).mean())
    left = data[0:n_p] - rise
    right = data[len(data) - n_p:] + rise
    padded = np.concatenate([left, data, right])
    out = _moving_average(padded, n_p)
    out = _moving_average(out, n_p)
    return _moving_average(out, 3)


def _bisquare_weights(residual: np.ndarray) -> np.ndarray:
    h = 6.0 * float(np.median(np.abs(residual)))
    scale = float(np.max(np.abs(residual), initial=0.0))
    if h <= 1e-12 * max(scale, 1.0):
        return np.ones(len(residual))
    u = np.minimum(np.abs(residual) / h, 1.0)
    return (1.0 - u ** 2) ** 2


def stl_decompose(window: HistoryWindow, params: StlParams) -> StlComponents:
    """Decompose a window into seasonal, trend, and residual components."""
    data = np.asarray(window.data, dtype=np.float64)
    n = len(data)
    if n < 2 * params.n_p:
        raise InsufficientCyclesError(
            f"window of {n} points holds fewer than two cycles of {params.n_p}")

    seasonal = np.zeros(n)
    trend = _initial_trend(data, params.n_p)
    rw = np.ones(n)

    for outer in range(params.n_o + 1):
        for _ in range(params.n_i):
            detrended = data - trend
            cycle = _smooth_cycle_subseries(detrended, params.n_p, params.n_s, rw)
            low = _low_pass(cycle, params.n_p, params.n_l)
            seasonal = cycle[params.n_p:params.n_p + n] - low
            deseasonalized = data - seasonal
            trend = loess_smooth(deseasonalized, params.n_t, 1, rw)
        if outer < params.n_o:
            rw = _bisquare_weights(data - seasonal - trend)

    residual = data - seasonal - trend
    return StlComponents(seasonal=seasonal, trend=trend, residual=residual)
