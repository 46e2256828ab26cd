"""Two-tier period detection: periodogram candidates verified on autocorrelation hills.

The periodogram proposes candidate periods from the strongest spectral bins;
a candidate is accepted only if the autocorrelation function has a local
maximum (a "hill") close to it and above the white-noise significance band.
The hill lag is the refined period estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import HistoryWindow

#: Default number of spectral candidates fed into ACF verification.
DEFAULT_MAX_CANDIDATES = 5


class DegenerateWindowError(ValueError):
    """Window too short for spectral analysis."""


class ZeroVarianceError(ValueError):
    """Autocorrelation is undefined on a constant window."""


@dataclass(frozen=True)
class Spectrum:
    """One-sided power spectrum of a mean-centered window."""

    powers: np.ndarray
    dft: np.ndarray
    n: int


@dataclass(frozen=True)
class AcfSeries:
    """Sample autocorrelation for lags 0 .. ceil((N-1)/2), normalized to ACF(0)=1."""

    values: np.ndarray


@dataclass(frozen=True)
class PeriodEstimate:
    """Refined period in samples, or period=None when no candidate validates."""

    period: Optional[float]
    candidate_k: int
    validated: bool

    @property
    def present(self) -> bool:
        return self.period is not None


def _half_range(n: int) -> int:
    """Largest index of the one-sided spectrum / ACF lag range."""
    return -(-(n - 1) // 2)  # ceil((n-1)/2)


def periodogram(window: HistoryWindow) -> Spectrum:
    """Squared-magnitude DFT of the mean-centered window, one-sided."""
    data = window.data
    n = len(data)
    if n < 4:
        raise DegenerateWindowError(f"window of {n} points is too short")
    centered = data - data.mean()
    dft = np.fft.rfft(centered)
    k_max = _half_range(n)
    dft = dft[:k_max + 1]
    powers = np.abs(dft) ** 2
    return Spectrum(powers=powers, dft=dft, n=n)


def autocorrelation(window: HistoryWindow) -> AcfSeries:
    """Sample ACF of the mean-centered window for lags 0 .. ceil((N-1)/2).

    Raises ZeroVarianceError on a constant window, where the normalization
    is undefined; callers treat that as "no period".
    """
    data = window.data
    n = len(data)
    if n < 4:
        raise DegenerateWindowError(f"window of {n} points is too short")
    centered = data - data.mean()
    denom = float(np.dot(centered, centered))
    if denom <= 0.0 or not np.isfinite(denom):
        raise ZeroVarianceError("constant window has undefined autocorrelation")
    full = np.correlate(centered, centered, mode="full")
    lags = full[n - 1:n + _half_range(n)]
    return AcfSeries(values=lags / denom)


def _acf_hills(acf: np.ndarray) -> list[int]:
    """Lags of strict local maxima; plateaus count once, at their smallest lag."""
    hills = []
    n = len(acf)
    i = 1
    while i < n - 1:
        j = i
        while j + 1 < n and acf[j + 1] == acf[i]:
            j += 1
        if j < n - 1 and acf[i] > acf[i - 1] and acf[i] > acf[j + 1]:
            hills.append(i)
        i = j + 1
    return hills


def detect_period(window: HistoryWindow,
                  max_candidates: int = DEFAULT_MAX_CANDIDATES) -> PeriodEstimate:
    """Estimate the dominant period of a window, in samples.

    The strongest spectral bins (k >= 2) propose candidate periods N/k; each
    is checked against the ACF: there must be a hill within the spectral
    resolution of the bin (N/(k*(k+1))) whose value clears the approximate
    95% white-noise band 2/sqrt(N). The hill lag of the most powerful
    validated candidate is returned.
    """
    n = window.n_points
    if n < 8:
        raise DegenerateWindowError(f"window of {n} points is too short for detection")

    spectrum = periodogram(window)
    try:
        acf = autocorrelation(window).values
    except ZeroVarianceError:
        return PeriodEstimate(period=None, candidate_k=0, validated=False)

    powers = spectrum.powers.copy()
    if len(powers) <= 2 or not np.any(powers[2:] > 0):
        return PeriodEstimate(period=None, candidate_k=0, validated=False)
    powers[:2] = -1.0  # exclude DC and the whole-window cycle

    order = np.argsort(powers)[::-1]
    candidates = [int(k) for k in order[:max_candidates] if powers[k] > 0]
    if not candidates:
        return PeriodEstimate(period=None, candidate_k=0, validated=False)

    hills = _acf_hills(acf)
    significance = 2.0 / np.sqrt(n)
    max_lag = _half_range(n)

    for k in candidates:
        candidate_period = n / k
        tolerance = n / (k * (k + 1))
        best_lag = None
        best_dist = None
        for lag in hills:
            if lag < 2 or lag > max_lag:
                continue
            dist = abs(lag - candidate_period)
            if dist <= tolerance and acf[lag] > significance:
                if best_dist is None or dist < best_dist:
                    best_dist = dist
                    best_lag = lag
        if best_lag is not None:
            return PeriodEstimate(period=float(best_lag), candidate_k=k, validated=True)

    return PeriodEstimate(period=None, candidate_k=candidates[0], validated=False)
