import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clouddet.periodicity import (DegenerateWindowError, ZeroVarianceError,
                                  autocorrelation, detect_period, periodogram)
from conftest import window_of


def dft_power_oracle(values):
    """Direct O(N^2) DFT of the mean-centered input, one-sided powers."""
    x = np.asarray(values, dtype=np.float64)
    x = x - x.mean()
    n = len(x)
    k_max = int(np.ceil((n - 1) / 2))
    powers = np.zeros(k_max + 1)
    for k in range(k_max + 1):
        re = sum(x[t] * np.cos(-2 * np.pi * k * t / n) for t in range(n))
        im = sum(x[t] * np.sin(-2 * np.pi * k * t / n) for t in range(n))
        powers[k] = re * re + im * im
    return powers


def acf_oracle(values):
    """Brute-force normalized autocorrelation of the mean-centered input."""
    x = np.asarray(values, dtype=np.float64)
    x = x - x.mean()
    n = len(x)
    denom = float(np.dot(x, x))
    lags = int(np.ceil((n - 1) / 2))
    return np.array([sum(x[t] * x[t + tau] for t in range(n - tau)) / denom
                     for tau in range(lags + 1)])


def test_constant_window_has_zero_power_after_centering():
    spectrum = periodogram(window_of(np.full(32, 7.5)))
    np.testing.assert_allclose(spectrum.powers, 0.0, atol=1e-18)


def test_sine_period_16_peaks_at_k4():
    t = np.arange(64)
    w = window_of(np.sin(2 * np.pi * t / 16))
    spectrum = periodogram(w)
    assert int(np.argmax(spectrum.powers)) == 4
    np.testing.assert_allclose(spectrum.powers, dft_power_oracle(w.data),
                               rtol=1e-9, atol=1e-9)


def test_two_sines_peak_at_their_bins():
    t = np.arange(64)
    w = window_of(np.sin(2 * np.pi * t / 8) + np.sin(2 * np.pi * t / 32))
    powers = periodogram(w).powers
    np.testing.assert_allclose(powers, dft_power_oracle(w.data), rtol=1e-9, atol=1e-9)
    top2 = set(np.argsort(powers)[-2:])
    assert top2 == {8, 2}


def test_periodogram_rejects_tiny_windows():
    with pytest.raises(DegenerateWindowError):
        periodogram(window_of([1.0, 2.0, 3.0]))


@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=8, max_size=40))
def test_parseval_links_power_and_energy(values):
    x = np.asarray(values) - np.mean(values)
    full_power = np.abs(np.fft.fft(x)) ** 2
    assert np.isclose(full_power.sum(), len(x) * np.dot(x, x),
                      rtol=1e-6, atol=1e-6)
    # the one-sided spectrum agrees with the matching full-FFT bins
    spectrum = periodogram(window_of(values))
    np.testing.assert_allclose(spectrum.powers, full_power[:len(spectrum.powers)],
                               rtol=1e-9, atol=1e-6)


def test_acf_of_cosine_has_hill_at_period():
    t = np.arange(168)
    w = window_of(np.cos(2 * np.pi * t / 24))
    acf = autocorrelation(w).values
    np.testing.assert_allclose(acf, acf_oracle(w.data), rtol=1e-9, atol=1e-9)
    assert acf[24] > acf[23] and acf[24] > acf[25]
    assert acf[0] == pytest.approx(1.0)
    assert np.all(np.abs(acf) <= 1.0 + 1e-12)


def test_white_noise_acf_stays_inside_band():
    rng = np.random.default_rng(99)
    w = window_of(rng.normal(0, 1, 256))
    acf = autocorrelation(w).values
    np.testing.assert_allclose(acf, acf_oracle(w.data), rtol=1e-9, atol=1e-9)
    assert np.all(np.abs(acf[2:]) < 0.3)
    assert not detect_period(w).validated


def test_constant_window_acf_is_undefined():
    with pytest.raises(ZeroVarianceError):
        autocorrelation(window_of(np.full(16, 2.0)))


def test_detect_period_sine24():
    t = np.arange(168)
    estimate = detect_period(window_of(np.sin(2 * np.pi * t / 24)))
    assert estimate.validated
    assert abs(estimate.period - 24) <= 1


def test_detect_period_constant_is_absent():
    estimate = detect_period(window_of(np.full(64, 3.0)))
    assert not estimate.validated and estimate.period is None


def test_detect_period_ramp_is_absent():
    estimate = detect_period(window_of(np.arange(64.0)))
    assert not estimate.validated and estimate.period is None


@given(st.floats(min_value=0.01, max_value=100.0))
@settings(max_examples=25)
def test_scale_invariance(c):
    t = np.arange(96)
    base = np.sin(2 * np.pi * t / 12) + 0.1 * np.cos(2 * np.pi * t / 5)
    a = detect_period(window_of(base))
    b = detect_period(window_of(c * base))
    assert a.period == b.period and a.validated == b.validated


@given(st.floats(min_value=-100.0, max_value=100.0))
@settings(max_examples=25)
def test_shift_invariance(offset):
    t = np.arange(96)
    base = np.sin(2 * np.pi * t / 12)
    a = detect_period(window_of(base))
    b = detect_period(window_of(base + offset))
    assert a.period == b.period and a.validated == b.validated


def test_period_bounds_when_present():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(16, 200))
        period = int(rng.integers(4, max(5, n // 3)))
        t = np.arange(n)
        estimate = detect_period(window_of(np.sin(2 * np.pi * t / period)
                                           + rng.normal(0, 0.2, n)))
        if estimate.period is not None:
            assert 2 <= estimate.period <= n / 2
