import numpy as np
import pytest

from snvspin.calibration import (
    MIN_FFT_SAMPLES,
    EchoTrace,
    calibrate,
    corrected_field,
    expected_larmor,
    fft_spectrum,
    fit_echo_modulation,
    synthetic_trace,
)
from snvspin.optimize import FitError
from snvspin.synthetic import ECHO_PARALLEL, ECHO_PERPENDICULAR, ECHO_TAUS_US


def test_expected_larmor_exact():
    assert expected_larmor(0.1) == 0.53542
    assert expected_larmor(0.0) == 0.0
    with pytest.raises(ValueError):
        expected_larmor(-0.1)


def test_corrected_field_ratio_and_floor():
    cf = corrected_field(0.967 * 0.53542, 0.1)
    assert cf.value == pytest.approx(0.0967, rel=1e-12)
    assert cf.ratio == pytest.approx(0.967, rel=1e-12)
    assert cf.uncertainty == pytest.approx(0.005 * 0.0967, rel=1e-12)
    big = corrected_field(0.5, 0.1, f_stderr=0.05)
    assert big.uncertainty == pytest.approx(big.value * 0.1, rel=1e-12)
    with pytest.raises(ValueError):
        corrected_field(0.0, 0.1)
    with pytest.raises(ValueError):
        corrected_field(0.5, 0.0)


def test_trace_validation():
    with pytest.raises(ValueError):
        EchoTrace(((0.0, 1.0),), "diagonal", 0.1)
    with pytest.raises(ValueError):
        EchoTrace(((1.0, 1.0), (0.5, 1.0)), "parallel", 0.1)
    with pytest.raises(ValueError):
        EchoTrace(((0.0, np.inf),), "parallel", 0.1)
    with pytest.raises(ValueError):
        EchoTrace((), "parallel", 0.1)


def test_fft_finds_sinusoid():
    taus = np.linspace(0, 40, 2000)
    spectrum = fft_spectrum(taus=taus, signal=np.cos(2 * np.pi * 0.7 * taus))
    assert spectrum.peaks[0][0] == pytest.approx(0.7, abs=spectrum.bin_width)
    assert spectrum.bin_width == pytest.approx(1 / (2000 * (taus[1] - taus[0])), rel=1e-12)


def test_fft_resamples_nonuniform():
    taus = np.sort(np.random.default_rng(1).uniform(0, 40, 1500))
    spectrum = fft_spectrum(taus=taus, signal=np.cos(2 * np.pi * 0.4 * taus))
    assert spectrum.peaks[0][0] == pytest.approx(0.4, abs=2 * spectrum.bin_width)


def test_parallel_noiseless_recovery():
    fit = fit_echo_modulation(synthetic_trace("parallel", ECHO_PARALLEL, ECHO_TAUS_US))
    assert fit.converged and not fit.degenerate
    for key, value in ECHO_PARALLEL.items():
        assert fit.params[key] == pytest.approx(value, rel=1e-6, abs=1e-9), key
    assert fit.frequency == fit.params["f"]


def test_perpendicular_noiseless_recovery_and_ordering():
    fit = fit_echo_modulation(synthetic_trace("perpendicular", ECHO_PERPENDICULAR, ECHO_TAUS_US))
    assert fit.params["f1"] == pytest.approx(0.506, rel=1e-8)
    assert fit.params["f2"] == pytest.approx(1.2, rel=1e-8)
    assert fit.proximal_frequency == fit.params["f2"]
    swapped = dict(ECHO_PERPENDICULAR, f1=1.2, f2=0.506)
    fit2 = fit_echo_modulation(synthetic_trace("perpendicular", swapped, ECHO_TAUS_US))
    assert fit2.params["f1"] < fit2.params["f2"]


def test_calibrate_parallel_and_perpendicular():
    _, par = calibrate(synthetic_trace("parallel", ECHO_PARALLEL, ECHO_TAUS_US))
    assert par.value * 1e3 == pytest.approx(96.7, abs=0.1)
    _, perp = calibrate(synthetic_trace("perpendicular", ECHO_PERPENDICULAR, ECHO_TAUS_US))
    assert perp.value * 1e3 == pytest.approx(94.5, abs=0.1)


def test_flat_trace_is_degenerate():
    trace = EchoTrace(tuple((t, 0.3) for t in ECHO_TAUS_US[:200]), "parallel", 0.1)
    fit = fit_echo_modulation(trace)
    assert fit.degenerate and np.isnan(fit.frequency)
    with pytest.raises(FitError):
        calibrate(trace)


def test_short_trace_rejected():
    trace = EchoTrace(tuple((float(t), 0.1) for t in range(MIN_FFT_SAMPLES - 1)), "parallel", 0.1)
    with pytest.raises(ValueError, match="at least"):
        fit_echo_modulation(trace)


def test_noisy_parallel_few_seeds():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        fit = fit_echo_modulation(synthetic_trace("parallel", ECHO_PARALLEL, ECHO_TAUS_US, noise=0.02 * ECHO_PARALLEL["A"], rng=rng))
        assert abs(fit.frequency / ECHO_PARALLEL["f"] - 1) < 1e-4
        assert fit.frequency_stderr > 0
