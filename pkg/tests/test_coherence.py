import numpy as np
import pytest

from snvspin.coherence import (
    CoherenceResult,
    DecayTrace,
    fit_power_law,
    fit_stretched_exponential,
    normalize_decay,
    stretched_exponential,
    synthetic_decay,
)
from snvspin.optimize import FitError
from snvspin.synthetic import CPMG_BETA, CPMG_PULSES, cpmg_t2


def test_trace_validation():
    with pytest.raises(ValueError):
        DecayTrace(0, ((0.0, 1.0),))
    with pytest.raises(ValueError):
        DecayTrace(1, ((0.0, 1.0), (0.0, 0.9)))
    with pytest.raises(ValueError):
        DecayTrace(1, ((0.0, np.nan),))
    with pytest.raises(ValueError):
        DecayTrace(1, ())


def test_from_tau_uses_total_time():
    tr = DecayTrace.from_tau(8, [0.1, 0.2], [1.0, 0.9])
    assert tr.times == pytest.approx([0.8, 1.6])


def test_normalize_is_scaling_and_idempotent():
    times = np.linspace(0, 1, 50)
    raw = synthetic_decay(4, 0.3, times, counts_scale=1234.0)
    assert not raw.normalized
    norm = normalize_decay(raw)
    assert np.mean(norm.counts[-10:]) == pytest.approx(0.5, rel=1e-12)
    assert norm.counts / raw.counts == pytest.approx(np.full(50, norm.counts[0] / raw.counts[0]), rel=1e-12)
    assert normalize_decay(norm) == norm
    with pytest.raises(ValueError):
        normalize_decay(DecayTrace(1, tuple((t, 1.0) for t in range(5))))
    with pytest.raises(ValueError):
        normalize_decay(DecayTrace(1, tuple((t, 0.0) for t in range(12))))


@pytest.mark.parametrize("n", CPMG_PULSES)
def test_noiseless_recovery(n):
    t2 = cpmg_t2(n)
    res = fit_stretched_exponential(synthetic_decay(n, t2, np.linspace(0, 3 * t2, 120)))
    assert res.t2 == pytest.approx(t2, rel=1e-6)
    assert res.amplitude == pytest.approx(0.5, rel=1e-6)
    assert res.reliable


def test_unnormalized_needs_free_offset():
    tr = synthetic_decay(1, 0.2, np.linspace(0, 0.6, 80), counts_scale=900.0)
    with pytest.raises(ValueError):
        fit_stretched_exponential(tr)
    res = fit_stretched_exponential(tr, free_offset=True)
    assert res.t2 == pytest.approx(0.2, rel=1e-6)
    assert res.amplitude == pytest.approx(450.0, rel=1e-6)


def test_other_stretching_factor():
    tr = synthetic_decay(2, 0.4, np.linspace(0, 1.2, 100), xi=1.5)
    assert fit_stretched_exponential(tr, xi=1.5).t2 == pytest.approx(0.4, rel=1e-6)
    with pytest.raises(ValueError):
        fit_stretched_exponential(tr, xi=0.0)


def test_long_t2_flagged_unreliable():
    tr = synthetic_decay(1, 50.0, np.linspace(0, 1.0, 60))
    res = fit_stretched_exponential(tr)
    assert not res.reliable
    assert "ten times" in res.message


def test_flat_trace_raises_or_flags():
    tr = DecayTrace(1, tuple((t, 0.5) for t in np.linspace(0, 1, 30)), normalized=True)
    try:
        res = fit_stretched_exponential(tr)
    except FitError:
        return
    assert not res.reliable or abs(res.amplitude) < 1e-9


def test_power_law_exact_and_errors():
    pl = fit_power_law([(n, cpmg_t2(n)) for n in CPMG_PULSES])
    assert pl.beta == pytest.approx(CPMG_BETA, abs=1e-12)
    assert pl.prefactor == pytest.approx(0.179, rel=1e-12)
    res = [CoherenceResult(n, cpmg_t2(n), 0.5, 4.0, 0.0, 0.0) for n in CPMG_PULSES]
    assert fit_power_law(res).beta == pytest.approx(CPMG_BETA, abs=1e-12)
    with pytest.raises(ValueError):
        fit_power_law([(1, 1.0), (2, 2.0)])
    with pytest.raises(ValueError):
        fit_power_law([(1, 1.0), (2, -2.0), (4, 1.0)])


def test_model_values():
    assert stretched_exponential(0.0, 1.0, 0.5) == pytest.approx(1.0)
    assert stretched_exponential(1.0, 1.0, 0.5, xi=1.0) == pytest.approx(0.5 * np.exp(-1) + 0.5)
