import numpy as np
import pytest

from snvspin.fitting import FitStage, fit_stage
from snvspin.optimize import FitError, levenberg_marquardt, numeric_jacobian
from snvspin.synthetic import make_dataset, reference_model


def exp_residuals(t, y):
    return lambda p: p[0] * np.exp(-t / p[1]) + p[2] - y


def test_recovers_exponential_and_monotone_cost():
    t = np.linspace(0, 5, 60)
    y = 2.0 * np.exp(-t / 1.3) + 0.4
    res = levenberg_marquardt(exp_residuals(t, y), [1.0, 0.5, 0.0])
    assert res.converged
    assert res.x == pytest.approx([2.0, 1.3, 0.4], rel=1e-8)
    assert all(b < a for a, b in zip(res.cost_history, res.cost_history[1:]))
    assert res.gradient_norm < 1e-8 * res.initial_gradient_norm


def test_gradient_reduction_on_curved_valley_and_stage_fit():
    truth = reference_model("A")
    res = levenberg_marquardt(
        lambda p: np.array([p[0] - 3.0, 10 * (p[1] - p[0] ** 2)]), [0.0, 0.0]
    )
    assert res.gradient_norm < 1e-8 * res.initial_gradient_norm
    fit = fit_stage(FitStage.for_param("f32_g"), make_dataset(truth, "odmr_qubit"), truth.with_params(f32_g=0.5))
    assert all(b <= a for a, b in zip(fit.cost_history, fit.cost_history[1:]))


def test_stderr_matches_noise_scale():
    rng = np.random.default_rng(2)
    x = np.linspace(0, 1, 400)
    y = 1.5 * x + 0.2 + rng.normal(0, 0.01, x.size)
    res = levenberg_marquardt(lambda p: p[0] * x + p[1] - y, [0.0, 0.0])
    a = np.column_stack([x, np.ones_like(x)])
    coef, rss, *_ = np.linalg.lstsq(a, y, rcond=None)
    cov = np.linalg.inv(a.T @ a) * rss[0] / (x.size - 2)
    assert res.x == pytest.approx(coef, rel=1e-9)
    assert res.stderr() == pytest.approx(np.sqrt(np.diag(cov)), rel=1e-6)


def test_non_finite_start_and_fallback():
    with pytest.raises(FitError):
        levenberg_marquardt(lambda p: np.array([np.nan]), [1.0])

    def fun(p):
        # finite at the start, non-finite one difference step away
        return np.array([p[0] - 2.0, np.inf if p[0] > 1.0 + 1e-7 else 0.0])

    res = levenberg_marquardt(fun, [1.0])
    assert np.isnan(res.gradient_norm)
    assert res.method == "nelder-mead"
    with pytest.raises(FitError):
        levenberg_marquardt(fun, [1.0], fallback=False)


def test_numeric_jacobian_central_difference():
    jac = numeric_jacobian(lambda p: np.array([p[0] ** 2, p[0] * p[1]]), np.array([3.0, 2.0]))
    assert jac == pytest.approx(np.array([[6.0, 0.0], [2.0, 3.0]]), rel=1e-8)
