"""Estimation driver, transforms, standard errors, and BIC."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import paleokalman as pk
from paleokalman import ModelSpec, build_layout
from paleokalman.fitting import (
    FitOptions,
    FitResult,
    InitializationError,
    ParamTransform,
    bic,
    covariance_from_hessian,
    default_start,
    fit,
    numerical_hessian,
    standard_errors,
)
from paleokalman.kalman import compile_model

from conftest import random_stamps, rows_from_values


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


def _layout_biv():
    data = rows_from_values([-3.0, -2.0], [[1.0], [1.1]], [[0.5], [0.6]])
    spec = ModelSpec(arity="bivariate", corr_grouping="pooled")
    return build_layout(spec, data)


@given(
    st.lists(
        st.floats(min_value=-4.0, max_value=4.0, allow_nan=False),
        min_size=5,
        max_size=5,
    )
)
def test_transform_round_trip(theta):
    tr = ParamTransform.for_layout(_layout_biv())
    theta = np.asarray(theta)
    nat = tr.to_natural(theta)
    back = tr.to_unconstrained(nat)
    assert np.allclose(back, theta, atol=1e-12, rtol=1e-12)
    # natural-scale values are admissible by construction
    assert (nat[:4] > 0).all()
    assert abs(nat[4]) < 1.0


def test_transform_round_trip_near_saturation():
    # tanh saturates, so the correlation coordinate round-trips with reduced
    # precision at large theta; the variance coordinates stay exact
    tr = ParamTransform.for_layout(_layout_biv())
    theta = np.array([12.0, -12.0, 0.0, 5.0, 8.0])
    back = tr.to_unconstrained(tr.to_natural(theta))
    assert np.allclose(back[:4], theta[:4], rtol=1e-14)
    assert back[4] == pytest.approx(theta[4], rel=1e-7)


def test_transform_jacobian_matches_finite_difference():
    tr = ParamTransform.for_layout(_layout_biv())
    theta = np.array([0.3, -1.2, 0.8, 0.1, 0.4])
    jac = tr.natural_jacobian_diag(theta)
    h = 1e-7
    for i in range(5):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        fd = (tr.to_natural(tp)[i] - tr.to_natural(tm)[i]) / (2 * h)
        assert jac[i] == pytest.approx(fd, rel=1e-6)


# ---------------------------------------------------------------------------
# hessian utilities
# ---------------------------------------------------------------------------


def test_numerical_hessian_exact_on_quadratic():
    A = np.array([[2.0, 0.5, 0.0], [0.5, 1.5, -0.3], [0.0, -0.3, 3.0]])
    b = np.array([0.1, -0.2, 0.3])

    def f(x):
        return 0.5 * x @ A @ x + b @ x

    H = numerical_hessian(f, np.array([0.4, -1.0, 2.0]))
    assert np.allclose(H, A, atol=1e-6)


def test_covariance_from_hessian_isolates_flat_directions():
    H = np.diag([4.0, 0.0, 9.0])  # middle coordinate unidentified
    cov, ok = covariance_from_hessian(H)
    assert ok.tolist() == [True, False, True]
    assert cov[0, 0] == pytest.approx(0.25)
    assert cov[2, 2] == pytest.approx(1.0 / 9.0)


def test_covariance_from_hessian_regular_case():
    H = np.array([[2.0, 0.3], [0.3, 1.0]])
    cov, ok = covariance_from_hessian(H)
    assert ok.all()
    assert np.allclose(cov, np.linalg.inv(H), atol=1e-12)


# ---------------------------------------------------------------------------
# fit driver
# ---------------------------------------------------------------------------


def _recovery_data(seed=0, n=1500, true=(0.5, 1.2)):
    spec = ModelSpec()
    rng = np.random.default_rng(900 + seed)
    stamps = random_stamps(rng, n, mean_dt=0.004)
    data = pk.simulate(spec, list(true), stamps, slots_per_row=1, seed=seed)
    return spec, data


def test_fit_recovers_truth_within_three_se():
    true = np.array([0.5, 1.2])
    spec, data = _recovery_data(true=tuple(true))
    res = fit(spec, data)
    assert res.converged
    assert np.all(np.abs(res.params_hat - true) <= 3.0 * res.std_errors)
    assert res.n_obs == 1500
    assert res.n_params == 2


def test_fit_is_deterministic():
    spec, data = _recovery_data(seed=3, n=300)
    r1 = fit(spec, data)
    r2 = fit(spec, data)
    assert np.array_equal(r1.params_hat, r2.params_hat)
    assert r1.loglik == r2.loglik
    assert r1.n_evals == r2.n_evals


def test_fit_honors_explicit_start():
    spec, data = _recovery_data(seed=5, n=300)
    res = fit(spec, data, FitOptions(start=[0.4, 1.0]))
    assert res.converged
    res2 = fit(spec, data)
    assert res.loglik == pytest.approx(res2.loglik, abs=1e-5)


def test_fit_multi_start_agrees_with_single():
    spec, data = _recovery_data(seed=6, n=240)
    r1 = fit(spec, data)
    r3 = fit(spec, data, FitOptions(n_starts=3, seed=11))
    assert r3.loglik >= r1.loglik - 1e-6


def test_fit_iid_data_matches_closed_form():
    # constant level, pure measurement noise: in the sigma_eta2 -> 0 limit
    # the diffuse ML variance is the unbiased sample variance and the loglik
    # has a closed form. The joint ML may sit slightly off that boundary on
    # a finite sample, so the fitted loglik must dominate the boundary value
    # and the variance must land close to it.
    rng = np.random.default_rng(14)
    n = 400
    y = 2.0 + 0.7 * rng.standard_normal(n)
    stamps = list(np.linspace(-4.0, -0.1, n))
    data = rows_from_values(stamps, [[v] for v in y])
    spec = ModelSpec()
    res = fit(spec, data)
    rss = float(np.sum((y - y.mean()) ** 2))
    s2_hat = rss / (n - 1)
    assert res.params_hat[0] == pytest.approx(s2_hat, rel=0.02)
    assert res.params_hat[1] < 0.02 * s2_hat  # trend variance collapses
    ll_closed = -0.5 * (
        n * math.log(2 * math.pi)
        + (n - 1) * (math.log(s2_hat) + 1.0)
        + math.log(n)
    )
    assert res.loglik >= ll_closed - 1e-6
    assert res.loglik == pytest.approx(ll_closed, abs=2.0)


def test_fit_zero_correlation_not_rejected():
    spec = ModelSpec(arity="bivariate", corr_grouping="pooled")
    true = [0.3, 0.4, 1.0, 0.8, 0.0]
    rng = np.random.default_rng(31)
    stamps = random_stamps(rng, 600, mean_dt=0.01)
    data = pk.simulate(spec, true, stamps, slots_per_row=1, seed=2)
    res = fit(spec, data)
    i_rho = res.param_names.index("rho")
    assert abs(res.params_hat[i_rho]) <= 3.0 * res.std_errors[i_rho]


def test_fit_flags_unidentified_parameter():
    # a single row books no transition, so the trend variance is flat; the
    # two within-row slots still identify the measurement variance
    data = rows_from_values([-1.0], [[1.4, 2.2]])
    spec = ModelSpec()
    res = fit(spec, data)
    assert math.isnan(res.std_errors[1])
    assert np.isfinite(res.std_errors[0])
    assert any("standard errors" in n for n in res.notes)


def test_fit_budget_exhaustion_returns_best_seen():
    spec, data = _recovery_data(seed=7, n=200)
    res = fit(spec, data, FitOptions(eval_budget=12))
    assert not res.converged
    assert any("budget" in n for n in res.notes)
    assert np.isfinite(res.loglik)
    with pytest.raises(InitializationError):
        fit(spec, data, FitOptions(eval_budget=0))


def test_fit_nesting_by_source_dominates_pooled():
    spec = ModelSpec(meas_grouping="by-source")
    rng = np.random.default_rng(77)
    stamps = random_stamps(rng, 300, mean_dt=0.01)
    data = pk.simulate(
        spec, [0.2, 0.6, 1.0], stamps, slots_per_row=2, seed=4, n_sources=2
    )
    pooled = fit(ModelSpec(), data)
    by_src = fit(spec, data)
    assert by_src.loglik >= pooled.loglik - 1e-6


# ---------------------------------------------------------------------------
# standard errors and BIC
# ---------------------------------------------------------------------------


def test_standard_errors_match_fit():
    spec, data = _recovery_data(seed=9, n=300)
    res = fit(spec, data)
    se = standard_errors(res.theta_hat, spec, data)
    assert np.allclose(se, res.std_errors, rtol=1e-8, equal_nan=True)


def test_bic_formula():
    assert bic(100.0, 3, 50) == pytest.approx(-200.0 + 3 * math.log(50))
    with pytest.raises(ValueError):
        bic(1.0, 1, 0)


def test_fit_result_bic_consistent():
    spec, data = _recovery_data(seed=10, n=250)
    res = fit(spec, data)
    assert res.bic == pytest.approx(bic(res.loglik, res.n_params, res.n_obs))


def test_default_start_is_admissible():
    spec = ModelSpec(arity="bivariate", corr_grouping="pooled")
    rng = np.random.default_rng(5)
    stamps = random_stamps(rng, 40, mean_dt=0.05)
    data = pk.simulate(spec, [0.3, 0.4, 1.0, 0.8, 0.2], stamps, slots_per_row=2, seed=5)
    layout = build_layout(spec, data)
    start = default_start(layout, compile_model(spec, layout, data))
    layout.validate_params(start)  # must not raise


# ---------------------------------------------------------------------------
# result serialization
# ---------------------------------------------------------------------------


def test_fit_result_json_round_trip():
    spec, data = _recovery_data(seed=12, n=200)
    res = fit(spec, data)
    payload = json.loads(json.dumps(res.to_json_dict()))
    assert set(payload.keys()) == {
        "model",
        "params",
        "loglik",
        "bic",
        "n_obs",
        "n_params",
        "converged",
        "iterations",
    }
    again = FitResult.from_json_dict(payload)
    assert again.spec == spec
    assert np.allclose(again.params_hat, res.params_hat)
    assert np.allclose(again.std_errors, res.std_errors, equal_nan=True)
    assert again.loglik == res.loglik
    assert again.converged == res.converged


def test_fit_result_json_nan_se_becomes_null():
    data = rows_from_values([-1.0], [[1.4, 2.2]])
    res = fit(ModelSpec(), data)
    payload = res.to_json_dict()
    assert payload["params"][1]["se"] is None
    assert payload["params"][0]["se"] is not None
