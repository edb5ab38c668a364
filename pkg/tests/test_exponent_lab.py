import math
from dataclasses import replace

import numpy as np
import pytest

from sle_armlab.crossing_events import EventSpec
from sle_armlab.exceptions import DomainError, FitError, RegimeError
from sle_armlab.exponent_lab import (
    ALPHA_HAT,
    ALPHA_PLUS_GE8,
    ALPHA_PLUS_LT8,
    GRID_RATIO,
    MODE_THRESHOLD,
    MODE_TRACE,
    EstimateConfig,
    GridPoint,
    check_moment_regime,
    check_recursions,
    estimate_probability,
    exponent_table,
    fit_grid_points,
    fit_power_law,
    girsanov_check,
    invariant_density_test,
    martingale_drift_test,
    moment_scaling_test,
    moment_target_slope,
    predicted_exponent,
    predicted_slope,
    stationary_beta,
    u1,
    u2,
)
from sle_armlab.loewner_core import StepPolicy
from sle_armlab.sle_driver import MartingaleSpec

COARSE = StepPolicy(dt_max=1e-2, c_step=0.1, reflect_floor=0.2)


def test_exponent_values():
    assert predicted_exponent(ALPHA_PLUS_LT8, 6, 0) == 0
    assert predicted_exponent(ALPHA_PLUS_LT8, 6, 1) == pytest.approx(1 / 3)
    assert predicted_exponent(ALPHA_PLUS_LT8, 6, 2) == pytest.approx(1.0)
    assert predicted_exponent(ALPHA_PLUS_GE8, 10, 1) == 0
    assert predicted_exponent(ALPHA_PLUS_GE8, 10, 2) == pytest.approx(0.6)
    assert predicted_exponent(ALPHA_HAT, 5, 1) == pytest.approx(1 - 4 / 5)
    assert exponent_table(ALPHA_PLUS_LT8, 6, 3)[3] == pytest.approx(
        predicted_exponent(ALPHA_PLUS_LT8, 6, 3)
    )


def test_exponent_domains():
    with pytest.raises(DomainError):
        predicted_exponent(ALPHA_PLUS_LT8, 8, 1)
    with pytest.raises(DomainError):
        predicted_exponent(ALPHA_PLUS_GE8, 6, 1)
    with pytest.raises(DomainError):
        predicted_exponent(ALPHA_HAT, 3, 1)
    with pytest.raises(DomainError):
        predicted_exponent("alpha_minus", 6, 1)
    with pytest.raises(DomainError):
        predicted_exponent(ALPHA_PLUS_LT8, 6, -1)


def test_roots():
    assert u1(6, 1) == pytest.approx(1.0)
    assert u1(6, 0) == pytest.approx(1 / 3)
    assert u2(6, 0) == pytest.approx(2 / 6)
    lam = 0.7
    for kappa in (2.0, 6.0, 10.0):
        root = u1(kappa, lam)
        residual = kappa * root**2 - (8 - kappa) * root - 4 * lam
        assert residual == pytest.approx(0, abs=1e-12)
        root = u2(kappa, lam)
        residual = kappa * root**2 - (kappa - 4) * root - 4 * lam
        assert residual == pytest.approx(0, abs=1e-12)
    with pytest.raises(DomainError):
        u1(2.0, -10.0)


@pytest.mark.parametrize("kappa", [2.0, 4.0, 5.0, 6.0, 7.5, 8.0, 12.0])
def test_recursions_hold(kappa):
    report = check_recursions(kappa, 6)

    assert report.max_residual <= 1e-12
    assert ("hat_u2_0" in report.residuals) == (4 < kappa < 8)


def test_predicted_slope():
    assert predicted_slope("H_odd", 1, 6) == pytest.approx(1 / 3)
    assert predicted_slope("H_odd", 1, 6, GRID_RATIO) == 0
    assert predicted_slope("H_odd", 1, 6, tied=True) == 0
    assert predicted_slope("H_even", 1, 6) == pytest.approx(1 / 3)
    assert predicted_slope("H_even", 1, 6, GRID_RATIO) == pytest.approx(1.0)
    assert predicted_slope("Hhat_odd", 1, 6, GRID_RATIO) == pytest.approx(1 - 4 / 6)
    assert predicted_slope("Hhat_odd", 1, 6) == 0
    assert predicted_slope("Hpi_odd", 2, 3) == pytest.approx(
        predicted_exponent(ALPHA_PLUS_LT8, 3, 3)
    )


def test_grid_point_var_log():
    assert GridPoint(0.1, 100, 0, 0.0, 0.0).var_log == math.inf
    assert GridPoint(0.1, 100, 10, 0.1, 0.03).var_log == pytest.approx(0.09)
    assert GridPoint(0.1, 100, 100, 1.0, 0.0).var_log == pytest.approx(1e-4)
    row = (0.1, 100, 10, 0.1, 0.03, 2)
    assert GridPoint(*row).to_row() == row


def test_fit_power_law_exact():
    grid = np.array([0.1, 0.2, 0.4, 0.8])
    fit = fit_power_law(grid, 2 * grid**1.5, np.ones(4), predicted=1.5)

    assert fit.slope == pytest.approx(1.5)
    assert fit.intercept == pytest.approx(math.log(2))
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.stderr_slope > 0
    assert fit.z_score == pytest.approx(0.0, abs=1e-6)
    assert fit.to_dict()["predicted"] == 1.5


def test_fit_weights_follow_variances():
    grid = np.array([0.1, 0.2, 0.4, 0.8])
    values = grid.copy()
    values[-1] *= 10
    loose = fit_power_law(grid, values, [1e-4, 1e-4, 1e-4, 1e2])
    even = fit_power_law(grid, values, np.ones(4))

    assert loose.slope == pytest.approx(1.0, abs=1e-2)
    assert even.slope > 1.5


def test_fit_needs_three_points():
    with pytest.raises(FitError):
        fit_power_law([0.1, 0.2, 0.4], [0.1, 0.0, 0.3], [1, 1, 1])

    points = [
        GridPoint(0.4, 10, 4, 0.4, 0.15),
        GridPoint(0.2, 10, 2, 0.2, 0.12),
        GridPoint(0.1, 10, 0, 0.0, 0.0),
    ]
    with pytest.raises(FitError):
        fit_grid_points(points)


def test_fit_grid_points_reports_excluded():
    points = [
        GridPoint(0.8, 100, 80, 0.8, 0.04),
        GridPoint(0.4, 100, 40, 0.4, 0.05),
        GridPoint(0.2, 100, 20, 0.2, 0.04),
        GridPoint(0.1, 100, 0, 0.0, 0.0),
    ]
    fit = fit_grid_points(points, predicted=1.0)

    assert fit.excluded == (0.1,)
    assert len(fit.points) == 4
    assert fit.slope == pytest.approx(1.0, abs=1e-9)


def _spec(**kwargs):
    values = dict(variant="H_odd", n=1, epsilon=0.5, x=1.0, y=0.0, kappa=6.0)
    values.update(kwargs)
    return EventSpec(**values)


def test_estimate_config_validation():
    with pytest.raises(DomainError):
        EstimateConfig(_spec(), grid=(0.2, 0.4, 0.3))
    with pytest.raises(DomainError):
        EstimateConfig(_spec(), grid=())
    with pytest.raises(DomainError):
        EstimateConfig(_spec(), grid=(2.0, 0.5))
    with pytest.raises(DomainError):
        EstimateConfig(_spec(), grid=(1.5, 0.5), grid_variable=GRID_RATIO)
    with pytest.raises(RegimeError):
        EstimateConfig(
            _spec(variant="Hpi_odd", kappa=2.0), grid=(0.5,), mode=MODE_THRESHOLD
        )
    with pytest.raises(RegimeError):
        EstimateConfig(_spec(), grid=(0.5,), mode=MODE_TRACE, importance=True)
    with pytest.raises(ValueError):
        EstimateConfig(_spec(), grid=(0.5,), paths=0)
    with pytest.raises(DomainError):
        EstimateConfig(_spec(), grid=(0.5,), x_over_eps=0.5)


def test_estimate_config_points():
    ratio = EstimateConfig(_spec(), grid=(0.5, 0.25), grid_variable=GRID_RATIO)
    tied = EstimateConfig(_spec(), grid=(0.2, 0.1), x_over_eps=4.0)
    trace = EstimateConfig(_spec(variant="Hpi_odd", kappa=2.0), grid=(0.5,))

    assert ratio.point_spec(0).y == pytest.approx(-1.0)
    assert ratio.point_spec(1).y == pytest.approx(-3.0)
    assert ratio.point_horizon(1) == pytest.approx(50 * 16)
    assert tied.point_spec(1).x == pytest.approx(0.4)
    assert tied.point_spec(1).epsilon == pytest.approx(0.1)
    assert tied.predicted() == 0
    assert trace.mode == MODE_TRACE
    assert EstimateConfig(_spec(), grid=(0.5,)).nu() == pytest.approx(-2.0)
    assert EstimateConfig(_spec(), grid=(0.5,), importance_nu=-1.0).nu() == -1.0


def test_estimate_config_dict_round_trip():
    config = EstimateConfig(
        _spec(),
        grid=(0.4, 0.2, 0.1),
        paths=50,
        seed=12,
        policy=COARSE,
        horizon=2.0,
        coupled=True,
        block_size=16,
    )

    assert EstimateConfig.from_dict(config.to_dict()) == config
    assert EstimateConfig.from_dict({**config.to_dict(), "threads": 4}) == config


def _small_config(**kwargs):
    values = dict(
        grid=(1.0, 0.7, 0.5),
        paths=24,
        seed=3,
        policy=COARSE,
        horizon=0.5,
        block_size=8,
    )
    values.update(kwargs)
    return EstimateConfig(_spec(), **values)


def test_estimate_is_independent_of_threads():
    config = _small_config()
    one = estimate_probability(config, threads=1)
    three = estimate_probability(config, threads=3)

    assert one.points == three.points
    assert one.to_dict() == three.to_dict()
    assert [p.trials for p in one.points] == [24, 24, 24]
    # eps = x is met at the start
    assert one.points[0].hits == 24
    assert one.predicted == pytest.approx(1 / 3)


def test_coupled_estimate_is_monotone():
    result = estimate_probability(_small_config(coupled=True), threads=2)
    hits = [p.hits for p in result.points]

    assert hits == sorted(hits, reverse=True)
    assert result.fit is not None or result.fit_error


def test_trace_estimate_runs():
    config = EstimateConfig(
        _spec(variant="Hpi_odd", kappa=2.0, x=1.0, y=-0.5),
        grid=(0.5,),
        paths=6,
        seed=1,
        policy=StepPolicy(dt_max=1e-2),
        horizon=0.5,
        block_size=3,
        trace_growth=0.05,
    )
    one = estimate_probability(config, threads=1)
    two = estimate_probability(config, threads=2)

    assert one.points == two.points
    assert one.points[0].trials == 6
    assert 0 <= one.points[0].hits <= 6
    assert one.fit is None
    assert "usable" in one.fit_error


def test_martingale_drift_is_small():
    spec = MartingaleSpec(kappa=4, rho_right=2.0, x_right=1.0)
    policy = StepPolicy(dt_max=1e-2, reflect_floor=0.05)
    result = martingale_drift_test(spec, paths=400, horizon=0.2, seed=2, policy=policy)

    assert result.m0 == pytest.approx(1.0)
    assert result.paths == 400
    assert abs(result.z) < 5


def test_girsanov_reweighting_matches_direct():
    policy = StepPolicy(dt_max=1e-2, reflect_floor=0.05)
    result = girsanov_check(
        4, 2.0, 1.0, paths=300, horizon=0.3, threshold=0.5, seed=1, policy=policy
    )

    assert 0 <= result.direct <= 1
    assert abs(result.z) < 5
    assert set(result.to_dict()) == {
        "direct",
        "direct_stderr",
        "reweighted",
        "reweighted_stderr",
        "z",
    }


def test_stationary_beta():
    law = stationary_beta(6, 0)
    a, b = law.args

    assert a == pytest.approx(2 / 3)
    assert b == pytest.approx(2 / 3)
    with pytest.raises(RegimeError):
        stationary_beta(4, 0)


def test_invariant_density_small():
    result = invariant_density_test(6, 0.0, samples=2000, burn_in=2.0, ds=1e-3, seed=4)

    assert result.expected_mean == pytest.approx(0.5)
    assert abs(result.mean - result.expected_mean) < 5 * result.mean_stderr + 0.02
    assert result.ks < 0.1


def test_moment_regimes():
    with pytest.raises(RegimeError):
        check_moment_regime("lemma24", 6, {"nu": 0.0})
    with pytest.raises(RegimeError):
        check_moment_regime("lemma24", 6, {"nu": -2.0, "lambda": 0.5})
    with pytest.raises(RegimeError):
        check_moment_regime("lemma25", 4, {"nu": 0.0})
    with pytest.raises(RegimeError):
        check_moment_regime("prop42", 6, {"lambda": 0.0, "b": 0.1})
    with pytest.raises(RegimeError):
        check_moment_regime("prop31", 6, {"lambda": 0.0, "b": 1.0})
    with pytest.raises(DomainError):
        check_moment_regime("lemma99", 6, {})

    check_moment_regime("lemma24", 6, {"nu": -2.0, "lambda": -0.5})
    check_moment_regime("lemma25", 6, {"nu": 1.0, "lambda": 0.3})
    check_moment_regime("prop31", 6, {"lambda": 0.0, "b": 0.2})
    check_moment_regime("prop42", 3, {"lambda": 0.0, "b": 0.0})


def test_moment_target_slope():
    assert moment_target_slope("lemma24", 6, {"lambda": -0.5}) == -0.5
    assert moment_target_slope("prop31", 6, {"lambda": 0.0, "b": 0.2}) == pytest.approx(
        1 / 3 - 0.2
    )


@pytest.mark.slow
def test_invariant_density_acceptance():
    result = invariant_density_test(6, -1.0, samples=10000, seed=1)

    assert (result.a, result.b) == pytest.approx((1.0, 2 / 3))
    assert result.ks <= 0.02
    assert abs(result.mean - 0.6) <= 3 * result.mean_stderr


@pytest.mark.slow
def test_derivative_moment_scaling():
    grid = tuple(2.0**-k for k in range(3, 7))
    fit = moment_scaling_test("prop31", 6, {"lambda": 1.0, "b": 1.0}, grid, paths=50000)

    assert fit.predicted == pytest.approx(u1(6, 1.0))
    assert abs(fit.slope - fit.predicted) < 0.1


@pytest.mark.slow
@pytest.mark.parametrize("kappa, slope", [(6.0, 1 / 3), (16 / 3, 1 / 2)])
def test_first_arm_exponent_acceptance(kappa, slope):
    config = EstimateConfig(
        _spec(kappa=kappa, epsilon=2.0**-3),
        grid=tuple(2.0**-k for k in range(3, 8)),
        paths=100000,
        seed=7,
    )
    result = estimate_probability(config)

    assert result.predicted == pytest.approx(slope)
    assert abs(result.fit.slope - slope) < 0.05


@pytest.mark.slow
def test_hat_exponent_acceptance():
    config = EstimateConfig(
        _spec(variant="Hhat_odd", epsilon=0.5),
        grid=(0.5, 0.25, 0.125, 0.0625),
        grid_variable=GRID_RATIO,
        paths=20000,
        seed=8,
        policy=StepPolicy(dt_max=0.05),
    )
    result = estimate_probability(config)

    assert result.predicted == pytest.approx(1 / 3)
    assert abs(result.fit.slope - 1 / 3) < 0.05


@pytest.mark.slow
def test_coupled_and_independent_agree():
    config = _small_config(grid=(0.4, 0.2, 0.1), paths=2000, horizon=None)
    independent = estimate_probability(config).fit
    coupled = estimate_probability(replace(config, coupled=True)).fit

    spread = math.hypot(independent.stderr_slope, coupled.stderr_slope)
    assert abs(independent.slope - coupled.slope) < 5 * spread
