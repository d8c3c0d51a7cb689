import numpy as np
import pytest
from scipy import stats

from maxent_market.params import ModelParams
from maxent_market.sde import simulate_basis_market
from maxent_market.stats import (
    aggregate_series,
    leverage_correlation,
    moment_reports,
    qv_slopes,
    stationary_defect_oracle,
    student_t_fit,
    supermartingale_defect,
    t_qq_data,
    theorem3_verify,
    unit_log_returns,
)


@pytest.fixture(scope="module")
def shared():
    # b_hat depends only on the endpoint, so a unit grid is exact here
    p = ModelParams(n=1, activities=(0.05,), horizon=10.0, dt=1.0)
    return simulate_basis_market(p, 200_000, 3, record_times=[1.0, 2.0, 5.0])


def test_t_fit_recovers_known_dof():
    x = stats.t.rvs(4.0, loc=0.1, scale=0.2, size=20_000, random_state=np.random.default_rng(1))
    fit = student_t_fit(x)
    assert fit.ci[0] <= 4.0 <= fit.ci[1]
    assert 3.5 < fit.dof < 4.6
    assert abs(fit.loc - 0.1) < 0.01 and abs(fit.scale - 0.2) < 0.01
    assert not fit.effectively_normal
    probs, theo, emp = t_qq_data(x, fit)
    assert len(probs) == 200 and np.max(np.abs(theo - emp)[10:-10]) < 0.02


def test_t_fit_flags_normal_data_and_guards():
    x = np.random.default_rng(2).normal(size=10_000)
    fit = student_t_fit(x)
    assert fit.effectively_normal and fit.ci[1] == 100.0
    with pytest.raises(ValueError):
        student_t_fit(x[:100])
    with pytest.raises(ValueError):
        student_t_fit(np.append(x, np.nan))


def test_defect_curve_against_quadrature(shared):
    times = [0.0, 1.0, 2.0, 5.0, 10.0]
    curve = supermartingale_defect(shared, times)
    oracle = stationary_defect_oracle(0.05, times)
    assert np.all(curve.defect >= -1e-15)
    assert np.all(np.diff(curve.defect) > 0)
    assert curve.decreasing and curve.separated
    assert np.all(np.abs(curve.mean - oracle) < 3.5 * np.maximum(curve.se, 1e-15))
    # Lambda-based curve for a one-component market is the same curve
    lam = supermartingale_defect(shared, times, component=None)
    np.testing.assert_allclose(lam.mean, curve.mean, rtol=1e-12)


def test_defect_oracle_values():
    a, t = 0.05, np.array([0.0, 1.0, 10.0, 50.0])
    closed = 1.0 - (1.0 - np.exp(-a * t)) ** 2
    np.testing.assert_allclose(stationary_defect_oracle(a, t), closed, atol=1e-10)


def test_unit_log_returns_shape(shared):
    r = unit_log_returns(shared)
    assert r.shape == (200_000,)
    np.testing.assert_allclose(r, -np.log(shared.b_hat[:, 0, shared.time_index(1.0)]))


def test_leverage_negative_and_null_control():
    p = ModelParams(n=1, activities=(0.05,), horizon=2.0, dt=1 / 252)
    sim = simulate_basis_market(p, 400, 5)
    est = leverage_correlation(sim)
    assert est.estimate < -0.9 and abs(est.estimate) > 3 * est.se
    shuffled = np.random.default_rng(0).permuted(sim.theta[:, 0, :], axis=1)
    null = leverage_correlation(sim, theta=shuffled)
    assert abs(null.estimate) < 3 * null.se + 0.01
    with pytest.raises(ValueError):
        leverage_correlation(sim, theta=np.ones_like(shuffled))


def test_moment_reports_are_deterministic(shared):
    y = shared.y[:, 0, :]
    a = moment_reports(y, shared.times, [1.0, 10.0], shared.params.y_bar, 3)
    b = moment_reports(y, shared.times, [1.0, 10.0], shared.params.y_bar, 3)
    assert a == b
    assert [r.name for r in a][:3] == ["mean_y_t1", "mean_log_y_t1", "mean_inv_y_t1"]
    assert all(r.sample_size == 200_000 for r in a)


def test_qv_slope_of_single_component():
    p = ModelParams(n=1, activities=(0.05,), horizon=1.0, dt=1e-3)
    sim = simulate_basis_market(p, 300, 6)
    slopes = qv_slopes(sim.y[:, 0, :], p.y_bar, 0.05 * 1e-3)
    assert 0.95 < np.median(slopes) < 1.05


def test_theorem3_single_component_reduces_to_basis():
    p = ModelParams(n=1, activities=(0.05,), horizon=1.0, dt=1e-3)
    sim = simulate_basis_market(p, 300, 7)
    agg = aggregate_series(sim)
    np.testing.assert_allclose(agg.y, sim.y[:, 0, :], rtol=1e-10)
    mp = simulate_basis_market(p.replace(horizon=10.0, dt=0.1), 20_000, 8, record_times=[1.0, 5.0, 10.0])
    reports = {r.name: r for r in theorem3_verify(sim, moment_paths=mp)}
    assert reports["qv_slope"].passed
    assert reports["theta_sq_identity"].passed
    assert reports["aggregate_parametrization_gap"].passed
    assert all(r.passed for k, r in reports.items() if k.startswith("aggregate_mean"))


def test_theorem3_guards():
    p = ModelParams(n=2, activities=(0.05, 0.1), horizon=0.1, dt=0.01)
    with pytest.raises(ValueError):
        theorem3_verify(simulate_basis_market(p, 10, 0))
    q = ModelParams.equal_activities(2, 0.05, horizon=1.0, dt=0.01)
    with pytest.raises(ValueError):
        theorem3_verify(simulate_basis_market(q, 10, 0, record_every=10))
