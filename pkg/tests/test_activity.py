import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maxent_market.activity import (
    ActivityProfile,
    connect_markets,
    decomposition_error,
    equilibrium_maximize,
    market_activity,
    relative_entropy_analytic,
    relative_entropy_mc,
)
from maxent_market.params import ModelParams

activities = st.lists(st.one_of(st.just(0.0), st.floats(1e-6, 100.0)), min_size=1, max_size=8)


@given(activities, st.floats(0.0, 10.0))
def test_decomposition_identity(a, t):
    assert decomposition_error(ActivityProfile(a), t) <= 16.0
    rep = relative_entropy_analytic(ActivityProfile(a), t)
    assert rep.direct_value == pytest.approx(-sum(a) * t, rel=1e-15, abs=1e-300)


@given(st.lists(st.floats(1e-4, 1.0), min_size=2, max_size=6), st.floats(1e-3, 0.5), st.floats(0.1, 5.0))
def test_maximality_margin(a, delta, t):
    prof = ActivityProfile(a)
    m = prof.market_activity
    n = prof.n
    if max(abs(v - m) for v in a) <= delta:
        return
    rep = relative_entropy_analytic(prof, t)
    # sqrt(a_j) <= n sqrt(m), so |sqrt(a_j) - sqrt(m)| >= delta / ((n + 1) sqrt(m))
    margin = t * delta**2 / ((n + 1) ** 2 * m)
    assert rep.analytic_value <= -n * m * t - margin * (1 - 1e-9)


def test_market_activity_values():
    assert market_activity([1.0, 4.0]) == 2.25
    assert ActivityProfile.equal(0.05, 3).is_equilibrium()
    assert not ActivityProfile((0.01, 0.09)).is_equilibrium(tol=1e-3)
    with pytest.raises(ValueError):
        ActivityProfile((0.1, -0.1))
    with pytest.raises(ValueError):
        market_activity([])


def test_decomposition_example():
    rep = relative_entropy_analytic(ActivityProfile((1.0, 4.0)), 1.0)
    assert rep.decomposition == (-4.5, -0.5)
    assert rep.analytic_value == rep.direct_value == -5.0


@pytest.mark.parametrize("n", [1, 3, 5])
@pytest.mark.parametrize("a", [0.02, 0.05])
def test_mc_matches_analytic(n, a):
    times = [0.5, 1.0, 5.0]
    p = ModelParams.equal_activities(n, a, horizon=5.0, dt=0.5)
    from maxent_market.sde import simulate_basis_market

    sim = simulate_basis_market(p, 20_000, 100 + n, record_times=times)
    for t in times:
        rep = relative_entropy_mc(p, t, 20_000, sim=sim)
        assert abs(rep.mc_value - (-n * a * t)) < 3 * rep.mc_se, (n, a, t, rep.z_score)
        # growth rates of ln b_hat are -a_j on average, equal across components
        for g, se in zip(rep.growth_rates, rep.growth_rate_se):
            assert abs(g + a) < 3 * se
        # E[theta_j**2] = 2 a_j under the stationary law
        for th, se in zip(rep.theta_sq_mean, rep.theta_sq_se):
            assert abs(th - 2 * a) < 4 * se


def test_mc_runs_its_own_simulation():
    rep = relative_entropy_mc(ModelParams.equal_activities(2, 0.05, horizon=1.0, dt=0.25), 2.0, 5000, 3)
    assert rep.paths == 5000 and rep.t == 2.0
    assert rep.brackets(4.0)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_equilibrium_is_equal_profile(n):
    res = equilibrium_maximize(0.05, n, restarts=20, seed=n)
    assert res.max_deviation < 1e-6
    assert res.objective == pytest.approx(-n * 0.05, abs=1e-12)
    assert len(res.restarts) == 20
    r, i, prof, obj, resid = res.trace[-1]
    assert r == 19 and len(prof) == n and abs(resid) < 1e-10


def test_equilibrium_scale_invariance():
    a = equilibrium_maximize(0.03, 4, restarts=5, seed=1, t=1.0)
    b = equilibrium_maximize(0.03, 4, restarts=5, seed=1, t=7.0)
    np.testing.assert_allclose(a.profile.activities, b.profile.activities, atol=1e-9)
    assert b.objective == pytest.approx(7.0 * a.objective)


def test_equilibrium_degenerate_and_invalid():
    res = equilibrium_maximize(0.0, 3, restarts=2)
    assert res.profile.activities == (0.0, 0.0, 0.0)
    for bad in [dict(a=-1.0, n=2), dict(a=0.1, n=0), dict(a=0.1, n=2, t=0.0), dict(a=math.inf, n=2)]:
        with pytest.raises(ValueError):
            equilibrium_maximize(**bad)


def test_connected_markets_share_activity():
    first, second = ActivityProfile((0.01, 0.04)), ActivityProfile((0.09,))
    res = connect_markets(first, second, restarts=5)
    assert res.profile.n == 3
    assert res.profile.market_activity == pytest.approx(0.04)
    assert res.profile.is_equilibrium(tol=1e-9)
