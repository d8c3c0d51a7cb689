import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import optimize, stats

from maxent_market.gop import (
    GeneralMarketSpec,
    NoGop,
    ReferenceWeights,
    SingularU,
    benchmarked_drift_test,
    gop_solve,
    growth_rate,
    market_of_reference,
    prices_of_risk_invariance,
)
from maxent_market.params import ModelParams
from maxent_market.sde import simulate_basis_market

coef = st.floats(-2.0, 2.0, allow_nan=False)


@st.composite
def specs(draw, max_n=3):
    n = draw(st.integers(1, max_n))
    mu = draw(arrays(float, n + 1, elements=coef))
    sigma = draw(arrays(float, (n + 1, n), elements=coef))
    return GeneralMarketSpec(mu, sigma)


def qp_oracle(spec):
    """Maximize the growth rate on the budget hyperplane with a generic solver."""
    m = spec.mu.size
    res = optimize.minimize(
        lambda p: -(p @ spec.mu - 0.5 * np.sum((spec.sigma.T @ p) ** 2)),
        np.full(m, 1.0 / m),
        jac=lambda p: -(spec.mu - spec.sigma @ (spec.sigma.T @ p)),
        constraints=[{"type": "eq", "fun": lambda p: p.sum() - 1.0}],
        method="SLSQP",
        options={"ftol": 1e-15, "maxiter": 1000},
    )
    return -res.fun


def test_hand_example_exact():
    theta = 0.2
    sol = gop_solve(GeneralMarketSpec([theta**2, 0.0], [[theta], [0.0]]))
    assert sol.weights.tolist() == [1.0, 0.0]
    assert sol.v.tolist() == [0.2]
    assert sol.lambda_star == 0.0
    assert sol.unique and sol.growth == pytest.approx(0.02)


@given(specs())
def test_solver_identities(spec):
    try:
        sol = gop_solve(spec)
    except NoGop as exc:
        assert exc.image_residual > 1e-10 * np.linalg.norm(np.append(spec.mu, 1.0))
        return
    M, rhs = spec.first_order_system()
    x = np.append(sol.weights, sol.lambda_star)
    assert sol.image_residual <= 1e-10 * np.linalg.norm(rhs)
    np.testing.assert_array_equal(sol.v, spec.sigma.T @ sol.weights)
    assert abs(sol.lambda_star - (sol.weights @ spec.mu - sol.v @ sol.v)) <= 1e-12 * max(1.0, abs(sol.lambda_star))
    assert abs(sol.weights.sum() - 1.0) < 1e-9
    assert np.linalg.norm(M[:-1] @ x - rhs[:-1]) <= 1e-9 * max(1.0, np.linalg.norm(x))


@given(specs(max_n=2))
def test_growth_matches_qp_oracle(spec):
    try:
        sol = gop_solve(spec)
    except NoGop:
        return
    assume(sol.unique and np.max(np.abs(sol.weights)) < 50)
    assert abs(sol.growth - qp_oracle(spec)) < 1e-6 * max(1.0, abs(sol.growth))


def test_no_gop_and_non_unique_weights():
    with pytest.raises(NoGop) as err:
        gop_solve(GeneralMarketSpec([1.0, 0.0], [[0.0], [0.0]]))
    assert err.value.image_residual > 0
    # two identical securities: the GOP value is unique, the weights are not
    spec = GeneralMarketSpec([0.04, 0.04, 0.0], [[0.2, 0.0], [0.2, 0.0], [0.0, 0.0]])
    sol = gop_solve(spec)
    assert not sol.unique
    np.testing.assert_allclose(sol.weights, [0.5, 0.5, 0.0], atol=1e-12)
    np.testing.assert_allclose(sol.v, [0.2, 0.0], atol=1e-12)


def test_growth_rate_budget_guard():
    spec = GeneralMarketSpec([0.04, 0.0], [[0.2], [0.0]])
    assert growth_rate(spec, [0.5, 0.5]) == pytest.approx(0.02 - 0.005)
    with pytest.raises(ValueError):
        growth_rate(spec, [0.5, 0.4])
    with pytest.raises(ValueError):
        growth_rate(spec, [1.0])


def test_spec_validation_and_json(tmp_path):
    spec = GeneralMarketSpec([0.1, 0.0, 0.02], [[0.3, 0.0], [0.0, 0.0], [0.0, 0.1]])
    path = tmp_path / "m.json"
    import json

    path.write_text(json.dumps(spec.to_json()))
    again = GeneralMarketSpec.from_json(path)
    np.testing.assert_array_equal(again.sigma, spec.sigma)
    with pytest.raises(ValueError):
        GeneralMarketSpec([0.1, 0.0], [[0.1, 0.2], [0.0, 0.0]])
    with pytest.raises(ValueError):
        GeneralMarketSpec([np.nan, 0.0], [[0.1], [0.0]])


@pytest.mark.parametrize("weights", [[0.5, 0.3, 0.2], [1.0, -1.0, 1.0], [0.0, 0.0, 1.0]])
def test_benchmarked_portfolios_are_driftless(weights):
    spec = GeneralMarketSpec([0.06, 0.02, 0.0], [[0.25, 0.05], [0.0, 0.15], [0.0, 0.0]])
    est = benchmarked_drift_test(spec, weights, 40_000, 1.0, seed=8)
    t_stat = est.drift / est.se
    assert abs(t_stat) < stats.norm.ppf(0.995)
    assert est.route_gap < 1e-10


def test_reference_weights_validation():
    with pytest.raises(ValueError):
        ReferenceWeights(np.ones((2, 3)))
    with pytest.raises(ValueError):
        ReferenceWeights(np.array([[0.5, 0.4], [0.0, 1.0]]))
    w = ReferenceWeights.random(3, 0)
    np.testing.assert_allclose(w.tilde_pi.sum(axis=1), 1.0, atol=1e-12)


@pytest.fixture(scope="module")
def basis_path():
    p = ModelParams(n=3, horizon=0.5, dt=1 / 252)
    return simulate_basis_market(p, 1, 21)[0]


def test_identity_weights_reproduce_basis(basis_path):
    market = market_of_reference(ReferenceWeights.identity(3), basis_path)
    np.testing.assert_allclose(market.s_hat[:3], basis_path.b_hat, rtol=1e-10)
    np.testing.assert_allclose(market.s_hat[3], 1.0)


@given(st.integers(0, 2**32 - 1))
def test_prices_of_risk_invariance(basis_path, seed):
    market = market_of_reference(ReferenceWeights.random(3, seed), basis_path)
    chk = prices_of_risk_invariance(market)
    assert chk.checked + len(chk.flagged) == len(basis_path.times)
    if chk.checked:
        assert chk.max_error < 1e-8


def test_gop_denomination_is_driftless(basis_path):
    market = market_of_reference(ReferenceWeights.random(3, 4), basis_path, denomination="gop")
    assert np.all(market.mu == 0.0)
    with pytest.raises(ValueError):
        prices_of_risk_invariance(market)
    with pytest.raises(ValueError):
        market_of_reference(ReferenceWeights.random(2, 4), basis_path)


def test_singular_weights_are_flagged(basis_path):
    w = np.full((4, 4), 0.25)
    market = market_of_reference(ReferenceWeights(w), basis_path)
    assert market.singular.all()
    with pytest.raises(SingularU):
        market.spec(0)
    assert prices_of_risk_invariance(market).checked == 0
