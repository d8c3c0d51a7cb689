import csv
import math
import warnings

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from maxent_market.density import (
    GammaLaw,
    GridTooCoarse,
    NonNormalizable,
    SingularAtZero,
    StationaryDensity,
    SupportMismatch,
    VolatilityLaw,
    cross_entropy,
    density_moments,
    entropy,
    fp_residual,
    kl_divergence,
    stationary_from_phi,
)
from maxent_market.params import GAMMA_E, Y_BAR


def gamma_density(mean, dof=4.0):
    law = GammaLaw.from_mean(mean, dof)
    return law.density(law.working_support())


def test_gamma_law_matches_scipy():
    law = GammaLaw.from_mean(Y_BAR)
    y = np.geomspace(1e-5, 30, 500)
    ref = stats.gamma(2.0, scale=Y_BAR / 2.0)
    np.testing.assert_allclose(law.pdf(y), ref.pdf(y), rtol=1e-12)
    assert law.dof == 4.0 and math.isclose(law.mean, Y_BAR)
    lo, hi = law.working_support()
    assert lo == 1e-6 and ref.sf(hi) <= 1.0000001e-12
    with pytest.raises(ValueError):
        GammaLaw(0.0, 1.0)


@pytest.mark.parametrize("m", [0.5, 1.0, Y_BAR, 3.0])
def test_entropy_against_scipy(m):
    h = entropy(gamma_density(m))
    assert abs(h - stats.gamma(2.0, scale=m / 2.0).entropy()) < 1e-8


@pytest.mark.parametrize("m", [0.5, 1.0, Y_BAR, 3.0])
def test_log_average_closed_form(m):
    # -E[ln Y] of the four-dof gamma law with mean m is ln(2/m) + gamma_e - 1
    mom = density_moments(gamma_density(m))
    assert abs(-mom.log_mean - (math.log(2.0 / m) + GAMMA_E - 1.0)) < 1e-8
    assert abs(mom.mean - m) < 1e-8
    assert abs(mom.inverse_mean - 2.0 / m) < 1e-4 * (2.0 / m)


def test_log_average_vanishes_at_reference_level():
    assert abs(density_moments(gamma_density(Y_BAR)).log_mean) < 1e-9


@pytest.mark.filterwarnings("ignore::maxent_market.density.PrecisionWarning")
@given(st.floats(0.3, 4.0), st.floats(0.3, 4.0), st.floats(3.0, 8.0))
def test_cross_entropy_decomposition(m1, m2, dof):
    p = gamma_density(m1, dof)
    q = GammaLaw.from_mean(m2, 4.0).density((1e-9, 200.0))
    lhs = cross_entropy(p, q)
    assert abs(lhs - (entropy(p) + kl_divergence(p, q))) < 1e-8
    assert kl_divergence(p, q) >= -1e-10


def test_kl_zero_on_self_and_support_mismatch():
    p = gamma_density(Y_BAR)
    assert abs(kl_divergence(p, p)) < 1e-12
    narrow = GammaLaw.from_mean(Y_BAR).density((0.1, 5.0))
    with pytest.raises(SupportMismatch):
        kl_divergence(p, narrow)


def test_linear_phi_reproduces_gamma_law():
    law = VolatilityLaw.polynomial([0.0, 1.0 / Y_BAR])
    dens = stationary_from_phi(law)
    y = np.geomspace(1e-3, 20, 300)
    np.testing.assert_allclose(dens.pdf(y), GammaLaw.from_mean(Y_BAR).pdf(y), rtol=1e-8)
    assert abs(dens.mean - Y_BAR) < 1e-8


def test_constant_phi_is_singular_at_zero():
    with pytest.raises(SingularAtZero):
        stationary_from_phi(VolatilityLaw.polynomial([1.0]))
    assert issubclass(SingularAtZero, NonNormalizable)


def test_non_normalizable_tail():
    # phi -> 1/2 at infinity leaves a power-law tail y**(-1)
    law = VolatilityLaw.tabulated(np.geomspace(1e-3, 1e4, 200), np.full(200, 0.5) + 0.0)
    with pytest.raises((NonNormalizable, ValueError)):
        stationary_from_phi(law, support=(0.0, 1e4))


def test_nonpositive_phi_rejected():
    with pytest.raises(ValueError):
        stationary_from_phi(VolatilityLaw.polynomial([-0.1, 1.0]))


def test_fp_residual_symbolic_oracle():
    """Perturbed law: FP solution from the closed form, checked with sympy."""
    y, u, ybar = sp.symbols("y u ybar", positive=True)
    eps = sp.Rational(1, 20)
    phi = y / ybar + eps * y**2
    pot = sp.integrate(((1 - phi) / y).subs(y, u), (u, 1, y))
    q = phi / y**2 * sp.exp(2 * pot)
    fp = sp.diff(q * y * (1 / phi - 1), y) - sp.Rational(1, 2) * sp.diff(q * y**2 / phi, y, 2)
    assert sp.simplify(fp) == 0

    law = VolatilityLaw.polynomial([0.0, 1.0 / Y_BAR, 0.05])
    dens = stationary_from_phi(law)
    q_num = sp.lambdify(y, q.subs(ybar, Y_BAR), "numpy")
    z, _ = integrate.quad(q_num, 0, np.inf, limit=200)
    grid = np.geomspace(0.05, 8.0, 200)
    np.testing.assert_allclose(dens.pdf(grid), q_num(grid) / z, rtol=1e-7)
    assert fp_residual(dens, law, np.linspace(0.05, 15, 1001)).sup_norm < 1e-10


@given(st.floats(0.05, 2.0), st.floats(0.0, 0.3), st.floats(0.0, 0.2))
def test_round_trip_residual(c1, c2, c3):
    law = VolatilityLaw.polynomial([0.0, c1, c2, c3])
    dens = stationary_from_phi(law)
    assert fp_residual(dens, law, np.linspace(0.05, 15, 301)).sup_norm < 1e-6


def test_tabulated_density_residual_and_grid_guard():
    g = GammaLaw.from_mean(Y_BAR)
    grid = np.geomspace(1e-4, 40, 4000)
    tab = StationaryDensity.from_values(grid, g.pdf(grid))
    law = VolatilityLaw.polynomial([0.0, 1.0 / Y_BAR])
    assert fp_residual(tab, law, np.linspace(0.1, 10, 200)).sup_norm < 1e-5
    coarse = StationaryDensity.from_values(np.geomspace(1e-4, 40, 50), g.pdf(np.geomspace(1e-4, 40, 50)))
    with pytest.raises(GridTooCoarse):
        fp_residual(coarse, law, np.linspace(0.1, 10, 200))
    with pytest.raises(GridTooCoarse):
        fp_residual(tab, law, [1.0, 2.0])


def test_tabulated_phi_matches_polynomial():
    ys = np.geomspace(1e-4, 60, 400)
    tab = VolatilityLaw.tabulated(ys, ys / Y_BAR)
    dens = stationary_from_phi(tab, support=(1e-4, 60))
    y = np.geomspace(0.01, 10, 50)
    np.testing.assert_allclose(dens.pdf(y), GammaLaw.from_mean(Y_BAR).pdf(y), rtol=1e-4)
    with pytest.raises(ValueError):
        tab.phi(100.0)


def test_volatility_law_json_and_theta(tmp_path):
    law = VolatilityLaw.polynomial([0.0, 1.0 / Y_BAR], activity=0.05)
    doc = law.to_json()
    again = VolatilityLaw.from_json(doc)
    np.testing.assert_array_equal(again.coefficients, law.coefficients)
    assert VolatilityLaw.from_json("[0, 0.5]").coefficients.tolist() == [0.0, 0.5]
    np.testing.assert_allclose(law.theta(np.array([Y_BAR])), math.sqrt(0.05))
    with pytest.raises(ValueError):
        VolatilityLaw.polynomial([1.0], activity=-1.0)
    with pytest.raises(ValueError):
        VolatilityLaw.polynomial(np.ones(20))


def test_density_csv_export(tmp_path):
    dens = gamma_density(Y_BAR)
    out = tmp_path / "q.csv"
    dens.to_csv(out, grid=[0.5, 1.0])
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["y", "q"]
    assert float(rows[1][0]) == 0.5 and float(rows[1][1]) == dens.pdf(0.5)


def test_inverse_mean_diverges_for_flat_density():
    dens = StationaryDensity.from_logpdf(lambda y: -np.asarray(y, dtype=float), (1e-8, 60.0))
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        mom = density_moments(dens)
    assert math.isinf(mom.inverse_mean)
    assert any("diverges" in str(w.message) for w in rec)


def test_moments_agree_with_simulation():
    from maxent_market.params import ModelParams
    from maxent_market.sde import simulate_basis_market

    sim = simulate_basis_market(ModelParams(n=1, activities=(0.05,), horizon=1.0, dt=0.5), 40_000, 2)
    y = sim.y[:, 0, -1]
    mom = density_moments(gamma_density(Y_BAR))
    for sample, target in [(y, mom.mean), (np.log(y), mom.log_mean)]:
        se = sample.std(ddof=1) / math.sqrt(len(sample))
        assert abs(sample.mean() - target) < 3 * se
