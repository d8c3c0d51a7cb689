"""Constrained entropy maximization for the normalized GOP.

Maximizing ``-int q ln q`` subject to normalization, a fixed mean and a fixed
logarithmic mean gives ``q(y) = exp(l0 + l1 y + l2 ln y)``, a gamma density
with shape ``l2 + 1`` and rate ``-l1``.  Matching this family against the
stationary density generated by a polynomial local volatility function
singles out ``phi(y) = y / y_bar``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import optimize, special

from .density import GammaLaw, StationaryDensity, VolatilityLaw, density_moments, entropy, fp_residual
from .sde import default_workers
from .params import ENTROPY_MAXIMIZING, GAMMA_E, ModelParams, reference_level


class Inadmissible(ValueError):
    """No gamma law satisfies the (mean, log-mean) constraint pair."""


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LagrangeSolution:
    """Multipliers of the normalization, mean and log-mean constraints."""

    lambda0: float
    lambda1: float
    lambda2: float

    @property
    def implied_shape(self) -> float:
        return self.lambda2 + 1.0

    @property
    def implied_rate(self) -> float:
        return -self.lambda1

    @property
    def implied_mean(self) -> float:
        return (self.lambda2 + 1.0) / -self.lambda1

    @property
    def implied_dof(self) -> float:
        return 2.0 * (self.lambda2 + 1.0)

    def gamma_law(self) -> GammaLaw:
        return GammaLaw(self.implied_shape, self.implied_rate)

    def log_density(self, y):
        y = np.asarray(y, dtype=float)
        return self.lambda0 + self.lambda1 * y + self.lambda2 * np.log(y)

    def frechet_residual(self, density: StationaryDensity, grid) -> float:
        """Sup-norm of ``-ln q + l0 + l1 y + l2 ln y`` on ``grid``."""
        grid = np.asarray(grid, dtype=float)
        return float(np.max(np.abs(-density.logpdf(grid) + self.log_density(grid))))


def _log_gap(k):
    return special.digamma(k) - np.log(k)


def solve_lagrange(target_mean: float, target_log_mean: float, xtol: float = 1e-12) -> LagrangeSolution:
    """Multipliers for the maximum-entropy law with the given constraints.

    The shape ``k`` solves ``digamma(k) - ln k = target_log_mean - ln(target_mean)``;
    the left side increases monotonically from ``-inf`` to ``0``, so a root
    exists iff the log-mean lies strictly below ``ln(target_mean)``.

    Raises:
        Inadmissible: the constraint pair violates Jensen's inequality.
    """
    if not target_mean > 0:
        raise Inadmissible("mean must be positive")
    gap = target_log_mean - math.log(target_mean)
    if not gap < 0:
        raise Inadmissible(
            f"log-mean {target_log_mean!r} must be strictly below ln(mean) = {math.log(target_mean)!r}"
        )
    f = lambda k: _log_gap(k) - gap
    lo, hi = 1.0, 1.0
    while f(lo) > 0:
        lo /= 2.0
        if lo < 1e-300:
            raise Inadmissible("no root: shape underflows")
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e15:
            raise Inadmissible("no root: log-mean too close to ln(mean)")
    k = optimize.brentq(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)
    rate = k / target_mean
    lambda0 = float(k * math.log(rate) - special.gammaln(k))
    return LagrangeSolution(lambda0=lambda0, lambda1=-rate, lambda2=k - 1.0)


# ---------------------------------------------------------------- phi search

@dataclass
class PhiMatchResult:
    """Outcome of the polynomial search for a gamma-matching ``phi``.

    ``objective`` is the squared L2 distance between the stationary density of
    ``phi`` and its best gamma fit with the prescribed mean.  ``minima`` lists
    the distinct local minimizers found, best first.
    """

    coefficients: np.ndarray
    objective: float
    matched: bool
    gamma_shape: float = math.nan
    minima: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    converged: bool = True

    def second_minimum_gap(self) -> float:
        """Objective gap between the best and the second distinct minimum."""
        if len(self.minima) < 2:
            return math.inf
        return self.minima[1][1] - self.minima[0][1]


class _PhiObjective:
    """Squared L2 distance between the phi-generated density and a gamma fit."""

    def __init__(self, y_bar: float, y_max: float = 40.0, eps: float = 1e-6, resolve_tol: float = 1e-4):
        self.y_bar = y_bar
        self.resolve_tol = resolve_tol
        g = np.concatenate([np.geomspace(eps, 0.5, 240, endpoint=False), np.linspace(0.5, y_max, 1400)])
        self.grid = g
        self.log_grid = np.log(g)
        w = np.zeros_like(g)
        dg = np.diff(g)
        w[:-1] += dg / 2
        w[1:] += dg / 2
        self.weights = w
        self.evaluations = 0

    def density(self, c):
        """Normalized density values on the grid, or ``None`` when inadmissible.

        Besides positivity and integrability, the density must be resolved by
        the grid: the mass it puts below the first or beyond the last node,
        extrapolated from the local power law or exponential tail, stays under
        ``resolve_tol``.  This excludes the degenerate family that piles all
        mass onto the origin as the constant coefficient approaches 1/2.
        """
        c = np.asarray(c, dtype=float)
        g = self.grid
        phi = np.polynomial.polynomial.polyval(g, c)
        if np.any(phi <= 0):
            return None
        if c[0] >= 0.5:
            return None
        lead = np.flatnonzero(c[1:])
        if len(lead) == 0 or c[1 + lead[-1]] <= 0:
            return None
        law = VolatilityLaw.polynomial(c)
        with np.errstate(over="ignore", under="ignore"):
            lq = np.log(phi) - 2.0 * self.log_grid + 2.0 * law.potential(g, 1.0)
            lq -= np.max(lq)
            q = np.exp(lq)
        z = np.dot(self.weights, q)
        if not (z > 0 and np.isfinite(z)):
            return None
        q /= z
        dphi = np.polynomial.polynomial.polyval(g[[0, -1]], np.polynomial.polynomial.polyder(c))
        slope = dphi / phi[[0, -1]] - 2.0 / g[[0, -1]] + 2.0 * (1.0 - phi[[0, -1]]) / g[[0, -1]]
        power_lo = g[0] * slope[0] + 1.0
        if power_lo <= 0 or q[0] * g[0] / power_lo > self.resolve_tol:
            return None
        if slope[1] >= 0 or q[-1] / -slope[1] > self.resolve_tol:
            return None
        return q

    def gamma_values(self, k: float):
        lg = (k - 1.0) * self.log_grid - (k / self.y_bar) * self.grid
        v = np.exp(lg - np.max(lg))
        return v / np.dot(self.weights, v)

    def fit(self, q):
        """Best gamma shape (mean fixed at ``y_bar``) and the squared distance."""
        log_mean = float(np.dot(self.weights, q * self.log_grid))
        try:
            k0 = solve_lagrange(self.y_bar, log_mean).implied_shape
        except Inadmissible:
            k0 = 2.0
        k0 = min(max(k0, 1e-2), 1e3)
        dist = lambda lk: float(np.dot(self.weights, (q - self.gamma_values(math.exp(lk))) ** 2))
        res = optimize.minimize_scalar(dist, bounds=(math.log(k0) - 2.0, math.log(k0) + 2.0), method="bounded", options={"xatol": 1e-10})
        return math.exp(res.x), float(res.fun)

    def __call__(self, c) -> float:
        self.evaluations += 1
        q = self.density(c)
        if q is None:
            return math.inf
        return self.fit(q)[1]


def _random_start(rng: np.random.Generator, degree: int, free: np.ndarray, objective: _PhiObjective, bound: float):
    for _ in range(10_000):
        c = np.zeros(degree + 1)
        c[0] = rng.uniform(0.0, 0.45)
        mags = 10.0 ** rng.uniform(-3.0, 1.0, degree)
        signs = np.where(rng.uniform(size=degree) < 0.25, -1.0, 1.0)
        c[1:] = np.clip(signs * mags, -bound, bound)
        c[~free] = 0.0
        if math.isfinite(objective(c)):
            return c
    raise RuntimeError("could not find an admissible starting polynomial")


class _Coordinates:
    """Map search variables to coefficients; a free constant is ``u**2``."""

    def __init__(self, degree: int, through_origin: bool):
        self.degree = degree
        self.through_origin = through_origin

    def coefficients(self, x):
        x = np.asarray(x, dtype=float)
        if self.through_origin:
            return np.concatenate([[0.0], x])
        return np.concatenate([[x[0] ** 2], x[1:]])

    def variables(self, c):
        c = np.asarray(c, dtype=float)
        if self.through_origin:
            return c[1:].copy()
        return np.concatenate([[math.sqrt(max(c[0], 0.0))], c[1:]])


def _local_search(job):
    """Nelder-Mead from one start, polished by Powell; returns (coeffs, value, ok, trace)."""
    start, index, y_bar, y_max, bound, through_origin = job
    objective = _PhiObjective(y_bar, y_max=y_max)
    coords = _Coordinates(len(start) - 1, through_origin)

    def penalized(x):
        c = coords.coefficients(x)
        if np.any(np.abs(c) > bound):
            return _PENALTY
        return min(objective(c), _PENALTY)

    x0 = coords.variables(start)
    trace = [(index, "start", start.copy(), penalized(x0))]
    if len(x0) == 1:
        res = optimize.minimize_scalar(lambda v: penalized(np.array([v])), bounds=(1e-6, bound), method="bounded", options={"xatol": 1e-12})
        c = coords.coefficients([res.x])
        trace.append((index, "bounded", c, float(res.fun)))
        return c, float(res.fun), bool(res.success), trace
    nm = optimize.minimize(penalized, x0, method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-22, "maxfev": 3000, "adaptive": True})
    trace.append((index, "nelder-mead", coords.coefficients(nm.x), float(nm.fun)))
    pw = optimize.minimize(penalized, nm.x, method="Powell", options={"xtol": 1e-10, "ftol": 1e-15, "maxfev": 5000})
    x, fun = (pw.x, float(pw.fun)) if pw.fun <= nm.fun else (nm.x, float(nm.fun))
    c = coords.coefficients(x)
    trace.append((index, "powell", c, fun))
    return c, fun, bool(pw.success), trace


_PENALTY = 1e6


def match_phi_to_gamma(
    max_degree: int,
    y_bar: float,
    *,
    starts: int = 10,
    seed: int = 0,
    tol: float = 1e-8,
    bound: float = 10.0,
    through_origin: bool = False,
    initial=None,
    y_max: float = 40.0,
    workers: int | None = None,
) -> PhiMatchResult:
    """Search polynomials ``phi`` of bounded degree whose stationary density is a gamma law.

    Minimizes, over coefficient vectors in ``[-bound, bound]`` with ``phi``
    positive on the working grid, the squared L2 distance between the density
    generated by ``phi`` and the closest gamma density with mean ``y_bar``
    (moment-matched shape refined in L2).  Local searches start from
    ``starts`` random admissible polynomials drawn from ``seed``; they are
    independent and run in ``workers`` processes when requested.

    Args:
        max_degree: Largest polynomial degree.  Degree 0 is scanned exhaustively.
        y_bar: Prescribed mean of the gamma family.
        through_origin: Fix the constant coefficient at zero.
        initial: Optional explicit start (used instead of random starts).
    """
    if max_degree < 0:
        raise ValueError("max_degree must be nonnegative")
    objective = _PhiObjective(y_bar, y_max=y_max)

    if max_degree == 0:
        consts = np.linspace(-bound, bound, 2001)
        vals = np.array([objective(np.array([c])) for c in consts])
        if not np.any(np.isfinite(vals)):
            return PhiMatchResult(np.array([math.nan]), math.inf, False)
        i = int(np.argmin(vals))
        return PhiMatchResult(np.array([consts[i]]), float(vals[i]), bool(vals[i] < tol))

    free = np.ones(max_degree + 1, dtype=bool)
    if through_origin:
        free[0] = False
    rng = np.random.default_rng(seed)
    if initial is not None:
        start_points = [np.asarray(initial, dtype=float)]
    else:
        start_points = [_random_start(rng, max_degree, free, objective, bound) for _ in range(starts)]
    jobs = [(c, i, y_bar, y_max, bound, through_origin) for i, c in enumerate(start_points)]

    workers = default_workers() if workers is None else max(1, int(workers))
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            outcomes = list(pool.map(_local_search, jobs))
    else:
        outcomes = [_local_search(j) for j in jobs]

    trace = [row for *_, t in outcomes for row in t]
    converged = all(ok for _, _, ok, _ in outcomes)
    results = sorted(((c, f) for c, f, _, _ in outcomes), key=lambda r: r[1])
    minima = []
    for c, f in results:
        if not math.isfinite(f) or f >= _PENALTY:
            continue
        if all(np.linalg.norm(c - m[0]) > 1e-3 * max(1.0, np.linalg.norm(m[0])) for m in minima):
            minima.append((c, f))
    if not minima:
        warnings.warn("phi search found no admissible minimum", ConvergenceWarning, stacklevel=2)
        return PhiMatchResult(np.full(max_degree + 1, math.nan), math.inf, False, trace=trace, converged=False)
    best_c, best_f = minima[0]
    if not converged:
        warnings.warn("some phi searches hit their iteration limit; reporting best iterate", ConvergenceWarning, stacklevel=2)
    shape, _ = objective.fit(objective.density(best_c))
    return PhiMatchResult(best_c, best_f, bool(best_f < tol), shape, minima, trace, converged)


# ------------------------------------------------------- reference level

class ReferenceLevel(NamedTuple):
    zeta: float
    y_bar: float
    entropy: float


def maximize_reference_level(gamma_e: float = GAMMA_E) -> ReferenceLevel:
    """Maximize ``H(zeta) = -zeta`` over the logarithmic average.

    Along the gamma family with four degrees of freedom and mean
    ``2 exp(gamma_e - 1 + zeta)`` the log-average functional equals
    ``ln(2 / y_bar) + gamma_e - 1 = -zeta``.  Read as a relative entropy it is
    bounded above by zero, so the linear objective is maximized on the
    boundary ``zeta = 0``.
    """
    zeta = 0.0  # argmax of -zeta subject to -zeta <= 0
    y_bar = reference_level(gamma_e, zeta)
    entropy = 0.0 - zeta
    return ReferenceLevel(zeta, y_bar, entropy)


def log_average_entropy(y_bar: float, gamma_e: float = GAMMA_E) -> float:
    """``-E[ln Y]`` for the dof-4 gamma law with mean ``y_bar``."""
    return math.log(2.0 / y_bar) + gamma_e - 1.0


class Theorem1Law(NamedTuple):
    volatility_law: VolatilityLaw
    gamma_law: GammaLaw
    drift: Callable
    diffusion: Callable


def emit_theorem1_law(params: ModelParams, component: int = 0) -> Theorem1Law:
    """``phi(y) = y / y_bar``, its gamma(2, 2/y_bar) law and the SDE coefficients.

    The drift ``y_bar - y`` and diffusion ``sqrt(y * y_bar)`` are per unit of
    activity time.
    """
    if params.mode != ENTROPY_MAXIMIZING:
        raise ValueError("the entropy-maximizing law needs params in entropy-maximizing mode")
    y_bar = params.y_bar
    law = VolatilityLaw.polynomial([0.0, 1.0 / y_bar], activity=params.activities[component])
    gamma = GammaLaw(2.0, 2.0 / y_bar)
    drift = lambda y: y_bar - np.asarray(y, dtype=float)
    diffusion = lambda y: np.sqrt(np.asarray(y, dtype=float) * y_bar)
    return Theorem1Law(law, gamma, drift, diffusion)


def theorem1_report(params: ModelParams | None = None, *, phi_search: bool = True, max_degree: int = 3, starts: int = 10, seed: int = 0, workers: int | None = None) -> dict:
    """Solve, verify and summarize the entropy-maximizing law.

    ``log_average_entropy`` is ``-E[ln Y]``, the functional maximized over the
    reference level; ``differential_entropy`` is ``-int q ln q`` of the same law.
    """
    params = ModelParams() if params is None else params
    ref = maximize_reference_level(params.gamma_e)
    lagrange = solve_lagrange(ref.y_bar, ref.zeta)
    emitted = emit_theorem1_law(params if params.mode == ENTROPY_MAXIMIZING else params.replace(y_bar=None, mode=ENTROPY_MAXIMIZING))
    gamma = emitted.gamma_law
    dens = gamma.density(gamma.working_support())
    moments = density_moments(dens)
    fp = fp_residual(dens, emitted.volatility_law, np.linspace(0.05, 15.0, 2001))
    report = {
        "zeta": ref.zeta,
        "y_bar": ref.y_bar,
        "gamma_e": params.gamma_e,
        "lambda0": lagrange.lambda0,
        "lambda1": lagrange.lambda1,
        "lambda2": lagrange.lambda2,
        "dof": gamma.dof,
        "shape": gamma.shape,
        "rate": gamma.rate,
        "entropy": ref.entropy,
        "log_average_entropy": -moments.log_mean,
        "differential_entropy": entropy(dens),
        "mean": moments.mean,
        "log_mean": moments.log_mean,
        "inverse_mean": moments.inverse_mean,
        "fp_residual_sup": fp.sup_norm,
        "frechet_residual_sup": lagrange.frechet_residual(dens, dens.grid),
    }
    if phi_search:
        match = match_phi_to_gamma(max_degree, ref.y_bar, starts=starts, seed=seed, workers=workers)
        report["phi_match"] = {
            "max_degree": max_degree,
            "coefficients": match.coefficients,
            "objective": match.objective,
            "matched": match.matched,
            "gamma_shape": match.gamma_shape,
            "second_minimum_gap": match.second_minimum_gap(),
            "distinct_minima": [{"coefficients": c, "objective": f} for c, f in match.minima],
            "converged": match.converged,
        }
        report["_phi_trace"] = match.trace
    return report
