"""Market activity, relative entropy of the Radon-Nikodym density, equilibrium."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .params import ModelParams
from .sde import simulate_basis_market


class OptimizationError(RuntimeError):
    """The constrained optimizer failed; ``trace`` holds its iterates."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


class PrecisionWarning(UserWarning):
    pass


def _check_activities(activities) -> np.ndarray:
    a = np.asarray(activities, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("need at least one activity")
    if np.any(~np.isfinite(a)) or np.any(a < 0):
        raise ValueError("activities must be finite and nonnegative")
    return a


def market_activity(activities) -> float:
    """``((1/n) sum_j sqrt(a_j))**2``."""
    a = _check_activities(activities)
    return float(np.mean(np.sqrt(a)) ** 2)


@dataclass(frozen=True)
class ActivityProfile:
    activities: tuple

    def __post_init__(self):
        object.__setattr__(self, "activities", tuple(float(v) for v in _check_activities(self.activities)))

    @classmethod
    def equal(cls, a: float, n: int) -> "ActivityProfile":
        return cls((a,) * n)

    @property
    def n(self) -> int:
        return len(self.activities)

    @property
    def market_activity(self) -> float:
        return market_activity(self.activities)

    def is_equilibrium(self, tol: float | None = None) -> bool:
        """All activities equal the market activity, within ``tol`` (default a few ulps)."""
        a = self.market_activity
        if tol is None:
            tol = 8.0 * np.finfo(float).eps * a
        return all(abs(v - a) <= tol for v in self.activities)


@dataclass
class RelativeEntropyReport:
    """Relative entropy ``E[ln Lambda_t]`` of the stationary law against the Radon-Nikodym density.

    ``decomposition`` is ``(-n a t, -sum_j (sqrt(a_j) - sqrt(a))**2 t)`` and
    ``analytic_value`` is their sum; ``direct_value`` is ``-sum_j a_j t``.
    """

    t: float
    analytic_value: float
    direct_value: float
    decomposition: tuple
    mc_value: float = math.nan
    mc_se: float = math.nan
    paths: int = 0
    theta_sq_mean: tuple = ()
    theta_sq_se: tuple = ()
    growth_rates: tuple = ()
    growth_rate_se: tuple = ()

    @property
    def z_score(self) -> float:
        if not self.mc_se > 0:
            return 0.0 if self.mc_value == self.analytic_value else math.inf
        return (self.mc_value - self.analytic_value) / self.mc_se

    def brackets(self, k: float = 3.0) -> bool:
        return abs(self.z_score) < k


def relative_entropy_analytic(profile: ActivityProfile, t: float) -> RelativeEntropyReport:
    if t < 0:
        raise ValueError("t must be nonnegative")
    a_j = np.asarray(profile.activities)
    n = profile.n
    s = np.sqrt(a_j)
    s_bar = float(np.mean(s))
    equilibrium_term = -n * s_bar**2 * t
    penalty = -float(np.sum((s - s_bar) ** 2)) * t
    return RelativeEntropyReport(
        t=float(t),
        analytic_value=equilibrium_term + penalty,
        direct_value=-float(np.sum(a_j)) * t,
        decomposition=(equilibrium_term, penalty),
    )


def decomposition_error(profile: ActivityProfile, t: float = 1.0) -> float:
    """``|direct - analytic|`` in units of ``eps * sum_j a_j t``."""
    rep = relative_entropy_analytic(profile, t)
    scale = max(sum(profile.activities) * t, np.finfo(float).tiny)
    return abs(rep.direct_value - rep.analytic_value) / (np.finfo(float).eps * scale)


def relative_entropy_mc(params: ModelParams, t: float, paths: int, seed: int | None = None, *, target_se: float | None = None, workers: int | None = None, sim=None) -> RelativeEntropyReport:
    """Monte Carlo estimate of ``E[ln Lambda_t]`` with stationary initial values.

    Also reports sample means of ``theta_j**2`` (expected ``2 a_j``) and of
    the per-component growth rates ``ln B_j(t) / t`` (expected ``-a_j``).
    ``sim`` may pass precomputed paths that record time ``t``.
    """
    if sim is None:
        p = params if params.horizon >= t else params.replace(horizon=t)
        sim = simulate_basis_market(p, paths, seed, record_times=[t], workers=workers)
    k = sim.time_index(t)
    log_lam = sim.log_lambda[:, k]
    P = len(log_lam)
    root = math.sqrt(P)
    mc = float(np.mean(log_lam))
    se = float(np.std(log_lam, ddof=1) / root) if P > 1 else math.inf
    th2 = sim.theta[:, :, k] ** 2
    ln_b = np.log(sim.b_hat[:, :, k])
    rates = ln_b / t if t > 0 else np.zeros_like(ln_b)
    if target_se is not None and se > target_se:
        warnings.warn(f"standard error {se:.3g} exceeds target {target_se:.3g}; increase paths", PrecisionWarning, stacklevel=2)
    rep = relative_entropy_analytic(ActivityProfile(params.activities), t)
    rep.mc_value = mc
    rep.mc_se = se
    rep.paths = P
    rep.theta_sq_mean = tuple(np.mean(th2, axis=0).tolist())
    rep.theta_sq_se = tuple((np.std(th2, axis=0, ddof=1) / root).tolist())
    rep.growth_rates = tuple(np.mean(rates, axis=0).tolist())
    rep.growth_rate_se = tuple((np.std(rates, axis=0, ddof=1) / root).tolist())
    return rep


@dataclass
class EquilibriumResult:
    profile: ActivityProfile
    objective: float
    restarts: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def max_deviation(self) -> float:
        """Largest distance of any restart's profile from the equal profile."""
        a = self.profile.market_activity
        profiles = [p for p, _ in self.restarts] or [self.profile.activities]
        return float(max(np.max(np.abs(np.asarray(p) - a)) for p in profiles))


def equilibrium_maximize(a: float, n: int, *, restarts: int = 20, seed: int = 0, t: float = 1.0) -> EquilibriumResult:
    """Maximize ``-sum_j a_j t`` subject to market activity ``a``.

    Works in ``s_j = sqrt(a_j) >= 0`` where the constraint is the hyperplane
    ``sum_j s_j = n sqrt(a)`` and the objective ``-t sum_j s_j**2`` is
    concave.  Each restart runs SLSQP from a random point of the feasible
    simplex; ``trace`` rows are ``(restart, iteration, profile, objective,
    constraint_residual)``.

    Raises:
        OptimizationError: a restart did not converge.
    """
    if not (a >= 0 and math.isfinite(a)):
        raise ValueError("market activity must be finite and nonnegative")
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise ValueError("n must be a positive integer")
    if t <= 0:
        raise ValueError("t must be positive")
    total = n * math.sqrt(a)
    rng = np.random.default_rng(seed)
    trace = []
    outcomes = []

    def objective(s):
        return float(t * np.dot(s, s))

    def gradient(s):
        return 2.0 * t * s

    constraint = {"type": "eq", "fun": lambda s: np.sum(s) - total, "jac": lambda s: np.ones_like(s)}
    for r in range(restarts):
        s0 = rng.dirichlet(np.ones(n)) * total
        iterates = [s0.copy()]
        if n == 1 or total == 0.0:
            s = np.full(n, total / n)
            ok, message = True, "feasible set is a single point"
        else:
            res = optimize.minimize(
                objective,
                s0,
                jac=gradient,
                method="SLSQP",
                bounds=[(0.0, None)] * n,
                constraints=[constraint],
                callback=lambda xk: iterates.append(xk.copy()),
                options={"ftol": 1e-16, "maxiter": 500},
            )
            s, ok, message = res.x, bool(res.success), res.message
            iterates.append(s.copy())
        for i, x in enumerate(iterates):
            x = np.clip(x, 0.0, None)
            trace.append((r, i, x**2, -objective(x), float(np.sum(x) - total)))
        if not ok:
            raise OptimizationError(f"restart {r} failed: {message}", trace)
        s = np.clip(s, 0.0, None)
        outcomes.append((tuple((s**2).tolist()), -objective(s)))

    best = max(outcomes, key=lambda o: o[1]) if outcomes else (tuple([a] * n), -n * a * t)
    return EquilibriumResult(ActivityProfile(best[0]), best[1], outcomes, trace)


def connect_markets(first: ActivityProfile, second: ActivityProfile, **kwargs) -> EquilibriumResult:
    """Equilibrium of the union of two basis markets at their joint market activity."""
    union = ActivityProfile(first.activities + second.activities)
    return equilibrium_maximize(union.market_activity, union.n, **kwargs)
