"""Growth optimal portfolio of a general continuous market and markets of reference.

A market of ``n + 1`` primary securities driven by ``n`` Brownian motions has
appreciation rates ``mu`` and volatility matrix ``sigma`` (rows are
securities).  The GOP weights maximize ``g(pi) = pi.mu - |sigma.T pi|**2 / 2``
on ``sum(pi) = 1``; the first-order conditions read

    [[sigma sigma.T, 1], [1.T, 0]] (pi; lam) = (mu; 1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sde import MarketPath, implied_increments

COND_THRESHOLD = 1e12


class NoGop(ValueError):
    """``(mu; 1)`` is not in the image of the first-order matrix."""

    def __init__(self, message: str, image_residual: float = math.nan):
        super().__init__(message)
        self.image_residual = image_residual


class SingularU(ValueError):
    """The reference weights are numerically singular at a grid point."""

    def __init__(self, message: str, indices=()):
        super().__init__(message)
        self.indices = tuple(indices)


@dataclass(frozen=True)
class GeneralMarketSpec:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim == 1:
            sigma = sigma[:, None]
        if mu.ndim != 1 or sigma.ndim != 2:
            raise ValueError("mu must be a vector and sigma a matrix")
        if sigma.shape[0] != mu.size or sigma.shape[1] != mu.size - 1:
            raise ValueError(f"need mu of length n+1 and sigma of shape (n+1, n); got {mu.shape} and {sigma.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("market coefficients must be finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n(self) -> int:
        return self.sigma.shape[1]

    @classmethod
    def from_json(cls, doc) -> "GeneralMarketSpec":
        if isinstance(doc, (str, Path)) and Path(doc).exists():
            doc = json.loads(Path(doc).read_text())
        elif isinstance(doc, str):
            doc = json.loads(doc)
        return cls(doc["mu"], doc["sigma"])

    def to_json(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    def first_order_system(self):
        m = self.mu.size
        M = np.zeros((m + 1, m + 1))
        M[:m, :m] = self.sigma @ self.sigma.T
        M[:m, m] = 1.0
        M[m, :m] = 1.0
        return M, np.append(self.mu, 1.0)


@dataclass
class GopSolution:
    """GOP weights, GOP volatility ``v = sigma.T pi`` and risk-adjusted return.

    ``unique`` refers to the weights; the GOP value process is unique either way.
    """

    weights: np.ndarray
    v: np.ndarray
    lambda_star: float
    image_residual: float
    unique: bool = True
    growth: float = math.nan


def gop_solve(spec: GeneralMarketSpec, tol: float | None = None) -> GopSolution:
    """Solve the first-order system of the GOP problem.

    A well-conditioned system is solved directly; otherwise the
    minimum-norm least-squares solution is returned and the weights are
    flagged non-unique.

    Raises:
        NoGop: the residual exceeds ``tol`` (default ``1e-10 * |(mu; 1)|``).
    """
    M, rhs = spec.first_order_system()
    if tol is None:
        tol = 1e-10 * float(np.linalg.norm(rhs))
    m = spec.mu.size
    rank = int(np.linalg.matrix_rank(M))
    unique = rank == m + 1
    if unique and np.linalg.cond(M) < COND_THRESHOLD:
        x = np.linalg.solve(M, rhs)
    else:
        x = np.linalg.lstsq(M, rhs, rcond=None)[0]
    residual = float(np.linalg.norm(M @ x - rhs))
    if residual > tol:
        raise NoGop(f"(mu; 1) is not in the image of M: residual {residual:.3g} > {tol:.3g}", residual)
    pi = x[:m]
    v = spec.sigma.T @ pi
    lam = float(pi @ spec.mu - v @ v)
    return GopSolution(pi, v, lam, residual, unique, growth_rate(spec, pi))


def growth_rate(spec: GeneralMarketSpec, weights) -> float:
    """``pi.mu - |sigma.T pi|**2 / 2`` for fully invested weights."""
    pi = np.asarray(weights, dtype=float)
    if pi.shape != spec.mu.shape:
        raise ValueError("weights do not match the number of securities")
    if abs(pi.sum() - 1.0) > 1e-10:
        raise ValueError(f"weights must sum to one, got {pi.sum()!r}")
    s = spec.sigma.T @ pi
    return float(pi @ spec.mu - 0.5 * s @ s)


@dataclass
class DriftEstimate:
    """Drift of a benchmarked portfolio over ``[0, horizon]``.

    ``drift`` is ``(mean(S_T) - S_0) / horizon``; ``route_gap`` is the largest
    difference between the two simulation routes.
    """

    drift: float
    se: float
    mean_terminal: float
    route_gap: float
    paths: int
    horizon: float

    @property
    def z_score(self) -> float:
        if self.se == 0:
            return 0.0 if self.drift == 0 else math.inf
        return self.drift / self.se


def benchmarked_drift_test(spec: GeneralMarketSpec, weights, paths: int, horizon: float, seed: int = 0, *, solution: GopSolution | None = None) -> DriftEstimate:
    """Estimate the drift of ``S^pi / S^gop`` under constant coefficients.

    Route one integrates ``dS/S = (pi.T sigma - v.T) dW`` exactly; route two
    divides the separately simulated values of ``S^pi`` and the GOP, driven
    by the same Brownian motion.  The estimate uses route one.
    """
    sol = gop_solve(spec) if solution is None else solution
    pi = np.asarray(weights, dtype=float)
    growth_rate(spec, pi)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((paths, spec.n)) * math.sqrt(horizon)
    vol = spec.sigma.T @ pi
    rel = vol - sol.v
    log_sde = w @ rel - 0.5 * (rel @ rel) * horizon
    log_pi = (pi @ spec.mu - 0.5 * vol @ vol) * horizon + w @ vol
    log_gop = (sol.weights @ spec.mu - 0.5 * sol.v @ sol.v) * horizon + w @ sol.v
    ratio = np.exp(log_pi - log_gop)
    s_hat = np.exp(log_sde)
    gap = float(np.max(np.abs(s_hat - ratio))) if paths else 0.0
    mean = float(np.mean(s_hat))
    se = float(np.std(s_hat, ddof=1) / math.sqrt(paths)) / horizon if paths > 1 else math.inf
    return DriftEstimate((mean - 1.0) / horizon, se, mean, gap, paths, horizon)


# --------------------------------------------------------- market of reference

@dataclass(frozen=True)
class ReferenceWeights:
    """Self-financing weights ``tilde_pi[j, k]`` of new security ``j`` in basis security ``k``.

    Columns ``0..n-1`` refer to the benchmarked basis accounts, column ``n``
    to the GOP.
    """

    tilde_pi: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.tilde_pi, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 2:
            raise ValueError("tilde_pi must be a square matrix of size n+1 >= 2")
        if not np.all(np.isfinite(w)):
            raise ValueError("tilde_pi must be finite")
        if np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("each row of tilde_pi must sum to one")
        object.__setattr__(self, "tilde_pi", w)

    @property
    def n(self) -> int:
        return self.tilde_pi.shape[0] - 1

    @classmethod
    def identity(cls, n: int) -> "ReferenceWeights":
        return cls(np.eye(n + 1))

    @classmethod
    def random(cls, n: int, rng) -> "ReferenceWeights":
        rng = np.random.default_rng(rng)
        w = rng.normal(size=(n + 1, n + 1)) + 1.0 / (n + 1)
        w[:, -1] = 1.0 - w[:, :-1].sum(axis=1)
        return cls(w)

    def u(self, theta) -> np.ndarray:
        """``u[j, k] = -tilde_pi[j, k] theta_k`` for ``k < n``; last column ones."""
        theta = np.asarray(theta, dtype=float)
        out = np.ones_like(self.tilde_pi)
        out[:, :-1] = -self.tilde_pi[:, :-1] * theta
        return out


@dataclass
class ReferenceMarket:
    """Per-grid-point coefficients of a market of reference along one basis path.

    ``mu`` has shape ``(T, n+1)``, ``sigma`` ``(T, n+1, n)``, ``s_hat``
    ``(n+1, T)``.  ``singular`` flags grid points where ``u`` has condition
    number above the threshold.
    """

    times: np.ndarray
    theta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    s_hat: np.ndarray
    cond: np.ndarray
    singular: np.ndarray
    denomination: str
    weights: ReferenceWeights = field(repr=False, default=None)

    def spec(self, k: int) -> GeneralMarketSpec:
        if self.singular[k]:
            raise SingularU(f"u is numerically singular at grid point {k}", (k,))
        return GeneralMarketSpec(self.mu[k], self.sigma[k])


def market_of_reference(weights: ReferenceWeights, path: MarketPath, *, denomination: str = "savings", cond_threshold: float = COND_THRESHOLD) -> ReferenceMarket:
    """Transform a basis path into a market of reference.

    The new benchmarked securities follow ``dS_j/S_j = -sum_k tilde_pi[j,k]
    theta_k dW_k``, integrated by log-Euler on the increments implied by the
    basis path.  Coefficients are reported either benchmarked
    (``denomination="gop"``: ``mu = 0``, ``sigma = u[:, :n]``) or in a
    zero-interest savings account with respect to which the GOP carries
    volatility ``theta`` (``denomination="savings"``: ``sigma_j = u_j + theta``,
    ``mu_j = sigma_j . theta``); only the latter exposes the market prices
    of risk to ``gop_solve``.
    """
    if denomination not in ("savings", "gop"):
        raise ValueError("denomination must be 'savings' or 'gop'")
    n = path.n
    if weights.n != n:
        raise ValueError(f"weights are for n={weights.n}, path has n={n}")
    theta = path.theta.T  # (T, n)
    T = theta.shape[0]
    tp = weights.tilde_pi[:, :-1]

    u = np.ones((T, n + 1, n + 1))
    u[:, :, :-1] = -tp[None, :, :] * theta[:, None, :]
    cond = np.linalg.cond(u)
    singular = ~(cond < cond_threshold)

    bench = u[:, :, :-1]
    if denomination == "gop":
        sigma = bench.copy()
        mu = np.zeros((T, n + 1))
    else:
        sigma = bench + theta[:, None, :]
        mu = np.einsum("tjk,tk->tj", sigma, theta)

    if T > 1:
        dw = implied_increments(path)  # theta_k dW_k
        dt = np.diff(path.times)
        drive = -tp @ dw
        var = ((tp[:, :, None] * path.theta[None, :, :-1]) ** 2).sum(axis=1) * dt
        log_s = np.concatenate([np.zeros((n + 1, 1)), np.cumsum(drive - 0.5 * var, axis=1)], axis=1)
    else:
        log_s = np.zeros((n + 1, 1))
    return ReferenceMarket(path.times, theta, mu, sigma, np.exp(log_s), cond, singular, denomination, weights)


@dataclass
class InvarianceCheck:
    max_error: float
    checked: int
    flagged: tuple


def prices_of_risk_invariance(market: ReferenceMarket) -> InvarianceCheck:
    """Solve the GOP at each non-singular grid point and compare ``v`` with ``theta``."""
    if market.denomination != "savings":
        raise ValueError("prices of risk are only visible in the savings denomination")
    worst = 0.0
    checked = 0
    for k in range(len(market.times)):
        if market.singular[k]:
            continue
        sol = gop_solve(market.spec(k))
        worst = max(worst, float(np.max(np.abs(sol.v - market.theta[k]))))
        checked += 1
    return InvarianceCheck(worst, checked, tuple(np.flatnonzero(market.singular).tolist()))
