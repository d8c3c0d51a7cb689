"""Statistical checks on simulated markets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special, stats

from .sde import MarketPaths

MIN_T_SAMPLE = 10_000
DOF_BOUNDS = (1.0, 100.0)
NORMAL_DOF = 20.0


@dataclass
class TestReport:
    """A single pre-registered check.

    ``passed`` is a deterministic function of the estimate and the
    interval; ``criterion`` describes the rule in words.
    """

    __test__ = False  # keep pytest from collecting this class

    name: str
    estimate: float
    ci: tuple
    passed: bool
    criterion: str
    sample_size: int = 0
    seed: int | None = None
    details: dict = field(default_factory=dict)


class FitError(RuntimeError):
    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# ----------------------------------------------------------------- Student-t

def _t_loglik(x, loc, scale, dof):
    z2 = ((x - loc) / scale) ** 2
    const = special.gammaln((dof + 1) / 2) - special.gammaln(dof / 2) - 0.5 * math.log(dof * math.pi) - math.log(scale)
    return x.size * const - (dof + 1) / 2 * float(np.sum(np.log1p(z2 / dof)))


def _fit_loc_scale(x, dof, start):
    res = optimize.minimize(
        lambda p: -_t_loglik(x, p[0], math.exp(p[1]), dof),
        start,
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 2000},
    )
    return res


@dataclass
class TFit:
    dof: float
    loc: float
    scale: float
    ci: tuple
    loglik: float
    effectively_normal: bool
    sample_size: int
    confidence: float


def student_t_fit(log_returns, *, confidence: float = 0.95, dof_bounds=DOF_BOUNDS) -> TFit:
    """Maximum-likelihood location-scale Student-t fit with a profile-likelihood CI for the dof.

    The dof is confined to ``dof_bounds``; a CI end at a bound means the
    likelihood stays within the threshold up to that bound.  Fits above 20
    dof are flagged as effectively normal.

    Raises:
        ValueError: fewer than 10**4 observations.
        FitError: the optimizer did not converge.
    """
    x = np.asarray(log_returns, dtype=float).ravel()
    if x.size < MIN_T_SAMPLE:
        raise ValueError(f"need at least {MIN_T_SAMPLE} observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("log-returns must be finite")
    lo_b, hi_b = dof_bounds
    med = float(np.median(x))
    mad = float(np.median(np.abs(x - med))) * 1.4826
    if not mad > 0:
        raise FitError("degenerate sample: zero spread")

    cache = {}

    def profile(log_dof):
        dof = math.exp(log_dof)
        start = cache.get("start", np.array([med, math.log(mad)]))
        res = _fit_loc_scale(x, dof, start)
        if not res.success:
            raise FitError("location-scale fit did not converge", {"dof": dof, "message": res.message})
        cache["start"] = res.x
        return -res.fun, res.x

    res = optimize.minimize_scalar(lambda ld: -profile(ld)[0], bounds=(math.log(lo_b), math.log(hi_b)), method="bounded", options={"xatol": 1e-6})
    if not res.success:
        raise FitError("dof search did not converge", {"message": res.message})
    log_dof = float(res.x)
    ll_max, (loc, log_scale) = profile(log_dof)
    threshold = 0.5 * stats.chi2.ppf(confidence, 1)
    gap = lambda ld: ll_max - profile(ld)[0] - threshold

    def edge(bound):
        if gap(math.log(bound)) <= 0:
            return float(bound)
        lb = math.log(bound)
        return math.exp(optimize.brentq(gap, min(log_dof, lb), max(log_dof, lb), xtol=1e-6))

    ci = (edge(lo_b), edge(hi_b))
    dof = math.exp(log_dof)
    return TFit(dof, float(loc), math.exp(log_scale), ci, float(ll_max), dof > NORMAL_DOF, x.size, confidence)


def unit_log_returns(paths: MarketPaths, component: int = 0, t0: float = 0.0, t1: float = 1.0) -> np.ndarray:
    """Log-returns of the basis-account-denominated GOP ``1 / b_hat`` over ``[t0, t1]``, one per path."""
    i0, i1 = paths.time_index(t0), paths.time_index(t1)
    lb = np.log(paths.b_hat[:, component, :])
    return lb[:, i0] - lb[:, i1]


def t_qq_data(log_returns, fit: TFit, points: int = 200):
    """Quantile pairs (theoretical Student-t, empirical)."""
    x = np.sort(np.asarray(log_returns, dtype=float))
    probs = (np.arange(1, points + 1) - 0.5) / points
    emp = np.quantile(x, probs)
    theo = stats.t.ppf(probs, fit.dof, loc=fit.loc, scale=fit.scale)
    return probs, theo, emp


# ---------------------------------------------------------- supermartingale

@dataclass
class DefectCurve:
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    confidence: float
    decreasing: bool
    separated: bool

    @property
    def defect(self) -> np.ndarray:
        return 1.0 - self.mean


def supermartingale_defect(paths: MarketPaths, times=None, *, component: int | None = 0, confidence: float = 0.99) -> DefectCurve:
    """Sample mean of ``b_hat_t`` with normal-approximation CIs.

    ``component=None`` uses the Radon-Nikodym density ``Lambda_t`` instead of
    a single account.  ``decreasing`` requires strictly decreasing point
    estimates; ``separated`` requires the CIs at the first positive and the
    last time to be disjoint.
    """
    times = paths.times if times is None else np.asarray(times, dtype=float)
    idx = [paths.time_index(t) for t in times]
    if component is None:
        vals = np.exp(paths.log_lambda[:, idx])
    else:
        vals = paths.b_hat[:, component, idx]
    P = vals.shape[0]
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(P) if P > 1 else np.full(len(idx), np.inf)
    z = stats.norm.ppf(0.5 + confidence / 2)
    lo, hi = mean - z * se, mean + z * se
    decreasing = bool(np.all(np.diff(mean) < 0))
    pos = np.flatnonzero(np.asarray(times) > 0)
    separated = bool(len(pos) >= 2 and lo[pos[0]] > hi[pos[-1]])
    return DefectCurve(np.asarray(times, dtype=float), mean, se, lo, hi, confidence, decreasing, separated)


def stationary_defect_oracle(a: float, t) -> np.ndarray:
    """``E[b_hat_t]`` under the stationary start, by quadrature over the initial law.

    With ``D = a t``, ``c = 4 / (y_bar (1 - e^-D))`` and ``lam = c y0 e^-D``,
    ``c Y_t`` given ``y0`` is noncentral chi-square with 4 dof, whose
    reciprocal mean is ``(1 - e^{-lam/2}) / lam``.  The result does not
    depend on ``y_bar``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.ones_like(t)
    for i, ti in enumerate(t):
        d = a * ti
        if d == 0:
            continue
        # work with y_bar = 2, so y0 ~ gamma(2, 1)
        c = 2.0 / -math.expm1(-d)
        ed = math.exp(-d)

        def f(y0):
            lam = c * y0 * ed
            inv = -math.expm1(-lam / 2) / lam
            return y0 * ed * c * inv * y0 * math.exp(-y0)

        out[i] = integrate.quad(f, 0.0, np.inf, epsabs=1e-14, epsrel=1e-12)[0]
    return out


# ------------------------------------------------------------------ leverage

@dataclass
class LeverageEstimate:
    estimate: float
    se: float
    paths: int
    increments: int


def leverage_correlation(paths: MarketPaths, component: int = 0, *, theta=None) -> LeverageEstimate:
    """Correlation of increments of ``ln(1 / b_hat)`` and ``theta``.

    Computed per path over consecutive grid increments and averaged; the SE
    is the cross-path standard error.  ``theta`` overrides the stored basis
    volatility (shape ``(paths, records)``).

    Raises:
        ValueError: an increment series has zero variance.
    """
    lg = -np.log(paths.b_hat[:, component, :])
    th = paths.theta[:, component, :] if theta is None else np.asarray(theta, dtype=float)
    dx = np.diff(lg, axis=1)
    dy = np.diff(th, axis=1)
    if dx.shape[1] < 2:
        raise ValueError("need at least two increments per path")
    dx = dx - dx.mean(axis=1, keepdims=True)
    dy = dy - dy.mean(axis=1, keepdims=True)
    sx = np.sqrt(np.sum(dx * dx, axis=1))
    sy = np.sqrt(np.sum(dy * dy, axis=1))
    if np.any(sx == 0) or np.any(sy == 0):
        raise ValueError("degenerate sample: an increment series has zero variance")
    r = np.sum(dx * dy, axis=1) / (sx * sy)
    P = len(r)
    se = float(np.std(r, ddof=1) / math.sqrt(P)) if P > 1 else math.inf
    return LeverageEstimate(float(np.mean(r)), se, P, dx.shape[1])


# ----------------------------------------------------- aggregate dynamics

@dataclass
class AggregateSeries:
    """Aggregate normalized GOP ``Y = exp(-tau) / S0`` with ``tau = tau0 + n a t``.

    ``tau0`` makes the squared aggregate volatility parametrization hold at
    time zero: ``Y_0 = n a y_bar / sum_k theta_k(0)**2``.
    """

    times: np.ndarray
    y: np.ndarray
    tau: np.ndarray
    d_tau: float


def aggregate_series(paths: MarketPaths) -> AggregateSeries:
    p = paths.params
    a = p.activities[0]
    n = p.n
    theta_sq0 = np.sum(paths.theta[:, :, 0] ** 2, axis=1)
    y0 = n * a * p.y_bar / theta_sq0
    ln_s0 = np.log(paths.s0_hat)
    tau0 = -np.log(y0) - ln_s0[:, 0]
    tau = tau0[:, None] + n * a * paths.times[None, :]
    y = np.exp(-tau - ln_s0)
    return AggregateSeries(paths.times, y, tau, n * a)


def _mean_check(name, values, target, seed, k=3.0):
    P = len(values)
    m = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(P))
    return TestReport(name, m, (m - k * se, m + k * se), bool(abs(m - target) < k * se), f"|mean - {target!r}| < {k:g} SE", P, seed, {"target": target, "se": se})


def moment_reports(y, times, check_times, y_bar: float, seed=None, prefix: str = "") -> list[TestReport]:
    """Mean of ``Y``, ``ln Y`` and ``1/Y`` against ``y_bar``, ``0`` and ``2 / y_bar``."""
    out = []
    for t in check_times:
        k = int(np.argmin(np.abs(times - t)))
        v = y[:, k]
        out.append(_mean_check(f"{prefix}mean_y_t{t:g}", v, y_bar, seed))
        out.append(_mean_check(f"{prefix}mean_log_y_t{t:g}", np.log(v), 0.0, seed))
        out.append(_mean_check(f"{prefix}mean_inv_y_t{t:g}", 1.0 / v, 2.0 / y_bar, seed))
    return out


def qv_slopes(y: np.ndarray, y_bar: float, d_tau_per_step) -> np.ndarray:
    """Per-path ratio of realized ``sum (dY)**2`` to ``sum Y y_bar dtau`` over non-overlapping increments."""
    dy = np.diff(y, axis=1)
    dtau = np.broadcast_to(np.asarray(d_tau_per_step, dtype=float), dy.shape)
    return np.sum(dy**2, axis=1) / np.sum(y[:, :-1] * y_bar * dtau, axis=1)


def theorem3_verify(paths: MarketPaths, *, moment_paths: MarketPaths | None = None, check_times=(1.0, 5.0, 10.0), slope_band=(0.97, 1.03)) -> list[TestReport]:
    """Checks on the aggregate normalized GOP of an equal-activity basis market.

    ``paths`` must be recorded at full resolution (for the quadratic
    variation); ``moment_paths`` (default ``paths``) supplies the moment
    checks at ``check_times``.

    Raises:
        ValueError: activities are not all equal.
    """
    p = paths.params
    if len(set(p.activities)) != 1:
        raise ValueError("aggregate activity time needs all activities equal")
    if not paths.full_resolution:
        raise ValueError("quadratic variation needs paths recorded at every step")
    seed = paths.seed
    agg = aggregate_series(paths)
    dt = np.diff(paths.times)
    slopes = qv_slopes(agg.y, p.y_bar, agg.d_tau * dt)
    med = float(np.median(slopes))
    boot = np.random.default_rng(0 if seed is None else seed).choice(slopes, size=(200, len(slopes)))
    lo, hi = np.quantile(np.median(boot, axis=1), [0.005, 0.995])
    reports = [
        TestReport(
            "qv_slope",
            med,
            (float(lo), float(hi)),
            bool(slope_band[0] <= med <= slope_band[1]),
            f"median QV slope in [{slope_band[0]}, {slope_band[1]}]",
            len(slopes),
            seed,
            {"dt": float(dt[0]), "n": p.n},
        )
    ]

    th2_stored = np.sum(paths.theta**2, axis=1)
    th2_from_y = np.sum(p.activities[0] * p.y_bar / paths.y, axis=1)
    rel = float(np.max(np.abs(th2_stored - th2_from_y) / th2_from_y))
    reports.append(TestReport("theta_sq_identity", rel, (0.0, rel), rel < 1e-12, "sum_k theta_k**2 from stored theta equals a y_bar sum_k 1/Y_k (relative 1e-12)", paths.y.size, seed))
    param = p.n * p.activities[0] * p.y_bar / agg.y
    gap = float(np.max(np.abs(th2_stored - param) / param))
    reports.append(TestReport("aggregate_parametrization_gap", gap, (0.0, gap), gap < 1e-8, "sum_k theta_k**2 equals n a y_bar / Y_aggregate (relative 1e-8)", paths.y.size, seed))

    mp = paths if moment_paths is None else moment_paths
    if mp.params.activities != p.activities or mp.params.n != p.n:
        raise ValueError("moment paths must share the basis market")
    magg = aggregate_series(mp)
    times = [t for t in check_times if np.any(np.isclose(mp.times, t))]
    reports += moment_reports(magg.y, mp.times, times, p.y_bar, mp.seed, prefix="aggregate_")
    return reports
