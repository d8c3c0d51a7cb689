"""Stationary densities, entropy and Kullback-Leibler divergence.

A local volatility function ``phi`` fixes the stationary density of the
normalized GOP through

    q(y) = C * phi(y) / y**2 * exp(2 * int_{y_ref}^{y} (1 - phi(u)) / u du).

The lower limit of the inner integral is a reference point ``y_ref > 0``; any
other choice only rescales ``C``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline

DEFAULT_SUPPORT = (1e-6, 50.0)
TAIL_TOL = 1e-10


class NonNormalizable(ValueError):
    """The candidate density does not integrate on (0, inf)."""


class SingularAtZero(NonNormalizable):
    """The candidate density is not integrable at the origin."""


class SupportMismatch(ValueError):
    """Two densities do not have compatible supports."""


class GridTooCoarse(ValueError):
    """The evaluation grid cannot resolve second derivatives."""


class PrecisionWarning(UserWarning):
    """Tail truncation contributes more than the quadrature tolerance."""


class DivergenceWarning(UserWarning):
    """A requested moment diverges."""


def _quad(f: Callable, lo: float, hi: float) -> float:
    """Integrate ``f`` over ``[lo, hi]``.

    Positive lower limits are integrated in ``s = ln y`` in unit-length
    pieces, which keeps power-law behaviour near zero well resolved.
    """
    if lo > 0:
        s_lo, s_hi = math.log(lo), math.log(hi)
        edges = np.linspace(s_lo, s_hi, max(2, int(math.ceil(s_hi - s_lo)) + 1))
        g = lambda s: f(math.exp(s)) * math.exp(s)
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(g, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)
            total += val
        return total
    pts = [p for p in (1e-6, 1e-4, 1e-2, 1.0, 10.0) if lo < p < hi]
    val, _ = integrate.quad(f, lo, hi, points=pts or None, epsabs=1e-14, epsrel=1e-13, limit=500)
    return val


@dataclass
class GammaLaw:
    """Gamma law with ``shape`` and ``rate``; ``2 * shape`` degrees of freedom."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("gamma shape and rate must be positive")

    @classmethod
    def from_mean(cls, mean: float, dof: float = 4.0) -> "GammaLaw":
        shape = dof / 2.0
        return cls(shape, shape / mean)

    @property
    def dof(self) -> float:
        return 2.0 * self.shape

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        k, b = self.shape, self.rate
        with np.errstate(divide="ignore"):
            return k * np.log(b) - special.gammaln(k) + (k - 1) * np.log(y) - b * y

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def dlogpdf(self, y):
        y = np.asarray(y, dtype=float)
        k, b = self.shape, self.rate
        return (k - 1) / y - b, -(k - 1) / y**2

    def density(self, support=DEFAULT_SUPPORT, grid=None) -> "StationaryDensity":
        """Analytic density restricted to a working support.

        The truncated mass is below the quadrature tolerance for supports
        chosen by ``working_support``; the analytic normalization is kept.
        """
        lo, hi = support
        grid = np.geomspace(lo, hi, 1001) if grid is None else np.asarray(grid, dtype=float)
        k, b = self.shape, self.rate
        return StationaryDensity(
            support=(lo, hi),
            grid=grid,
            values=self.pdf(grid),
            norm_const=math.exp(k * math.log(b) - special.gammaln(k)),
            log_mean=float(special.digamma(k) - math.log(b)),
            mean=self.mean,
            log_pdf_fn=self.logpdf,
            dlog_pdf_fn=self.dlogpdf,
        )

    def working_support(self, eps: float = 1e-6, tail: float = 1e-12) -> tuple[float, float]:
        """``(eps, y_max)`` with upper-tail mass below ``tail``."""
        from scipy import stats

        return eps, float(stats.gamma.isf(tail, self.shape, scale=1.0 / self.rate))


class VolatilityLaw:
    """Local volatility function ``phi`` and activity ``a``.

    ``phi`` is either a polynomial (coefficients in increasing degree) or a
    table of positive values interpolated by a cubic spline.  The basis
    volatility is ``theta = sqrt(a / phi(Y))``.
    """

    def __init__(self, coefficients=None, table=None, activity: float = 0.0, max_degree: int = 12):
        if (coefficients is None) == (table is None):
            raise ValueError("give exactly one of coefficients or table")
        if activity < 0:
            raise ValueError("activity must be nonnegative")
        self.activity = float(activity)
        self.max_degree = max_degree
        self.coefficients = None
        self.table = None
        if coefficients is not None:
            c = np.atleast_1d(np.asarray(coefficients, dtype=float))
            if len(c) - 1 > max_degree:
                raise ValueError(f"polynomial degree exceeds bound {max_degree}")
            if not np.all(np.isfinite(c)):
                raise ValueError("coefficients must be finite")
            self.coefficients = c
            self._poly = np.polynomial.Polynomial(c)
            self._dpoly = self._poly.deriv(1)
            self._d2poly = self._poly.deriv(2)
        else:
            ty, tphi = (np.asarray(v, dtype=float) for v in table)
            if np.any(ty <= 0) or np.any(np.diff(ty) <= 0):
                raise ValueError("table abscissae must be positive and increasing")
            if np.any(tphi <= 0):
                raise ValueError("tabulated phi must be positive")
            self.table = (ty, tphi)
            self._spline = CubicSpline(np.log(ty), tphi)
            s = np.linspace(math.log(ty[0]), math.log(ty[-1]), 20 * len(ty))
            # int (1 - phi(u)) / u du = int (1 - phi(e^s)) ds
            self._potential = CubicSpline(s, 1.0 - self._spline(s)).antiderivative()

    @classmethod
    def polynomial(cls, coefficients, activity: float = 0.0) -> "VolatilityLaw":
        return cls(coefficients=coefficients, activity=activity)

    @classmethod
    def tabulated(cls, y, phi, activity: float = 0.0) -> "VolatilityLaw":
        return cls(table=(y, phi), activity=activity)

    @classmethod
    def from_json(cls, doc) -> "VolatilityLaw":
        """Parse ``{"coefficients": [...], "activity": a}`` or a bare array."""
        if isinstance(doc, (str, Path)) and Path(doc).exists():
            doc = json.loads(Path(doc).read_text())
        elif isinstance(doc, str):
            doc = json.loads(doc)
        if isinstance(doc, list):
            return cls.polynomial(doc)
        return cls.polynomial(doc["coefficients"], doc.get("activity", 0.0))

    @property
    def domain(self) -> tuple[float, float]:
        if self.table is None:
            return 0.0, math.inf
        return float(self.table[0][0]), float(self.table[0][-1])

    def _check_domain(self, y):
        lo, hi = self.domain
        if np.any(y < lo * (1 - 1e-12)) or np.any(y > hi * (1 + 1e-12)):
            raise ValueError("evaluation outside the tabulated range of phi")

    def phi(self, y):
        y = np.asarray(y, dtype=float)
        if self.table is None:
            return self._poly(y)
        self._check_domain(y)
        return self._spline(np.log(y))

    def dphi(self, y):
        y = np.asarray(y, dtype=float)
        if self.table is None:
            return self._dpoly(y)
        return self._spline(np.log(y), 1) / y

    def d2phi(self, y):
        y = np.asarray(y, dtype=float)
        if self.table is None:
            return self._d2poly(y)
        s = np.log(y)
        return (self._spline(s, 2) - self._spline(s, 1)) / y**2

    def potential(self, y, y_ref: float = 1.0):
        """``int_{y_ref}^{y} (1 - phi(u)) / u du``."""
        y = np.asarray(y, dtype=float)
        if self.table is None:
            c = self.coefficients
            out = (1.0 - c[0]) * np.log(y / y_ref)
            for i in range(1, len(c)):
                out = out - c[i] * (y**i - y_ref**i) / i
            return out
        self._check_domain(y)
        return self._potential(np.log(y)) - self._potential(math.log(y_ref))

    def theta(self, y):
        return np.sqrt(self.activity / self.phi(y))

    def to_json(self) -> dict:
        if self.table is None:
            return {"coefficients": self.coefficients.tolist(), "activity": self.activity}
        return {"table": [self.table[0].tolist(), self.table[1].tolist()], "activity": self.activity}


@dataclass
class StationaryDensity:
    """A normalized density on a working support.

    ``values`` are samples on ``grid``.  When ``log_pdf_fn`` is present the
    analytic form is used for evaluation; otherwise a cubic spline of
    ``ln q`` against ``ln y`` interpolates the samples.
    """

    support: tuple[float, float]
    grid: np.ndarray
    values: np.ndarray
    norm_const: float
    log_mean: float
    mean: float
    log_pdf_fn: Callable | None = None
    dlog_pdf_fn: Callable | None = None
    truncated: bool = True
    _spline: CubicSpline | None = field(default=None, repr=False)

    def __post_init__(self):
        positive = bool(np.all(self.values > 0) and self.grid[0] > 0)
        if self.log_pdf_fn is None and not positive:
            raise ValueError("tabulated densities need positive values on a positive grid")
        # analytic densities without derivatives fall back to the tabulation
        if positive and (self.log_pdf_fn is None or self.dlog_pdf_fn is None):
            self._spline = CubicSpline(np.log(self.grid), np.log(self.values))

    @property
    def analytic(self) -> bool:
        return self.log_pdf_fn is not None

    def _inside(self, y):
        lo, hi = self.support
        return (y >= lo * (1 - 1e-12)) & (y <= hi * (1 + 1e-12))

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        inside = self._inside(y)
        ys = np.where(inside, y, self.grid[len(self.grid) // 2])
        if self.log_pdf_fn is not None:
            vals = self.log_pdf_fn(ys)
        else:
            vals = self._spline(np.log(ys))
        return np.where(inside, vals, -np.inf)

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def dlogpdf(self, y):
        """First and second derivatives of ``ln q``."""
        y = np.asarray(y, dtype=float)
        if self.dlog_pdf_fn is not None:
            return self.dlog_pdf_fn(y)
        if self._spline is None:
            raise ValueError("density has no derivative information")
        s = np.log(y)
        d1 = self._spline(s, 1)
        d2 = self._spline(s, 2)
        return d1 / y, (d2 - d1) / y**2

    @classmethod
    def from_logpdf(cls, log_unnormalized: Callable, support=DEFAULT_SUPPORT, dlog: Callable | None = None, grid=None, truncated: bool = True) -> "StationaryDensity":
        """Normalize an analytic log-density on ``support`` by quadrature."""
        lo, hi = support
        grid = np.geomspace(max(lo, 1e-12), hi, 1001) if grid is None else np.asarray(grid, dtype=float)
        shift = float(np.max(log_unnormalized(grid)))
        z = _quad(lambda y: math.exp(float(log_unnormalized(y)) - shift), lo, hi)
        if not (z > 0 and math.isfinite(z)):
            raise NonNormalizable("density does not integrate to a positive finite value")
        log_z = shift + math.log(z)
        logpdf = lambda y: log_unnormalized(y) - log_z
        mean = _quad(lambda y: y * math.exp(float(logpdf(y))), lo, hi)
        log_mean = _quad(lambda y: math.log(y) * math.exp(float(logpdf(y))), lo, hi)
        return cls(
            support=(lo, hi),
            grid=grid,
            values=np.exp(logpdf(grid)),
            norm_const=math.exp(-log_z),
            log_mean=log_mean,
            mean=mean,
            log_pdf_fn=logpdf,
            dlog_pdf_fn=dlog,
            truncated=truncated,
        )

    @classmethod
    def from_values(cls, grid, values) -> "StationaryDensity":
        """Tabulated density; renormalized over the grid range."""
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        raw = cls((grid[0], grid[-1]), grid, values, 1.0, 0.0, 0.0)
        z = _quad(lambda y: float(raw.pdf(y)), grid[0], grid[-1])
        dens = cls((grid[0], grid[-1]), grid, values / z, 1.0 / z, 0.0, 0.0)
        dens.mean = _quad(lambda y: y * float(dens.pdf(y)), grid[0], grid[-1])
        dens.log_mean = _quad(lambda y: math.log(y) * float(dens.pdf(y)), grid[0], grid[-1])
        return dens

    def to_csv(self, path: str | Path, grid=None) -> None:
        from .reporting import write_csv

        grid = self.grid if grid is None else np.asarray(grid, dtype=float)
        write_csv(path, ["y", "q"], zip(grid, self.pdf(grid)))


def _log_exponent(density: StationaryDensity, y: float) -> float:
    """Local power-law exponent ``d ln q / d ln y``."""
    d1, _ = density.dlogpdf(np.array([y]))
    return float(y * d1[0])


def stationary_from_phi(law: VolatilityLaw, grid=None, *, support=None, y_ref: float = 1.0) -> StationaryDensity:
    """Stationary density generated by a local volatility function.

    Args:
        law: The volatility law.
        grid: Grid on which positivity of ``phi`` is checked and values are
            stored.  Defaults to 2001 log-spaced points on the support.
        support: Working support; defaults to ``(1e-6, 50)`` or the table range.
        y_ref: Reference point of the inner integral.

    Raises:
        ValueError: ``phi`` is not positive on the grid.
        SingularAtZero: the density is not integrable at zero.
        NonNormalizable: the density is not integrable at infinity.
    """
    if support is None:
        support = DEFAULT_SUPPORT if law.table is None else law.domain
    lo, hi = support
    grid = np.geomspace(lo, hi, 2001) if grid is None else np.asarray(grid, dtype=float)
    if np.any(law.phi(grid) <= 0):
        raise ValueError("phi must be positive on the working grid")
    if not lo <= y_ref <= hi:
        y_ref = math.sqrt(lo * hi)

    def log_unnorm(y):
        y = np.asarray(y, dtype=float)
        return np.log(law.phi(y)) - 2.0 * np.log(y) + 2.0 * law.potential(y, y_ref)

    def dlog(y):
        y = np.asarray(y, dtype=float)
        p, dp, d2p = law.phi(y), law.dphi(y), law.d2phi(y)
        d1 = dp / p - 2.0 / y + 2.0 * (1.0 - p) / y
        d2 = d2p / p - (dp / p) ** 2 + 2.0 / y**2 - 2.0 * dp / y - 2.0 * (1.0 - p) / y**2
        return d1, d2

    exp_lo = float(lo * dlog(np.array([lo]))[0][0])
    exp_hi = float(hi * dlog(np.array([hi]))[0][0])
    if law.table is None or law.domain[0] == 0:
        if exp_lo <= -1.0:
            raise SingularAtZero(f"density behaves like y**{exp_lo:.3g} near zero")
        if exp_hi >= -1.0:
            raise NonNormalizable(f"density decays like y**{exp_hi:.3g} in the tail")
    return StationaryDensity.from_logpdf(log_unnorm, (lo, hi), dlog=dlog, grid=grid)


class FPResidual(NamedTuple):
    grid: np.ndarray
    residual: np.ndarray
    sup_norm: float


def fp_residual(density: StationaryDensity, law: VolatilityLaw, grid) -> FPResidual:
    """Pointwise residual of the stationary Fokker-Planck equation

        d/dy[q y (1/phi - 1)] - 1/2 d^2/dy^2[q y^2 / phi] = 0,

    using derivatives of ``ln q`` (analytic or spline) and of ``phi``.  The
    sup-norm is taken over the grid interior.
    """
    y = np.asarray(grid, dtype=float)
    if y.ndim != 1 or len(y) < 3:
        raise GridTooCoarse("need at least three grid points")
    if not density.analytic:
        step = np.max(np.diff(np.log(density.grid)))
        if step > 0.05:
            raise GridTooCoarse(f"tabulation log-step {step:.3g} too coarse for second derivatives")

    q = density.pdf(y)
    l1, l2 = density.dlogpdf(y)
    q1 = q * l1
    q2 = q * (l2 + l1**2)
    p, dp, d2p = law.phi(y), law.dphi(y), law.d2phi(y)

    h1 = y * (1.0 / p - 1.0)
    dh1 = (1.0 / p - 1.0) - y * dp / p**2
    h2 = y**2 / p
    dh2 = 2.0 * y / p - y**2 * dp / p**2
    d2h2 = 2.0 / p - 4.0 * y * dp / p**2 - y**2 * d2p / p**2 + 2.0 * y**2 * dp**2 / p**3

    flux = q1 * h1 + q * dh1
    diffusion = q2 * h2 + 2.0 * q1 * dh2 + q * d2h2
    residual = flux - 0.5 * diffusion
    return FPResidual(y, residual, float(np.max(np.abs(residual[1:-1]))))


def _tail_contribution(density: StationaryDensity) -> float:
    """Rough size of ``-q ln q`` mass outside a truncated support."""
    if not density.truncated:
        return 0.0
    lo, hi = density.support
    total = 0.0
    if lo > 0:
        p = _log_exponent(density, lo)
        q_lo = float(density.pdf(lo))
        if p <= -1:
            return math.inf
        mass = q_lo * lo / (p + 1.0)
        total += mass * (abs(math.log(q_lo)) + 1.0 + abs(p) / (p + 1.0)) if q_lo > 0 else 0.0
    d1, _ = density.dlogpdf(np.array([hi]))
    rate = -float(d1[0])
    q_hi = float(density.pdf(hi))
    if q_hi > 0:
        if rate <= 0:
            return math.inf
        total += q_hi / rate * (abs(math.log(q_hi)) + 1.0)
    return total


def entropy(density: StationaryDensity) -> float:
    """Differential entropy ``-int q ln q`` by adaptive quadrature.

    Warns with ``PrecisionWarning`` when the truncated tails may contribute
    more than 1e-10.
    """
    lo, hi = density.support
    tail = _tail_contribution(density)
    if tail > TAIL_TOL:
        warnings.warn(f"tail truncation may contribute {tail:.2e} to the entropy", PrecisionWarning, stacklevel=2)

    def f(y):
        lq = float(density.logpdf(y))
        return -math.exp(lq) * lq if lq > -700 else 0.0

    return _quad(f, lo, hi)


def _check_support(p: StationaryDensity, q: StationaryDensity):
    plo, phi_ = p.support
    qlo, qhi = q.support
    if plo < qlo * (1 - 1e-12) or phi_ > qhi * (1 + 1e-12):
        raise SupportMismatch(f"support {p.support} not contained in {q.support}")
    pg = p.grid[(p.grid >= plo) & (p.grid <= phi_)]
    bad = (p.pdf(pg) > 0) & ~np.isfinite(q.logpdf(pg))
    if np.any(bad):
        raise SupportMismatch("q vanishes where p is positive")


def cross_entropy(p: StationaryDensity, q: StationaryDensity) -> float:
    """``-int p ln q``."""
    _check_support(p, q)
    lo, hi = p.support

    def f(y):
        lp = float(p.logpdf(y))
        return -math.exp(lp) * float(q.logpdf(y)) if lp > -700 else 0.0

    return _quad(f, lo, hi)


def kl_divergence(p: StationaryDensity, q: StationaryDensity) -> float:
    """``int p ln(p / q)``, nonnegative.

    Raises:
        SupportMismatch: ``q`` does not cover the support of ``p``.
    """
    _check_support(p, q)
    lo, hi = p.support

    def f(y):
        lp = float(p.logpdf(y))
        return math.exp(lp) * (lp - float(q.logpdf(y))) if lp > -700 else 0.0

    return _quad(f, lo, hi)


class Moments(NamedTuple):
    mean: float
    log_mean: float
    inverse_mean: float


def density_moments(density: StationaryDensity) -> Moments:
    """``E[Y]``, ``E[ln Y]`` and ``E[1/Y]`` by quadrature.

    ``E[1/Y]`` is reported as ``inf`` (with a ``DivergenceWarning``) when the
    density does not vanish at zero fast enough, i.e. when ``q(y) / y`` is
    not integrable at the origin.
    """
    lo, hi = density.support
    pdf = lambda y: float(density.pdf(y))
    mean = _quad(lambda y: y * pdf(y), lo, hi)
    log_mean = _quad(lambda y: math.log(y) * pdf(y), lo, hi)
    probe = lo if lo > 0 else 1e-9
    if _log_exponent(density, probe) <= 1e-3:
        warnings.warn("E[1/Y] diverges: density does not vanish at zero", DivergenceWarning, stacklevel=2)
        inverse_mean = math.inf
    else:
        inverse_mean = _quad(lambda y: pdf(y) / y, lo, hi)
    return Moments(mean, log_mean, inverse_mean)
