"""Basis-market simulation.

Each normalized GOP ``Y`` is a square-root process of dimension four in its
own activity time,

    dY = (y_bar - Y) dtau + sqrt(Y * y_bar) dWbar,    dtau = a dt,

started from its stationary gamma(2, rate 2/y_bar) law with ``tau0 = -ln Y0``
so that every benchmarked basis account starts at one.  Derived quantities:

    theta = sqrt(a * y_bar / Y)
    b_hat = 1 / (exp(tau) * Y)
    log_lambda = sum_j ln b_hat_j

The basis portfolio is integrated from the Brownian increments that drove the
components.  Under the exact scheme those increments are the ones implied by
the sampled transitions; with independent components the product of the
``b_hat`` and the basis portfolio then coincide on the grid.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .params import ModelParams
from .rng import RngStream, as_generator

# Fixed so that results do not depend on the worker count.
BLOCK_SIZE = 8192
WORKERS_ENV = "MAXENT_MARKET_WORKERS"

STATIONARY_SHAPE = 2.0


def stationary_rate(y_bar: float) -> float:
    return STATIONARY_SHAPE / y_bar


def draw_stationary_initial(params: ModelParams, rng, size=None, y0=None):
    """Draw ``Y0`` from the stationary gamma law and set ``tau0 = -ln Y0``.

    Args:
        params: Model parameters (provides ``y_bar``).
        rng: ``RngStream``, ``Generator`` or seed.
        size: Output shape, ``None`` for a scalar.
        y0: Force the initial value (test mode); no randomness is consumed.

    Returns:
        Tuple ``(y0, tau0)``.
    """
    y_bar = params.y_bar
    if not y_bar > 0:
        raise ValueError("y_bar must be positive")
    if y0 is None:
        y0 = as_generator(rng).gamma(STATIONARY_SHAPE, y_bar / STATIONARY_SHAPE, size)
    y0 = np.asarray(y0, dtype=float) if size is not None else float(y0)
    if np.any(np.asarray(y0) <= 0):
        raise ValueError("initial value must be positive")
    return y0, -np.log(y0)


def _check_step_args(y, d_tau, y_bar):
    if not y_bar > 0:
        raise ValueError(f"y_bar must be positive, got {y_bar!r}")
    if np.any(d_tau < 0):
        raise ValueError("d_tau must be nonnegative")


def step_cir_exact(y, d_tau, y_bar: float, rng):
    """Exact transition of the dimension-four square-root process.

    Given ``Y_tau = y`` the value after ``d_tau`` is ``X / (2c)`` with
    ``X`` non-central chi-square (4 degrees of freedom, non-centrality
    ``2 c y exp(-d_tau)``) and ``c = 2 / (y_bar (1 - exp(-d_tau)))``.  For four
    degrees of freedom ``X = (Z1 + sqrt(nc))**2 + Z2**2 + 2 E`` with standard
    normals ``Z1, Z2`` and a unit exponential ``E``.

    Works elementwise on arrays; ``y`` and ``d_tau`` broadcast.
    """
    scalar = np.ndim(y) == 0 and np.ndim(d_tau) == 0
    y = np.asarray(y, dtype=float)
    d = np.asarray(d_tau, dtype=float)
    _check_step_args(y, d, y_bar)
    if np.any(y <= 0):
        raise ValueError("y must be positive")
    gen = as_generator(rng)
    shape = np.broadcast_shapes(y.shape, d.shape)
    z1 = gen.standard_normal(shape)
    z2 = gen.standard_normal(shape)
    e = gen.standard_exponential(shape)

    half_inv_c = 0.25 * y_bar * -np.expm1(-d)  # 1 / (2c)
    centre = np.sqrt(y * np.exp(-d))
    out = (centre + np.sqrt(half_inv_c) * z1) ** 2 + half_inv_c * (z2 * z2 + 2.0 * e)
    out = np.where(d == 0, y, out)
    return float(out) if scalar else out


@dataclass
class ClipCounter:
    """Counts Euler proposals that went negative."""

    proposals: int = 0
    clipped: int = 0


def step_cir_euler(y, d_tau, y_bar: float, rng=None, *, dw_bar=None, counter: ClipCounter | None = None):
    """One Euler-Maruyama step with full truncation.

    The state is clipped at zero before the drift and ``sqrt(Y * y_bar)`` are
    evaluated; the raw (possibly negative) proposal is returned.

    Args:
        dw_bar: Brownian increment in activity time.  Drawn from ``rng`` when
            omitted; pass zeros to suppress the noise.
        counter: Optional ``ClipCounter`` updated with negative proposals.
    """
    scalar = np.ndim(y) == 0 and np.ndim(d_tau) == 0 and np.ndim(dw_bar) == 0
    y = np.asarray(y, dtype=float)
    d = np.asarray(d_tau, dtype=float)
    _check_step_args(y, d, y_bar)
    if dw_bar is None:
        shape = np.broadcast_shapes(y.shape, d.shape)
        dw_bar = np.sqrt(d) * as_generator(rng).standard_normal(shape)
    y_pos = np.maximum(y, 0.0)
    out = y + (y_bar - y_pos) * d + np.sqrt(y_pos * y_bar) * dw_bar
    if counter is not None:
        counter.proposals += int(np.size(out))
        counter.clipped += int(np.count_nonzero(out < 0))
    return float(out) if scalar else out


@dataclass
class MarketPath:
    """One simulated path.  Component arrays have shape ``(n, len(times))``."""

    times: np.ndarray
    y: np.ndarray
    tau: np.ndarray
    theta: np.ndarray
    b_hat: np.ndarray
    log_lambda: np.ndarray
    s0_hat: np.ndarray
    path_id: int = 0

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def lam(self) -> np.ndarray:
        return np.exp(self.log_lambda)


@dataclass
class MarketPaths:
    """A batch of paths.  Component arrays have shape ``(paths, n, records)``."""

    params: ModelParams
    times: np.ndarray
    y: np.ndarray
    tau: np.ndarray
    theta: np.ndarray
    b_hat: np.ndarray
    log_lambda: np.ndarray
    s0_hat: np.ndarray
    seed: int
    scheme: str = "exact"
    record_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    clipped: int = 0

    def __len__(self) -> int:
        return self.y.shape[0]

    def __getitem__(self, i: int) -> MarketPath:
        return MarketPath(
            times=self.times,
            y=self.y[i],
            tau=self.tau[i],
            theta=self.theta[i],
            b_hat=self.b_hat[i],
            log_lambda=self.log_lambda[i],
            s0_hat=self.s0_hat[i],
            path_id=i,
        )

    def __iter__(self) -> Iterator[MarketPath]:
        return (self[i] for i in range(len(self)))

    @property
    def n(self) -> int:
        return self.y.shape[1]

    @property
    def full_resolution(self) -> bool:
        return bool(np.all(np.diff(self.record_steps) == 1))

    def time_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[idx], t, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"time {t} was not recorded")
        return idx


def _record_steps(steps: int, record_every: int | None, record_times, dt: float) -> np.ndarray:
    if record_times is not None:
        idx = {0, steps}
        for t in record_times:
            k = int(round(t / dt))
            if not 0 <= k <= steps:
                raise ValueError(f"record time {t} outside [0, horizon]")
            idx.add(k)
        return np.array(sorted(idx), dtype=int)
    every = 1 if record_every is None else int(record_every)
    if every < 1:
        raise ValueError("record_every must be positive")
    idx = list(range(0, steps + 1, every))
    if idx[-1] != steps:
        idx.append(steps)
    return np.array(idx, dtype=int)


def _simulate_block(args):
    params, block, n_paths, seed, scheme, rec = args
    n, dt, y_bar = params.n, params.dt, params.y_bar
    a = np.asarray(params.activities)
    d_tau = a * dt
    gens = [RngStream(seed, (block, j)).generator() for j in range(n)]

    y = np.empty((n_paths, n))
    for j in range(n):
        y[:, j] = gens[j].gamma(STATIONARY_SHAPE, y_bar / STATIONARY_SHAPE, n_paths)
    tau0 = -np.log(y)
    y_raw = y.copy()
    ln_b = np.zeros((n_paths, n))
    ln_s0 = np.zeros(n_paths)
    theta = np.sqrt(a * y_bar / y)
    counter = ClipCounter()
    tiny = np.finfo(float).tiny

    R = len(rec)
    out_y = np.empty((n_paths, n, R))
    out_theta = np.empty((n_paths, n, R))
    out_lnb = np.empty((n_paths, n, R))
    out_lns0 = np.empty((n_paths, R))

    def record(r):
        out_y[:, :, r] = y
        out_theta[:, :, r] = theta
        out_lnb[:, :, r] = ln_b
        out_lns0[:, r] = ln_s0

    r = 0
    if rec[0] == 0:
        record(0)
        r = 1
    half_th2_dt = 0.5 * theta**2 * dt
    for k in range(1, rec[-1] + 1):
        if scheme == "exact":
            for j in range(n):
                y[:, j] = step_cir_exact(y[:, j], d_tau[j], y_bar, gens[j])
            ln_b_new = -(tau0 + d_tau * k) - np.log(y)
            # Brownian increments implied by the sampled transitions.
            theta_dw = -(ln_b_new - ln_b) - half_th2_dt
            ln_s0 += np.sum(-theta_dw - half_th2_dt, axis=1)
            ln_b = ln_b_new
        else:
            dw = np.empty((n_paths, n))
            for j in range(n):
                dw[:, j] = math.sqrt(dt) * gens[j].standard_normal(n_paths)
            y_raw = step_cir_euler(y_raw, d_tau, y_bar, dw_bar=np.sqrt(a) * dw, counter=counter)
            y = np.maximum(y_raw, tiny)
            ln_s0 += np.sum(-theta * dw - half_th2_dt, axis=1)
            ln_b = -(tau0 + d_tau * k) - np.log(y)
        theta = np.sqrt(a * y_bar / y)
        half_th2_dt = 0.5 * theta**2 * dt
        if r < R and rec[r] == k:
            record(r)
            r += 1
    return out_y, out_theta, out_lnb, out_lns0, tau0, counter.clipped


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def simulate_basis_market(
    params: ModelParams,
    paths: int,
    seed: int | None = None,
    *,
    scheme: str = "exact",
    record_every: int | None = None,
    record_times: Sequence[float] | None = None,
    workers: int | None = None,
) -> MarketPaths:
    """Simulate ``paths`` independent basis-market paths.

    Paths are generated in fixed-size blocks; block ``b`` and component ``j``
    draw from ``RngStream(seed, (b, j))``, so the output is identical for any
    worker count.

    Args:
        params: Model parameters.
        paths: Number of paths, at least one.
        seed: Root seed, defaults to ``params.seed``.
        scheme: ``"exact"`` (non-central chi-square transitions) or
            ``"euler"`` (full-truncation Euler with explicit increments).
        record_every: Store every k-th grid point (default: all).
        record_times: Store only these calendar times (plus 0 and horizon).
        workers: Process count; defaults to ``$MAXENT_MARKET_WORKERS`` or 1.
    """
    if paths < 1:
        raise ValueError("at least one path is required")
    if scheme not in ("exact", "euler"):
        raise ValueError(f"unknown scheme {scheme!r}")
    seed = params.seed if seed is None else int(seed)
    rec = _record_steps(params.steps, record_every, record_times, params.dt)

    blocks = []
    start = 0
    b = 0
    while start < paths:
        size = min(BLOCK_SIZE, paths - start)
        blocks.append((params, b, size, seed, scheme, rec))
        start += size
        b += 1

    workers = default_workers() if workers is None else workers
    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_simulate_block, blocks))
    else:
        results = [_simulate_block(blk) for blk in blocks]

    y = np.concatenate([res[0] for res in results])
    theta = np.concatenate([res[1] for res in results])
    ln_b = np.concatenate([res[2] for res in results])
    ln_s0 = np.concatenate([res[3] for res in results])
    tau0 = np.concatenate([res[4] for res in results])
    times = rec * params.dt
    a = np.asarray(params.activities)
    tau = tau0[:, :, None] + a[None, :, None] * times[None, None, :]
    return MarketPaths(
        params=params,
        times=times,
        y=y,
        tau=tau,
        theta=theta,
        b_hat=np.exp(ln_b),
        log_lambda=ln_b.sum(axis=1),
        s0_hat=np.exp(ln_s0),
        seed=seed,
        scheme=scheme,
        record_steps=rec,
        clipped=sum(res[5] for res in results),
    )


def _check_grid(path: MarketPath):
    T = len(path.times)
    for name in ("y", "tau", "theta", "b_hat"):
        arr = getattr(path, name)
        if arr.ndim != 2 or arr.shape[1] != T:
            raise ValueError(f"component grid of {name!r} disagrees with the time grid")
    n = path.y.shape[0]
    if any(getattr(path, nm).shape[0] != n for nm in ("tau", "theta", "b_hat")):
        raise ValueError("components disagree in number")


def implied_increments(path: MarketPath) -> np.ndarray:
    """``theta_j * dW_j`` on each grid interval, shape ``(n, T - 1)``.

    Read off the stored path through ``d ln b_hat = -theta dW - theta**2 dt / 2``
    with ``theta`` taken at the left end of each interval.
    """
    _check_grid(path)
    dt = np.diff(path.times)
    return -np.diff(np.log(path.b_hat), axis=1) - 0.5 * path.theta[:, :-1] ** 2 * dt


def simulate_basis_portfolio(path: MarketPath) -> np.ndarray:
    """Benchmarked basis portfolio ``dS0/S0 = sum_j dB_j/B_j`` with ``S0(0) = 1``.

    Log-Euler integration of ``-sum_j theta_j dW_j`` with the Ito correction,
    using the increments implied by the stored components.
    """
    dw = implied_increments(path)
    dt = np.diff(path.times)
    incr = np.sum(-dw - 0.5 * path.theta[:, :-1] ** 2 * dt, axis=0)
    return np.exp(np.concatenate([[0.0], np.cumsum(incr)]))


def realized_qv(log_values: np.ndarray) -> np.ndarray:
    """Running realized quadratic variation of a log-price trajectory."""
    return np.concatenate([[0.0], np.cumsum(np.diff(log_values) ** 2)])
