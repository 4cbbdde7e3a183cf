"""Path simulation on a trading grid.

The trading grid splits [0, T] into N intervals of length Delta = T / N.
Inside each interval [i Delta, (i+1) Delta) a path follows plain GBM on the
initial window [i Delta, i Delta + epsilon) and a drift-corrected SDE
anchored at (Y_{i Delta}, i Delta) afterwards.  By construction the joint law
of (Y_0, Y_Delta, ..., Y_T) is exactly that of a GBM with parameters
(mu, sigma_bar), whatever volatility the corrected SDE uses off the grid.

Three generators are provided:

* :func:`simulate_gbm` -- exact lognormal increments of the reference GBM.
* :func:`simulate_exact_proportional` -- exact sampling for sigma(x) = nu x.
  In log coordinates the post-window solution on interval j is, with
  tau = t - j Delta, m = mu - sigma_bar^2 / 2 and beta = 1 - nu^2/sigma_bar^2,

      Z_t = Z_{j Delta} + m tau
            + (tau/eps)^{beta/2} [ sigma_bar (W_{j Delta + eps} - W_{j Delta})
                                   + nu * int_{j Delta + eps}^t
                                        ((u - j Delta)/eps)^{-beta/2} dW_u ],

  and the epsilon -> 0 limit drops the window term:

      Z_t = Z_{j Delta} + m tau
            + tau^{beta/2} nu * int_{j Delta}^t (u - j Delta)^{-beta/2} dW_u.

  Both are sampled exactly: the stochastic integrals are Gaussian with
  variances given by :class:`LogBridgeKernel`, and epsilon = 0 is a
  first-class configuration, not a numerical limit.
* :func:`simulate_euler` -- exact GBM on the windows, Euler-Maruyama with the
  anchored closed-form drift elsewhere.  Requires epsilon > 0 because the
  anchored drift is singular at the interval start.

:func:`risk_neutral_dynamics` simulates the pricing-measure dynamics
dY = r Y dt + (sigma_bar Y or sigma(Y)) dW, exactly for the proportional
volatility (piecewise lognormal) and by the Euler scheme otherwise.

Randomness comes from the counter-based Philox generator, one matrix of
standard normals drawn up front per path set, so identical (seed, config)
pairs give bit-identical paths and path blocks could be filled in parallel
without changing the stream.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .drift import MarketParams, VolatilitySpec, VolKind, closed_form_drift
from .errors import DomainError, InputError

Array = np.ndarray

__all__ = [
    "Measure",
    "GridSpec",
    "PathSet",
    "LogBridgeKernel",
    "simulate_gbm",
    "simulate_exact_proportional",
    "simulate_euler",
    "risk_neutral_dynamics",
]

CLAMP_FLOOR_FACTOR = 1e-12


class Measure(str, enum.Enum):
    OBJECTIVE = "objective"
    RISK_NEUTRAL = "risk_neutral"


@dataclass(frozen=True)
class GridSpec:
    """Trading grid: horizon T, N intervals, window length epsilon.

    ``sub_steps`` controls recording (and Euler) resolution: each interval
    stores sub_steps points past its left end, so a path set holds
    sub_steps * N + 1 samples.  Grid times are exact members of the stored
    time axis, computed as i * T / N with integer i.
    """

    horizon: float
    n_intervals: int
    epsilon: float = 0.0
    sub_steps: int = 1

    def __post_init__(self):
        if not self.horizon > 0.0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if self.n_intervals < 1:
            raise DomainError(f"need at least one interval, got {self.n_intervals}")
        if self.sub_steps < 1:
            raise DomainError(f"sub_steps must be >= 1, got {self.sub_steps}")
        if not 0.0 <= self.epsilon < self.delta:
            raise DomainError(
                f"epsilon must lie in [0, Delta) = [0, {self.delta}), got {self.epsilon}"
            )

    @property
    def delta(self) -> float:
        return self.horizon / self.n_intervals

    def grid_times(self) -> Array:
        return np.arange(self.n_intervals + 1) * self.horizon / self.n_intervals

    def sample_times(self) -> Array:
        s, n = self.sub_steps, self.n_intervals
        times = np.arange(n * s + 1) * self.horizon / (n * s)
        times[::s] = self.grid_times()  # grid members exact
        return times

    def interval_index(self, t: float) -> int:
        """Index i with t in [i Delta, (i+1) Delta), snapping float dust only.

        The snap margin is a few ulp of t / Delta, far below any offset a
        caller would use deliberately, so probing a boundary from the left at
        1e-12 still lands in the earlier interval.
        """
        if not 0.0 <= t <= self.horizon:
            raise DomainError(f"t={t} outside [0, {self.horizon}]")
        ratio = t / self.delta
        i = int(math.floor(ratio))
        if (i + 1) - ratio < 64.0 * np.spacing(max(abs(ratio), 1.0)):
            i += 1
        return min(i, self.n_intervals)

    def alpha(self, t: float) -> float:
        """Most recent grid time at or before t."""
        return self.interval_index(t) * self.delta


@dataclass(frozen=True)
class LogBridgeKernel:
    """Variance bookkeeping of the kernel integral int u^{-beta/2} dW.

    ``var_increment(s, t)`` is int_s^t u^{-beta} du = (t^{1-beta} - s^{1-beta})
    / (1 - beta), the variance the kernel integral picks up over (s, t].
    Finite at s = 0 for every beta < 1, which covers all nu > 0.
    """

    beta: float

    def __post_init__(self):
        if not self.beta < 1.0:
            raise DomainError(f"kernel requires beta < 1, got {self.beta}")

    def var_increment(self, s: float, t: float) -> float:
        if not 0.0 <= s < t:
            raise DomainError(f"need 0 <= s < t, got s={s}, t={t}")
        p = 1.0 - self.beta
        return (t**p - s**p) / p


@dataclass
class PathSet:
    """Simulated paths with their time axis and provenance.

    ``paths`` has one row per path; ``times`` is shared.  ``clamp_fraction``
    and ``invalid_count`` are only populated by the Euler generators: the
    fraction of Euler steps that hit the positivity floor, and the number of
    paths dropped because a step produced a non-finite value.
    """

    times: Array
    paths: Array
    measure: Measure
    generator: str
    seed: int
    clamp_fraction: float = 0.0
    invalid_count: int = 0

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def n_times(self) -> int:
        return self.paths.shape[1]

    def time_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, self.times[-1]):
            raise InputError(f"time {t} is not a sample time of this path set")
        return idx

    def values_at(self, t: float) -> Array:
        return self.paths[:, self.time_index(t)]

    def grid_columns(self, grid: GridSpec) -> Array:
        """Values at the grid times, shape (n_paths, N + 1)."""
        idx = [self.time_index(t) for t in grid.grid_times()]
        return self.paths[:, idx]

    def to_csv(self, fh: TextIO, header: dict | None = None) -> None:
        """Dump as path_id,t,value rows with a commented header."""
        meta = {
            "generator": self.generator,
            "measure": self.measure.value,
            "seed": self.seed,
            "n_paths": self.n_paths,
            "n_times": self.n_times,
            "clamp_fraction": format(self.clamp_fraction, ".17g"),
            "invalid_count": self.invalid_count,
        }
        if header:
            meta.update(header)
        for key, value in meta.items():
            fh.write(f"# {key}={value}\n")
        fh.write("path_id,t,value\n")
        t_strs = [format(t, ".17g") for t in self.times]
        for pid in range(self.n_paths):
            row = self.paths[pid]
            for j, t_str in enumerate(t_strs):
                fh.write(f"{pid},{t_str},{format(row[j], '.17g')}\n")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _as_measure(measure) -> Measure:
    return Measure(measure)


def simulate_gbm(
    params: MarketParams,
    grid: GridSpec,
    n_paths: int,
    seed: int,
    measure=Measure.OBJECTIVE,
) -> PathSet:
    """Exact GBM paths on the sample grid (drift mu, or r under the pricing measure)."""
    measure = _as_measure(measure)
    if n_paths < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths}")
    rate = params.mu if measure is Measure.OBJECTIVE else params.r
    times = grid.sample_times()
    dt = np.diff(times)
    xi = _rng(seed).standard_normal((n_paths, dt.size))
    m = rate - 0.5 * params.sigma_bar**2
    log_inc = m * dt + params.sigma_bar * np.sqrt(dt) * xi
    log_paths = math.log(params.s0) + np.concatenate(
        [np.zeros((n_paths, 1)), np.cumsum(log_inc, axis=1)], axis=1
    )
    paths = np.exp(log_paths)
    paths[:, 0] = params.s0  # exp(log(s0)) can be off by an ulp
    return PathSet(
        times=times,
        paths=paths,
        measure=measure,
        generator=f"gbm(sigma_bar={params.sigma_bar:g})",
        seed=int(seed),
    )


def _interval_local_times(grid: GridSpec) -> tuple[Array, Array]:
    """Local sub-step times within one interval and the epsilon insertion.

    Returns (internal local times tau_1 < ... <= Delta, record mask), where
    masked-out entries are the inserted window boundary that is simulated but
    not stored.
    """
    s = grid.sub_steps
    recorded = np.arange(1, s + 1) * (grid.delta / s)
    recorded[-1] = grid.delta
    eps = grid.epsilon
    if eps == 0.0:
        return recorded, np.ones(s, dtype=bool)
    close = np.isclose(recorded, eps, rtol=1e-12, atol=0.0)
    if close.any():
        return recorded, np.ones(s, dtype=bool)
    internal = np.sort(np.append(recorded, eps))
    mask = ~np.isclose(internal, eps, rtol=1e-12, atol=0.0)
    return internal, mask


def simulate_exact_proportional(
    params: MarketParams,
    grid: GridSpec,
    nu: float,
    n_paths: int,
    seed: int,
    measure=Measure.OBJECTIVE,
) -> PathSet:
    """Exact sampling of the proportional-volatility construction.

    Supports the objective measure only; the pricing-measure law of this
    process is different in kind (piecewise lognormal) and lives in
    :func:`risk_neutral_dynamics`.
    """
    measure = _as_measure(measure)
    if measure is not Measure.OBJECTIVE:
        raise DomainError(
            "simulate_exact_proportional samples the objective law; "
            "use risk_neutral_dynamics for the pricing measure"
        )
    if not nu > 0.0:
        raise DomainError(f"nu must be positive, got {nu}")
    if n_paths < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths}")

    sb = params.sigma_bar
    beta = 1.0 - (nu / sb) ** 2
    kernel = LogBridgeKernel(beta)
    m = params.mu - 0.5 * sb**2
    eps = grid.epsilon

    times = grid.sample_times()
    local, record_mask = _interval_local_times(grid)
    n_int = local.size
    n_rec = grid.sub_steps

    # per-increment standard deviations within one interval
    stds = np.empty(n_int)
    prev = 0.0
    for k, tau in enumerate(local):
        if eps > 0.0 and tau <= eps * (1.0 + 1e-12):
            stds[k] = sb * math.sqrt(tau - prev)  # Brownian window, scaled later
        elif eps > 0.0:
            lo = max(prev, eps)
            stds[k] = nu * math.sqrt(eps**beta * kernel.var_increment(lo, tau))
        else:
            stds[k] = nu * math.sqrt(kernel.var_increment(prev, tau))
        prev = tau

    xi = _rng(seed).standard_normal((n_paths, grid.n_intervals * n_int))

    log_paths = np.empty((n_paths, n_rec * grid.n_intervals + 1))
    log_paths[:, 0] = math.log(params.s0)
    z_anchor = log_paths[:, 0].copy()
    col = 1
    for i in range(grid.n_intervals):
        block = xi[:, i * n_int : (i + 1) * n_int] * stds
        acc = np.zeros(n_paths)  # sigma_bar * W on the window, then the kernel integral
        win = np.zeros(n_paths)  # sigma_bar * (W_{eps} - W_0), frozen at the boundary
        in_window = eps > 0.0
        for k, tau in enumerate(local):
            if in_window and tau <= eps * (1.0 + 1e-12):
                acc = acc + block[:, k]
                z = z_anchor + m * tau + acc
                if abs(tau - eps) <= 1e-12 * eps:
                    win = acc
                    acc = np.zeros(n_paths)
                    in_window = False
            elif eps > 0.0:
                if in_window:  # first post-window increment; window ended mid-gap
                    win = acc
                    acc = np.zeros(n_paths)
                    in_window = False
                acc = acc + block[:, k]
                z = z_anchor + m * tau + (tau / eps) ** (0.5 * beta) * (win + acc)
            else:
                acc = acc + block[:, k]
                z = z_anchor + m * tau + tau ** (0.5 * beta) * acc
            if record_mask[k]:
                log_paths[:, col] = z
                col += 1
        z_anchor = log_paths[:, col - 1].copy()

    paths = np.exp(log_paths)
    paths[:, 0] = params.s0  # exp(log(s0)) can be off by an ulp
    return PathSet(
        times=times,
        paths=paths,
        measure=measure,
        generator=f"exact_proportional(nu={nu:g})",
        seed=int(seed),
    )


def _euler_paths(
    params: MarketParams,
    grid: GridSpec,
    vol: VolatilitySpec,
    n_paths: int,
    seed: int,
    *,
    risk_neutral: bool,
) -> PathSet:
    """Shared Euler machinery for the objective and pricing measures."""
    if vol.kind is VolKind.CUSTOM:
        raise DomainError(
            "Euler simulation needs the anchored closed-form drift; "
            "custom volatilities are not supported here"
        )
    if not grid.epsilon > 0.0:
        raise DomainError(
            "Euler simulation requires epsilon > 0: the anchored drift is "
            "singular at the interval start, so each interval must open with "
            "an exact GBM window"
        )
    if n_paths < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths}")

    sb = params.sigma_bar
    rate = params.r if risk_neutral else params.mu
    drift_fn = None if risk_neutral else closed_form_drift(params, vol)
    floor = CLAMP_FLOOR_FACTOR * params.s0

    times = grid.sample_times()
    local, record_mask = _interval_local_times(grid)
    n_int = local.size
    eps = grid.epsilon

    xi = _rng(seed).standard_normal((n_paths, grid.n_intervals * n_int))

    paths = np.empty((n_paths, grid.sub_steps * grid.n_intervals + 1))
    paths[:, 0] = params.s0
    y = np.full(n_paths, params.s0)
    valid = np.ones(n_paths, dtype=bool)
    clamped = 0
    euler_steps = 0
    col = 1
    m_win = rate - 0.5 * sb**2
    # Overflow in a step is tolerated by design: the offending paths are
    # flagged non-finite here and dropped (counted) below, so the numpy
    # warnings for those lanes are noise.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for i in range(grid.n_intervals):
            t_left = i * grid.delta
            anchor = y.copy()
            block = xi[:, i * n_int : (i + 1) * n_int]
            prev = 0.0
            for k, tau in enumerate(local):
                dt = tau - prev
                if tau <= eps * (1.0 + 1e-12):
                    # exact GBM across the window portion
                    y = y * np.exp(m_win * dt + sb * math.sqrt(dt) * block[:, k])
                else:
                    t_now = t_left + prev
                    if risk_neutral:
                        u = rate * y
                    else:
                        u = drift_fn(t_now, y, anchor, t_left)
                    y = y + u * dt + vol.sigma(t_now, y) * math.sqrt(dt) * block[:, k]
                    bad = ~np.isfinite(y)
                    if bad.any():
                        valid &= ~bad
                        y = np.where(bad, floor, y)
                    low = y < floor
                    clamped += int(np.count_nonzero(low & valid))
                    y = np.maximum(y, floor)
                    euler_steps += 1
                if record_mask[k]:
                    paths[:, col] = y
                    col += 1
                prev = tau

    n_invalid = int(np.count_nonzero(~valid))
    total_euler = euler_steps * n_paths
    return PathSet(
        times=times,
        paths=paths[valid],
        measure=Measure.RISK_NEUTRAL if risk_neutral else Measure.OBJECTIVE,
        generator=f"euler({vol.label()})",
        seed=int(seed),
        clamp_fraction=clamped / total_euler if total_euler else 0.0,
        invalid_count=n_invalid,
    )


def simulate_euler(
    params: MarketParams,
    grid: GridSpec,
    vol: VolatilitySpec,
    n_paths: int,
    seed: int,
) -> PathSet:
    """Objective-measure Euler scheme with the anchored closed-form drift."""
    return _euler_paths(params, grid, vol, n_paths, seed, risk_neutral=False)


def risk_neutral_dynamics(
    params: MarketParams,
    grid: GridSpec,
    vol: VolatilitySpec,
    n_paths: int,
    seed: int,
) -> PathSet:
    """Pricing-measure paths: dY = r Y dt + sigma dW.

    sigma is sigma_bar * Y on each window and the configured volatility past
    it.  The proportional and Black-Scholes kinds are piecewise lognormal and
    sampled exactly (epsilon = 0 included); the other kinds fall back to the
    Euler scheme and require epsilon > 0.
    """
    if vol.kind in (VolKind.PROPORTIONAL, VolKind.BLACK_SCHOLES):
        if n_paths < 1:
            raise DomainError(f"n_paths must be >= 1, got {n_paths}")
        sb, nu, r = params.sigma_bar, vol.nu, params.r
        eps = grid.epsilon
        times = grid.sample_times()
        local, record_mask = _interval_local_times(grid)
        n_int = local.size
        xi = _rng(seed).standard_normal((n_paths, grid.n_intervals * n_int))

        sig = np.empty(n_int)
        dts = np.empty(n_int)
        prev = 0.0
        for k, tau in enumerate(local):
            sig[k] = sb if (eps > 0.0 and tau <= eps * (1.0 + 1e-12)) else nu
            dts[k] = tau - prev
            prev = tau

        log_paths = np.empty((n_paths, grid.sub_steps * grid.n_intervals + 1))
        log_paths[:, 0] = math.log(params.s0)
        col = 1
        z = log_paths[:, 0].copy()
        for i in range(grid.n_intervals):
            block = xi[:, i * n_int : (i + 1) * n_int]
            for k in range(n_int):
                z = z + (r - 0.5 * sig[k] ** 2) * dts[k] + sig[k] * math.sqrt(dts[k]) * block[:, k]
                if record_mask[k]:
                    log_paths[:, col] = z
                    col += 1
        paths = np.exp(log_paths)
        paths[:, 0] = params.s0  # exp(log(s0)) can be off by an ulp
        return PathSet(
            times=times,
            paths=paths,
            measure=Measure.RISK_NEUTRAL,
            generator=f"risk_neutral({vol.label()})",
            seed=int(seed),
        )

    return _euler_paths(params, grid, vol, n_paths, seed, risk_neutral=True)
