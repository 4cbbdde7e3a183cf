"""Option pricing for the grid-calibrated processes.

Under the pricing measure the proportional-volatility process has lognormal
transitions with volatility sigma_bar on each window [alpha, alpha + epsilon)
and nu elsewhere, so the time-t call price is an ordinary Black-Scholes
formula evaluated at the effective volatility

    sigma_eff(t)^2 (T - t) = Var(ln Y_T - ln Y_t | Y_t),

a piecewise expression in the position of t within its grid interval.  The
map nu -> price at t = 0 is strictly increasing and sweeps the whole open
interval between the intrinsic value (s0 - K e^{-rT})^+ and s0 as nu runs
over (0, inf) with epsilon / Delta -> 0, which is what makes the price
inversion well posed.

The normal CDF is evaluated through the complementary error function, which
keeps deep-tail values accurate to ~1e-15 absolute where naive 1 - Phi(-x)
would lose everything to cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .drift import MarketParams
from .errors import BoundsError, DomainError, NumericError
from .sim import GridSpec

__all__ = [
    "OptionSpec",
    "PriceQuote",
    "norm_cdf",
    "bs_d1",
    "bs_price",
    "effective_vol",
    "price_u",
    "invert_nu_for_price",
    "price_bounds",
]

_SQRT2 = math.sqrt(2.0)


def norm_cdf(x):
    """Standard normal CDF, 0.5 * erfc(-x / sqrt(2)); accepts arrays."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / -_SQRT2)


@dataclass(frozen=True)
class OptionSpec:
    """European call (Y_T - K)^+.

    A zero strike is admitted as the degenerate contract equal to the stock
    itself; it only makes sense for the price bounds, and the Black-Scholes
    formulas below still require a positive strike.
    """

    strike: float
    maturity: float

    def __post_init__(self):
        if not self.strike >= 0.0:
            raise DomainError(f"strike must be >= 0, got {self.strike}")
        if not self.maturity > 0.0:
            raise DomainError(f"maturity must be positive, got {self.maturity}")

    def payoff(self, terminal):
        return np.maximum(np.asarray(terminal, dtype=float) - self.strike, 0.0)


@dataclass(frozen=True)
class PriceQuote:
    """A price together with how it was computed.

    ``bounds`` is the no-arbitrage interval at the quote's own date:
    ((spot - K e^{-r (T - t)})^+, spot), which at t = 0 and spot = s0 is the
    attainable price range of the whole family.
    """

    value: float
    effective_vol: float
    branch: str
    bounds: tuple[float, float]


def bs_price(spot, strike: float, r: float, vol: float, tau: float):
    """Black-Scholes call price; tau = 0 returns the intrinsic value.

    Vectorized over ``spot``; scalar in the other arguments.
    """
    spot = np.asarray(spot, dtype=float)
    if not np.all(spot > 0.0):
        raise DomainError("spot must be positive")
    if not strike > 0.0:
        raise DomainError(f"strike must be positive, got {strike}")
    if not vol > 0.0:
        raise DomainError(f"vol must be positive, got {vol}")
    if tau < 0.0:
        raise DomainError(f"tau must be >= 0, got {tau}")
    if tau == 0.0:
        out = np.maximum(spot - strike, 0.0)
        return float(out) if out.ndim == 0 else out
    sq = vol * math.sqrt(tau)
    d1 = (np.log(spot / strike) + (r + 0.5 * vol * vol) * tau) / sq
    d2 = d1 - sq
    out = spot * norm_cdf(d1) - strike * math.exp(-r * tau) * norm_cdf(d2)
    return float(out) if out.ndim == 0 else out


def bs_d1(spot, strike: float, r: float, vol: float, tau: float):
    """The d1 argument of the Black-Scholes formula; needs tau > 0."""
    if not tau > 0.0:
        raise DomainError(f"d1 requires tau > 0, got {tau}")
    spot = np.asarray(spot, dtype=float)
    sq = vol * math.sqrt(tau)
    d1 = (np.log(spot / strike) + (r + 0.5 * vol * vol) * tau) / sq
    return float(d1) if d1.ndim == 0 else d1


def _effective_variance(
    params: MarketParams, grid: GridSpec, nu: float, t: float
) -> tuple[float, str]:
    """sigma_eff(t)^2 and the branch that produced it."""
    if not nu > 0.0:
        raise DomainError(f"nu must be positive, got {nu}")
    T = grid.horizon
    if not 0.0 <= t < T:
        raise DomainError(f"t must lie in [0, T) = [0, {T}), got {t}")
    alpha = grid.alpha(t)
    sb2 = params.sigma_bar**2
    nu2 = nu * nu
    eps, delta = grid.epsilon, grid.delta
    ratio = eps / delta
    if eps > 0.0 and t - alpha < eps:
        num = ratio * (sb2 - nu2) * (T - alpha) + nu2 * (T - alpha) + sb2 * (alpha - t)
        branch = "window"
    else:
        num = ratio * (sb2 - nu2) * (T - alpha - delta) + nu2 * (T - t)
        branch = "post-window"
    var = num / (T - t)
    if not var > 0.0:
        raise NumericError(f"effective variance {var} not positive at t={t}")
    return var, branch


def effective_vol(params: MarketParams, grid: GridSpec, nu: float, t: float) -> float:
    """The volatility that makes the time-t call price a Black-Scholes formula."""
    var, _ = _effective_variance(params, grid, nu, t)
    return math.sqrt(var)


def price_u(
    params: MarketParams,
    grid: GridSpec,
    nu: float,
    t: float,
    spot: float,
    option: OptionSpec,
) -> PriceQuote:
    """Time-t call price of the proportional-volatility process.

    The grid horizon is the option maturity; a mismatch is a configuration
    error rather than something to silently reinterpret.
    """
    if not np.all(np.asarray(spot) > 0.0):
        raise DomainError("spot must be positive")
    if not math.isclose(option.maturity, grid.horizon, rel_tol=1e-12):
        raise DomainError(
            f"option maturity {option.maturity} must equal the grid horizon {grid.horizon}"
        )
    if not option.strike > 0.0:
        raise DomainError("price_u requires a positive strike")
    var, branch = _effective_variance(params, grid, nu, t)
    vol = math.sqrt(var)
    tau = grid.horizon - t
    value = bs_price(spot, option.strike, params.r, vol, tau)
    lower = float(max(np.min(spot) - option.strike * math.exp(-params.r * tau), 0.0))
    upper = float(np.max(spot))
    return PriceQuote(value=value, effective_vol=vol, branch=branch, bounds=(lower, upper))


def price_bounds(params: MarketParams, option: OptionSpec) -> tuple[float, float]:
    """Attainable time-0 price range across the family: ((s0 - K e^{-rT})^+, s0)."""
    lower = max(params.s0 - option.strike * math.exp(-params.r * option.maturity), 0.0)
    return lower, params.s0


def invert_nu_for_price(
    params: MarketParams,
    grid: GridSpec,
    option: OptionSpec,
    target: float,
    *,
    price_tol_factor: float = 1e-8,
) -> float:
    """Recover nu such that the time-0 price matches ``target``.

    The map nu -> price is strictly increasing, so a geometric bracket
    expansion followed by bisection converges unconditionally.  ``target``
    must lie strictly inside the attainable open interval.
    """
    lo_bound, hi_bound = price_bounds(params, option)
    if not lo_bound < target < hi_bound:
        raise BoundsError(
            f"target {target} outside the attainable open interval "
            f"({lo_bound}, {hi_bound})",
            bounds=(lo_bound, hi_bound),
        )
    tol = price_tol_factor * params.s0

    # At fixed epsilon > 0 the time-0 effective variance is bounded below by
    # (eps/Delta) sigma_bar^2 as nu -> 0, so prices below that Black-Scholes
    # value are reachable only by shrinking the window.
    if grid.epsilon > 0.0:
        floor_vol = params.sigma_bar * math.sqrt(grid.epsilon / grid.delta)
        floor = float(
            bs_price(params.s0, option.strike, params.r, floor_vol, option.maturity)
        )
        if target <= floor:
            raise BoundsError(
                f"target {target} is below {floor}, the smallest time-0 price "
                f"reachable with epsilon/Delta = {grid.epsilon / grid.delta:g}; "
                f"shrink the window to reach lower targets",
                bounds=(floor, hi_bound),
            )

    def f(nu: float) -> float:
        return price_u(params, grid, nu, 0.0, params.s0, option).value - target

    lo, hi = 1e-6, 5.0
    expansions = 0
    while f(lo) > 0.0:
        lo *= 0.5
        expansions += 1
        if expansions > 200:
            raise NumericError(f"could not bracket target {target} from below")
    while f(hi) < 0.0:
        hi *= 2.0
        expansions += 1
        if expansions > 200:
            raise NumericError(f"could not bracket target {target} from above")

    for _ in range(500):
        mid = 0.5 * (lo + hi)
        err = f(mid)
        if abs(err) < tol:
            return mid
        if err < 0.0:
            lo = mid
        else:
            hi = mid
    raise NumericError(
        f"bisection did not reach |price - target| < {tol} for target {target}"
    )
