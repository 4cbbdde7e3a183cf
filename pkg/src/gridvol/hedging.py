"""Discrete-time replication-error experiments.

A hedger who believes the proportional-volatility model with coefficient nu
holds initial capital U(0, nu) and, at each rebalance date tau_j, holds
xi_j = Phi(d1) shares and eta_j = (U(tau_j) - xi_j S_j) / e^{r tau_j} money
units, both computed from the observed price S_j.  The replication error of
that recipe over a path is

    eps(nu) = (S_T - K)^+ - U(0, nu)
              - sum_j xi_j (S_{j+1} - S_j) - sum_j eta_j (B_{j+1} - B_j),

the shortfall of the terminal payoff against the initial endowment plus all
trading gains.  Selecting nu by minimizing a statistic of eps over simulated
paths is the experiment this module runs; the criterion is pluggable since
no single one is canonical.

Rebalance dates must be grid times: the trading grid may be chosen freely,
so experiments use Delta = delta_t / k, making every rebalance date a grid
time at which the constructed processes are distributionally GBM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .drift import MarketParams
from .errors import DomainError, InputError
from .pricing import OptionSpec, bs_d1, bs_price, norm_cdf, effective_vol, price_u
from .sim import GridSpec, PathSet, simulate_exact_proportional, simulate_gbm

Array = np.ndarray

__all__ = [
    "HedgePlan",
    "HedgeReport",
    "GeneratorConfig",
    "SelectionResult",
    "delta_strategy",
    "hedge_plan",
    "replication_error",
    "rebalance_times",
    "select_nu",
]


def delta_strategy(
    params: MarketParams,
    grid: GridSpec,
    nu: float,
    t: float,
    spot,
    option: OptionSpec,
):
    """Shares and money-market units of the model-nu replicating strategy.

    xi = Phi(d1) at the effective volatility; eta finances the rest of the
    model price, so xi * spot + eta * e^{r t} equals U(t, nu) exactly.
    Vectorized over ``spot``.
    """
    vol = effective_vol(params, grid, nu, t)
    tau = grid.horizon - t
    xi = norm_cdf(bs_d1(spot, option.strike, params.r, vol, tau))
    value = bs_price(spot, option.strike, params.r, vol, tau)
    eta = (value - xi * np.asarray(spot, dtype=float)) * math.exp(-params.r * t)
    if np.ndim(spot) == 0:
        return float(xi), float(eta)
    return xi, eta


def rebalance_times(grid: GridSpec, n_rebalances: int) -> Array:
    """Every k-th grid time, k = N / n_rebalances; requires exact divisibility."""
    if n_rebalances < 1:
        raise InputError(f"need at least one rebalance, got {n_rebalances}")
    if grid.n_intervals % n_rebalances != 0:
        raise InputError(
            f"n_rebalances={n_rebalances} must divide the {grid.n_intervals} grid intervals"
        )
    k = grid.n_intervals // n_rebalances
    return grid.grid_times()[::k]


def _check_rebalance_times(grid: GridSpec, times: Array) -> None:
    if times[0] != 0.0:
        raise InputError("rebalance times must start at 0")
    tol = 1e-9 * max(1.0, grid.horizon)
    if abs(times[-1] - grid.horizon) > tol:
        raise InputError("rebalance times must end at the grid horizon")
    on_grid = np.abs(times / grid.delta - np.round(times / grid.delta)) * grid.delta < tol
    if not np.all(on_grid):
        raise InputError("every rebalance time must be a grid time")
    if np.any(np.diff(times) <= 0.0):
        raise InputError("rebalance times must be strictly increasing")


@dataclass(frozen=True)
class HedgePlan:
    """One path's strategy: holdings on [tau_j, tau_{j+1}) and tracked value.

    ``shares``/``cash`` have one entry per holding period (length n);
    ``tracked_values`` marks the portfolio at every date (length n + 1),
    starting from the initial endowment and changing only through price and
    money-market moves, so tracked_values[-1] + eps = payoff.
    """

    rebalance_times: Array
    hedger_nu: float
    shares: Array
    cash: Array
    tracked_values: Array


def hedge_plan(
    params: MarketParams,
    grid: GridSpec,
    nu: float,
    option: OptionSpec,
    times,
    prices,
) -> HedgePlan:
    """Compute the full strategy along a single observed price path."""
    times = np.asarray(times, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if prices.ndim != 1 or prices.size != times.size:
        raise InputError("hedge_plan expects one price per rebalance time")
    _check_rebalance_times(grid, times)

    n = times.size - 1
    shares = np.empty(n)
    cash = np.empty(n)
    tracked = np.empty(n + 1)
    tracked[0] = price_u(params, grid, nu, 0.0, params.s0, option).value
    bank = np.exp(params.r * times)
    for j in range(n):
        xi, eta = delta_strategy(params, grid, nu, float(times[j]), float(prices[j]), option)
        shares[j] = xi
        cash[j] = eta
        tracked[j + 1] = tracked[j] + xi * (prices[j + 1] - prices[j]) + eta * (
            bank[j + 1] - bank[j]
        )
    return HedgePlan(
        rebalance_times=times,
        hedger_nu=nu,
        shares=shares,
        cash=cash,
        tracked_values=tracked,
    )


def replication_error(
    params: MarketParams,
    grid: GridSpec,
    nu: float,
    option: OptionSpec,
    times,
    prices,
):
    """Replication error eps(nu) for one path or a matrix of paths.

    ``prices`` may be 1-D (one path) or 2-D with one row per path; values are
    the observed prices at ``times``, which must all be grid times.  The
    strategy at each date uses only that date's observed price.
    """
    times = np.asarray(times, dtype=float)
    prices = np.asarray(prices, dtype=float)
    single = prices.ndim == 1
    if single:
        prices = prices[None, :]
    if prices.shape[1] != times.size:
        raise InputError("prices must have one column per rebalance time")
    _check_rebalance_times(grid, times)

    n = times.size - 1
    bank = np.exp(params.r * times)
    eps = option.payoff(prices[:, -1]) - price_u(
        params, grid, nu, 0.0, params.s0, option
    ).value
    for j in range(n):
        t = float(times[j])
        vol = effective_vol(params, grid, nu, t)
        tau = grid.horizon - t
        spot = prices[:, j]
        xi = norm_cdf(bs_d1(spot, option.strike, params.r, vol, tau))
        value = bs_price(spot, option.strike, params.r, vol, tau)
        eta = (value - xi * spot) / bank[j]
        eps = eps - xi * (prices[:, j + 1] - spot) - eta * (bank[j + 1] - bank[j])
    return float(eps[0]) if single else eps


@dataclass
class HedgeReport:
    """Summary statistics of replication errors for one hedger nu."""

    errors: Array
    hedger_nu: float
    true_generator: str
    n_rebalances: int

    @property
    def n_paths(self) -> int:
        return self.errors.size

    @property
    def mean(self) -> float:
        return float(self.errors.mean())

    @property
    def stdev(self) -> float:
        return float(self.errors.std(ddof=1))

    @property
    def mean_square(self) -> float:
        return float(np.mean(self.errors**2))

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.errors, q))

    def summary(self) -> dict:
        return {
            "nu": self.hedger_nu,
            "mean": self.mean,
            "stdev": self.stdev,
            "mse": self.mean_square,
            "q05": self.quantile(0.05),
            "q95": self.quantile(0.95),
            "n_paths": self.n_paths,
            "n_rebalances": self.n_rebalances,
            "true_generator": self.true_generator,
        }


@dataclass(frozen=True)
class GeneratorConfig:
    """What generates the 'true' market paths in a hedging experiment."""

    kind: str  # "gbm" or "exact_proportional"
    n_paths: int
    seed: int
    nu: float | None = None

    def __post_init__(self):
        if self.kind not in ("gbm", "exact_proportional"):
            raise InputError(f"unknown generator kind {self.kind!r}")
        if self.kind == "exact_proportional" and not (self.nu and self.nu > 0.0):
            raise InputError("exact_proportional generator needs nu > 0")

    def generate(self, params: MarketParams, grid: GridSpec) -> PathSet:
        if self.kind == "gbm":
            return simulate_gbm(params, grid, self.n_paths, self.seed)
        return simulate_exact_proportional(
            params, grid, self.nu, self.n_paths, self.seed
        )


def _resolve_criterion(criterion) -> tuple[str, Callable[[Array], float]]:
    """Accept 'mean_square', 'mean_absolute', ('quantile', q), or a callable.

    Quantile criteria apply to |eps|, so the median of |eps| at q = 0.5 and
    the mean of |eps| rank symmetric error distributions identically.
    """
    if callable(criterion):
        return getattr(criterion, "__name__", "custom"), criterion
    if criterion == "mean_square":
        return "mean_square", lambda e: float(np.mean(e**2))
    if criterion == "mean_absolute":
        return "mean_absolute", lambda e: float(np.mean(np.abs(e)))
    if isinstance(criterion, tuple) and len(criterion) == 2 and criterion[0] == "quantile":
        q = float(criterion[1])
        if not 0.0 < q < 1.0:
            raise InputError(f"quantile level must be in (0, 1), got {q}")
        return f"quantile({q:g})", lambda e: float(np.quantile(np.abs(e), q))
    if isinstance(criterion, str) and criterion.startswith("quantile:"):
        return _resolve_criterion(("quantile", float(criterion.split(":", 1)[1])))
    raise InputError(f"unknown criterion {criterion!r}")


@dataclass(frozen=True)
class SelectionResult:
    best_nu: float
    criterion: str
    nu_grid: Array
    values: Array
    reports: list[HedgeReport]

    def summary(self) -> dict:
        return {
            "criterion": self.criterion,
            "best_nu": self.best_nu,
            "nu_grid": list(map(float, self.nu_grid)),
            "values": list(map(float, self.values)),
        }


def select_nu(
    generator: GeneratorConfig,
    params: MarketParams,
    grid: GridSpec,
    option: OptionSpec,
    criterion,
    nu_grid: Sequence[float],
) -> SelectionResult:
    """Pick the hedger nu minimizing the criterion over a common path set.

    One path set is generated and reused for every candidate nu (common
    random numbers), so the selection is deterministic given the seed and the
    differences between candidates are not drowned in resampling noise.
    """
    nu_grid = np.asarray(list(nu_grid), dtype=float)
    if nu_grid.size == 0:
        raise InputError("nu_grid must be non-empty")
    if np.any(nu_grid <= 0.0):
        raise DomainError("all candidate nu must be positive")

    paths = generator.generate(params, grid)
    times = grid.grid_times()
    prices = paths.grid_columns(grid)
    name, fn = _resolve_criterion(criterion)

    reports = []
    values = np.empty(nu_grid.size)
    for i, nu in enumerate(nu_grid):
        errs = replication_error(params, grid, float(nu), option, times, prices)
        reports.append(
            HedgeReport(
                errors=errs,
                hedger_nu=float(nu),
                true_generator=paths.generator,
                n_rebalances=times.size - 1,
            )
        )
        values[i] = fn(errs)
    best = int(np.argmin(values))
    return SelectionResult(
        best_nu=float(nu_grid[best]),
        criterion=name,
        nu_grid=nu_grid,
        values=values,
        reports=reports,
    )
