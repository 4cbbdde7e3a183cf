"""Exponential families with tractable log-partition functions.

A family here is a set of densities

    p(x; theta) = exp( theta . c(x) - psi(theta) )

on a fixed open support, where c = (c_1, ..., c_m) are the sufficient
statistics and psi is the log-partition (normalising) function.  Two concrete
families are provided:

* :func:`lognormal_family` -- statistics (ln(x/s0), ln^2(x/s0)) on (0, inf).
  The marginal laws of a geometric Brownian motion started at s0 trace a
  curve through this family; :class:`LognormalCurve` parametrises it.
* :func:`gaussian_fixture_family` -- statistics (x, x^2) on the whole real
  line.  It has no role in the price model and exists to exercise the
  generic code paths with a second family.

Quadrature is adaptive subdivision (QUADPACK) at relative tolerance ``rtol``
(default 1e-9).  On (0, inf) supports every integral is computed in the
log coordinate y = ln x, where the integrands of interest are
Gaussian-tailed, and the range is split at the integrand's mode so the
adaptive rule cannot step over a narrow peak.

The statistics are assumed linearly independent with a finite log-partition
on the stated parameter domain; the factories below satisfy this by
construction and no runtime check attempts to verify it for custom families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import DomainError, NumericError, SupportError

Array = np.ndarray

__all__ = [
    "ExpFamily",
    "LognormalCurve",
    "density",
    "log_density",
    "log_partition_lognormal",
    "lognormal_family",
    "gaussian_fixture_family",
    "normalization",
    "statistic_moments",
    "integrate_exponent",
]


@dataclass(frozen=True)
class ExpFamily:
    """An exponential family with explicit log-partition.

    Parameters
    ----------
    name:
        Short identifier used in reports and error messages.
    statistics:
        The m sufficient statistics c_i, vectorised over numpy arrays.
    statistic_derivs:
        Derivatives dc_i/dx, in the same order.  Needed by the drift
        construction; ``None`` disables the analytic path there.
    support:
        Open interval (lo, hi) on which the densities live.
    log_partition:
        psi(theta) for theta inside the parameter domain.
    grad_log_partition:
        Gradient of psi; by the standard moment identity this equals the
        vector of statistic means E[c(X)] under p(.; theta).
    param_domain:
        Predicate deciding whether theta is admissible.
    pilot:
        Optional map theta -> (center, scale) giving the approximate mode
        and width of the density in the working coordinate (y = ln x on
        (0, inf) supports, x itself otherwise).  Used to place quadrature
        split points; without it a coarse scan locates the mode.
    """

    name: str
    statistics: tuple[Callable[[Array], Array], ...]
    statistic_derivs: tuple[Callable[[Array], Array], ...] | None
    support: tuple[float, float]
    log_partition: Callable[[Array], float]
    grad_log_partition: Callable[[Array], Array]
    param_domain: Callable[[Array], bool]
    pilot: Callable[[Array], tuple[float, float]] | None = None

    @property
    def n_statistics(self) -> int:
        return len(self.statistics)

    @property
    def log_coordinate(self) -> bool:
        """Whether quadrature runs in y = ln x (positive half-line support)."""
        return self.support[0] == 0.0 and math.isinf(self.support[1])

    def check_theta(self, theta: Array) -> Array:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.n_statistics,):
            raise DomainError(
                f"{self.name}: expected {self.n_statistics} natural parameters, "
                f"got shape {theta.shape}"
            )
        if not self.param_domain(theta):
            raise DomainError(f"{self.name}: theta={theta} outside parameter domain")
        return theta

    def check_support(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        if np.any(~np.isfinite(x)) or np.any(x <= lo) or np.any(x >= hi):
            raise SupportError(
                f"{self.name}: state outside open support ({lo}, {hi})"
            )
        return x

    def dot_statistics(self, theta: Array, x: Array) -> Array:
        """theta . c(x), evaluated without forming exp of anything."""
        acc = theta[0] * self.statistics[0](x)
        for coef, stat in zip(theta[1:], self.statistics[1:]):
            acc = acc + coef * stat(x)
        return acc


def density(fam: ExpFamily, theta, x) -> Array:
    """Evaluate p(x; theta), vectorised over x.

    The exponent is assembled in log space and exponentiated once, so values
    deep in the tails underflow gracefully to 0 instead of overflowing.
    """
    return np.exp(log_density(fam, theta, x))


def log_density(fam: ExpFamily, theta, x) -> Array:
    theta = fam.check_theta(theta)
    x = fam.check_support(x)
    return fam.dot_statistics(theta, x) - fam.log_partition(theta)


# ---------------------------------------------------------------------------
# the lognormal family of GBM marginals
# ---------------------------------------------------------------------------


def log_partition_lognormal(zeta: float, rho: float, s0: float) -> float:
    """Log-partition of the family with statistics (ln(x/s0), ln^2(x/s0)).

    For natural parameters (zeta, rho) with rho < 0 the normalising constant
    is a Gaussian integral in y = ln(x/s0):

        psi = -(zeta + 1)^2 / (4 rho) + 0.5 ln(-pi / rho) + ln s0.

    The domain check is exact: any rho >= 0 is rejected, however close to 0.
    """
    if not rho < 0.0:
        raise DomainError(f"log-partition requires rho < 0, got rho={rho}")
    if not s0 > 0.0:
        raise DomainError(f"log-partition requires s0 > 0, got s0={s0}")
    return -((zeta + 1.0) ** 2) / (4.0 * rho) + 0.5 * math.log(-math.pi / rho) + math.log(s0)


def _grad_log_partition_lognormal(theta: Array) -> Array:
    zeta, rho = theta
    g1 = -(zeta + 1.0) / (2.0 * rho)
    g2 = (zeta + 1.0) ** 2 / (4.0 * rho**2) - 1.0 / (2.0 * rho)
    return np.array([g1, g2])


def lognormal_family(s0: float) -> ExpFamily:
    """The two-parameter family containing every GBM marginal started at s0."""
    if not s0 > 0.0:
        raise DomainError(f"lognormal family requires s0 > 0, got {s0}")
    log_s0 = math.log(s0)

    def c1(x):
        return np.log(x) - log_s0

    def c2(x):
        return (np.log(x) - log_s0) ** 2

    def dc1(x):
        return 1.0 / x

    def dc2(x):
        return 2.0 * (np.log(x) - log_s0) / x

    def pilot(theta: Array) -> tuple[float, float]:
        g = _grad_log_partition_lognormal(theta)
        center = g[0] + log_s0
        scale = math.sqrt(max(g[1] - g[0] ** 2, 1e-300))
        return center, scale

    return ExpFamily(
        name="lognormal",
        statistics=(c1, c2),
        statistic_derivs=(dc1, dc2),
        support=(0.0, math.inf),
        log_partition=lambda th: log_partition_lognormal(th[0], th[1], s0),
        grad_log_partition=_grad_log_partition_lognormal,
        param_domain=lambda th: bool(th[1] < 0.0),
        pilot=pilot,
    )


def gaussian_fixture_family() -> ExpFamily:
    """Gaussian family with statistics (x, x^2) on the real line.

    psi(theta) = -theta_1^2 / (4 theta_2) + 0.5 ln(-pi / theta_2) for
    theta_2 < 0.  Provided purely so generic routines can be tested against
    a family whose support is not the positive half-line.
    """

    def c1(x):
        return np.asarray(x, dtype=float)

    def c2(x):
        return np.asarray(x, dtype=float) ** 2

    def dc1(x):
        return np.ones_like(np.asarray(x, dtype=float))

    def dc2(x):
        return 2.0 * np.asarray(x, dtype=float)

    def psi(theta: Array) -> float:
        t1, t2 = theta
        if not t2 < 0.0:
            raise DomainError(f"gaussian fixture requires theta_2 < 0, got {t2}")
        return -(t1**2) / (4.0 * t2) + 0.5 * math.log(-math.pi / t2)

    def grad(theta: Array) -> Array:
        t1, t2 = theta
        mean = -t1 / (2.0 * t2)
        return np.array([mean, mean**2 - 1.0 / (2.0 * t2)])

    def pilot(theta: Array) -> tuple[float, float]:
        g = grad(theta)
        return float(g[0]), math.sqrt(max(g[1] - g[0] ** 2, 1e-300))

    return ExpFamily(
        name="gaussian-fixture",
        statistics=(c1, c2),
        statistic_derivs=(dc1, dc2),
        support=(-math.inf, math.inf),
        log_partition=psi,
        grad_log_partition=grad,
        param_domain=lambda th: bool(th[1] < 0.0),
        pilot=pilot,
    )


@dataclass(frozen=True)
class LognormalCurve:
    """The curve of GBM marginal laws inside the lognormal family.

    A geometric Brownian motion dS = mu S dt + sigma_bar S dW, S_0 = s0,
    has marginal density at time t > 0 equal to p(.; theta(t)) with

        theta(t) = (zeta, rho(t)),
        zeta     = mu / sigma_bar^2 - 3/2,
        rho(t)   = -1 / (2 sigma_bar^2 t).

    Only the second coordinate moves; its velocity enters the drift
    construction through ``theta_dot``.
    """

    mu: float
    sigma_bar: float
    s0: float
    zeta: float = field(init=False)

    def __post_init__(self):
        if not self.sigma_bar > 0.0:
            raise DomainError(f"curve requires sigma_bar > 0, got {self.sigma_bar}")
        if not self.s0 > 0.0:
            raise DomainError(f"curve requires s0 > 0, got {self.s0}")
        object.__setattr__(
            self, "zeta", self.mu / self.sigma_bar**2 - 1.5
        )

    def _check_t(self, t: float) -> float:
        t = float(t)
        if not t > 0.0:
            raise DomainError(f"curve is defined for t > 0, got t={t}")
        return t

    def rho(self, t: float) -> float:
        t = self._check_t(t)
        return -1.0 / (2.0 * self.sigma_bar**2 * t)

    def theta_at(self, t: float) -> Array:
        return np.array([self.zeta, self.rho(t)])

    def theta_dot(self, t: float) -> Array:
        t = self._check_t(t)
        return np.array([0.0, 1.0 / (2.0 * self.sigma_bar**2 * t**2)])

    def family(self) -> ExpFamily:
        return lognormal_family(self.s0)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

_QUAD_LIMIT = 200


def _quad_piece(f, a: float, b: float, rtol: float) -> tuple[float, float]:
    # Integrands arrive with the exponent offset so the kernel is O(1); an
    # absolute error at machine scale therefore means the integral vanishes
    # to machine precision, which QUADPACK flags as roundoff-limited because
    # no relative tolerance can be met at zero.
    out = integrate.quad(f, a, b, epsabs=0.0, epsrel=rtol, limit=_QUAD_LIMIT, full_output=1)
    value, abserr = out[0], out[1]
    ier = 0 if len(out) < 4 else 1
    if ier and abserr > max(10.0 * rtol * abs(value), 1e-13):
        raise NumericError(
            f"quadrature on ({a}, {b}) did not converge: value={value}, "
            f"achieved abs error={abserr}",
            residual=abserr,
        )
    return value, abserr


def integrate_exponent(
    fam: ExpFamily,
    theta,
    prefactor: Callable[[Array], Array] | None,
    upper: float | None = None,
    lower: float | None = None,
    *,
    log_offset: float = 0.0,
    rtol: float = 1e-9,
) -> float:
    """Integrate prefactor(x) * exp(theta . c(x) - log_offset) over the support.

    The range runs from ``lower`` (default: the lower support limit) up to
    ``upper`` (default: the upper support limit).  On (0, inf) supports the
    variable of integration is y = ln x.  The range is split at the mode of
    the exponent so adaptive subdivision starts with the peak on a boundary.
    """
    theta = fam.check_theta(theta)
    lo, hi = fam.support
    if upper is None:
        upper = hi
    else:
        upper = float(upper)
        if not lo < upper <= hi:
            raise SupportError(
                f"{fam.name}: upper integration limit {upper} outside support ({lo}, {hi})"
            )
    if lower is None:
        lower = lo
    else:
        lower = float(lower)
        if not lo <= lower < upper:
            raise SupportError(
                f"{fam.name}: lower integration limit {lower} outside ({lo}, {upper})"
            )

    use_log = fam.log_coordinate
    if use_log:
        def integrand(y):
            # an integrable exponent tends to -inf at both ends in y, so far
            # enough out the integrand is an exact floating-point zero; the
            # guards keep exp(y) away from overflow/underflow on the way
            if abs(y) > 700.0:
                return 0.0
            x = math.exp(y)
            e = float(fam.dot_statistics(theta, np.asarray(x))) + y - log_offset
            if e < -745.0:
                return 0.0
            v = math.exp(e)
            if prefactor is not None:
                v *= float(prefactor(np.asarray(x)))
            return v

        y_upper = math.inf if math.isinf(upper) else math.log(upper)
        y_lower = -math.inf if lower == 0.0 else math.log(lower)
    else:
        def integrand(x):
            e = float(fam.dot_statistics(theta, np.asarray(x))) - log_offset
            if e < -745.0:
                return 0.0
            v = math.exp(e)
            if prefactor is not None:
                v *= float(prefactor(np.asarray(x)))
            return v

        y_upper = upper
        y_lower = lower

    center = _mode_in_working_coordinate(fam, theta)
    pieces: list[tuple[float, float]] = []
    if y_lower < center < y_upper:
        pieces.append((y_lower, center))
        pieces.append((center, y_upper))
    else:
        pieces.append((y_lower, y_upper))

    total, err = 0.0, 0.0
    for a, b in pieces:
        v, e = _quad_piece(integrand, a, b, rtol)
        total += v
        err += e
    if err > max(100.0 * rtol * abs(total), 1e-13):
        raise NumericError(
            f"quadrature for {fam.name} did not reach rtol={rtol}: "
            f"value={total}, achieved abs error={err}",
            residual=err,
        )
    return total


def _mode_in_working_coordinate(fam: ExpFamily, theta: Array) -> float:
    """Approximate argmax of the exponent in the quadrature coordinate."""
    if fam.pilot is not None:
        center, _scale = fam.pilot(theta)
        return float(center)
    # coarse scan fallback; adequate because only the split point needs it
    grid = np.linspace(-50.0, 50.0, 2001)
    if fam.log_coordinate:
        vals = fam.dot_statistics(theta, np.exp(grid)) + grid
    else:
        lo, hi = fam.support
        grid = np.linspace(max(lo, -50.0), min(hi, 50.0), 2001)[1:-1]
        vals = fam.dot_statistics(theta, grid)
    return float(grid[int(np.argmax(vals))])


def normalization(fam: ExpFamily, theta, rtol: float = 1e-9) -> float:
    """Integral of the density over the support; equals 1 for a true family."""
    theta = fam.check_theta(theta)
    return integrate_exponent(
        fam, theta, None, log_offset=fam.log_partition(theta), rtol=rtol
    )


def statistic_moments(fam: ExpFamily, theta, rtol: float = 1e-9) -> Array:
    """Quadrature values of E[c_i(X)] under p(.; theta).

    Independent of ``grad_log_partition`` by construction, which is what
    makes it usable as a cross-check of the moment identity.
    """
    theta = fam.check_theta(theta)
    psi = fam.log_partition(theta)
    vals = [
        integrate_exponent(fam, theta, stat, log_offset=psi, rtol=rtol)
        for stat in fam.statistics
    ]
    return np.array(vals)
