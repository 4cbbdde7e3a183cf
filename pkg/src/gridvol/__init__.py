"""Stock-price processes that match GBM on a trading grid.

The library constructs diffusions whose marginals and log-returns are
exactly those of a geometric Brownian motion with volatility sigma_bar at
every grid time, while the continuous-time volatility between grid times is
a free choice that alone determines the option price.  Modules: exponential
families and density curves (``expfam``), the transporting drift in closed
and quadrature form (``drift``), exact and Euler path samplers (``sim``),
effective-volatility pricing, bounds and inversion (``pricing``), KS and
Fokker-Planck validation (``stats``), replication-error experiments
(``hedging``), and an INI-configured CLI (``cli``).
"""

from .config import (
    ExperimentConfig,
    atomic_write_text,
    parse_config,
    serialize_config,
)
from .drift import (
    DriftCheckReport,
    DriftFn,
    MarketParams,
    VolKind,
    VolatilitySpec,
    closed_form_drift,
    drift_consistency_report,
    generic_drift,
)
from .errors import (
    BoundsError,
    ConfigError,
    DomainError,
    GridvolError,
    InputError,
    NumericError,
    SupportError,
)
from .expfam import (
    ExpFamily,
    LognormalCurve,
    density,
    gaussian_fixture_family,
    integrate_exponent,
    log_density,
    log_partition_lognormal,
    lognormal_family,
    normalization,
    statistic_moments,
)
from .hedging import (
    GeneratorConfig,
    HedgePlan,
    HedgeReport,
    SelectionResult,
    delta_strategy,
    hedge_plan,
    rebalance_times,
    replication_error,
    select_nu,
)
from .pricing import (
    OptionSpec,
    PriceQuote,
    bs_d1,
    bs_price,
    effective_vol,
    invert_nu_for_price,
    norm_cdf,
    price_bounds,
    price_u,
)
from .sim import (
    GridSpec,
    LogBridgeKernel,
    Measure,
    PathSet,
    risk_neutral_dynamics,
    simulate_euler,
    simulate_exact_proportional,
    simulate_gbm,
)
from .stats import (
    ConstantVolDemoReport,
    FingerprintReport,
    FPResidualReport,
    GridReturnDiagnostics,
    KSResult,
    constant_vol_demo,
    fp_residual,
    grid_return_diagnostics,
    kolmogorov_sf,
    ks_test_lognormal,
    ks_test_normal,
    ks_two_sample,
    off_grid_fingerprint,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "GridvolError",
    "DomainError",
    "SupportError",
    "NumericError",
    "BoundsError",
    "InputError",
    "ConfigError",
    # expfam
    "ExpFamily",
    "LognormalCurve",
    "density",
    "integrate_exponent",
    "log_density",
    "log_partition_lognormal",
    "lognormal_family",
    "gaussian_fixture_family",
    "normalization",
    "statistic_moments",
    # drift
    "MarketParams",
    "VolatilitySpec",
    "VolKind",
    "DriftFn",
    "DriftCheckReport",
    "closed_form_drift",
    "generic_drift",
    "drift_consistency_report",
    # sim
    "GridSpec",
    "PathSet",
    "LogBridgeKernel",
    "Measure",
    "simulate_gbm",
    "simulate_exact_proportional",
    "simulate_euler",
    "risk_neutral_dynamics",
    # pricing
    "OptionSpec",
    "PriceQuote",
    "norm_cdf",
    "bs_d1",
    "bs_price",
    "effective_vol",
    "price_u",
    "invert_nu_for_price",
    "price_bounds",
    # stats
    "KSResult",
    "kolmogorov_sf",
    "ks_test_normal",
    "ks_test_lognormal",
    "ks_two_sample",
    "GridReturnDiagnostics",
    "grid_return_diagnostics",
    "FingerprintReport",
    "off_grid_fingerprint",
    "FPResidualReport",
    "fp_residual",
    "ConstantVolDemoReport",
    "constant_vol_demo",
    # hedging
    "HedgePlan",
    "HedgeReport",
    "GeneratorConfig",
    "SelectionResult",
    "delta_strategy",
    "hedge_plan",
    "replication_error",
    "rebalance_times",
    "select_nu",
    # config
    "ExperimentConfig",
    "parse_config",
    "serialize_config",
    "atomic_write_text",
]
