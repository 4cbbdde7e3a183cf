"""Configuration-driven experiment runner.

Every subcommand reads one INI config (see ``config.py``), writes its
artifacts atomically into an output directory together with the resolved
config and a small metadata file, and signals results through the exit code:

    0  success / all validation thresholds met
    1  a validation threshold failed
    2  usage or configuration error
    3  numeric failure (quadrature or root-finding did not converge)

Only the metadata file carries a timestamp, so reruns with the same config
and seed produce byte-identical artifacts otherwise.

Heavy imports happen inside ``run`` so that ``--threads`` can cap the BLAS
thread pools before numpy is first loaded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

SUBCOMMANDS = (
    "simulate",
    "validate",
    "price",
    "invert-nu",
    "bounds",
    "hedge",
    "select-nu",
    "fp-residual",
    "appendix-demo",
    "drift-check",
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridvol",
        description="Grid-calibrated stock-process experiments",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to the INI config")
    common.add_argument("--out", help="output directory (overrides config and env)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--n-paths", type=int, help="override the configured path count")
    common.add_argument("--threads", type=int, help="cap BLAS/OpenMP worker threads")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "invert-nu":
            sp.add_argument("--target", type=float, help="target price to invert")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ.setdefault(var, str(args.threads))

    from .errors import ConfigError, GridvolError, NumericError

    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2

    try:
        from dataclasses import replace

        from .config import parse_config

        config = parse_config(text)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.n_paths is not None:
            config = replace(config, n_paths=args.n_paths)
        if getattr(args, "target", None) is not None:
            knobs = dict(config.knobs)
            section = dict(knobs.get("invert_nu", {}))
            section["target"] = repr(args.target)
            knobs["invert_nu"] = section
            config = replace(config, knobs=knobs)
        return run(args.command, config, output_dir=args.out)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except GridvolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _resolve_output_dir(config, override: str | None) -> str:
    out = override or config.output_dir or os.environ.get("GRIDVOL_OUTPUT_DIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _json_default(obj):
    if hasattr(obj, "item"):  # numpy scalars
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _write_json(path: str, payload) -> None:
    from .config import atomic_write_text

    atomic_write_text(
        path, json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    )


def _knob_float(config, section: str, key: str, default=None) -> float | None:
    from .errors import ConfigError

    raw = config.knob(section, key)
    if raw is None:
        if default is None:
            raise ConfigError(f"missing required key '{key}' in section [{section}]")
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad float for [{section}] {key}: {raw!r}") from exc


def _knob_int(config, section: str, key: str, default: int) -> int:
    from .errors import ConfigError

    raw = config.knob(section, key)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"bad integer for [{section}] {key}: {raw!r}") from exc


def run(command: str, config, output_dir: str | None = None) -> int:
    """Execute one subcommand against a parsed config; returns the exit code."""
    from datetime import datetime, timezone

    from . import __version__
    from .config import atomic_write_text, serialize_config
    from .errors import ConfigError

    if command not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {command!r}")
    out = _resolve_output_dir(config, output_dir)
    handler = {
        "simulate": _cmd_simulate,
        "validate": _cmd_validate,
        "price": _cmd_price,
        "invert-nu": _cmd_invert_nu,
        "bounds": _cmd_bounds,
        "hedge": _cmd_hedge,
        "select-nu": _cmd_select_nu,
        "fp-residual": _cmd_fp_residual,
        "appendix-demo": _cmd_appendix_demo,
        "drift-check": _cmd_drift_check,
    }[command]
    status = handler(config, out)
    atomic_write_text(os.path.join(out, "resolved_config.ini"), serialize_config(config))
    _write_json(
        os.path.join(out, "metadata.json"),
        {
            "command": command,
            "package": f"gridvol {__version__}",
            "timestamp": datetime.now(timezone.utc).isoformat(),
        },
    )
    return status


def _objective_paths(config):
    """Generate objective-measure paths matching the configured volatility."""
    from .drift import VolKind
    from .sim import simulate_euler, simulate_exact_proportional, simulate_gbm

    vol, p, g = config.vol, config.market, config.grid
    if vol.kind is VolKind.BLACK_SCHOLES:
        return simulate_gbm(p, g, config.n_paths, config.seed)
    if vol.kind is VolKind.PROPORTIONAL:
        return simulate_exact_proportional(p, g, vol.nu, config.n_paths, config.seed)
    return simulate_euler(p, g, vol, config.n_paths, config.seed)


def _cmd_simulate(config, out: str) -> int:
    import io

    from .config import atomic_write_text
    from .errors import ConfigError
    from .sim import risk_neutral_dynamics

    measure = config.knob("simulate", "measure", "objective")
    if measure == "objective":
        paths = _objective_paths(config)
    elif measure == "risk_neutral":
        paths = risk_neutral_dynamics(
            config.market, config.grid, config.vol, config.n_paths, config.seed
        )
    else:
        raise ConfigError(f"unknown measure {measure!r}")
    buf = io.StringIO()
    paths.to_csv(buf, header={"vol": config.vol.label()})
    atomic_write_text(os.path.join(out, "paths.csv"), buf.getvalue())
    return 0


def _cmd_validate(config, out: str) -> int:
    from .drift import VolKind
    from .stats import grid_return_diagnostics, off_grid_fingerprint

    paths = _objective_paths(config)
    report = grid_return_diagnostics(paths, config.market, config.grid)
    entries = report.entries()
    if (
        config.vol.kind is VolKind.PROPORTIONAL
        and config.grid.epsilon == 0.0
        and config.grid.sub_steps % 4 == 0
        and abs(config.vol.nu - config.market.sigma_bar) > 1e-12
    ):
        fp = off_grid_fingerprint(paths, config.market, config.grid, config.vol.nu)
        entries.extend(fp.entries())
    all_pass = all(e["pass"] for e in entries)
    _write_json(
        os.path.join(out, "validation.json"), {"tests": entries, "all_pass": all_pass}
    )
    return 0 if all_pass else 1


def _pricing_nu(config) -> float:
    from .drift import VolKind
    from .errors import ConfigError

    if config.vol.kind is VolKind.PROPORTIONAL:
        return config.vol.nu
    if config.vol.kind is VolKind.BLACK_SCHOLES:
        return config.market.sigma_bar
    raise ConfigError(
        "pricing is defined for the proportional family; "
        f"got vol kind {config.vol.kind.value!r}"
    )


def _require_option(config):
    from .errors import ConfigError

    if config.option is None:
        raise ConfigError("this command requires an [option] section")
    return config.option


def _cmd_price(config, out: str) -> int:
    from .pricing import price_u

    option = _require_option(config)
    nu = _pricing_nu(config)
    t = _knob_float(config, "price", "t", 0.0)
    spot = _knob_float(config, "price", "spot", config.market.s0)
    quote = price_u(config.market, config.grid, nu, t, spot, option)
    _write_json(
        os.path.join(out, "quote.json"),
        {
            "nu": nu,
            "epsilon_over_delta": config.grid.epsilon / config.grid.delta,
            "t": t,
            "effective_vol": quote.effective_vol,
            "branch": quote.branch,
            "price": quote.value,
            "lower_bound": quote.bounds[0],
            "upper_bound": quote.bounds[1],
        },
    )
    return 0


def _cmd_invert_nu(config, out: str) -> int:
    from .pricing import invert_nu_for_price, price_u

    option = _require_option(config)
    target = _knob_float(config, "invert_nu", "target")
    nu = invert_nu_for_price(config.market, config.grid, option, target)
    reproduced = price_u(config.market, config.grid, nu, 0.0, config.market.s0, option)
    _write_json(
        os.path.join(out, "inversion.json"),
        {
            "target": target,
            "nu": nu,
            "reproduced_price": reproduced.value,
            "price_tolerance": 1e-8 * config.market.s0,
        },
    )
    return 0


def _cmd_bounds(config, out: str) -> int:
    from .pricing import price_bounds

    option = _require_option(config)
    lower, upper = price_bounds(config.market, option)
    _write_json(
        os.path.join(out, "bounds.json"), {"lower_bound": lower, "upper_bound": upper}
    )
    return 0


def _hedge_generator(config, n_paths: int):
    from .drift import VolKind
    from .errors import ConfigError
    from .hedging import GeneratorConfig

    if config.vol.kind is VolKind.BLACK_SCHOLES:
        return GeneratorConfig("gbm", n_paths, config.seed)
    if config.vol.kind is VolKind.PROPORTIONAL:
        return GeneratorConfig(
            "exact_proportional", n_paths, config.seed, nu=config.vol.nu
        )
    raise ConfigError(
        "hedging experiments support black_scholes or proportional true "
        f"generators, got {config.vol.kind.value!r}"
    )


def _cmd_hedge(config, out: str) -> int:
    import io

    from .config import atomic_write_text
    from .hedging import HedgeReport, rebalance_times, replication_error

    option = _require_option(config)
    n_reb = _knob_int(config, "hedge", "n_rebalances", config.grid.n_intervals)
    hedger_nu = _knob_float(config, "hedge", "hedger_nu", _pricing_nu(config))
    paths = _hedge_generator(config, config.n_paths).generate(config.market, config.grid)
    times = rebalance_times(config.grid, n_reb)
    k = config.grid.n_intervals // n_reb
    prices = paths.grid_columns(config.grid)[:, ::k]
    errors = replication_error(
        config.market, config.grid, hedger_nu, option, times, prices
    )
    report = HedgeReport(
        errors=errors,
        hedger_nu=hedger_nu,
        true_generator=paths.generator,
        n_rebalances=n_reb,
    )
    buf = io.StringIO()
    buf.write("path_id,hedger_nu,epsilon\n")
    nu_str = format(hedger_nu, ".17g")
    for pid, err in enumerate(errors):
        buf.write(f"{pid},{nu_str},{format(err, '.17g')}\n")
    atomic_write_text(os.path.join(out, "hedge_errors.csv"), buf.getvalue())
    _write_json(os.path.join(out, "hedge_summary.json"), report.summary())
    return 0


def _cmd_select_nu(config, out: str) -> int:
    from .errors import ConfigError
    from .hedging import select_nu

    option = _require_option(config)
    raw_grid = config.knob("select_nu", "nu_grid")
    if raw_grid is None:
        raise ConfigError("missing required key 'nu_grid' in section [select_nu]")
    try:
        nu_grid = [float(v) for v in raw_grid.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad nu_grid: {raw_grid!r}") from exc
    criterion = config.knob("select_nu", "criterion", "mean_square")
    generator = _hedge_generator(config, config.n_paths)
    result = select_nu(
        generator, config.market, config.grid, option, criterion, nu_grid
    )
    payload = result.summary()
    payload["per_nu"] = [r.summary() for r in result.reports]
    _write_json(os.path.join(out, "selection.json"), payload)
    return 0


def _cmd_fp_residual(config, out: str) -> int:
    import numpy as np

    from .drift import closed_form_drift
    from .expfam import lognormal_family
    from .stats import fp_residual

    p, g, vol = config.market, config.grid, config.vol
    t_min = _knob_float(config, "fp_residual", "t_min", 0.1)
    t_max = _knob_float(config, "fp_residual", "t_max", g.horizon)
    x_min = _knob_float(config, "fp_residual", "x_min", p.s0 / 3.0)
    x_max = _knob_float(config, "fp_residual", "x_max", 3.0 * p.s0)
    n_t = _knob_int(config, "fp_residual", "n_t", 200)
    n_x = _knob_int(config, "fp_residual", "n_x", 200)
    threshold = _knob_float(config, "fp_residual", "threshold", 1e-4)
    report = fp_residual(
        lognormal_family(p.s0),
        p.curve(),
        vol,
        closed_form_drift(p, vol),
        np.linspace(t_min, t_max, n_t),
        np.linspace(x_min, x_max, n_x),
    )
    _write_json(
        os.path.join(out, "fp_report.json"),
        {
            "max_residual": report.max_residual,
            "threshold": threshold,
            "pass": report.max_residual < threshold,
            "n_t": n_t,
            "n_x": n_x,
            "vol": vol.label(),
        },
    )
    return 0 if report.max_residual < threshold else 1


def _cmd_appendix_demo(config, out: str) -> int:
    from .drift import VolKind
    from .stats import constant_vol_demo

    default_nu = config.vol.nu if config.vol.kind is VolKind.CONSTANT else None
    nu = _knob_float(config, "appendix_demo", "nu", default_nu)
    n_rn = _knob_int(config, "appendix_demo", "n_paths_rn", 200_000)
    report = constant_vol_demo(
        config.market,
        config.grid,
        nu,
        n_paths_objective=config.n_paths,
        n_paths_rn=n_rn,
        seed=config.seed,
    )
    entries = report.entries()
    all_pass = all(e["pass"] for e in entries)
    _write_json(
        os.path.join(out, "demo.json"),
        {
            "nu": report.nu,
            "objective_clamp_fraction": report.objective_clamp_fraction,
            "objective_invalid_count": report.objective_invalid_count,
            "rn_mean": report.rn_mean,
            "rn_std": report.rn_std,
            "rn_p_nonpositive_closed_form": report.rn_p_nonpositive_closed_form,
            "rn_p_nonpositive_empirical": report.rn_p_nonpositive_empirical,
            "contradiction": report.contradiction,
            "tests": entries,
            "all_pass": all_pass,
        },
    )
    return 0 if all_pass else 1


def _cmd_drift_check(config, out: str) -> int:
    import numpy as np

    from .config import atomic_write_text
    from .drift import drift_consistency_report

    p, g = config.market, config.grid
    t_min = _knob_float(config, "drift_check", "t_min", 0.1)
    t_max = _knob_float(config, "drift_check", "t_max", g.horizon)
    x_min = _knob_float(config, "drift_check", "x_min", p.s0 / 3.0)
    x_max = _knob_float(config, "drift_check", "x_max", 3.0 * p.s0)
    n_t = _knob_int(config, "drift_check", "n_t", 10)
    n_x = _knob_int(config, "drift_check", "n_x", 10)
    threshold = _knob_float(config, "drift_check", "threshold", 1e-6)
    report = drift_consistency_report(
        p,
        config.vol,
        np.linspace(t_min, t_max, n_t),
        np.linspace(x_min, x_max, n_x),
    )
    import io

    buf = io.StringIO()
    report.to_csv(buf)
    atomic_write_text(os.path.join(out, "drift_check.csv"), buf.getvalue())
    _write_json(
        os.path.join(out, "drift_check.json"),
        {
            "max_rel_err": report.max_rel_err,
            "threshold": threshold,
            "pass": report.max_rel_err < threshold,
            "vol": config.vol.label(),
        },
    )
    return 0 if report.max_rel_err < threshold else 1


if __name__ == "__main__":
    sys.exit(main())
