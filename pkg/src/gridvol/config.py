"""INI-style experiment configuration with lossless round-tripping.

A config file has the typed sections [market], [grid], [vol], [option]
(optional) and [run], plus optional per-command sections ([price],
[invert_nu], [hedge], ...) whose keys are interpreted by the command that
uses them.  Floats are serialized at 17 significant digits so that
parse -> serialize -> parse is the identity on the parsed object.
"""

from __future__ import annotations

import configparser
import io
import os
import tempfile
from dataclasses import dataclass, field

from .drift import MarketParams, VolatilitySpec, VolKind
from .errors import ConfigError, GridvolError
from .pricing import OptionSpec
from .sim import GridSpec

__all__ = ["ExperimentConfig", "parse_config", "serialize_config", "atomic_write_text"]

_TYPED_SECTIONS = ("market", "grid", "vol", "option", "run")
_KNOB_SECTIONS = (
    "simulate",
    "validate",
    "price",
    "invert_nu",
    "hedge",
    "select_nu",
    "fp_residual",
    "appendix_demo",
    "drift_check",
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a CLI run needs, parsed once and validated."""

    market: MarketParams
    grid: GridSpec
    vol: VolatilitySpec
    n_paths: int
    seed: int
    option: OptionSpec | None = None
    output_dir: str | None = None
    knobs: dict = field(default_factory=dict)

    def knob(self, section: str, key: str, default=None) -> str | None:
        return self.knobs.get(section, {}).get(key, default)


def _get(cp: configparser.ConfigParser, section: str, key: str, cast, *, default=_fmt):
    """Fetch and cast one key; ``default=_fmt`` marks it required."""
    if not cp.has_option(section, key):
        if default is _fmt:
            raise ConfigError(f"missing required key '{key}' in section [{section}]")
        return default
    raw = cp.get(section, key)
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc


def _check_keys(cp: configparser.ConfigParser, section: str, allowed: set[str]) -> None:
    extra = set(cp.options(section)) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} in section [{section}]")


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    for section in cp.sections():
        if section not in _TYPED_SECTIONS and section not in _KNOB_SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    for required in ("market", "grid", "vol", "run"):
        if not cp.has_section(required):
            raise ConfigError(f"missing required section [{required}]")

    _check_keys(cp, "market", {"mu", "sigma_bar", "s0", "r"})
    try:
        market = MarketParams(
            mu=_get(cp, "market", "mu", float),
            sigma_bar=_get(cp, "market", "sigma_bar", float),
            s0=_get(cp, "market", "s0", float),
            r=_get(cp, "market", "r", float, default=0.0),
        )
        _check_keys(cp, "grid", {"horizon", "n_intervals", "epsilon", "sub_steps"})
        grid = GridSpec(
            horizon=_get(cp, "grid", "horizon", float),
            n_intervals=_get(cp, "grid", "n_intervals", int),
            epsilon=_get(cp, "grid", "epsilon", float, default=0.0),
            sub_steps=_get(cp, "grid", "sub_steps", int, default=1),
        )
        _check_keys(cp, "vol", {"kind", "nu"})
        kind_raw = _get(cp, "vol", "kind", str)
        try:
            kind = VolKind(kind_raw)
        except ValueError as exc:
            raise ConfigError(f"unknown vol kind {kind_raw!r}") from exc
        if kind is VolKind.CUSTOM:
            raise ConfigError("custom volatilities cannot be configured from a file")
        if kind is VolKind.BLACK_SCHOLES:
            vol = VolatilitySpec.black_scholes(market.sigma_bar)
        else:
            vol = VolatilitySpec(kind=kind, nu=_get(cp, "vol", "nu", float))
        option = None
        if cp.has_section("option"):
            _check_keys(cp, "option", {"strike", "maturity"})
            option = OptionSpec(
                strike=_get(cp, "option", "strike", float),
                maturity=_get(cp, "option", "maturity", float),
            )
    except GridvolError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc

    _check_keys(cp, "run", {"n_paths", "seed", "output_dir"})
    n_paths = _get(cp, "run", "n_paths", int)
    seed = _get(cp, "run", "seed", int)
    output_dir = _get(cp, "run", "output_dir", str, default=None)

    knobs = {
        section: dict(cp.items(section))
        for section in _KNOB_SECTIONS
        if cp.has_section(section)
    }
    return ExperimentConfig(
        market=market,
        grid=grid,
        vol=vol,
        n_paths=n_paths,
        seed=seed,
        option=option,
        output_dir=output_dir,
        knobs=knobs,
    )


def serialize_config(config: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["market"] = {
        "mu": _fmt(config.market.mu),
        "sigma_bar": _fmt(config.market.sigma_bar),
        "s0": _fmt(config.market.s0),
        "r": _fmt(config.market.r),
    }
    cp["grid"] = {
        "horizon": _fmt(config.grid.horizon),
        "n_intervals": _fmt(config.grid.n_intervals),
        "epsilon": _fmt(config.grid.epsilon),
        "sub_steps": _fmt(config.grid.sub_steps),
    }
    vol_items = {"kind": config.vol.kind.value}
    if config.vol.nu is not None:
        vol_items["nu"] = _fmt(config.vol.nu)
    cp["vol"] = vol_items
    if config.option is not None:
        cp["option"] = {
            "strike": _fmt(config.option.strike),
            "maturity": _fmt(config.option.maturity),
        }
    run_items = {"n_paths": _fmt(config.n_paths), "seed": _fmt(config.seed)}
    if config.output_dir is not None:
        run_items["output_dir"] = config.output_dir
    cp["run"] = run_items
    for section in _KNOB_SECTIONS:
        if section in config.knobs:
            cp[section] = dict(config.knobs[section])
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file and rename, so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-gridvol-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
