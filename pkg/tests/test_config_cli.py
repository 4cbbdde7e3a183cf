"""Tests for INI configuration handling and the command-line runner.

Covered here:
  * parse -> serialize -> parse is the identity, defaults are applied, and
    every malformed input is rejected with a ConfigError naming the problem,
  * each subcommand writes its documented artifacts plus the resolved config
    and metadata, and its exit code reflects validation outcomes,
  * CLI flag overrides (--seed, --n-paths, --target, --out) take effect and
    are visible in the resolved config,
  * reruns with identical configs produce byte-identical artifacts apart
    from the metadata timestamp.
"""

from __future__ import annotations

import json
import math
import os

import pytest
from numpy.testing import assert_allclose

from gridvol import (
    ConfigError,
    ExperimentConfig,
    GridSpec,
    MarketParams,
    OptionSpec,
    VolKind,
    bs_price,
    parse_config,
    price_u,
    serialize_config,
)
from gridvol.cli import SUBCOMMANDS, main, run
from gridvol.config import atomic_write_text


def _ini(sections: dict) -> str:
    lines = []
    for name, items in sections.items():
        lines.append(f"[{name}]")
        for key, value in items.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def _base_sections(**overrides) -> dict:
    sections = {
        "market": {"mu": "0.1", "sigma_bar": "0.2", "s0": "100.0", "r": "0.05"},
        "grid": {
            "horizon": "1.0",
            "n_intervals": "12",
            "epsilon": "0.0",
            "sub_steps": "1",
        },
        "vol": {"kind": "black_scholes"},
        "option": {"strike": "100.0", "maturity": "1.0"},
        "run": {"n_paths": "200", "seed": "3"},
    }
    sections.update(overrides)
    return sections


class TestConfigParsing:
    """Typed parsing, defaults, and rejection of malformed files."""

    def test_round_trip_is_identity(self):
        """parse(serialize(config)) reproduces the config exactly."""
        sections = _base_sections(
            market={
                "mu": repr(1.0 / 3.0),
                "sigma_bar": "0.23456789012345678",
                "s0": "100.0",
                "r": "0.0375",
            },
            vol={"kind": "proportional", "nu": repr(math.pi / 10)},
            price={"t": "0.125", "spot": "95.0"},
        )
        config = parse_config(_ini(sections))
        again = parse_config(serialize_config(config))
        assert again == config
        assert serialize_config(again) == serialize_config(config)

    def test_parsed_objects_are_library_types(self):
        """The config materializes the library's parameter objects."""
        config = parse_config(_ini(_base_sections()))
        assert isinstance(config, ExperimentConfig)
        assert config.market == MarketParams(mu=0.1, sigma_bar=0.2, s0=100.0, r=0.05)
        assert config.grid == GridSpec(1.0, 12, 0.0, 1)
        assert config.option == OptionSpec(strike=100.0, maturity=1.0)
        assert config.n_paths == 200 and config.seed == 3

    def test_defaults_applied(self):
        """Omitted optional keys fall back to documented defaults."""
        sections = _base_sections(
            market={"mu": "0.1", "sigma_bar": "0.2", "s0": "100.0"},
            grid={"horizon": "1.0", "n_intervals": "12"},
        )
        del sections["option"]
        config = parse_config(_ini(sections))
        assert config.market.r == 0.0
        assert config.grid.epsilon == 0.0 and config.grid.sub_steps == 1
        assert config.option is None and config.output_dir is None

    def test_black_scholes_vol_uses_market_sigma(self):
        """The black_scholes kind takes its level from [market] sigma_bar."""
        config = parse_config(_ini(_base_sections()))
        assert config.vol.kind is VolKind.BLACK_SCHOLES
        assert config.vol.nu == config.market.sigma_bar

    def test_knob_sections_preserved(self):
        """Per-command sections survive parsing and serialization verbatim."""
        sections = _base_sections(hedge={"n_rebalances": "25", "hedger_nu": "0.3"})
        config = parse_config(_ini(sections))
        assert config.knob("hedge", "n_rebalances") == "25"
        assert config.knob("hedge", "missing", "fallback") == "fallback"
        assert parse_config(serialize_config(config)).knobs == config.knobs

    def test_missing_required_section(self):
        """Dropping [market] is a config error naming the section."""
        sections = _base_sections()
        del sections["market"]
        with pytest.raises(ConfigError, match=r"missing required section \[market\]"):
            parse_config(_ini(sections))

    def test_missing_required_key(self):
        """Dropping a required key is a config error naming the key."""
        sections = _base_sections(market={"sigma_bar": "0.2", "s0": "100.0"})
        with pytest.raises(ConfigError, match="missing required key 'mu'"):
            parse_config(_ini(sections))

    def test_unknown_section_rejected(self):
        """Unrecognized sections are refused rather than ignored."""
        sections = _base_sections(portfolio={"size": "10"})
        with pytest.raises(ConfigError, match=r"unknown section \[portfolio\]"):
            parse_config(_ini(sections))

    def test_unknown_key_rejected(self):
        """Unrecognized keys inside a typed section are refused."""
        sections = _base_sections(
            market={"mu": "0.1", "sigma_bar": "0.2", "s0": "100.0", "vol": "0.2"}
        )
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config(_ini(sections))

    def test_unparseable_value_rejected(self):
        """A non-numeric value for a float key is a config error."""
        sections = _base_sections(
            market={"mu": "fast", "sigma_bar": "0.2", "s0": "100.0"}
        )
        with pytest.raises(ConfigError, match="bad value"):
            parse_config(_ini(sections))

    def test_domain_violations_become_config_errors(self):
        """Values that violate parameter domains surface as config errors."""
        sections = _base_sections(
            market={"mu": "0.1", "sigma_bar": "-0.2", "s0": "100.0"}
        )
        with pytest.raises(ConfigError):
            parse_config(_ini(sections))

    def test_custom_vol_rejected(self):
        """Callable volatilities cannot come from a file."""
        sections = _base_sections(vol={"kind": "custom"})
        with pytest.raises(ConfigError, match="custom"):
            parse_config(_ini(sections))

    def test_unknown_vol_kind_rejected(self):
        """Unrecognized volatility kinds are refused by name."""
        sections = _base_sections(vol={"kind": "jump_diffusion"})
        with pytest.raises(ConfigError, match="unknown vol kind"):
            parse_config(_ini(sections))

    def test_malformed_ini_rejected(self):
        """Text that is not INI at all is a config error."""
        with pytest.raises(ConfigError, match="malformed"):
            parse_config("mu = 0.1 with no section header\n")

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        """Atomic writes produce the file and clean up the staging name."""
        target = tmp_path / "out.txt"
        atomic_write_text(str(target), "payload\n")
        assert target.read_text() == "payload\n"
        assert os.listdir(tmp_path) == ["out.txt"]


class TestRunCommands:
    """Each subcommand's artifacts and exit code, driven through run()."""

    def _run(self, command: str, sections: dict, out) -> int:
        return run(command, parse_config(_ini(sections)), output_dir=str(out))

    def _load(self, out, name: str):
        with open(os.path.join(str(out), name)) as fh:
            return json.load(fh)

    def test_price_matched_vol_is_black_scholes(self, tmp_path):
        """Pricing at nu = sigma_bar reproduces the Black-Scholes value."""
        code = self._run("price", _base_sections(), tmp_path)
        assert code == 0
        quote = self._load(tmp_path, "quote.json")
        expected = bs_price(100.0, 100.0, 0.05, 0.2, 1.0)
        assert_allclose(quote["price"], expected, rtol=1e-12)
        assert quote["effective_vol"] == 0.2
        assert quote["lower_bound"] < quote["price"] < quote["upper_bound"]

    def test_bounds_command(self, tmp_path):
        """The bounds command writes the static no-arbitrage interval."""
        code = self._run("bounds", _base_sections(), tmp_path)
        assert code == 0
        bounds = self._load(tmp_path, "bounds.json")
        assert_allclose(
            bounds["lower_bound"], 100.0 - 100.0 * math.exp(-0.05), rtol=1e-12
        )
        assert bounds["upper_bound"] == 100.0

    def test_invert_nu_round_trip(self, tmp_path):
        """Inverting a target price reproduces it within the stated tolerance."""
        sections = _base_sections(
            grid={
                "horizon": "1.0",
                "n_intervals": "12",
                "epsilon": repr(0.1 / 12.0),
            },
            vol={"kind": "proportional", "nu": "0.3"},
            invert_nu={"target": "30.0"},
        )
        code = self._run("invert-nu", sections, tmp_path)
        assert code == 0
        inv = self._load(tmp_path, "inversion.json")
        assert abs(inv["reproduced_price"] - 30.0) < 1e-6
        config = parse_config(_ini(sections))
        quote = price_u(
            config.market, config.grid, inv["nu"], 0.0, 100.0, config.option
        )
        assert abs(quote.value - 30.0) < 1e-6

    def test_validate_exact_proportional_passes(self, tmp_path):
        """Exactly sampled nu = 0.4 paths pass every grid diagnostic.

        With epsilon = 0 and sub-sampled paths the fingerprint also runs,
        certifying the off-grid covariance matches the model and rejects GBM.
        """
        sections = _base_sections(
            grid={
                "horizon": "1.0",
                "n_intervals": "12",
                "epsilon": "0.0",
                "sub_steps": "4",
            },
            vol={"kind": "proportional", "nu": "0.4"},
            run={"n_paths": "4000", "seed": "11"},
        )
        code = self._run("validate", sections, tmp_path)
        report = self._load(tmp_path, "validation.json")
        assert code == 0 and report["all_pass"]
        names = {entry["name"] for entry in report["tests"]}
        assert "fingerprint_model_match" in names
        assert "fingerprint_gbm_rejection" in names
        assert all(entry["pass"] for entry in report["tests"])

    def test_simulate_writes_paths_csv(self, tmp_path):
        """The simulate command writes a labeled, complete path table."""
        sections = _base_sections(run={"n_paths": "7", "seed": "5"})
        code = self._run("simulate", sections, tmp_path)
        assert code == 0
        lines = (tmp_path / "paths.csv").read_text().splitlines()
        meta = [ln for ln in lines if ln.startswith("# ")]
        assert any("generator" in ln for ln in meta)
        body = [ln for ln in lines if not ln.startswith("# ")]
        assert body[0] == "path_id,t,value"
        assert len(body) - 1 == 7 * 13
        first = body[1].split(",")
        assert first[0] == "0" and float(first[2]) == 100.0

    def test_hedge_command_summary_and_errors(self, tmp_path):
        """The hedge command writes per-path errors and a summary report."""
        sections = _base_sections(
            grid={"horizon": "1.0", "n_intervals": "50"},
            run={"n_paths": "500", "seed": "30"},
            hedge={"n_rebalances": "25"},
        )
        code = self._run("hedge", sections, tmp_path)
        assert code == 0
        summary = self._load(tmp_path, "hedge_summary.json")
        assert summary["nu"] == 0.2
        assert summary["n_rebalances"] == 25
        assert summary["n_paths"] == 500
        z = summary["mean"] / (summary["stdev"] / math.sqrt(summary["n_paths"]))
        assert abs(z) < 3.0
        rows = (tmp_path / "hedge_errors.csv").read_text().splitlines()
        assert rows[0] == "path_id,hedger_nu,epsilon"
        assert len(rows) - 1 == 500

    def test_select_nu_command_recovers_volatility(self, tmp_path):
        """Selection over a small candidate grid picks the generating 0.2."""
        sections = _base_sections(
            grid={"horizon": "1.0", "n_intervals": "50"},
            run={"n_paths": "300", "seed": "40"},
            select_nu={"nu_grid": "0.15, 0.2, 0.25", "criterion": "mean_square"},
        )
        code = self._run("select-nu", sections, tmp_path)
        assert code == 0
        selection = self._load(tmp_path, "selection.json")
        assert selection["best_nu"] == 0.2
        assert selection["criterion"] == "mean_square"
        assert len(selection["per_nu"]) == 3
        assert selection["values"][1] == min(selection["values"])

    def test_fp_residual_default_threshold_fails_honestly(self, tmp_path):
        """The default 200x200 mesh residual exceeds 1e-4 and exits 1."""
        sections = _base_sections()
        code = self._run("fp-residual", sections, tmp_path)
        report = self._load(tmp_path, "fp_report.json")
        assert code == 1 and not report["pass"]
        assert_allclose(report["max_residual"], 1.168830e-2, rtol=1e-3)

    def test_fp_residual_loose_threshold_passes(self, tmp_path):
        """A threshold above the measured residual exits 0."""
        sections = _base_sections(
            fp_residual={"n_t": "100", "n_x": "100", "threshold": "0.1"}
        )
        code = self._run("fp-residual", sections, tmp_path)
        report = self._load(tmp_path, "fp_report.json")
        assert code == 0 and report["pass"]
        assert report["max_residual"] < 0.1

    def test_appendix_demo_command(self, tmp_path):
        """The constant-volatility demo passes its internal checks."""
        sections = _base_sections(
            grid={"horizon": "1.0", "n_intervals": "12", "epsilon": repr(1.0 / 120)},
            vol={"kind": "constant", "nu": "30.0"},
            run={"n_paths": "2000", "seed": "0"},
        )
        code = self._run("appendix-demo", sections, tmp_path)
        demo = self._load(tmp_path, "demo.json")
        assert code == 0 and demo["all_pass"]
        assert_allclose(demo["rn_p_nonpositive_closed_form"], 3.1657e-4, rtol=1e-3)
        assert "support" in demo["contradiction"]

    def test_drift_check_command(self, tmp_path):
        """Quadrature and closed-form drifts agree on the probe mesh."""
        sections = _base_sections(
            vol={"kind": "sqrt_proportional", "nu": "0.5"},
            drift_check={"n_t": "4", "n_x": "4"},
        )
        code = self._run("drift-check", sections, tmp_path)
        assert code == 0
        report = self._load(tmp_path, "drift_check.json")
        assert report["pass"] and report["max_rel_err"] < 1e-6
        rows = (tmp_path / "drift_check.csv").read_text().splitlines()
        assert rows[0] == "t,x,y,alpha,closed_form,generic,rel_err"
        assert len(rows) - 1 == 16

    def test_resolved_config_and_metadata_written(self, tmp_path):
        """Every run records the resolved config and run metadata."""
        self._run("bounds", _base_sections(), tmp_path)
        resolved = parse_config((tmp_path / "resolved_config.ini").read_text())
        assert resolved == parse_config(_ini(_base_sections()))
        meta = self._load(tmp_path, "metadata.json")
        assert meta["command"] == "bounds"
        assert meta["package"].startswith("gridvol ")
        assert "timestamp" in meta

    def test_missing_option_section_rejected(self, tmp_path):
        """Commands that price an option require the [option] section."""
        sections = _base_sections()
        del sections["option"]
        with pytest.raises(ConfigError, match=r"\[option\]"):
            self._run("price", sections, tmp_path)

    def test_pricing_needs_proportional_family(self, tmp_path):
        """Pricing under a constant-volatility config is refused."""
        sections = _base_sections(vol={"kind": "constant", "nu": "30.0"})
        with pytest.raises(ConfigError, match="proportional"):
            self._run("price", sections, tmp_path)

    def test_unknown_command_rejected(self, tmp_path):
        """run() refuses commands outside the documented set."""
        with pytest.raises(ConfigError, match="unknown subcommand"):
            self._run("calibrate", _base_sections(), tmp_path)

    def test_smoke_every_subcommand(self, tmp_path):
        """All subcommands run one config end to end and write artifacts."""
        sections = _base_sections(
            grid={
                "horizon": "1.0",
                "n_intervals": "12",
                "epsilon": repr(1e-4 / 12),
                "sub_steps": "4",
            },
            vol={"kind": "proportional", "nu": "0.3"},
            run={"n_paths": "300", "seed": "7"},
            invert_nu={"target": "30.0"},
            select_nu={"nu_grid": "0.2, 0.3"},
            hedge={"n_rebalances": "12"},
            fp_residual={"n_t": "60", "n_x": "60"},
            appendix_demo={"nu": "30.0", "n_paths_rn": "20000"},
            drift_check={"n_t": "3", "n_x": "3"},
        )
        artifacts = {
            "simulate": "paths.csv",
            "validate": "validation.json",
            "price": "quote.json",
            "invert-nu": "inversion.json",
            "bounds": "bounds.json",
            "hedge": "hedge_errors.csv",
            "select-nu": "selection.json",
            "fp-residual": "fp_report.json",
            "appendix-demo": "demo.json",
            "drift-check": "drift_check.json",
        }
        assert set(artifacts) == set(SUBCOMMANDS)
        for command, artifact in artifacts.items():
            out = tmp_path / command.replace("-", "_")
            code = self._run(command, sections, out)
            assert code in (0, 1), f"{command}: exit {code}"
            assert (out / artifact).exists(), f"{command}: missing {artifact}"
            assert (out / "resolved_config.ini").exists()
            assert (out / "metadata.json").exists()


class TestMain:
    """The argv entry point: flags, overrides, and failure exit codes."""

    def _write_config(self, tmp_path, sections: dict) -> str:
        path = tmp_path / "config.ini"
        path.write_text(_ini(sections))
        return str(path)

    def test_price_exits_zero(self, tmp_path):
        """A well-formed price run succeeds through the argv interface."""
        config = self._write_config(tmp_path, _base_sections())
        out = tmp_path / "out"
        assert main(["price", "--config", config, "--out", str(out)]) == 0
        assert (out / "quote.json").exists()

    def test_seed_and_n_paths_overrides(self, tmp_path):
        """--seed and --n-paths replace the configured values everywhere."""
        config = self._write_config(tmp_path, _base_sections())
        out = tmp_path / "out"
        code = main(
            [
                "simulate",
                "--config",
                config,
                "--out",
                str(out),
                "--seed",
                "99",
                "--n-paths",
                "7",
            ]
        )
        assert code == 0
        resolved = parse_config((out / "resolved_config.ini").read_text())
        assert resolved.seed == 99 and resolved.n_paths == 7
        body = [
            ln
            for ln in (out / "paths.csv").read_text().splitlines()
            if not ln.startswith("# ")
        ]
        assert len(body) - 1 == 7 * 13

    def test_target_flag_sets_inversion_target(self, tmp_path):
        """--target feeds the inversion without an [invert_nu] section."""
        sections = _base_sections(
            grid={
                "horizon": "1.0",
                "n_intervals": "12",
                "epsilon": repr(0.1 / 12.0),
            },
            vol={"kind": "proportional", "nu": "0.3"},
        )
        config = self._write_config(tmp_path, sections)
        out = tmp_path / "out"
        code = main(
            ["invert-nu", "--config", config, "--out", str(out), "--target", "25.0"]
        )
        assert code == 0
        with open(out / "inversion.json") as fh:
            inv = json.load(fh)
        assert inv["target"] == 25.0
        assert abs(inv["reproduced_price"] - 25.0) < 1e-6

    def test_missing_config_file_exits_two(self, tmp_path, capsys):
        """A nonexistent config path is a usage error."""
        code = main(["price", "--config", str(tmp_path / "absent.ini")])
        assert code == 2
        assert "cannot read config" in capsys.readouterr().err

    def test_malformed_config_exits_two(self, tmp_path, capsys):
        """Unparseable config text is a usage error."""
        path = tmp_path / "bad.ini"
        path.write_text("no section header\n")
        code = main(["price", "--config", str(path)])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_invalid_section_exits_two(self, tmp_path, capsys):
        """A config with an unknown section is a usage error."""
        config = self._write_config(
            tmp_path, _base_sections(portfolio={"size": "1"})
        )
        assert main(["price", "--config", config]) == 2
        assert "unknown section" in capsys.readouterr().err

    def test_unknown_subcommand_exits_two(self):
        """argparse rejects unknown subcommands with exit status 2."""
        with pytest.raises(SystemExit) as excinfo:
            main(["calibrate", "--config", "x.ini"])
        assert excinfo.value.code == 2

    def test_invalid_threads_exits_two(self, tmp_path, capsys):
        """--threads must be at least one."""
        config = self._write_config(tmp_path, _base_sections())
        assert main(["price", "--config", config, "--threads", "0"]) == 2
        assert "--threads" in capsys.readouterr().err

    def test_out_of_range_target_exits_two(self, tmp_path, capsys):
        """A target outside the attainable price interval is reported."""
        sections = _base_sections(
            grid={
                "horizon": "1.0",
                "n_intervals": "12",
                "epsilon": repr(0.1 / 12.0),
            },
            vol={"kind": "proportional", "nu": "0.3"},
        )
        config = self._write_config(tmp_path, sections)
        code = main(["invert-nu", "--config", config, "--target", "150.0"])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_reruns_are_byte_identical(self, tmp_path):
        """Identical configs reproduce identical artifacts, bar the timestamp."""
        config = self._write_config(tmp_path, _base_sections())
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", config, "--out", str(out_a)]) == 0
        assert main(["simulate", "--config", config, "--out", str(out_b)]) == 0
        assert (out_a / "paths.csv").read_bytes() == (out_b / "paths.csv").read_bytes()
        assert (out_a / "resolved_config.ini").read_bytes() == (
            out_b / "resolved_config.ini"
        ).read_bytes()
        meta_a = json.loads((out_a / "metadata.json").read_text())
        meta_b = json.loads((out_b / "metadata.json").read_text())
        meta_a.pop("timestamp"), meta_b.pop("timestamp")
        assert meta_a == meta_b

    def test_output_dir_environment_fallback(self, tmp_path, monkeypatch):
        """Without --out or a configured directory the env variable is used."""
        sections = _base_sections()
        config = self._write_config(tmp_path, sections)
        env_dir = tmp_path / "from_env"
        monkeypatch.setenv("GRIDVOL_OUTPUT_DIR", str(env_dir))
        assert main(["bounds", "--config", config]) == 0
        assert (env_dir / "bounds.json").exists()
