"""Tests for the crossmf command line."""

import json

import numpy as np
import pytest

from crossmf.cli import build_parser, build_spec, main, parse_overrides
from crossmf.errors import ParameterError
from crossmf.records import SimulationRecord, write_record


def synthetic_record(n: int = 200) -> SimulationRecord:
    gen = np.random.default_rng(0)
    s = np.exp(np.cumsum(np.concatenate([[0.0], 0.01 * gen.standard_normal(n - 1)])))
    return SimulationRecord(t=np.arange(n) * 4e-5, s=s, ed=np.zeros(n))


class TestParseOverrides:
    """Tests for --key=value overrides."""

    def test_hyphens_become_underscores(self):
        assert parse_overrides(["--n-agents=5", "--theta=2"]) == {"n_agents": "5", "theta": "2"}

    def test_bad_form(self):
        with pytest.raises(ParameterError, match="--key=value"):
            parse_overrides(["--theta"])

    def test_given_twice(self):
        with pytest.raises(ParameterError, match="twice"):
            parse_overrides(["--theta=1", "--theta=2"])


class TestParser:
    """Tests for the argument parser."""

    def test_aliases(self):
        parser = build_parser()
        assert parser.parse_args(["sim", "--tier", "abm"]).command == "sim"
        assert parser.parse_args(["presets"]).command == "presets"

    def test_no_command(self, capsys):
        assert main([]) == 2
        assert "crossmf" in capsys.readouterr().out


class TestPresetList:
    """Tests for preset-list."""

    def test_lists_both_tables(self, capsys):
        assert main(["preset-list"]) == 0
        out = capsys.readouterr().out
        assert "Parameter presets" in out
        assert "Experiment presets" in out


class TestSimulate:
    """Tests for the simulate command."""

    def test_tier_with_overrides(self, tmp_path):
        out = tmp_path / "abm"
        code = main(["simulate", "--tier", "abm", "--n-seeds", "2", "-o", str(out), "--n_agents=50", "--t_end=0.002"])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["params"]["n_agents"] == 50
        assert summary["seeds"] == [0, 1]
        assert (out / "run-0.csv").exists()
        assert (out / "run-1.csv").exists()

    def test_preset_with_overrides(self, tmp_path):
        out = tmp_path / "preset"
        code = main(["sim", "-p", "abm-herding", "--seeds", "3", "-o", str(out), "--n-agents=50", "--t-end=0.002"])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["name"] == "abm-herding"
        assert summary["runs"][0]["index"] == 3

    def test_unknown_key(self, tmp_path, capsys):
        code = main(["simulate", "--tier", "abm", "-o", str(tmp_path), "--volatility=1"])
        assert code == 2
        assert "Unknown parameter key" in capsys.readouterr().err

    def test_invalid_parameters(self, tmp_path, capsys):
        code = main(["simulate", "--tier", "abm", "-o", str(tmp_path), "--A1=0.5"])
        assert code == 2
        assert "A1 < A2" in capsys.readouterr().err

    def test_needs_tier_or_preset(self, tmp_path):
        assert main(["simulate", "-o", str(tmp_path)]) == 2


class TestBuildSpec:
    """Tests for experiment specs assembled from flags."""

    def spec_for(self, argv, overrides=None):
        return build_spec(build_parser().parse_args(["simulate", *argv]), overrides or {})

    def test_param_preset_keeps_arm_theta(self):
        spec = self.spec_for(["-p", "abm-herding-vol", "--param-preset", "abm-original"])
        assert spec.params.theta == 2.0

    def test_param_preset_keeps_arm_ed0(self):
        spec = self.spec_for(["-p", "homogeneous-tilted", "--param-preset", "meanfield"])
        assert spec.params.ed0 == 0.99
        assert spec.grid is not None

    def test_params_file_keeps_arm(self, tmp_path):
        path = tmp_path / "base.txt"
        path.write_text("theta = 0\nn_agents = 50\n")
        spec = self.spec_for(["-p", "abm-herding-vol", "--params-file", str(path)])
        assert (spec.params.theta, spec.params.n_agents) == (2.0, 50)

    def test_explicit_override_wins(self):
        spec = self.spec_for(["-p", "abm-herding-vol", "--param-preset", "abm-original"], {"theta": "0.5"})
        assert spec.params.theta == 0.5

    def test_snapshot_flag(self):
        spec = self.spec_for(["-p", "homogeneous-skeleton", "--snapshot-every", "25"])
        assert spec.snapshot_every == 25


class TestAnalyze:
    """Tests for the analyze command."""

    def test_writes_statistics(self, tmp_path):
        path = write_record(synthetic_record(), tmp_path / "rec.csv")
        assert main(["analyze", str(path)]) == 0
        analysis = json.loads((tmp_path / "rec-analysis.json").read_text())
        assert analysis["n_returns"] == 199
        qq = (tmp_path / "rec-qq.csv").read_text().splitlines()
        assert qq[0] == "theoretical,sample"
        assert len(qq) == 200
        acf_lines = (tmp_path / "rec-acf.csv").read_text().splitlines()
        assert acf_lines[1].startswith("0,1,1")

    def test_missing_record(self, tmp_path):
        assert main(["analyze", str(tmp_path / "missing.csv")]) == 2

    @pytest.mark.parametrize(
        ("text", "message"),
        [
            ("time,price\n0,1\n", "header"),
            ("t,S,ED\n0,abc,0\n", "non-numeric"),
            ("t,S,ED\n0,1\n", "columns"),
        ],
    )
    def test_malformed_record(self, tmp_path, capsys, text, message):
        bad = tmp_path / "bad.csv"
        bad.write_text(text)
        assert main(["analyze", str(bad)]) == 2
        assert message in capsys.readouterr().err


class TestDiagnose:
    """Tests for the diagnose command."""

    def test_selected_checks(self, tmp_path):
        out = tmp_path / "diag.json"
        code = main(
            ["diagnose", "--checks", "collision-invariant,dual-fixed-point", "-o", str(out), "--n_m=40", "--n_c=20"]
        )
        assert code == 0
        results = json.loads(out.read_text())
        assert sorted(results) == ["collision-invariant", "dual-fixed-point"]
        assert results["dual-fixed-point"]["max_deviation"] == 0.0

    def test_unknown_check(self, tmp_path):
        assert main(["diagnose", "--checks", "vibes", "-o", str(tmp_path / "d.json")]) == 2
