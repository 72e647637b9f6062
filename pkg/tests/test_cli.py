#!/usr/bin/env python3
"""
Command-line tests: artifacts, manifests, config merging and exit codes.
"""

import sys
import os
import json
import tempfile
from unittest.mock import patch
from pathlib import Path

import pytest
from click.testing import CliRunner

# Add parent directory for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

try:
    from cli import cli, emit_plotdata
    from core import NumericError, ValidationError, __version__
except ImportError as e:
    print(f"❌ Failed to import modules: {e}")
    sys.exit(1)


UNIFORM_12 = "lat:pmf(d=1;1:0.5,2:0.5)"


def run(*args):
    return CliRunner().invoke(cli, list(args))


def last_json(result):
    return json.loads(result.output.strip().splitlines()[-1])


class TestArtifacts:
    """Files written by each command."""

    def test_lattice_invariant_csv(self):
        """Exact uniform{1,2} table with zero residuals."""
        with tempfile.TemporaryDirectory() as temp_dir:
            result = run("analyze", "lattice-invariant", "--law", UNIFORM_12, "--output-dir", temp_dir)
            assert result.exit_code == 0, result.output

            text = (Path(temp_dir) / "invariant.csv").read_text()
            assert text == ("state,nu,rho,nu_residual,rho_residual\n"
                            "0,0.5,0.5,0,0\n1,0.75,0.625,0,0\n2,0.25,0.25,0,0\n")

            manifest = json.loads((Path(temp_dir) / "manifest.json").read_text())
            assert manifest["command"] == "analyze lattice-invariant"
            assert manifest["version"] == __version__
            assert manifest["artifacts"] == ["invariant.csv"]
            assert last_json(result)["exact"] is True

    def test_simulate_walk_is_reproducible(self):
        """Same seed, byte-identical path.csv."""
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            for out in (first, second):
                result = run("simulate", "walk", "--law", "cont:exp(rate=1)", "--steps", "200",
                             "--seed", "7", "--output-dir", out)
                assert result.exit_code == 0, result.output
            a = (Path(first) / "path.csv").read_bytes()
            b = (Path(second) / "path.csv").read_bytes()
            assert a == b
            assert a.startswith(b"n,value\n0,0.0\n")
            reflections = (Path(first) / "reflections.csv").read_text().splitlines()
            assert reflections[0] == "k,time,R"

    def test_classical_walk_writes_ladder(self):
        """Classical mode records ladder epochs instead of reflections."""
        with tempfile.TemporaryDirectory() as temp_dir:
            result = run("simulate", "walk", "--law", "int:pmf(-1:1/2,1:1/2)", "--mode", "classical",
                         "--steps", "100", "--seed", "3", "--output-dir", temp_dir)
            assert result.exit_code == 0, result.output
            header = (Path(temp_dir) / "ladder.csv").read_text().splitlines()[0]
            assert header == "k,epoch,height,increment"
            assert not (Path(temp_dir) / "reflections.csv").exists()

    def test_wiener_hopf_construct(self):
        """mu0 = (1/2, 1/2) builds the simple walk."""
        with tempfile.TemporaryDirectory() as temp_dir:
            result = run("wiener-hopf", "construct", "--mu0", "lat:pmf(0:1/2,1:1/2)",
                         "--output-dir", temp_dir)
            assert result.exit_code == 0, result.output
            text = (Path(temp_dir) / "wiener_hopf.csv").read_text()
            assert text == "k,mu0,mu\n-1,,0.5\n0,0.5,0.0\n1,0.5,0.5\n"
            assert json.loads((Path(temp_dir) / "wiener_hopf.json").read_text())["exact"] is True

    def test_contractivity_trace_records_calibration(self):
        """contraction.csv has n, D and the manifest notes the threshold used."""
        with tempfile.TemporaryDirectory() as temp_dir:
            result = run("contractivity", "trace", "--law", "cont:exp(rate=1)", "--x0", "0",
                         "--y0", "5", "--steps", "200", "--seed", "1", "--output-dir", temp_dir)
            assert result.exit_code == 0, result.output
            lines = (Path(temp_dir) / "contraction.csv").read_text().splitlines()
            assert lines[0] == "n,D"
            assert lines[1] == "0,5.0"
            assert len(lines) == 202
            manifest = json.loads((Path(temp_dir) / "manifest.json").read_text())
            assert manifest["calibration"] == {"meeting_threshold": 0.001}
            assert last_json(result)["violations"] == 0

    def test_contractivity_vote(self):
        """vote.json carries the verdict and the manifest its thresholds."""
        with tempfile.TemporaryDirectory() as temp_dir:
            result = run("contractivity", "vote", "--law", "cont:exp(rate=1)", "--paths", "30",
                         "--steps", "500", "--seed", "2", "--output-dir", temp_dir)
            assert result.exit_code == 0, result.output
            vote = json.loads((Path(temp_dir) / "vote.json").read_text())
            assert vote["verdict"] == "recurrent_indicated"
            manifest = json.loads((Path(temp_dir) / "manifest.json").read_text())
            assert manifest["calibration"]["vote_thresholds"] == [0.95, 0.05]

    def test_char_slope(self):
        """Simple walk slope near 2 over the default 32-point grid."""
        with tempfile.TemporaryDirectory() as temp_dir:
            result = run("diagnose", "char-slope", "--law", "int:pmf(-1:1/2,1:1/2)", "--output-dir", temp_dir)
            assert result.exit_code == 0, result.output
            assert abs(last_json(result)["slope"] - 2.0) < 0.05
            rows = (Path(temp_dir) / "char_slope.csv").read_text().splitlines()
            assert rows[0] == "t,one_minus_chf"
            assert len(rows) == 33

    def test_emit_plotdata(self):
        """Unequal columns are refused; empty ones give a header-only file."""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "series.csv")
            emit_plotdata(path, {"n": [], "D": []})
            assert Path(path).read_text() == "n,D\n"
            with pytest.raises(ValidationError):
                emit_plotdata(path, {"n": [0, 1], "D": [0.5]})


class TestClassify:
    """Top-level classify and the analyze group."""

    def test_null_recurrent_verdict_on_stdout(self):
        """The JSON summary is the last stdout line."""
        with tempfile.TemporaryDirectory() as temp_dir:
            result = run("classify", "--law", "lat:powerlaw(a=0.7)", "--output-dir", temp_dir)
            assert result.exit_code == 0, result.output
            assert last_json(result)["verdict"] == "NullRecurrent"
            saved = json.loads((Path(temp_dir) / "classification.json").read_text())
            assert saved["verdict"] == "NullRecurrent"

    def test_config_file_supplies_law(self):
        """Values come from the file when no flag is given."""
        with tempfile.TemporaryDirectory() as temp_dir:
            config = Path(temp_dir) / "config.json"
            config.write_text(json.dumps({"law": "cont:exp(rate=1)", "output_dir": temp_dir}))
            result = run("analyze", "classify", "--config", str(config))
            assert result.exit_code == 0, result.output
            assert last_json(result)["verdict"] == "PositiveRecurrent"

    def test_flags_override_config_file(self):
        """--law beats the file's law."""
        with tempfile.TemporaryDirectory() as temp_dir:
            config = Path(temp_dir) / "config.json"
            config.write_text(json.dumps({"law": "cont:exp(rate=1)", "output_dir": temp_dir}))
            result = run("classify", "--config", str(config), "--law", "lat:powerlaw(a=0.4)")
            assert result.exit_code == 0, result.output
            assert last_json(result)["verdict"] == "Unknown"

    def test_version(self):
        """--version reports the package version."""
        result = run("--version")
        assert result.exit_code == 0
        assert __version__ in result.output


class TestExitCodes:
    """Validation failures exit 2, numeric failures exit 3."""

    def test_missing_seed(self):
        """Stochastic commands need --seed."""
        with tempfile.TemporaryDirectory() as temp_dir:
            result = run("simulate", "walk", "--law", "cont:exp(rate=1)", "--output-dir", temp_dir)
            assert result.exit_code == 2
            assert not (Path(temp_dir) / "manifest.json").exists()

    def test_malformed_law(self):
        """Grammar errors are validation errors."""
        with tempfile.TemporaryDirectory() as temp_dir:
            result = run("classify", "--law", "lat:zipf(a=1)", "--output-dir", temp_dir)
            assert result.exit_code == 2

    def test_unknown_config_key(self):
        """Config files may only name known fields."""
        with tempfile.TemporaryDirectory() as temp_dir:
            config = Path(temp_dir) / "config.json"
            config.write_text(json.dumps({"law": "cont:exp(rate=1)", "colour": "blue"}))
            result = run("classify", "--config", str(config), "--output-dir", temp_dir)
            assert result.exit_code == 2

    def test_signed_law_classify(self):
        """classify points signed laws elsewhere."""
        with tempfile.TemporaryDirectory() as temp_dir:
            result = run("classify", "--law", "int:sympow(a=1.5)", "--output-dir", temp_dir)
            assert result.exit_code == 2

    def test_numeric_failure(self):
        """A quadrature miss exits 3."""
        with tempfile.TemporaryDirectory() as temp_dir:
            with patch('continuous_theory.density_grid', side_effect=NumericError("quadrature missed")):
                result = run("analyze", "density", "--law", "cont:exp(rate=1)", "--output-dir", temp_dir)
            assert result.exit_code == 3
            assert not (Path(temp_dir) / "density.csv").exists()
