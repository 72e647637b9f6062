#!/usr/bin/env python3
"""
ReflectLab - Command Line
=========================
Batch experiment driver for reflected random walks.

Every command merges flags over an optional JSON config file, runs one
library operation and writes its artifacts plus a manifest.json into the
output directory:
- simulate walk|ensemble
- analyze lattice-invariant|density|tail|classify (classify is also top level)
- wiener-hopf construct|verify
- contractivity trace|vote
- diagnose char-slope
"""

import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import click

# Add current directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

try:
    from core import (
        ExperimentConfig, ReflectLabError, RunManifest, Storage, TimeManager, ValidationError,
        __version__,
    )
    from measures import IncrementLaw, parse_law
    from simulate import (
        LadderMode, SeededStream, WalkMode, ensemble_run, ladder_trace, reflection_trace, sample_path,
    )
    import lattice_theory
    import continuous_theory
    import general_walk
    import contractivity
except ImportError as e:
    print(f"❌ Error: Cannot import reflectlab modules: {e}", file=sys.stderr)
    print("💡 Make sure you're running this from the project root directory", file=sys.stderr)
    sys.exit(1)

logger = logging.getLogger('reflectlab.cli')


# =============================================================================
# ARTIFACTS
# =============================================================================

def emit_plotdata(filepath: str, columns: Mapping[str, Sequence[Any]]) -> None:
    """Write equal-length named columns as a CSV series."""
    lengths = {name: len(values) for name, values in columns.items()}
    if len(set(lengths.values())) > 1:
        raise ValidationError(f"Columns differ in length: {lengths}")
    rows = list(zip(*columns.values()))
    Storage.save_csv(filepath, list(columns), rows)


def _columns(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Dict[str, List[Any]]:
    if not rows:
        return {name: [] for name in header}
    return {name: list(values) for name, values in zip(header, zip(*rows))}


class Run:
    """One command invocation: merged config, timing and the artifacts written."""

    def __init__(self, command: str, config: ExperimentConfig):
        self.command = command
        self.config = config
        self.started_at = TimeManager.now()
        self._clock = time.perf_counter()
        self.artifacts: List[str] = []
        self.calibration: Dict[str, Any] = {}

    @property
    def output_dir(self) -> Path:
        return Path(self.config.output_dir)

    def series(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
        emit_plotdata(str(self.output_dir / name), _columns(header, rows))
        self._written(name)

    def report(self, name: str, data: Any) -> None:
        Storage.save_json(str(self.output_dir / name), data)
        self._written(name)

    def _written(self, name: str) -> None:
        self.artifacts.append(name)
        logger.info(f"✅ Wrote {self.output_dir / name}")

    def finish(self) -> None:
        manifest = RunManifest(
            command=self.command,
            config=self.config.to_dict(),
            started_at=self.started_at.isoformat(),
            wall_clock_seconds=round(time.perf_counter() - self._clock, 6),
            artifacts=list(self.artifacts),
            calibration=dict(self.calibration),
        )
        Storage.save_json(str(self.output_dir / "manifest.json"), manifest.to_dict())


def load_config(command: str, config_file: Optional[str], flags: Mapping[str, Any]) -> ExperimentConfig:
    """File values first, non-None flags on top, then validation."""
    base = ExperimentConfig.from_file(config_file) if config_file else ExperimentConfig()
    overrides = {}
    for key, value in flags.items():
        if isinstance(value, tuple):
            value = list(value) or None
        overrides[key] = value
    config = base.merged(overrides)
    config.command = command

    problems = config.validate()
    if problems:
        raise ValidationError("Invalid configuration: " + "; ".join(problems))
    return config


def execute(command: str, config_file: Optional[str], flags: Mapping[str, Any],
            action: Callable[[ExperimentConfig, Run], Optional[Dict[str, Any]]]) -> None:
    """Run ``action`` and map library errors onto exit codes 2 (validation) and 3 (numeric)."""
    try:
        config = load_config(command, config_file, flags)
        run = Run(command, config)
        summary = action(config, run)
        run.finish()
    except ReflectLabError as e:
        logger.error(f"❌ {command} failed: {e}")
        sys.exit(e.exit_code)

    if summary is not None:
        click.echo(json.dumps(summary, default=str))


def _law(config: ExperimentConfig) -> IncrementLaw:
    if not config.law:
        raise ValidationError("--law is required")
    return parse_law(config.law)


def _stream(config: ExperimentConfig) -> SeededStream:
    return SeededStream(int(config.seed))


def common_options(f):
    """--config, --output-dir and --seed, shared by every command."""
    f = click.option("--seed", type=int, default=None,
                     help="64-bit seed (required by stochastic commands)")(f)
    f = click.option("--output-dir", type=click.Path(file_okay=False), default=None,
                     help="Directory for artifacts and manifest.json")(f)
    f = click.option("--config", "config_file", type=click.Path(dir_okay=False), default=None,
                     help="JSON config file; flags override its values")(f)
    return f


def law_option(f):
    return click.option("--law", default=None, help='Distribution spec, e.g. "lat:powerlaw(a=0.7)"')(f)


@click.group()
@click.version_option(__version__, prog_name="reflectlab")
def cli():
    """Reflected random walk experiments."""


# =============================================================================
# SIMULATE
# =============================================================================

@cli.group()
def simulate():
    """Seeded trajectories and ensembles."""


@simulate.command("walk")
@common_options
@law_option
@click.option("--x0", type=float, default=None, help="Starting point")
@click.option("--steps", type=int, default=None, help="Number of steps")
@click.option("--mode", type=click.Choice(["reflected", "classical"]), default=None)
def simulate_walk(config_file, **flags):
    """One path; writes path.csv plus reflections.csv or ladder.csv."""

    def action(config: ExperimentConfig, run: Run):
        m = _law(config)
        path = sample_path(m, WalkMode(config.mode), config.x0, config.steps, _stream(config))
        run.series("path.csv", ("n", "value"), path.to_rows())
        if path.mode == WalkMode.REFLECTED:
            trace = reflection_trace(path)
            run.series("reflections.csv", ("k", "time", "R"), trace.to_rows())
            return {"steps": path.steps, "reflections": len(trace), "final": float(path.values[-1])}
        ladder = ladder_trace(path, LadderMode.NONSTRICT_ASCENDING)
        run.series("ladder.csv", ("k", "epoch", "height", "increment"), ladder.to_rows())
        return {"steps": path.steps, "ladder_epochs": len(ladder.epochs) - 1,
                "final": float(path.values[-1])}

    execute("simulate walk", config_file, flags, action)


@simulate.command("ensemble")
@common_options
@law_option
@click.option("--x0", type=float, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--paths", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--bins", type=int, default=None)
@click.option("--window", type=float, nargs=2, default=None, help="Histogram window LO HI")
@click.option("--interval", type=float, nargs=2, default=None, help="Return interval LO HI")
@click.option("--M", "M", type=float, default=None, help="Escape level")
def simulate_ensemble(config_file, **flags):
    """Independent paths aggregated into ensemble.json."""

    def action(config: ExperimentConfig, run: Run):
        report = ensemble_run(
            _law(config), config.x0, config.steps, config.paths, int(config.seed),
            window=tuple(config.window or (0.0, 10.0)), bins=config.bins,
            interval=tuple(config.interval or (0.0, 1.0)),
            threshold=config.M if config.M is not None else contractivity.FALLBACK_M,
            workers=config.workers,
        )
        run.report("ensemble.json", report.to_dict())
        return {"paths": report.paths, "steps": report.steps, "returns": report.returns,
                "escape_fraction": report.escape_fraction}

    execute("simulate ensemble", config_file, flags, action)


# =============================================================================
# ANALYZE
# =============================================================================

@cli.group()
def analyze():
    """Deterministic invariant-measure and classification reports."""


@analyze.command("lattice-invariant")
@common_options
@law_option
@click.option("--x0", type=float, default=None)
@click.option("--x-max", type=float, default=None, help="State cap N")
def analyze_lattice_invariant(config_file, **flags):
    """nu, rho and their residuals on the essential class; writes invariant.csv."""

    def action(config: ExperimentConfig, run: Run):
        table = lattice_theory.invariant_table(_law(config), config.x0, config.x_max)
        run.series("invariant.csv", table.HEADER, table.to_rows())
        return {
            "states": len(table.states),
            "truncated": table.essential_class.truncated,
            "exact": table.nu.exact,
            "nu_residual": float(table.nu_residual.sup),
            "rho_residual": float(table.rho_residual.sup),
            "truncation_bound": table.truncation_bound,
        }

    execute("analyze lattice-invariant", config_file, flags, action)


@analyze.command("density")
@common_options
@law_option
@click.option("--x-max", type=float, default=None)
@click.option("--points", "grid_points", type=int, default=None, help="Grid size")
def analyze_density(config_file, **flags):
    """nu and rho densities of a continuous law; writes density.csv."""

    def action(config: ExperimentConfig, run: Run):
        grid = continuous_theory.density_grid(_law(config), config.x_max, config.grid_points)
        run.series("density.csv", grid.HEADER, grid.to_rows())
        return {"points": len(grid.grid), "max_quad_error": float(grid.quadrature_error.max())}

    execute("analyze density", config_file, flags, action)


@analyze.command("tail")
@common_options
@law_option
def analyze_tail(config_file, **flags):
    """Quadratic-tail sum or integral; writes tail.json."""

    def action(config: ExperimentConfig, run: Run):
        m = _law(config)
        if m.is_continuous:
            closed = continuous_theory.quadratic_tail_integral(m)
            report = {"model": str(m), "quad_tail": closed.to_dict()}
            if closed.is_finite:
                report["quadrature"] = continuous_theory.quadratic_tail_quadrature(m).to_dict()
                mass, error = continuous_theory.rho_total_mass(m)
                report["rho_total_mass"] = dict(mass.to_dict(), error=error)
        else:
            report = {"model": str(m), "quad_tail": lattice_theory.quadratic_tail_sum(m).to_dict()}
        run.report("tail.json", report)
        return report

    execute("analyze tail", config_file, flags, action)


def _classify(config: ExperimentConfig, run: Run) -> Dict[str, Any]:
    m = _law(config)
    if m.is_continuous:
        report = continuous_theory.classify_continuous(m)
    elif m.is_signed:
        raise ValidationError(f"classify covers half-line laws; use 'diagnose char-slope' for {m}")
    else:
        report = lattice_theory.classify_lattice(m)
    run.report("classification.json", report.to_dict())
    return report.to_dict()


@analyze.command("classify")
@common_options
@law_option
def analyze_classify(config_file, **flags):
    """Sufficient-condition recurrence verdict; writes classification.json."""
    execute("analyze classify", config_file, flags, _classify)


@cli.command("classify")
@common_options
@law_option
def classify(config_file, **flags):
    """Shortcut for 'analyze classify'."""
    execute("analyze classify", config_file, flags, _classify)


# =============================================================================
# WIENER-HOPF
# =============================================================================

@cli.group("wiener-hopf")
def wiener_hopf():
    """Symmetric laws with a prescribed ladder-height law."""


def _mu0(config: ExperimentConfig) -> IncrementLaw:
    if not config.mu0:
        raise ValidationError("--mu0 is required")
    return parse_law(config.mu0)


@wiener_hopf.command("construct")
@common_options
@click.option("--mu0", default=None, help='Ladder law, e.g. "lat:pmf(0:1/2,1:1/2)"')
@click.option("--n-max", type=int, default=None)
def wiener_hopf_construct(config_file, **flags):
    """Build mu from mu0; writes wiener_hopf.csv and wiener_hopf.json."""

    def action(config: ExperimentConfig, run: Run):
        result = general_walk.wiener_hopf_construct(_mu0(config), config.n_max)
        run.series("wiener_hopf.csv", ("k", "mu0", "mu"), result.to_rows())
        summary = {"exact": result.exact, "remainder": result.remainder, "validity": result.validity}
        run.report("wiener_hopf.json", summary)
        return summary

    execute("wiener-hopf construct", config_file, flags, action)


@wiener_hopf.command("verify")
@common_options
@click.option("--mu0", default=None)
@click.option("--n-max", type=int, default=None)
@click.option("--epochs", type=int, default=None, help="Ladder epochs to simulate")
def wiener_hopf_verify(config_file, **flags):
    """Simulated ladder heights under mu against mu0; writes wiener_hopf_verify.json."""

    def action(config: ExperimentConfig, run: Run):
        result = general_walk.wiener_hopf_construct(_mu0(config), config.n_max)
        check = general_walk.wiener_hopf_verify(result, config.epochs, _stream(config))
        run.report("wiener_hopf_verify.json", check.to_dict())
        return {"tv": check.tv, "epochs": check.epochs, "censored": check.censored}

    execute("wiener-hopf verify", config_file, flags, action)


# =============================================================================
# CONTRACTIVITY
# =============================================================================

@cli.group("contractivity")
def contractivity_group():
    """Coupled paths and the transience vote."""


@contractivity_group.command("trace")
@common_options
@law_option
@click.option("--x0", type=float, default=None)
@click.option("--y0", type=float, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--threshold", "thresholds", type=float, multiple=True, help="Meeting threshold (repeatable)")
def contractivity_trace(config_file, **flags):
    """D_n for two paths sharing increments; writes contraction.csv."""

    def action(config: ExperimentConfig, run: Run):
        if config.y0 is None:
            raise ValidationError("--y0 is required")
        thresholds = tuple(config.thresholds or contractivity.DEFAULT_THRESHOLDS)
        trace = contractivity.contraction_trace(_law(config), config.x0, config.y0, config.steps,
                                                _stream(config), thresholds)
        run.series("contraction.csv", ("n", "D"), trace.to_rows())
        run.calibration["meeting_threshold"] = contractivity.CALIBRATED_THRESHOLD
        return {
            "final_D": float(trace.D[-1]),
            "first_below": {repr(t): n for t, n in trace.first_below.items()},
            "violations": len(contractivity.contraction_violations(trace)),
        }

    execute("contractivity trace", config_file, flags, action)


@contractivity_group.command("vote")
@common_options
@law_option
@click.option("--x0", type=float, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--paths", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--M", "M", type=float, default=None, help="Escape level")
def contractivity_vote(config_file, **flags):
    """Escape-fraction transience vote; writes vote.json."""

    def action(config: ExperimentConfig, run: Run):
        vote = contractivity.transience_vote(_law(config), config.x0, config.steps, config.paths,
                                             int(config.seed), M=config.M, workers=config.workers)
        run.calibration["vote_thresholds"] = list(vote.thresholds)
        run.report("vote.json", vote.to_dict())
        return vote.to_dict()

    execute("contractivity vote", config_file, flags, action)


# =============================================================================
# DIAGNOSE
# =============================================================================

@cli.group()
def diagnose():
    """Numerical diagnostics."""


@diagnose.command("char-slope")
@common_options
@law_option
@click.option("--t-min", type=float, default=None)
@click.option("--t-max", type=float, default=None)
@click.option("--points", type=int, default=None)
def diagnose_char_slope(config_file, **flags):
    """Log-log slope of 1 - chf(t) near 0; writes char_slope.csv and char_slope.json."""

    def action(config: ExperimentConfig, run: Run):
        diag = general_walk.char_slope_diagnostic(_law(config), config.t_min, config.t_max, config.points)
        run.series("char_slope.csv", ("t", "one_minus_chf"),
                   list(zip(diag.t_grid.tolist(), diag.one_minus_chf.tolist())))
        run.report("char_slope.json", diag.to_dict())
        return diag.to_dict()

    execute("diagnose char-slope", config_file, flags, action)


def main():
    """Console entry point."""
    cli(prog_name="reflectlab")


if __name__ == "__main__":
    main()
