from __future__ import annotations

import functools
import sys
from pathlib import Path
from typing import List, Optional

import click
from pydantic import ValidationError

from models.experiment import DiagnosticsFlags, HexagonSettings
from services import experiments
from utils.errors import BilevelError, NumericalError
from utils.io import load_config
from utils.logconfig import configure_logging

EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_NOT_CERTIFIED = 3


def _csv_list(cast):
    def parse(ctx, param, value) -> Optional[List]:
        if value is None or value == "":
            return None
        try:
            return [cast(v) for v in value.split(",") if v.strip()]
        except ValueError:
            raise click.BadParameter(f"expected a comma-separated list, got {value!r}")

    return parse


def _fail(code: int, reason: str):
    click.echo(f"error: {reason}", err=True)
    sys.exit(code)


def exit_codes(command):
    """Maps the error hierarchy onto exit codes: 1 for configuration, 2 for solver failures."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except NumericalError as exc:
            _fail(EXIT_NUMERICAL, f"{type(exc).__name__}: {exc}")
        except ValidationError as exc:
            _fail(EXIT_CONFIG, str(exc.errors()[0].get("msg")))
        except (BilevelError, ValueError) as exc:
            _fail(EXIT_CONFIG, str(exc))

    return wrapper


@click.group()
@click.option("--log-level", default=None, help="Overrides BMFO_LOG_LEVEL (default INFO).")
def cli(log_level: Optional[str]):
    """Barrier-metric first-order bilevel solver."""
    configure_logging(log_level)


@cli.command()
@click.option("--config", "config_path", required=True, help="Experiment config (JSON).")
@click.option("--out", "out_dir", default=None, help="Output directory; defaults to output_dir in the config.")
@click.option("--seeds", callback=_csv_list(int), default=None, help="Comma-separated seeds; overrides the config.")
@exit_codes
def run(config_path: str, out_dir: Optional[str], seeds: Optional[List[int]]):
    """Run the configured experiment and write its artifacts."""
    config = load_config(Path(config_path))
    if seeds:
        config = config.model_copy(update={"seeds": seeds})
    written = experiments.run_experiment(config, Path(out_dir) if out_dir else None)
    click.echo(f"wrote {written}")


@cli.command()
@click.option("--config", "config_path", required=True, help="Experiment config (JSON).")
@click.option("--K", "K", type=int, default=None, help="Check k < K; defaults to K in the config.")
@exit_codes
def certify(config_path: str, K: Optional[int]):
    """Print the barrier-aware certification table; exit 3 when a condition fails."""
    config = load_config(Path(config_path))
    if K is not None:
        config = config.model_copy(update={"K": K})
    report = experiments.certify_config(config)
    click.echo(report.table())
    if not report.passed:
        failed = ", ".join(f"{c.name} (first k={c.first_violation})" for c in report.failed())
        click.echo(f"not certified: {failed}", err=True)
        sys.exit(EXIT_NOT_CERTIFIED)


@cli.command("bench-toll")
@click.option("--config", "config_path", required=True, help="Toll experiment config (JSON).")
@click.option("--n-list", callback=_csv_list(int), default="50", show_default=True, help="Comma-separated corridor counts.")
@click.option("--seeds", callback=_csv_list(int), default=None, help="Comma-separated instance seeds; defaults to the config.")
@click.option("--tau", type=float, default=0.2, show_default=True, help="Bottleneck tightness; 1.0 is the loose variant.")
@click.option("--iterations", type=int, default=None, help="Outer-iteration budget; defaults to K in the config.")
@click.option("--budget-ms", type=float, default=None, help="Wall-clock budget per cell in milliseconds.")
@click.option("--parallel", type=int, default=1, show_default=True, help="Worker processes.")
@click.option("--out", "out_dir", default=None, help="Output directory; defaults to output_dir in the config.")
@exit_codes
def bench_toll(config_path, n_list, seeds, tau, iterations, budget_ms, parallel, out_dir):
    """Benchmark BMFO over (n, seed) toll cells; exit 0 when at least one cell completes."""
    config = load_config(Path(config_path))
    rows = experiments.bench_toll(
        config,
        n_list=n_list,
        seeds=seeds or config.seeds,
        tau=tau,
        out_dir=Path(out_dir or config.output_dir),
        iterations=iterations,
        budget_ms=budget_ms,
        parallel=max(1, parallel),
    )
    completed = [r for r in rows if r[-1] != "solver_failure"]
    click.echo(f"{len(completed)}/{len(rows)} cells completed")
    if not completed:
        _fail(EXIT_NUMERICAL, "every benchmark cell failed")


@cli.command("bench-hexagon")
@click.option("--config", "config_path", default=None, help="Hexagon experiment config; built-in defaults otherwise.")
@click.option("--out", "out_dir", default="out/hexagon", show_default=True, help="Output directory.")
@click.option("--interior", is_flag=True, help="Also run the fixed-x interior-stability experiment.")
@click.option("--sweeps", type=int, default=40, show_default=True, help="Sweeps of the interior-stability experiment.")
@exit_codes
def bench_hexagon(config_path: Optional[str], out_dir: str, interior: bool, sweeps: int):
    """Barrier-metric vs Euclidean tracking on the hexagon."""
    settings = HexagonSettings()
    if config_path is not None:
        config = load_config(Path(config_path))
        if config.experiment != "hexagon":
            raise ValueError("bench-hexagon needs a hexagon experiment config")
        settings = config.hexagon
    cfg = settings.to_config()
    result = experiments.write_hexagon_artifacts(Path(out_dir), cfg)
    click.echo(
        f"barrier: max err {result.barrier_tube.max_exact_err:.4g}, exit {result.barrier_tube.first_exit_index}; "
        f"euclidean: max err {result.euclidean_tube.max_exact_err:.4g}, exit {result.euclidean_tube.first_exit_index}"
    )
    if interior:
        stability = experiments.write_interior_stability(Path(out_dir), cfg, sweeps=sweeps)
        click.echo(
            f"interior x fixed: euclidean {'stable' if stability.euclidean_stable else 'unstable'} "
            f"at {stability.gamma_euclidean / stability.gamma_crit:.2f} gamma_crit, "
            f"barrier {'stable' if stability.barrier_stable else 'unstable'}"
        )


@cli.command()
@click.option("--config", "trace_path", required=True, help="trace.json written by run.")
@click.option("--out", "out_dir", default=None, help="Output directory; defaults to the trace's directory.")
@click.option("--tube/--no-tube", default=None)
@click.option("--stationarity/--no-stationarity", default=None)
@click.option("--bias/--no-bias", default=None)
@click.option("--proxy-bias/--no-proxy-bias", default=None)
@click.option("--stride", type=int, default=None)
@exit_codes
def diagnose(trace_path, out_dir, tube, stationarity, bias, proxy_bias, stride):
    """Apply diagnostics to an existing trace; unset flags fall back to the embedded config."""
    config, _, _ = experiments.load_trace(Path(trace_path))
    overrides = {
        name: value
        for name, value in (("tube", tube), ("stationarity", stationarity), ("bias", bias), ("proxy_bias", proxy_bias), ("stride", stride))
        if value is not None
    }
    flags = DiagnosticsFlags.model_validate({**config.diagnostics.model_dump(), **overrides})
    summary = experiments.diagnose_trace(Path(trace_path), Path(out_dir) if out_dir else None, flags)
    click.echo(f"diagnostics: {', '.join(summary) or 'none requested'}")


if __name__ == "__main__":
    cli()
