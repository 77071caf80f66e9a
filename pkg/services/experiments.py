"""Config-driven orchestration: build the problem, run, certify, diagnose, benchmark, write artifacts."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from models.experiment import DiagnosticsFlags, ExperimentConfig
from models.reports import CertificationReport
from services import bmfo, diagnostics, geometry, hexagon, toll
from services.barrier import BarrierProblem
from services.problem import BilevelInstance, StochasticUpperOracle, quadratic_instance
from utils.errors import InvalidConfig, MissingBounds, NumericalError
from utils.io import write_csv, write_json

logger = logging.getLogger(__name__)

TRACE_HEADER = ["k", "x_norm", "lambda", "alpha", "gamma", "q_norm", "guard_exact", "guard_proxy", "y_min_slack", "z_min_slack"]
HEXAGON_HEADER = ["k", "x", "z_0", "z_1", "err", "psi_gap", "f_value", "guard"]
BENCH_HEADER = [
    "n", "seed", "tau", "method", "iterations", "final_normalized_gap", "wall_time_ms", "seconds_per_update", "status",
]
PROJECTION_NOTE = (
    "x is clamped into the projection box after every outer step; the unprojected method treats x as unconstrained"
)


@dataclass(frozen=True)
class Problem:
    """Everything one BMFO run needs, built from a config and a seed."""

    instance: BilevelInstance
    bp: BarrierProblem
    x0: np.ndarray
    projection: Optional[bmfo.ProjectionBox]
    f_grad_source: Optional[StochasticUpperOracle] = None
    toll_instance: Optional[toll.TollInstance] = None


def build_problem(config: ExperimentConfig, seed: int = 0) -> Problem:
    projection = None if config.projection is None else config.projection.to_box()
    mu = config.schedule.mu
    if config.experiment == "hexagon":
        example = hexagon.build_hexagon_example(config.hexagon.to_config())
        x0 = np.array(config.x0 if config.x0 is not None else [0.0], dtype=float)
        bp = BarrierProblem(example.instance, config.hexagon.mu)
        return Problem(instance=example.instance, bp=bp, x0=x0, projection=projection)

    if config.experiment == "toll":
        ti = toll.generate_toll_instance(config.toll.n, seed, config.toll.tau)
        box = projection if projection is not None else toll.DEFAULT_TOLL_BOX
        _, instance = toll.toll_bilevel_instance(ti, x_box=box)
        x0 = ti.x0 if config.x0 is None else np.array(config.x0, dtype=float)
        return Problem(
            instance=instance, bp=BarrierProblem(instance, mu), x0=x0, projection=projection, toll_instance=ti,
        )

    spec = config.custom
    instance = quadratic_instance(
        Q_f=spec.Q_f,
        c_f=spec.c_f,
        Q_g=spec.Q_g,
        c_g_matrix=spec.M,
        c_g_offset=spec.c0,
        polytope=spec.polytope.to_polytope(),
        declared=None if spec.declared is None else spec.declared.to_declared(),
        name="custom",
    )
    source = None
    if spec.noise is not None:
        source = StochasticUpperOracle(instance, spec.noise.radius_x, spec.noise.radius_y, rng_seed=seed)
    return Problem(
        instance=instance, bp=BarrierProblem(instance, mu), x0=np.array(config.x0, dtype=float),
        projection=projection, f_grad_source=source,
    )


def local_constants(config: ExperimentConfig, problem: Problem) -> bmfo.LocalConstants:
    settings = config.certification
    if settings.constants is not None:
        return settings.constants.to_constants()
    declared = problem.instance.declared
    if declared is None:
        raise InvalidConfig("certification needs declared constants (custom.declared) or explicit constants")
    kappa = settings.kappa
    if kappa is None:
        try:
            kappa = geometry.euclidean_dikin_kappa(problem.bp.polytope)
        except MissingBounds as exc:
            raise InvalidConfig(f"{exc}; supply certification.kappa or slack_upper_bounds") from exc
    return bmfo.default_local_constants(
        problem.bp.mu, config.schedule.eta, declared, kappa,
        l_psi2=settings.l_psi2, l_f2_eta=settings.l_f2_eta, l_star1=settings.l_star1, c_xi=settings.c_xi,
    )


def build_schedule(config: ExperimentConfig, problem: Problem) -> bmfo.Schedule:
    constants = local_constants(config, problem) if config.schedule.certified else None
    return config.schedule.to_schedule(constants)


def certify_config(config: ExperimentConfig) -> CertificationReport:
    problem = build_problem(config, config.seeds[0])
    constants = local_constants(config, problem)
    schedule = config.schedule.to_schedule(constants)
    return bmfo.certify_barrier_aware(schedule, constants, config.K)


# ---------------------------------------------------------------------------
# Trace artifacts
# ---------------------------------------------------------------------------
def trace_rows(trace: bmfo.RunTrace, P) -> List[list]:
    rows = []
    for rec in trace.records:
        rows.append(
            [
                rec.k, float(np.linalg.norm(rec.x)), rec.lam, rec.alpha, rec.gamma, rec.q_norm,
                rec.guard_exact, rec.guard_proxy,
                float(geometry.slacks(P, rec.y).min()), float(geometry.slacks(P, rec.z).min()),
                *rec.x.tolist(),
            ]
        )
    return rows


def write_trace(out_dir: Path, trace: bmfo.RunTrace, problem: Problem, config: ExperimentConfig, seed: int) -> None:
    dim_x = problem.instance.dim_x
    write_csv(out_dir / "trace.csv", TRACE_HEADER + [f"x_{i}" for i in range(dim_x)], trace_rows(trace, problem.bp.polytope))
    write_json(
        out_dir / "trace.json",
        {
            "config": config.model_dump(mode="json"),
            "seed": seed,
            "projection_note": PROJECTION_NOTE if trace.projection is not None else None,
            "budget_exhausted": trace.budget_exhausted,
            "records": [
                {
                    "k": r.k, "x": r.x, "y": r.y, "z": r.z, "lam": r.lam, "alpha": r.alpha, "gamma": r.gamma,
                    "q_norm": r.q_norm, "guard_exact": r.guard_exact, "guard_proxy": r.guard_proxy,
                }
                for r in trace.records
            ],
        },
    )


def load_trace(path: Path) -> tuple:
    """(config, seed, RunTrace) from a trace.json written by write_trace."""
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"trace file not found: {path}")
    try:
        payload = json.loads(path.read_text())
        config = ExperimentConfig.model_validate(payload["config"])
        records = [
            bmfo.TraceRecord(
                k=r["k"], x=np.array(r["x"], dtype=float), y=np.array(r["y"], dtype=float),
                z=np.array(r["z"], dtype=float), lam=r["lam"], alpha=r["alpha"], gamma=r["gamma"],
                q_norm=r["q_norm"], guard_exact=r["guard_exact"], guard_proxy=r["guard_proxy"],
            )
            for r in payload["records"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"{path}: not a trace written by this tool ({exc})") from exc
    projection = None if config.projection is None else config.projection.to_box()
    trace = bmfo.RunTrace(records=records, projection=projection, budget_exhausted=bool(payload.get("budget_exhausted")))
    return config, int(payload.get("seed", 0)), trace


def run_diagnostics(
    out_dir: Path, flags: DiagnosticsFlags, trace: bmfo.RunTrace, problem: Problem, schedule: bmfo.Schedule
) -> Dict[str, object]:
    summary: Dict[str, object] = {}
    x_final = trace.final.x
    if flags.tube:
        report = diagnostics.tube_report(trace, problem.bp, schedule, stride=flags.stride)
        write_csv(out_dir / "tube_report.csv", ["k", "exact_err", "proxy_err"], [(r.k, r.exact_err, r.proxy_err) for r in report.rows])
        summary["tube"] = {
            "max_exact_err": report.max_exact_err,
            "max_proxy_err": report.max_proxy_err,
            "first_exit_index": report.first_exit_index,
        }
    if flags.stationarity:
        rows = diagnostics.stationarity_series(trace, problem.bp, stride=flags.stride)
        write_csv(out_dir / "stationarity.csv", ["k", "grad_norm_sq", "running_min"], [(r.k, r.grad_norm_sq, r.running_min) for r in rows])
        summary["stationarity"] = {"final_running_min": rows[-1].running_min if rows else None}
    if flags.bias:
        report = diagnostics.bias_report(problem.instance, x_final, flags.mu_list)
        write_csv(
            out_dir / "bias_report.csv",
            ["mu", "g_gap", "y_dist", "F_gap", "bound_g", "bound_y", "bound_F"],
            [(r.mu, r.g_gap, r.y_dist, r.F_gap, r.bound_g, r.bound_y, r.bound_F) for r in report.rows],
        )
        summary["bias"] = {"passed": report.passed, "slopes": report.slopes, "l_f0": report.l_f0}
    if flags.proxy_bias:
        curve = diagnostics.proxy_bias_curve(problem.bp, x_final, flags.lambda_list)
        write_csv(out_dir / "proxy_bias.csv", ["lambda", "bias"], curve.rows)
        summary["proxy_bias"] = {"slope": curve.slope}
    return summary


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------
def _seed_dir(out_dir: Path, seeds: Sequence[int], seed: int) -> Path:
    return out_dir if len(seeds) == 1 else out_dir / f"seed_{seed}"


def run_experiment(config: ExperimentConfig, out_dir: Optional[Path] = None) -> Path:
    out_dir = Path(out_dir if out_dir is not None else config.output_dir)
    if config.experiment == "hexagon":
        write_hexagon_artifacts(out_dir, config.hexagon.to_config())
        return out_dir
    for seed in config.seeds:
        run_single(config, seed, _seed_dir(out_dir, config.seeds, seed))
    return out_dir


def run_single(config: ExperimentConfig, seed: int, out_dir: Path) -> bmfo.RunTrace:
    problem = build_problem(config, seed)
    schedule = build_schedule(config, problem)
    trace = bmfo.run(
        problem.bp, schedule, problem.x0, K=config.K, f_grad_source=problem.f_grad_source, projection=problem.projection,
    )
    write_trace(out_dir, trace, problem, config, seed)
    summary: Dict[str, object] = {
        "experiment": config.experiment,
        "seed": seed,
        "K": trace.K,
        "final_x_norm": float(np.linalg.norm(trace.final.x)),
        "final_lambda": trace.final.lam,
        "guard_activations": trace.guard_activations,
        "schedule": {"kind": schedule.kind, "alpha0": schedule.alpha0, "gamma0": schedule.gamma0,
                     "lambda0": schedule.lambda0, "k0": schedule.k0, "xi": schedule.xi, "T": schedule.T},
    }
    summary.update(run_diagnostics(out_dir, config.diagnostics, trace, problem, schedule))
    if problem.toll_instance is not None and config.toll.reference_pool:
        pool = reference_pool_for(config, problem, schedule)
        F_final = toll.original_objective(problem.instance, trace.final.x)
        summary["toll"] = {
            "F_orig_final": F_final,
            "F_ref": pool.F_ref,
            "reference_source": pool.best_source,
            "pool": pool.entries,
            "normalized_gap": toll.normalized_gap(F_final, pool.F_ref),
        }
    write_json(out_dir / "summary.json", summary)
    return trace


def reference_pool_for(config: ExperimentConfig, problem: Problem, schedule: bmfo.Schedule) -> toll.ReferencePool:
    extra = {}
    if config.toll.long_run_factor > 0 and config.K > 0:
        long_run = bmfo.run(
            problem.bp, schedule, problem.x0, K=config.toll.long_run_factor * config.K,
            projection=problem.projection or toll.DEFAULT_TOLL_BOX,
        )
        extra["bmfo-long"] = long_run.final.x
    return toll.build_reference_pool(
        problem.toll_instance,
        instance=problem.instance,
        test_budget=max(config.K, 1),
        hypergradient_iterations=config.toll.hypergradient_iterations,
        mu_schedule=(1e-2, problem.bp.mu) if problem.bp.mu < 1e-2 else (problem.bp.mu,),
        extra_points=extra,
    )


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------
def diagnose_trace(trace_path: Path, out_dir: Optional[Path] = None, flags: Optional[DiagnosticsFlags] = None) -> Dict[str, object]:
    config, seed, trace = load_trace(trace_path)
    out_dir = Path(out_dir) if out_dir is not None else Path(trace_path).parent
    problem = build_problem(config, seed)
    schedule = build_schedule(config, problem)
    summary = run_diagnostics(out_dir, flags or config.diagnostics, trace, problem, schedule)
    write_json(out_dir / "diagnostics.json", summary)
    return summary


# ---------------------------------------------------------------------------
# hexagon
# ---------------------------------------------------------------------------
def _hexagon_rows(rows: Sequence[hexagon.HexagonRow]) -> List[list]:
    return [[r.k, r.x, r.z[0], r.z[1], r.err, r.psi_gap, r.f_value, r.guard] for r in rows]


def write_hexagon_artifacts(out_dir: Path, cfg: hexagon.HexagonConfig) -> hexagon.HexagonComparison:
    result = hexagon.run_hexagon_comparison(cfg)
    write_csv(out_dir / "trace.csv", HEXAGON_HEADER, _hexagon_rows(result.barrier_rows))
    write_csv(out_dir / "euclidean_trace.csv", HEXAGON_HEADER, _hexagon_rows(result.euclidean_rows))
    write_csv(out_dir / "tube_report.csv", ["k", "exact_err", "proxy_err"], [(r.k, r.exact_err, None) for r in result.barrier_tube.rows])
    write_csv(
        out_dir / "euclidean_tube_report.csv",
        ["k", "exact_err", "proxy_err"],
        [(r.k, r.exact_err, None) for r in result.euclidean_tube.rows],
    )
    write_json(
        out_dir / "summary.json",
        {
            "gamma_crit0": result.gamma_crit0,
            "gamma_euclidean": result.gamma_euclidean,
            "eta": cfg.eta,
            "barrier": {
                "max_err": result.barrier_tube.max_exact_err,
                "first_exit_index": result.barrier_tube.first_exit_index,
                "guard_activations": result.barrier_guard_activations,
            },
            "euclidean": {
                "max_err": result.euclidean_tube.max_exact_err,
                "first_exit_index": result.euclidean_tube.first_exit_index,
                "guard_activations": sum(r.guard for r in result.euclidean_rows),
            },
        },
    )
    return result


def write_interior_stability(out_dir: Path, cfg: hexagon.HexagonConfig, sweeps: int = 40) -> hexagon.InteriorStability:
    result = hexagon.run_interior_stability(cfg, sweeps=sweeps)
    write_csv(
        out_dir / "interior_stability.csv",
        ["sweep", "barrier_err", "barrier_gap", "euclidean_err", "euclidean_gap"],
        [(r.sweep, r.barrier_err, r.barrier_gap, r.euclidean_err, r.euclidean_gap) for r in result.rows],
    )
    return result


# ---------------------------------------------------------------------------
# bench-toll
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BenchCell:
    config_json: str
    n: int
    seed: int
    tau: float
    iterations: int
    budget_ms: Optional[float]


def run_bench_cell(cell: BenchCell) -> list:
    """One (n, seed, tau) cell; numerical failures become a solver_failure row."""
    config = ExperimentConfig.model_validate_json(cell.config_json)
    config = config.model_copy(update={"toll": config.toll.model_copy(update={"n": cell.n, "tau": cell.tau}), "K": cell.iterations})
    budget_s = None if cell.budget_ms is None else cell.budget_ms / 1000.0
    try:
        problem = build_problem(config, cell.seed)
        schedule = build_schedule(config, problem)
        started = time.monotonic()
        trace = bmfo.run(
            problem.bp, schedule, problem.x0, K=cell.iterations,
            projection=problem.projection or toll.DEFAULT_TOLL_BOX, budget_s=budget_s,
        )
        elapsed = time.monotonic() - started
        completed = trace.K
        status = "budget_censored" if trace.budget_exhausted else "ok"
        gap = None
        if config.toll.reference_pool:
            pool = reference_pool_for(config, problem, schedule)
            gap = toll.toll_normalized_gap(problem.toll_instance, trace.final.x, pool.F_ref, instance=problem.instance)
    except NumericalError as exc:
        logger.warning("bench cell n=%d seed=%d tau=%g failed: %s", cell.n, cell.seed, cell.tau, exc)
        return [cell.n, cell.seed, cell.tau, "bmfo", 0, None, None, None, "solver_failure"]
    if status == "budget_censored":
        logger.warning("bench cell n=%d seed=%d tau=%g censored after %d updates", cell.n, cell.seed, cell.tau, completed)
    return [
        cell.n, cell.seed, cell.tau, "bmfo", completed, gap, 1000.0 * elapsed,
        elapsed / completed if completed else None, status,
    ]


def bench_toll(
    config: ExperimentConfig,
    n_list: Sequence[int],
    seeds: Sequence[int],
    tau: float,
    out_dir: Path,
    iterations: Optional[int] = None,
    budget_ms: Optional[float] = None,
    parallel: int = 1,
) -> List[list]:
    """Runs every (n, seed) cell and writes bench_toll.csv sorted by (n, seed, tau)."""
    if config.experiment != "toll":
        raise InvalidConfig("bench-toll needs a toll experiment config")
    payload = config.model_dump_json()
    cells = [
        BenchCell(payload, int(n), int(seed), float(tau), iterations if iterations is not None else config.K, budget_ms)
        for n in n_list
        for seed in seeds
    ]
    logger.info("bench-toll: %d cells, parallel=%d", len(cells), parallel)
    if parallel > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(run_bench_cell, cells))
    else:
        rows = [run_bench_cell(cell) for cell in cells]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    write_csv(Path(out_dir) / "bench_toll.csv", BENCH_HEADER, rows)
    return rows
