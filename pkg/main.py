"""
main.py - Command-line entry point for stitlab

Subcommands:
- simulate: run replications of one construction and write trajectories,
  final states, a summary CSV and a manifest
- compare: cross-check summary CSVs (and oracle reports) with the test kit
- render: SVG of a stored 2D trajectory at a given time
- oracle: cell-count law at time t from the embedded division chain
- bench: proposals per jump of every construction as cells accumulate

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
input, 3 failed statistical comparison.
"""

import os
import sys
import time
import argparse
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

# Try to load .env file if available
try:
    from dotenv import load_dotenv
    load_dotenv()  # STITLAB_LOG may be set there
except ImportError:
    pass

from rich.console import Console
from rich.table import Table

import stitlab
from stitlab.construct import SimConfig, Trajectory, simulate, state_at
from stitlab.oracle import (
    MIN_SAMPLES,
    exhaustive_count_prob,
    marginal_count_prob,
    merge_estimates,
)
from stitlab.stats import (
    DEFAULT_ALPHA,
    EmpiricalSummary,
    TestReport,
    benchmark_proposals,
    chi_square_two_sample,
    ks_two_sample,
    mean_ratio_by_cells,
    z_test,
)
from utils import ConfigError, InsufficientData, OutOfRange, RunResult, StitError, TooLarge, configure_logging
from utils.records import (
    RunManifest,
    csv_column,
    load_config,
    read_csv,
    read_json,
    read_jsonl,
    write_csv,
    write_json,
    write_jsonl,
)
from utils.svg_render import write_svg

logger = logging.getLogger("stitlab")

console = Console()
error_console = Console(stderr=True)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2
EXIT_FAILED_TEST = 3

SUMMARY_FIELDS = ["replication", "seed", "construction", "t_end", "n_cells", "n_jumps",
                  "zeta_final", "proposal_count", "boundary_length"]
TIMING_FIELDS = ["replication", "wall_time_ns"]

# Oracle samples are split into fixed batches so results do not depend on --jobs.
ORACLE_BATCH = 5000
BENCH_EDGES = [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 10 ** 9]


def report_error(message: str) -> None:
    error_console.print(message, style="bold red", markup=False, highlight=False)


def default_jobs() -> int:
    return os.cpu_count() or 1


def _run_replication(cfg: SimConfig, replication: int) -> RunResult:
    """Simulate one replication; the outcome travels back by value."""
    start = time.perf_counter_ns()
    try:
        traj = simulate(cfg, replication)
    except Exception as e:
        logger.error(f"Replication {replication} failed: {type(e).__name__}: {e}")
        return RunResult.from_exception(e, replication=replication)
    elapsed = time.perf_counter_ns() - start
    final = traj.final
    summary = {
        "replication": replication,
        "seed": cfg.seed,
        "construction": cfg.construction.value,
        "t_end": cfg.t_end,
        "n_cells": final.n_cells,
        "n_jumps": traj.n_jumps,
        "zeta_final": final.zeta,
        "proposal_count": traj.proposal_count,
        "boundary_length": final.total_boundary_length(),
    }
    return RunResult.success_result({
        "summary": summary,
        "header": traj.header(),
        "jumps": [r.to_dict() for r in traj.history],
        "final": final.to_dict(),
        "wall_time_ns": elapsed,
    }, replication=replication)


def _map_ordered(fn, items: Sequence[Any], jobs: int) -> List[Any]:
    """fn over items in order; a process pool when jobs > 1."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(*item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as executor:
        return list(executor.map(fn, *zip(*items)))


def _resolve_config(config_path: str, seed: Optional[int]) -> SimConfig:
    """Load a config or a manifest written by a previous simulate run."""
    data = load_config(config_path)
    if RunManifest.is_manifest(data):
        manifest = RunManifest.from_dict(data)
        if not manifest.config:
            raise ConfigError("config", f"manifest {config_path} carries no embedded config")
        data = dict(manifest.config)
        data.setdefault("seed", manifest.seed)
    if seed is not None:
        data = dict(data)
        data["seed"] = seed
    return SimConfig.from_dict(data)


def cmd_simulate(config_path: str, out_dir: str, seed: Optional[int] = None,
                 jobs: Optional[int] = None) -> int:
    cfg = _resolve_config(config_path, seed)
    os.makedirs(out_dir, exist_ok=True)
    jobs = jobs or default_jobs()
    logger.info(f"Simulating {cfg.replications} replication(s) of {cfg.construction.value} with {jobs} job(s)")

    results = _map_ordered(_run_replication, [(cfg, i) for i in range(cfg.replications)], jobs)

    outputs: List[str] = []
    summaries: List[Dict[str, Any]] = []
    timings: List[Dict[str, Any]] = []
    failures = [r for r in results if not r.success]
    for i, result in enumerate(results):
        if not result.success:
            continue
        value = result.value
        traj_name, final_name = f"traj_{i}.jsonl", f"final_{i}.json"
        write_jsonl(os.path.join(out_dir, traj_name), value["header"], value["jumps"])
        write_json(os.path.join(out_dir, final_name), value["final"])
        outputs += [traj_name, final_name]
        summaries.append(value["summary"])
        timings.append({"replication": i, "wall_time_ns": value["wall_time_ns"]})

    write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_FIELDS, summaries)
    write_csv(os.path.join(out_dir, "timings.csv"), TIMING_FIELDS, timings)
    outputs += ["summary.csv", "timings.csv"]
    manifest = RunManifest(cfg.config_hash(), cfg.seed, stitlab.__version__, outputs, cfg.to_dict())
    write_json(os.path.join(out_dir, "manifest.json"), manifest.to_dict())

    table = Table(title=f"{cfg.construction.value} simulation, t_end={cfg.t_end:g}")
    table.add_column("replications", justify="right")
    table.add_column("failed", justify="right")
    table.add_column("mean cells", justify="right")
    table.add_column("mean jumps", justify="right")
    table.add_column("mean proposals/jump", justify="right")
    n_jumps = sum(s["n_jumps"] for s in summaries)
    table.add_row(
        str(len(results)),
        str(len(failures)),
        f"{np.mean([s['n_cells'] for s in summaries]):.3f}" if summaries else "-",
        f"{n_jumps / len(summaries):.3f}" if summaries else "-",
        f"{sum(s['proposal_count'] for s in summaries) / n_jumps:.3f}" if n_jumps else "-",
    )
    console.print(table)
    console.print(f"Outputs written to {out_dir} (config hash {manifest.config_hash[:12]})")

    for failure in failures:
        report_error(f"replication {failure.metadata.get('replication')}: {failure.error_message}")
    return EXIT_RUNTIME if failures else EXIT_OK


def _load_compare_input(path: str) -> Tuple[str, Any]:
    """('summary', rows) for a run directory or CSV, ('oracle', report) for oracle JSON."""
    if os.path.isdir(path):
        path = os.path.join(path, "summary.csv")
    if path.endswith(".json"):
        data = read_json(path)
        if not isinstance(data, dict) or data.get("kind") != "oracle":
            raise ConfigError("inputs", f"{path} is not an oracle report")
        return "oracle", data
    rows = read_csv(path)
    if not rows:
        raise InsufficientData(f"{path} has no replications")
    return "summary", rows


def _summary_tests(name_a: str, a: List[Dict[str, str]], name_b: str, b: List[Dict[str, str]],
                   alpha: float) -> List[TestReport]:
    reports = []
    checks = [
        ("cell count", lambda: chi_square_two_sample(
            EmpiricalSummary.from_values(csv_column(a, "n_cells", int)),
            EmpiricalSummary.from_values(csv_column(b, "n_cells", int)), alpha=alpha)),
        ("boundary length", lambda: ks_two_sample(
            csv_column(a, "boundary_length"), csv_column(b, "boundary_length"), alpha)),
    ]
    for label, run in checks:
        try:
            report = run()
        except InsufficientData as e:
            logger.warning(f"Skipped {label} test of {name_a} vs {name_b}: {e}")
            continue
        report.name = f"{label}: {name_a} vs {name_b}"
        reports.append(report)
    return reports


def _oracle_tests(oracle_name: str, oracle: Dict[str, Any], sim_name: str,
                  rows: List[Dict[str, str]], alpha: float) -> List[TestReport]:
    """z-test of every oracle row against the simulated frequency of k+1 cells.

    The simulator standard error is the binomial one under the oracle value.
    """
    t_values = set(csv_column(rows, "t_end"))
    if t_values != {float(oracle["t"])}:
        logger.warning(f"{sim_name} was simulated to t_end={sorted(t_values)}, "
                       f"{oracle_name} evaluates t={oracle['t']}")
    cells = np.array(csv_column(rows, "n_cells", int))
    n = cells.size
    reports = []
    for row in oracle["rows"]:
        k, estimate, se = int(row["k"]), float(row["estimate"]), float(row["std_error"])
        frequency = float(np.mean(cells == k + 1))
        p = min(max(estimate, 0.0), 1.0)
        report = z_test(estimate, se, frequency, math.sqrt(p * (1.0 - p) / n), alpha)
        report.name = f"P(cells={k + 1}): {oracle_name} vs {sim_name}"
        report.details.update({"k": k, "n": n})
        reports.append(report)
    return reports


def cmd_compare(inputs: Sequence[str], out_path: Optional[str] = None,
                alpha: float = DEFAULT_ALPHA) -> int:
    if len(inputs) < 2:
        raise ConfigError("inputs", "compare needs at least two inputs")
    loaded = [(path, *_load_compare_input(path)) for path in inputs]
    summaries = [(p, data) for p, kind, data in loaded if kind == "summary"]
    oracles = [(p, data) for p, kind, data in loaded if kind == "oracle"]
    if not summaries:
        raise ConfigError("inputs", "compare needs at least one simulation summary")

    reports: List[TestReport] = []
    for i in range(len(summaries)):
        for j in range(i + 1, len(summaries)):
            reports += _summary_tests(summaries[i][0], summaries[i][1], summaries[j][0], summaries[j][1], alpha)
    for oracle_path, oracle in oracles:
        for sim_path, rows in summaries:
            reports += _oracle_tests(oracle_path, oracle, sim_path, rows, alpha)

    passed = all(r.passed for r in reports)
    table = Table(title=f"Comparison at alpha={alpha:g}")
    table.add_column("test")
    table.add_column("kind")
    table.add_column("statistic", justify="right")
    table.add_column("p-value", justify="right")
    table.add_column("result")
    for r in reports:
        table.add_row(r.name, r.kind.value, f"{r.statistic:.4g}", f"{r.p_value:.4g}",
                      "[green]pass[/green]" if r.passed else "[red]FAIL[/red]")
    console.print(table)

    if out_path:
        write_json(out_path, {"alpha": alpha, "pass": passed, "reports": [r.to_dict() for r in reports]})
    if not passed:
        failed = [r.name for r in reports if not r.passed]
        report_error(f"{len(failed)} test(s) failed: {'; '.join(failed)}")
        return EXIT_FAILED_TEST
    return EXIT_OK


def cmd_render(traj_path: str, t: Optional[float], svg_path: str) -> int:
    header, jumps = read_jsonl(traj_path)
    if "vertices" not in header["window"]:
        report_error(f"window: {traj_path} holds a 1-dimensional trajectory; only planar ones render")
        return EXIT_INVALID
    traj = Trajectory.from_records(header, jumps)
    if t is None:
        t = traj.t_end if math.isfinite(traj.t_end) else traj.final.last_time
    tess = state_at(traj, t)
    write_svg(svg_path, tess)
    console.print(f"Rendered {tess.n_cells} cell(s) at t={t:g} to {svg_path}")
    return EXIT_OK


def _oracle_batch(cfg: SimConfig, t: float, k: int, n_samples: int, batch: int) -> Tuple[float, float, int]:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, k, batch]))
    estimate, se = marginal_count_prob(cfg.window, cfg.measure, t, k, n_samples, rng)
    return estimate, se, n_samples


def cmd_oracle(config_path: str, k_max: int, n_samples: int, out_path: Optional[str] = None,
               t: Optional[float] = None, seed: Optional[int] = None, jobs: Optional[int] = None,
               exhaustive: bool = False) -> int:
    cfg = _resolve_config(config_path, seed)
    t = cfg.t_end if t is None else t
    if not (math.isfinite(t) and t > 0):
        raise ConfigError("t", f"oracle needs a finite positive time, got {t}")
    if n_samples < MIN_SAMPLES:
        raise OutOfRange(f"samples must be at least {MIN_SAMPLES}, got {n_samples}")
    jobs = jobs or default_jobs()

    n_batches = max(1, n_samples // ORACLE_BATCH)
    sizes = [n_samples // n_batches + (1 if b < n_samples % n_batches else 0) for b in range(n_batches)]
    rows = []
    for k in range(k_max + 1):
        parts = _map_ordered(_oracle_batch, [(cfg, t, k, size, b) for b, size in enumerate(sizes)], jobs)
        estimate, se, n = merge_estimates(parts)
        row = {"k": k, "estimate": estimate, "std_error": se, "n_samples": n}
        if exhaustive and k <= 3:
            row["exhaustive"] = exhaustive_count_prob(cfg.window, cfg.measure, t, k)
        rows.append(row)
        logger.info(f"Oracle k={k}: {estimate:.6g} +- {row['std_error']:.2g}")

    table = Table(title=f"P(#cells = k+1 at t={t:g})")
    table.add_column("k", justify="right")
    table.add_column("estimate", justify="right")
    table.add_column("std error", justify="right")
    if exhaustive:
        table.add_column("exhaustive", justify="right")
    for row in rows:
        cells = [str(row["k"]), f"{row['estimate']:.6f}", f"{row['std_error']:.2e}"]
        if exhaustive:
            cells.append(f"{row['exhaustive']:.6f}" if "exhaustive" in row else "-")
        table.add_row(*cells)
    console.print(table)
    console.print(f"Sum of estimates: {sum(r['estimate'] for r in rows):.6f}")

    if out_path:
        write_json(out_path, {"kind": "oracle", "t": t, "seed": cfg.seed,
                              "config_hash": cfg.config_hash(), "rows": rows})
    return EXIT_OK


def cmd_bench(config_path: str, out_path: Optional[str] = None, seed: Optional[int] = None) -> int:
    cfg = _resolve_config(config_path, seed)
    rows = benchmark_proposals(cfg)

    table = Table(title="Proposals per jump by number of cells")
    table.add_column("construction")
    for lo, hi in zip(BENCH_EDGES, BENCH_EDGES[1:]):
        table.add_column(f"{lo}+" if hi >= 10 ** 9 else f"{lo}-{hi - 1}", justify="right")
    for construction in sorted({r["construction"] for r in rows}):
        ratios = mean_ratio_by_cells(rows, construction, BENCH_EDGES)
        table.add_row(construction, *("-" if math.isnan(x) else f"{x:.2f}" for x in ratios))
    console.print(table)

    if out_path:
        write_json(out_path, {"kind": "bench", "config_hash": cfg.config_hash(), "rows": rows})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stitlab", description="Simulate and cross-validate STIT tessellations")
    parser.add_argument("--log-level", help="Log level (overrides STITLAB_LOG)", type=str)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Run replications of one construction")
    p.add_argument("--config", required=True, help="JSON config or a manifest.json to replay")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--seed", type=int, help="Override the config seed")
    p.add_argument("--jobs", type=int, help="Parallel workers (default: available cores)")

    p = sub.add_parser("compare", help="Cross-check simulation summaries and oracle reports")
    p.add_argument("inputs", nargs="+", help="Run directories, summary CSVs or oracle JSON reports")
    p.add_argument("--out", help="TestReport JSON path")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="Significance level")

    p = sub.add_parser("render", help="SVG of a stored 2D trajectory")
    p.add_argument("--traj", required=True, help="traj_<i>.jsonl written by simulate")
    p.add_argument("--t", type=float, help="Time to render (default: t_end)")
    p.add_argument("--out", required=True, help="SVG path")

    p = sub.add_parser("oracle", help="Cell-count law at time t without simulating jump times")
    p.add_argument("--config", required=True)
    p.add_argument("--k-max", type=int, default=5)
    p.add_argument("--samples", type=int, default=10 ** 4)
    p.add_argument("--t", type=float, help="Evaluation time (default: the config's t_end)")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--exhaustive", action="store_true",
                   help="Also sum over all genealogies for k <= 3 (discrete theta)")
    p.add_argument("--out", help="Report JSON path")

    p = sub.add_parser("bench", help="Proposals per jump of every construction")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="Table JSON path")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out, args.seed, args.jobs)
        if args.command == "compare":
            return cmd_compare(args.inputs, args.out, args.alpha)
        if args.command == "render":
            return cmd_render(args.traj, args.t, args.out)
        if args.command == "oracle":
            return cmd_oracle(args.config, args.k_max, args.samples, args.out,
                              args.t, args.seed, args.jobs, args.exhaustive)
        if args.command == "bench":
            return cmd_bench(args.config, args.out, args.seed)
    except (ConfigError, OutOfRange, TooLarge) as e:
        report_error(f"Invalid input: {e}")
        return EXIT_INVALID
    except (StitError, OSError, ValueError, KeyError) as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        report_error(f"Error: {type(e).__name__}: {e}")
        return EXIT_RUNTIME
    parser.error(f"unknown command {args.command}")
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
