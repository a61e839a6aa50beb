"""
Command-line interface for the lipirm package.

This module provides the ``lipirm`` commands: generating benchmark data,
training methods over seeds, evaluating the closed-form theory, running the
acceptance oracles and summarizing persisted runs.
"""

import argparse
import logging
import sys
import traceback
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from tqdm import tqdm

from .benchmark import BenchmarkError, generate_benchmark, list_benchmarks
from .benchmarks.regression_1d import theory_setting
from .bvp import greens_function
from .config import get_config
from .data import DataError, write_domain_csv
from .grid import Grid1D, GridError
from .oracles import VERDICT_FIELDS, OracleError, list_checks, run_checks
from .penalties import PenaltyError, PenaltyScheme, scheme_rows
from .rng import derive_seed
from .runs import (
    RunStoreError,
    RunWriter,
    append_leaderboard,
    config_hash,
    find_leaderboard,
    read_leaderboard,
    write_csv,
)
from .schemas import (
    ConfigError,
    ExperimentConfig,
    defaults_reference,
    load_experiment_config,
    parse_config,
)
from .stats import StatsError, describe, welch_t_test
from .theory import TheoryError, companion_lambda, theorem1_risk
from .trainer import TrainingError, primary_metric, train

logger = logging.getLogger(__name__)

# errors reported as "❌ Error: ..." with exit code 1
DOMAIN_ERRORS = (
    BenchmarkError,
    ConfigError,
    DataError,
    GridError,
    OracleError,
    PenaltyError,
    RunStoreError,
    StatsError,
    TheoryError,
    TrainingError,
)


def setup_logging(verbosity: int) -> None:
    """
    Configure logging based on verbosity level.

    Parameters
    ----------
    verbosity : int
        Verbosity level (0=WARNING, 1=INFO, 2+=DEBUG)
    """
    if verbosity == 0:
        level = logging.WARNING
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = logging.DEBUG

    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )


def parse_seeds(text: str) -> List[int]:
    """
    Parse a seed list such as ``"0-9"``, ``"1,3,5"`` or ``"0-4,10"``.

    Raises
    ------
    ConfigError
        If a part is not an integer or an ascending range.
    """
    seeds: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                start, end = (int(p) for p in part.split("-", 1))
                if end < start:
                    raise ValueError(f"descending range {part}")
                seeds.extend(range(start, end + 1))
            else:
                seeds.append(int(part))
        except ValueError as e:
            raise ConfigError(f"Invalid --seeds value '{text}': {str(e)}") from e
    return seeds


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """
    Resolve the experiment configuration of a command.

    The file given with ``--config`` (or the defaults) is overridden by the
    command-line flags and validated again as a whole.
    """
    config = load_experiment_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    raw = config.model_dump(by_alias=True, mode="json")
    if getattr(args, "methods", None):
        raw["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if getattr(args, "seeds", None):
        raw["seeds"] = parse_seeds(args.seeds)
    if getattr(args, "jobs", None):
        raw["jobs"] = args.jobs
    if getattr(args, "master_seed", None) is not None:
        raw["master_seed"] = args.master_seed
    if getattr(args, "benchmark", None):
        raw["benchmark"] = {"name": args.benchmark, "params": {}}
    if getattr(args, "setting", None):
        raw["benchmark"]["params"]["preset"] = args.setting
    for item in getattr(args, "param", None) or []:
        key, _, value = item.partition("=")
        if not value:
            raise ConfigError(f"Invalid --param '{item}', expected KEY=VALUE")
        raw["benchmark"]["params"][key.strip()] = _parse_value(value.strip())
    return parse_config(raw, ExperimentConfig, source=getattr(args, "config", None) or "command line")


def _parse_value(text: str) -> Any:
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def output_root(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    """``--out``, then ``output_dir`` of the config, then LIPIRM_OUTPUT_DIR."""
    return Path(args.out or config.output_dir or get_config().output_dir)


def setting_label(config: ExperimentConfig) -> str:
    preset = config.benchmark.params.get("preset")
    return f"{config.benchmark.name}:{preset}" if preset else config.benchmark.name


def _progress(total: int, desc: str, unit: str) -> tqdm:
    return tqdm(total=total, desc=desc, unit=unit, disable=not get_config().show_progress)


def _report_error(e: Exception, args: argparse.Namespace, expected: bool) -> int:
    if expected:
        print(f"\n❌ Error: {e}", file=sys.stderr)
    else:
        print(f"\n❌ Unexpected error: {e}", file=sys.stderr)
        if getattr(args, "verbose", 0):
            traceback.print_exc()
    return 1


def gen_command(args: argparse.Namespace) -> int:
    """
    Generate one benchmark instance and write its splits as CSV.

    Parameters
    ----------
    args : argparse.Namespace
        Command-line arguments containing:
        - config: optional experiment file supplying ``benchmark``
        - benchmark: benchmark id overriding the config
        - param: ``KEY=VALUE`` generator parameters
        - seed: generator seed
        - out: parent output directory
        - list: list the registered benchmarks and exit

    Returns
    -------
    int
        Exit code (0 for success, non-zero for failure)
    """
    if args.list:
        print("Available benchmarks:")
        print("=" * 70)
        for meta in list_benchmarks():
            print(f"\n📦 {meta['name']} ({meta['task']})")
            print(f"   {meta['description']}")
        print("\n" + "=" * 70)
        return 0

    try:
        config = load_config(args)
        seed = args.seed if args.seed is not None else get_config().seed
        name = args.name or f"gen-{config.benchmark.name}-seed{seed}"
        out = output_root(args, config)

        print("LipIRM Benchmark Generator")
        print("=" * 70)
        print(f"Benchmark: {setting_label(config)}")
        print(f"Seed:      {seed}")
        print(f"Output:    {out / name}")
        print("=" * 70)

        bundle = generate_benchmark(config.benchmark.name, config.benchmark.params, seed=seed)
        with RunWriter(out, name, config=config.benchmark) as run:
            for split, domains in bundle.splits().items():
                write_domain_csv(domains, run.path(f"{split}.csv"))
                print(f"✅ {split}: {len(domains)} domain(s), {sum(d.n for d in domains):,} samples")
            run.write_json("metadata.json", {"task": bundle.task, **bundle.metadata})
        print(f"\n💾 Dataset saved to: {out / name}")
        return 0
    except DOMAIN_ERRORS as e:
        return _report_error(e, args, expected=True)
    except Exception as e:
        return _report_error(e, args, expected=False)


def train_command(args: argparse.Namespace) -> int:
    """
    Train every (method, seed) cell of an experiment and persist the runs.

    Each seed gets its own benchmark draw (seeded by ``(master_seed, "data",
    seed)``) shared by all methods. The run directory holds ``runs/*.json``
    records, per-run ``penalties/*.csv`` weight tables and a
    ``leaderboard.csv`` with the headline metric of every cell.

    Parameters
    ----------
    args : argparse.Namespace
        Command-line arguments containing:
        - config: experiment file
        - methods, seeds, setting, jobs: overrides of the config
        - out, name: output location

    Returns
    -------
    int
        Exit code (0 for success, non-zero for failure)
    """
    try:
        config = load_config(args)
        out = output_root(args, config)
        name = args.name or f"train-{config.benchmark.name}-{config_hash(config)[:8]}"
        label = setting_label(config)

        print("LipIRM Training")
        print("=" * 70)
        print(f"Benchmark: {label}")
        print(f"Methods:   {', '.join(config.methods)}")
        print(f"Seeds:     {config.seeds}")
        print(f"Jobs:      {config.jobs}")
        print(f"Output:    {out / name}")
        print("=" * 70)

        bundles = {}
        for seed in config.seeds:
            data_seed = derive_seed(config.master_seed, "data", seed)
            bundles[seed] = generate_benchmark(config.benchmark.name, config.benchmark.params, seed=data_seed)

        cells = [(method, seed) for method in config.methods for seed in config.seeds]
        print(f"\n🚀 Training {len(cells)} run(s)...")

        def run_cell(cell: Tuple[str, int]):
            method, seed = cell
            return train(
                method,
                bundles[seed],
                config.rpo,
                seed=seed,
                master_seed=config.master_seed,
                penalties=config.penalties,
            )

        results = {}
        with _progress(len(cells), "Training", "run") as pbar:
            with ThreadPoolExecutor(max_workers=config.jobs) as executor:
                futures = {executor.submit(run_cell, cell): cell for cell in cells}
                for future in as_completed(futures):
                    results[futures[future]] = future.result()
                    pbar.update(1)

        with RunWriter(out, name, config=config) as run:
            rows = []
            for method, seed in cells:
                result = results[(method, seed)]
                record = result.to_dict()
                record["setting"] = label
                run.write_json(f"runs/{method}-seed{seed}.json", record)
                run.write_csv(f"penalties/{method}-seed{seed}.csv", scheme_rows(result.scheme), ["kind", "key", "value"])
                metric, value = primary_metric(result.metrics, bundles[seed].task)
                rows.append({"method": method, "seed": seed, "setting": label, "metric": metric, "value": value})
            append_leaderboard(run.path("leaderboard.csv"), rows)
            run.extra_manifest = {"command": "train", "master_seed": config.master_seed}

        print(f"\n✅ Completed {len(cells)} run(s)")
        _print_summary(rows, config.reference_method)
        print(f"\n💾 Runs saved to: {out / name}")
        return 0
    except DOMAIN_ERRORS as e:
        return _report_error(e, args, expected=True)
    except Exception as e:
        return _report_error(e, args, expected=False)


def theory_command(args: argparse.Namespace) -> int:
    """
    Evaluate the closed-form risk of a uniform scheme on a 1-D setting.

    Without an explicit λ the companion optimum for the given η and ρ is
    used. Writes ``report.json``, node tables of bias² and variance, the
    Green's function slices and the scheme.

    Returns
    -------
    int
        Exit code (0 for success, non-zero for failure)
    """
    try:
        config = load_config(args)
        theory = config.theory
        if args.lam is not None:
            theory = theory.model_copy(update={"lambda_": args.lam})
        grid = Grid1D(theory.n_grid)
        setting = theory_setting(theory.setting, grid)
        domains = setting.domains
        scheme = PenaltyScheme(
            lambda_=theory.lambda_ or 1.0,
            eta={e: theory.eta for e in domains},
            rho={0: theory.rho},
        )
        if theory.lambda_ is None:
            scheme = scheme.model_copy(update={"lambda_": companion_lambda(setting, scheme)})

        out = output_root(args, config)
        name = args.name or f"theory-{config_hash(theory)[:8]}"
        print("LipIRM Theory")
        print("=" * 70)
        print(f"Truth:   {theory.setting.truth} + {theory.setting.offset}")
        print(f"Domains: {len(domains)}  (N = {[setting.domain_sizes[e] for e in domains]})")
        print(f"Grid:    {theory.n_grid} nodes")
        print(f"Lambda:  {scheme.lambda_:.6g}{' (companion optimum)' if theory.lambda_ is None else ''}")
        print("=" * 70)

        report = theorem1_risk(setting, scheme)
        rho = setting.rho_field(scheme).values
        green = greens_function(scheme.lambda_, setting.r, rho, grid, method=theory.green_method)
        columns = sorted({int(round(t * (grid.n_grid - 1))) for t in theory.green_slices})

        with RunWriter(out, name, config=theory) as run:
            run.write_json("report.json", report.to_dict())
            report.to_csv(run.path("nodes.csv"))
            green.to_csv(run.path("green.csv"), columns)
            run.write_json("scheme.json", scheme)
            run.write_csv("penalties.csv", scheme_rows(scheme), ["kind", "key", "value"])
            run.extra_manifest = {"command": "theory"}

        print(f"\n📊 Expected risk: {report.risk:.6g}")
        print(f"   Integrated bias²:   {grid.integrate(report.bias2):.6g}")
        print(f"   Integrated variance: {grid.integrate(report.variance):.6g}")
        for e, value in sorted(report.a_e.items()):
            print(f"   A_{e} = {value:.6g}")
        print(f"\n💾 Report saved to: {out / name}")
        return 0
    except DOMAIN_ERRORS as e:
        return _report_error(e, args, expected=True)
    except Exception as e:
        return _report_error(e, args, expected=False)


def oracle_command(args: argparse.Namespace) -> int:
    """
    Run acceptance oracles and write their verdicts.

    Returns
    -------
    int
        0 when every selected check passes, 1 otherwise.
    """
    if args.list:
        print("Available oracle checks:")
        print("=" * 70)
        for check in list_checks():
            print(f"\n🔬 {check.name}{' (slow)' if check.slow else ''}")
            print(f"   {check.description}")
        print("\n" + "=" * 70)
        return 0

    try:
        config = load_config(args)
        oracle = config.oracle
        if args.quick:
            oracle = oracle.model_copy(update={"quick": True})
        names = args.check or oracle.checks
        out = output_root(args, config)
        name = args.name or "oracle" + ("-quick" if oracle.quick else "")

        selected = [c.name for c in list_checks(include_slow=not args.skip_slow)] if not names else names
        print("LipIRM Oracles")
        print("=" * 70)
        print(f"Checks: {', '.join(selected)}")
        print(f"Mode:   {'quick' if oracle.quick else 'full'}")
        print(f"Output: {out / name}")
        print("=" * 70)

        with _progress(len(selected), "Oracles", "check") as pbar:
            verdicts = run_checks(
                selected,
                oracle,
                master_seed=config.master_seed,
                jobs=config.jobs,
                on_verdict=lambda _: pbar.update(1),
            )

        with RunWriter(out, name, config=oracle) as run:
            run.write_csv("verdicts.csv", [v.to_row() for v in verdicts], VERDICT_FIELDS)
            for verdict in verdicts:
                for table, rows in verdict.tables.items():
                    if rows:
                        header = list(rows[0].keys())
                        run.write_csv(f"tables/{verdict.name}/{table}.csv", [[r[h] for h in header] for r in rows], header)
            run.extra_manifest = {"command": "oracle", "master_seed": config.master_seed}

        print()
        for verdict in verdicts:
            icon = "✅" if verdict.passed else "❌"
            print(f"{icon} {verdict.name}: {verdict.detail}")
        failed = [v.name for v in verdicts if not v.passed]
        print(f"\n📊 {len(verdicts) - len(failed)}/{len(verdicts)} checks passed")
        print(f"💾 Verdicts saved to: {out / name / 'verdicts.csv'}")
        return 1 if failed else 0
    except DOMAIN_ERRORS as e:
        return _report_error(e, args, expected=True)
    except Exception as e:
        return _report_error(e, args, expected=False)


def summarize(rows: List[Dict[str, Any]], reference: str) -> List[Dict[str, Any]]:
    """
    Mean ± sd per (setting, method) and a Welch test against ``reference``.

    Returns
    -------
    list of dict
        Keys ``setting, method, metric, n, mean, sd, p, stars``; ``p`` is
        None for the reference method itself or when either side has fewer
        than two seeds.
    """
    cells: Dict[Tuple[str, str], List[float]] = defaultdict(list)
    metrics: Dict[Tuple[str, str], str] = {}
    for row in rows:
        key = (row["setting"], row["method"])
        cells[key].append(float(row["value"]))
        metrics[key] = row["metric"]

    summary = []
    for (setting, method), values in sorted(cells.items()):
        mean, sd = describe(values)
        ref = cells.get((setting, reference))
        p, stars = None, ""
        if method != reference and ref is not None and len(ref) >= 2 and len(values) >= 2:
            test = welch_t_test(values, ref)
            p, stars = test.p, test.stars
        summary.append(
            {
                "setting": setting,
                "method": method,
                "metric": metrics[(setting, method)],
                "n": len(values),
                "mean": mean,
                "sd": sd,
                "p": p,
                "stars": stars,
            }
        )
    return summary


def _print_summary(rows: List[Dict[str, Any]], reference: str) -> List[Dict[str, Any]]:
    summary = summarize(rows, reference)
    print(f"\n{'setting':<20} {'method':<10} {'metric':<10} {'mean ± sd':>22}  vs {reference}")
    print("-" * 70)
    for row in summary:
        cell = f"{row['mean']:.4f} ± {row['sd']:.4f}"
        versus = "(reference)" if row["method"] == reference else (f"p={row['p']:.3g} {row['stars']}" if row["p"] is not None else "")
        print(f"{row['setting']:<20} {row['method']:<10} {row['metric']:<10} {cell:>22}  {versus}")
    return summary


def report_command(args: argparse.Namespace) -> int:
    """
    Summarize a train directory: mean ± sd per method with Welch stars.

    Returns
    -------
    int
        Exit code (0 for success, non-zero for failure)
    """
    run_dir = Path(args.run_dir)
    try:
        leaderboard = find_leaderboard(run_dir)
        if leaderboard is None:
            print(f"❌ Error: No leaderboard.csv in {run_dir}", file=sys.stderr)
            print("\nYou can create one using:", file=sys.stderr)
            print("  lipirm train --config <experiment.toml>", file=sys.stderr)
            return 1
        rows = read_leaderboard(leaderboard)
        methods = {r["method"] for r in rows}
        if args.reference not in methods:
            print(f"⚠️  Reference method '{args.reference}' not in the runs ({', '.join(sorted(methods))})", file=sys.stderr)

        print(f"LipIRM Report: {run_dir}")
        print("=" * 70)
        summary = _print_summary(rows, args.reference)
        print("\nStars: * p < 0.1, ** p < 0.05, *** p < 0.01 (Welch's t-test)")

        if args.output:
            header = ["setting", "method", "metric", "n", "mean", "sd", "p", "stars"]
            write_csv(args.output, [[r[h] if r[h] is not None else "" for h in header] for r in summary], header)
            print(f"\n💾 Summary saved to: {args.output}")
        return 0
    except DOMAIN_ERRORS as e:
        return _report_error(e, args, expected=True)
    except Exception as e:
        return _report_error(e, args, expected=False)


def defaults_command(args: argparse.Namespace) -> int:
    """Print (or write) the reference configuration with every default."""
    text = defaults_reference()
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text)
        print(f"💾 Defaults written to: {args.output}")
    else:
        print(text, end="")
    return 0


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, help="Experiment file (.toml or .json)")
    parser.add_argument("--out", type=str, help="Parent output directory (default: LIPIRM_OUTPUT_DIR)")
    parser.add_argument("--name", type=str, help="Run directory name (default: derived from the config)")
    parser.add_argument("--jobs", type=int, help="Concurrent workers (overrides the config)")
    parser.add_argument("--master-seed", dest="master_seed", type=int, help="Master seed (overrides the config)")


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for the CLI.

    Returns
    -------
    int
        Exit code (0 for success, non-zero for failure)
    """
    parser = argparse.ArgumentParser(
        prog="lipirm",
        description="Lipschitz-regularized invariant risk minimization with optimized penalties",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Train IRM with Lipschitz penalty and RPO on two-bit setting 1
  lipirm train --config configs/two_bit.toml --setting setting1 --seeds 0-9

  # Summarize the runs against RPO
  lipirm report runs/train-two_bit-1a2b3c4d --reference rpo

  # Closed-form risk of the default 1-D setting
  lipirm theory --lambda 0.01

  # Fast acceptance checks
  lipirm oracle --skip-slow
        """,
    )

    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Increase verbosity (can be repeated: -v for INFO, -vv for DEBUG)",
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # Gen command
    gen_parser = subparsers.add_parser("gen", help="Generate a benchmark dataset")
    _add_experiment_flags(gen_parser)
    gen_parser.add_argument("--benchmark", type=str, help="Benchmark id (overrides the config)")
    gen_parser.add_argument("--setting", type=str, help="Benchmark preset, e.g. setting1 or wage")
    gen_parser.add_argument(
        "--param", action="append", metavar="KEY=VALUE", help="Generator parameter (can be repeated)"
    )
    gen_parser.add_argument("--seed", type=int, help="Generator seed (default: LIPIRM_SEED)")
    gen_parser.add_argument("--list", action="store_true", help="List available benchmarks and exit")

    # Train command
    train_parser = subparsers.add_parser("train", help="Train methods over seeds and persist the runs")
    _add_experiment_flags(train_parser)
    train_parser.add_argument("--methods", type=str, help="Comma-separated methods, e.g. irm_lip,rpo")
    train_parser.add_argument("--seeds", type=str, help="Seed list, e.g. 0-9 or 0,2,4")
    train_parser.add_argument("--setting", type=str, help="Benchmark preset, e.g. setting1 or wage")
    train_parser.add_argument(
        "--param", action="append", metavar="KEY=VALUE", help="Benchmark parameter (can be repeated)"
    )

    # Theory command
    theory_parser = subparsers.add_parser("theory", help="Evaluate the closed-form risk on a 1-D setting")
    _add_experiment_flags(theory_parser)
    theory_parser.add_argument("--lambda", dest="lam", type=float, help="Lipschitz scale (default: companion optimum)")

    # Oracle command
    oracle_parser = subparsers.add_parser("oracle", help="Run acceptance oracle checks")
    _add_experiment_flags(oracle_parser)
    oracle_parser.add_argument("--check", action="append", metavar="NAME", help="Check to run (can be repeated)")
    oracle_parser.add_argument("--quick", action="store_true", help="Shrink the slow checks for a smoke run")
    oracle_parser.add_argument("--skip-slow", action="store_true", help="Run only the fast checks")
    oracle_parser.add_argument("--list", action="store_true", help="List available checks and exit")

    # Report command
    report_parser = subparsers.add_parser("report", help="Summarize a train directory")
    report_parser.add_argument("run_dir", type=str, help="Directory written by `lipirm train`")
    report_parser.add_argument("--reference", type=str, default="rpo", help="Reference method (default: rpo)")
    report_parser.add_argument("--output", type=str, help="Also write the summary as CSV")

    # Defaults command
    defaults_parser = subparsers.add_parser("defaults", help="Print the configuration reference")
    defaults_parser.add_argument("--output", type=str, help="Write to a file instead of stdout")

    args = parser.parse_args(argv)

    # Setup logging based on verbosity
    setup_logging(args.verbose)

    if not args.command:
        parser.print_help()
        return 1

    if args.command == "gen":
        return gen_command(args)
    elif args.command == "train":
        return train_command(args)
    elif args.command == "theory":
        return theory_command(args)
    elif args.command == "oracle":
        return oracle_command(args)
    elif args.command == "report":
        return report_command(args)
    elif args.command == "defaults":
        return defaults_command(args)
    else:
        parser.print_help()
        return 1


if __name__ == "__main__":
    sys.exit(main())
