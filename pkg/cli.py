"""
Command-line interface for firlab.
Simulates FIR datasets, fits LS/RLS estimates and runs the verification suites.
"""

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from rich import box
from rich.console import Console
from rich.markup import escape
from rich.panel import Panel
from rich.progress import (
    BarColumn,
    Progress,
    SpinnerColumn,
    TaskProgressColumn,
    TextColumn,
    TimeElapsedColumn,
)
from rich.table import Table

from config import ConfigError, OUTPUT_DIR, parse_suites, validate_output_dir
from logger import attach_file_handler, get_logger, setup_logging

console = Console()
logger = get_logger("cli")

# Exit codes (stable)
EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INTERRUPTED = 130


@dataclass
class RunManifest:
    """What a single CLI invocation runs and where its files go."""
    config_path: Optional[Path]
    master_seed: Optional[int]
    suites: tuple
    output_dir: Path
    workers: int


def build_manifest(args) -> RunManifest:
    """
    Validate CLI flags into a RunManifest and prepare the output directory.

    Raises:
        ConfigError: If the suite selection or worker count is invalid
        OSError: If the output directory is not writable
    """
    workers = getattr(args, "workers", 1)
    if workers < 1:
        raise ConfigError(f"--workers must be at least 1, got {workers}")
    seed = getattr(args, "seed", None)
    if seed is not None and not 0 <= seed < 2**64:
        raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {seed}")

    output_dir = Path(args.out) if getattr(args, "out", None) else OUTPUT_DIR
    validate_output_dir(output_dir)
    attach_file_handler(output_dir / "logs")

    config_path = Path(args.config) if getattr(args, "config", None) else None
    return RunManifest(
        config_path=config_path,
        master_seed=seed,
        suites=parse_suites(getattr(args, "suites", None)),
        output_dir=output_dir,
        workers=workers,
    )


def _require_config(manifest: RunManifest):
    from config import get_config_summary, load_experiment_config

    if manifest.config_path is None:
        raise ConfigError("--config is required for this command")
    cfg = load_experiment_config(manifest.config_path)
    logger.debug(get_config_summary(cfg))
    return cfg


def cmd_simulate(args):
    """Generate datasets from an experiment config."""
    from config import build_mc_config
    from signals import generate_dataset, sample_snr
    from storage import dataset_filename, write_dataset

    manifest = build_manifest(args)
    cfg = _require_config(manifest)
    sizes = [cfg.simulate.sample_size] if cfg.simulate.sample_size is not None else list(cfg.sample_sizes)
    mc = build_mc_config(cfg, master_seed=manifest.master_seed, sample_sizes=sizes)

    table = Table(title="Simulated datasets", box=box.ROUNDED)
    table.add_column("File", style="cyan")
    table.add_column("n", justify="right")
    table.add_column("N", justify="right")
    table.add_column("SNR (sample)", justify="right")

    for N in mc.N_grid:
        for rep in range(cfg.simulate.replications):
            ds = generate_dataset(mc.theta0, mc.filter, mc.innov_u, mc.innov_v, N, mc.master_seed, rep)
            path = write_dataset(ds, manifest.output_dir / dataset_filename(N, rep),
                                 with_truth=cfg.simulate.write_truth)
            table.add_row(path.name, str(ds.n), str(ds.N), f"{sample_snr(ds, mc.innov_v.variance):.4g}")
            logger.debug(f"Wrote {path}")

    console.print(table)
    console.print(f"[green]✓ Datasets written to {manifest.output_dir}[/green]")
    return EXIT_OK


def _rls_sigma2(cfg, sigma2_hat: float):
    source = cfg.rls_sigma2
    if source == "estimate":
        return sigma2_hat, "estimate"
    if source == "truth":
        return cfg.innovation_v.variance, "truth"
    return float(source), "given"


def cmd_estimate(args):
    """Fit LS and RLS estimates to a dataset file."""
    from config import build_filter, build_kernel
    from estimators import kernel_matrix, ls_estimate, noise_variance_estimate, rls_estimate
    from storage import read_dataset, write_json
    from theory import ls_limit_covariance, sigma_matrix

    manifest = build_manifest(args)
    cfg = _require_config(manifest) if manifest.config_path is not None else None
    dataset_path = Path(args.dataset)
    ds = read_dataset(dataset_path)
    if cfg is not None and cfg.n != ds.n:
        raise ConfigError(f"config order n={cfg.n} does not match dataset order n={ds.n}")

    theta_ls = ls_estimate(ds.phi, ds.Y)
    sigma2_hat = noise_variance_estimate(ds.Y, ds.phi, theta_ls)
    result = {
        "dataset": dataset_path.name,
        "n": ds.n,
        "N": ds.N,
        "theta0": ds.theta0,
        "theta_ls": theta_ls,
        "sigma2_hat": sigma2_hat,
        "rls": [],
        "asymptotic_se": None,
    }

    if cfg is not None:
        for kcfg in cfg.kernels:
            spec = build_kernel(kcfg, ds.n)
            sigma2, source = _rls_sigma2(cfg, sigma2_hat)
            fit = rls_estimate(ds.phi, ds.Y, kernel_matrix(spec), sigma2)
            result["rls"].append({
                "family": spec.family,
                "eta": list(spec.eta),
                "sigma2_used": fit.sigma2_used,
                "sigma2_source": source,
                "theta_tr": fit.theta_tr,
            })
        Sigma = sigma_matrix(build_filter(cfg.filter), cfg.innovation_u.variance, ds.n)
        result["asymptotic_se"] = np.sqrt(np.diag(ls_limit_covariance(Sigma, sigma2_hat)) / ds.N)

    out_path = write_json(result, manifest.output_dir / f"estimate_{dataset_path.stem}.json")

    table = Table(title=f"Estimates for {dataset_path.name}", box=box.ROUNDED)
    table.add_column("i", justify="right", style="dim")
    table.add_column("theta0 (header)", justify="right")
    table.add_column("LS", justify="right", style="cyan")
    if result["asymptotic_se"] is not None:
        table.add_column("SE", justify="right")
    for entry in result["rls"]:
        table.add_column(f"RLS {entry['family']}", justify="right", style="magenta")
    for i in range(ds.n):
        row = [str(i + 1), f"{ds.theta0[i]:.6g}", f"{theta_ls[i]:.6g}"]
        if result["asymptotic_se"] is not None:
            row.append(f"{result['asymptotic_se'][i]:.3g}")
        row += [f"{entry['theta_tr'][i]:.6g}" for entry in result["rls"]]
        table.add_row(*row)

    console.print(table)
    console.print(f"sigma2_hat = {sigma2_hat:.6g}")
    console.print(f"[green]✓ Saved to {out_path}[/green]")
    return EXIT_OK


def cmd_verify(args):
    """Run the verification suites and write the report."""
    from config import build_mc_config
    from schemas import ReportRecord
    from storage import write_json, write_text
    from verify import run_suites, validate_design
    from viewer import export_markdown, verdict_table

    manifest = build_manifest(args)
    cfg = _require_config(manifest)
    mc = build_mc_config(cfg, master_seed=manifest.master_seed)
    validate_design(mc, manifest.suites)

    console.print(Panel(
        f"suites: {', '.join(manifest.suites)}\n"
        f"n={mc.n}  filter={mc.filter.name}  N_grid={list(mc.N_grid)}  reps={mc.reps}\n"
        f"seed={mc.master_seed}  workers={manifest.workers}",
        title="Verification run",
        title_align="left",
        border_style="blue",
    ))

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TaskProgressColumn(),
        TimeElapsedColumn(),
        console=console,
    ) as progress:
        tasks = {}

        def on_progress(N: int, done: int):
            if N not in tasks:
                tasks[N] = progress.add_task(f"N={N}", total=mc.reps)
            progress.update(tasks[N], completed=done)

        report = run_suites(mc, manifest.suites, workers=manifest.workers, progress=on_progress)

    data = report.to_dict()
    json_path = write_json(data, manifest.output_dir / "verify_report.json")
    record = ReportRecord.model_validate(data)
    md_path = write_text(manifest.output_dir / "verify_report.md", export_markdown(record))

    console.print(verdict_table(record.verdicts))
    console.print(f"Report: {json_path}  ({md_path.name})")

    if not report.passed:
        console.print("[bold red]✗ Failing criteria:[/bold red]")
        for v in report.failures:
            console.print(f"  {v.suite}:{v.criterion} measured={v.measured} target={v.target} tol={v.tolerance}")
        return EXIT_FAIL
    console.print("[green]✓ All selected suites passed[/green]")
    return EXIT_OK


def cmd_report(args):
    """Render a persisted verify report."""
    from storage import load_report, write_text
    from viewer import display_report_rich, export_markdown

    path = Path(args.report) if args.report else OUTPUT_DIR / "verify_report.json"
    record, _ = load_report(path)

    if args.format == "markdown":
        md = export_markdown(record)
        if args.output:
            out = write_text(Path(args.output), md)
            console.print(f"[green]✓ Saved to {out}[/green]")
        else:
            console.print(md, markup=False, highlight=False)
    else:
        display_report_rich(record, console)
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, suites: bool = False):
    p.add_argument("--config", help="Experiment config (JSON)")
    p.add_argument("--seed", type=int, help="Override the master seed (unsigned 64-bit)")
    p.add_argument("--out", help=f"Output directory (default: {OUTPUT_DIR})")
    p.add_argument("--workers", type=int, default=1, help="Worker processes (default: 1)")
    if suites:
        p.add_argument("--suites", help="Comma-separated subset of as,clt,rates,moments,shat,lemmas,snr")


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    parser = argparse.ArgumentParser(
        prog="firlab",
        description="FIR least-squares / regularized least-squares asymptotics lab",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug output on the console")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # simulate
    simulate_parser = subparsers.add_parser("simulate", help="Generate dataset CSVs")
    _add_common(simulate_parser)
    simulate_parser.set_defaults(func=cmd_simulate)

    # estimate
    estimate_parser = subparsers.add_parser("estimate", help="Fit LS/RLS estimates to a dataset")
    _add_common(estimate_parser)
    estimate_parser.add_argument("--dataset", required=True, help="Dataset CSV written by 'simulate'")
    estimate_parser.set_defaults(func=cmd_estimate)

    # verify
    verify_parser = subparsers.add_parser("verify", help="Run verification suites")
    _add_common(verify_parser, suites=True)
    verify_parser.set_defaults(func=cmd_verify)

    # report
    report_parser = subparsers.add_parser("report", help="Render a verify report")
    report_parser.add_argument("report", nargs="?", help="Report JSON (default: <output>/verify_report.json)")
    report_parser.add_argument("-f", "--format", choices=["terminal", "markdown"], default="terminal",
                               help="Output format (default: terminal)")
    report_parser.add_argument("-o", "--output", help="Output file path (markdown only)")
    report_parser.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    """Main entry point."""
    from estimators import EstimationError
    from signals import PreconditionError
    from theory import DegenerateFilterError
    from verify import ReplicationError

    parser = create_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_CONFIG

    setup_logging("DEBUG" if args.verbose else "INFO")

    try:
        return args.func(args)
    except KeyboardInterrupt:
        console.print("\nInterrupted.")
        return EXIT_INTERRUPTED
    except (ConfigError, PreconditionError, DegenerateFilterError) as e:
        console.print(f"[red]Configuration error: {escape(str(e))}[/red]")
        return EXIT_CONFIG
    except (EstimationError, ReplicationError) as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        return EXIT_FAIL
    except OSError as e:
        console.print(f"[red]I/O error: {escape(str(e))}[/red]")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
