"""Command-line entry point for epochnoise."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from rich import box
from rich.console import Console
from rich.table import Table

from . import __version__
from .config import (
    EXPERIMENT_KINDS,
    ExperimentConfig,
    get_default_config,
    load_config,
    save_config,
)
from .errors import EpochNoiseError
from .experiments import create_dispatcher, run_experiment
from .log_setup import setup_logging
from .manifest import RunManifest

logger = logging.getLogger(__name__)

console = Console()


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", type=Path, help="YAML experiment config or run manifest")
    parser.add_argument("--seed", type=int, help="Override experiment.seed")
    parser.add_argument("--out", type=Path, help="Override experiment.output_dir")
    parser.add_argument("--workers", type=int, help="Override experiment.workers")
    parser.add_argument("--svg", action="store_true", help="Also write SVG plots")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enl",
        description="epochnoise - stationary statistics of SGD with momentum under epoch sampling",
    )
    parser.add_argument("--version", "-V", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for kind in EXPERIMENT_KINDS:
        _add_run_options(sub.add_parser(kind, help=f"Run the {kind} experiment"))

    run = sub.add_parser("run", help="Run the experiment named in a config file")
    _add_run_options(run)

    sub.add_parser("list", help="List available experiments")

    init = sub.add_parser("init-config", help="Write a default config for an experiment")
    init.add_argument("kind", choices=EXPERIMENT_KINDS)
    init.add_argument(
        "--out",
        type=Path,
        default=Path("experiment.yaml"),
        help="Destination (default: experiment.yaml)",
    )
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (if any), kind from the subcommand, then CLI overrides."""
    kind = None if args.command == "run" else args.command
    if args.config is not None:
        config = load_config(args.config, kind=kind)
    elif args.command == "run":
        config = load_config(None)
    else:
        config = get_default_config(args.command)

    if args.seed is not None:
        config.experiment.seed = args.seed
    if args.out is not None:
        config.experiment.output_dir = str(args.out)
    if args.workers is not None:
        config.experiment.workers = args.workers
    if args.svg:
        config.output.svg = True
    return config


def print_experiments() -> None:
    table = Table(title="Experiments", box=box.ROUNDED)
    table.add_column("Kind", style="cyan", no_wrap=True)
    table.add_column("Description", style="white")
    table.add_column("Outputs", style="dim")
    for handler in create_dispatcher().get_experiments():
        table.add_row(handler.name, handler.description, ", ".join(handler.outputs))
    console.print(table)


def print_summary(manifest: RunManifest) -> None:
    table = Table(title=f"{manifest.kind} ({manifest.wall_clock_seconds:.1f}s)", box=box.ROUNDED)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="white")
    for key, value in manifest.metrics.items():
        text = f"{value:.6g}" if isinstance(value, float) else str(value)
        table.add_row(key, text)
    console.print(table)
    for record in manifest.files:
        console.print(f"[dim]{record['path']}  sha256:{record['sha256'][:12]}[/dim]")


def main(argv: Optional[list[str]] = None) -> int:
    """Main entry point. Returns the process exit code."""
    args = build_parser().parse_args(argv)

    if args.command == "list":
        print_experiments()
        return 0

    if args.command == "init-config":
        save_config(get_default_config(args.kind), args.out)
        console.print(f"Wrote [cyan]{args.out}[/cyan]")
        return 0

    try:
        config = resolve_config(args)
        setup_logging(config.logging, args.verbose)
        manifest = run_experiment(config)
    except EpochNoiseError as e:
        logger.debug("run failed", exc_info=True)
        console.print(f"[red]Error:[/red] {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130

    print_summary(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
