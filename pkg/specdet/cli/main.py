"""Main CLI interface for specdet."""

import logging
import sys
from typing import Optional

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .. import __version__
from ..config import EXPERIMENTS, load_config
from ..core.cache import EigenCache, default_cache_dir
from ..errors import ConfigError, SpecDetError
from ..runner import ExperimentRunner

console = Console()


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=True)],
        force=True,
    )


def _execute(
    config_path: str,
    experiment: Optional[str],
    out: Optional[str],
    seed: Optional[int],
    cutoff: Optional[int],
    no_cache: bool,
    verbose: bool,
) -> None:
    _setup_logging(verbose)
    try:
        config = load_config(config_path).with_overrides(
            experiment=experiment, seed=seed, cutoff=cutoff, output_dir=out
        )
        runner = ExperimentRunner(config, use_cache=not no_cache)
        result = runner.run()
    except ConfigError as e:
        console.print(f"❌ Invalid configuration: {e}", style="red")
        for path in e.fields:
            console.print(f"   field: {path}", style="red")
        sys.exit(2)
    except SpecDetError as e:
        console.print(f"❌ {type(e).__name__}: {e}", style="red")
        sys.exit(2)

    table = Table(title=f"{config.experiment} checks")
    table.add_column("Check", style="cyan")
    table.add_column("Relative error", style="magenta")
    table.add_column("Tolerance", style="blue")
    table.add_column("Verdict")
    for check in result.outcome.checks:
        table.add_row(
            check.name,
            "-" if check.relative_error is None else f"{check.relative_error:.3e}",
            "-" if check.tolerance is None else f"{check.tolerance:.1e}",
            "[green]passed[/green]" if check.passed else "[red]FAILED[/red]",
        )
    console.print(table)
    console.print(f"📁 Artifacts: {runner.output_dir}")
    if not result.passed:
        console.print("❌ Tolerance checks failed", style="red")
        sys.exit(1)
    console.print("✅ All checks passed", style="green")


def _run_options(func):
    for option in reversed([
        click.option("--config", "-c", "config_path", required=True, type=click.Path(exists=True, dir_okay=False),
                     help="Experiment YAML file"),
        click.option("--out", "-o", type=click.Path(file_okay=False), help="Output directory"),
        click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), help="Root random seed"),
        click.option("--cutoff", "-N", type=click.IntRange(min=1), help="Fourier cutoff N"),
        click.option("--no-cache", is_flag=True, help="Do not read or write the eigenvalue cache"),
        click.option("--verbose", "-v", is_flag=True, help="Debug logging"),
    ]):
        func = option(func)
    return func


@click.group()
@click.version_option(version=__version__)
def main():
    """specdet - functional determinants of perturbed Laplace and Dirac operators."""
    pass


@main.command()
@_run_options
def run(config_path, out, seed, cutoff, no_cache, verbose):
    """Run the experiment named in the configuration."""
    _execute(config_path, None, out, seed, cutoff, no_cache, verbose)


def _experiment_command(name: str):
    @_run_options
    def command(config_path, out, seed, cutoff, no_cache, verbose):
        _execute(config_path, name, out, seed, cutoff, no_cache, verbose)

    command.__doc__ = f"Run the {name} experiment with the given configuration."
    return main.command(name=name)(command)


for _name in EXPERIMENTS:
    _experiment_command(_name)


@main.command()
@click.option("--clear", is_flag=True, help="Delete every cached spectrum")
def cache(clear: bool):
    """Show (or clear) the eigenvalue cache."""
    store = EigenCache()
    if clear:
        removed = store.clear()
        console.print(f"🗑️  Removed {removed} cache entries from {store.directory}")
        return
    console.print(f"📁 Cache directory: {default_cache_dir()}")


if __name__ == "__main__":
    main()
