"""
Command-line interface for XFT Lab.

    xft run <config> [--out DIR] [--seed N] [--format json,csv]
    xft verify <config>
    xft sweep <config> --axis lambda --values 0,0.5,1 [--workers N]

Exit status: 0 all checks pass, 1 a check failed, 2 configuration or runtime error.
"""
import logging
import sys
from typing import List, Optional

import click
from colorama import Fore, Style, init as colorama_init

from app import __version__
from app.config import LOG_FORMAT, LOG_LEVEL
from app.errors import XFTError
from app.models import RunReport
from app.runner import SWEEP_AXES, parse_config, run, sweep, validate_config

logger = logging.getLogger(__name__)

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _formats(value: Optional[str]) -> Optional[List[str]]:
    if value is None:
        return None
    formats = [f.strip() for f in value.split(",") if f.strip()]
    unknown = set(formats) - {"json", "csv"}
    if unknown:
        raise click.BadParameter(f"unsupported format(s): {', '.join(sorted(unknown))}")
    return formats


def _values(value: str) -> List[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"values must be a comma-separated list of numbers ({exc})")


def _load(path: str, seed: Optional[int]):
    config = parse_config(path)
    if seed is not None:
        data = config.model_dump(by_alias=True)
        data["seed"] = seed
        config = validate_config(data)
    return config


def _print_report(report: RunReport) -> None:
    for check in report.theorems:
        if check.skipped:
            status = f"{Fore.YELLOW}SKIP"
        elif check.passed:
            status = f"{Fore.GREEN}PASS"
        elif check.conditional:
            status = f"{Fore.YELLOW}COND"
        else:
            status = f"{Fore.RED}FAIL"
        click.echo(f"  {status}{Style.RESET_ALL}  {check.name:<40} max_violation={check.max_violation:.3e}")


def _guard(action):
    """Run action and turn its outcome into the exit status."""
    try:
        passed = action()
    except XFTError as exc:
        logger.error("%s", exc)
        click.echo(f"{Fore.RED}error:{Style.RESET_ALL} {exc}", err=True)
        sys.exit(EXIT_ERROR)
    except OSError as exc:
        logger.error("I/O failure: %s", exc)
        click.echo(f"{Fore.RED}error:{Style.RESET_ALL} {exc}", err=True)
        sys.exit(EXIT_ERROR)
    sys.exit(EXIT_PASS if passed else EXIT_FAIL)


@click.group()
@click.version_option(__version__, prog_name="xft")
@click.option("--log-level", default=LOG_LEVEL, show_default=True, help="Logging level.")
def xft(log_level: str):
    """Verification lab for exchange fluctuation theorems with correlated initial states."""
    logging.basicConfig(format=LOG_FORMAT, level=getattr(logging, log_level.upper(), logging.INFO))
    colorama_init()


@xft.command("run")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None, help="Output directory (default: XFT_OUTPUT_DIR).")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Override the config seed.")
@click.option("--format", "fmt", default=None, help="Comma-separated subset of json,csv.")
def run_command(config_path: str, out: Optional[str], seed: Optional[int], fmt: Optional[str]):
    """Run one experiment and write report.json, histories.csv and classes.csv."""
    def action():
        report = run(_load(config_path, seed), out=out, formats=_formats(fmt))
        _print_report(report)
        return report.passed
    _guard(action)


@xft.command("verify")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None, help="Output directory (default: XFT_OUTPUT_DIR).")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Override the config seed.")
def verify_command(config_path: str, out: Optional[str], seed: Optional[int]):
    """Run the checks only; writes report.json without tables."""
    def action():
        report = run(_load(config_path, seed), out=out, formats=["json"], tables=False)
        _print_report(report)
        return report.passed
    _guard(action)


@xft.command("sweep")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--axis", required=True, type=click.Choice(sorted(SWEEP_AXES)), help="Parameter to sweep.")
@click.option("--values", "raw_values", required=True, help="Comma-separated values.")
@click.option("--out", default=None, help="Output directory (default: XFT_OUTPUT_DIR).")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Override the base seed.")
@click.option("--format", "fmt", default=None, help="Comma-separated subset of json,csv.")
@click.option("--workers", type=click.IntRange(1), default=1, show_default=True, help="Concurrent runs.")
def sweep_command(config_path: str, axis: str, raw_values: str, out: Optional[str], seed: Optional[int],
                  fmt: Optional[str], workers: int):
    """Run one experiment per value and write summary.csv (and max_work.json for strength/t)."""
    def action():
        result = sweep(_load(config_path, seed), axis, _values(raw_values), out=out,
                       formats=_formats(fmt), workers=workers)
        for value, report in zip(result.summary[axis], result.reports):
            colour = Fore.GREEN if report.passed else Fore.RED
            click.echo(f"  {axis}={value:<10g} {colour}{'PASS' if report.passed else 'FAIL'}{Style.RESET_ALL}")
        return result.passed
    _guard(action)


def main():
    xft()


if __name__ == "__main__":
    main()
