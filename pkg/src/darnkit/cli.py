"""Command-line front end.

Exit codes: 0 ok, 2 parse error, 3 validation error, 4 numerical failure.
Failures print one JSON error record on stderr and leave no report files.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from darnkit.config import (
    BmvdSettings,
    ConfigParseError,
    ConfigValidationError,
    ExperimentConfig,
    parse_config,
    prepare,
)
from darnkit.errors import DarnkitError, NumericalError
from darnkit.pipeline import plan, run

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3, 4
OUTPUT_ENV = "DARNKIT_OUTPUT_DIR"


def _fail(kind: str, code: int, message: str, details=None):
    record = {"error": kind, "exit_code": code, "message": message}
    if details:
        record["details"] = [{"loc": loc, "msg": msg} for loc, msg in details]
    click.echo(json.dumps(record), err=True)
    sys.exit(code)


def _execute(command: str, config_path: str | None, dry_run: bool, preset: str | None = None):
    try:
        if config_path is None:
            config = ExperimentConfig(schema_version=1, bmvd={"preset": preset})
            base_dir = Path.cwd()
        else:
            config = parse_config(config_path)
            base_dir = Path(config_path).parent
            if preset is not None:
                bmvd = config.bmvd.model_dump() if config.bmvd else {}
                config = config.model_copy(update={"bmvd": BmvdSettings(**{**bmvd, "preset": preset})})
        exp = prepare(config, base_dir)
        out_dir = Path(os.environ.get(OUTPUT_ENV) or config.output_dir)
        steps = plan(exp, command) if command != "validate" else []
        if command == "validate":
            click.echo("config ok")
            return
        if dry_run:
            click.echo(f"plan for '{command}' (output: {out_dir}):")
            for line in steps:
                click.echo(f"  - {line}")
            return
        written = run(exp, command, out_dir)
    except ConfigParseError as exc:
        _fail("parse", EXIT_PARSE, str(exc))
    except ConfigValidationError as exc:
        _fail("validation", EXIT_VALIDATION, str(exc), exc.errors)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        _fail("numerical", EXIT_NUMERICAL, str(exc))
    except DarnkitError as exc:
        _fail("validation", EXIT_VALIDATION, str(exc))
    for name in written:
        click.echo(str(out_dir / name))


_config_arg = click.argument("config", type=click.Path(dir_okay=False))
_dry_run = click.option("--dry-run", is_flag=True, help="Print the execution plan and exit.")


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Darned Markov chains: build, sweep, simulate."""


@main.command()
@_config_arg
def validate(config):
    """Check a config against every precondition."""
    _execute("validate", config, False)


@main.command()
@_config_arg
@_dry_run
def darn(config, dry_run):
    """Write the darned form and quotient map."""
    _execute("darn", config, dry_run)


@main.command()
@_config_arg
@_dry_run
def sweep(config, dry_run):
    """Resolvent and semigroup gaps along the lambda schedule."""
    _execute("sweep", config, dry_run)


@main.command()
@_config_arg
@_dry_run
def simulate(config, dry_run):
    """Monte Carlo marginals against exact semigroup values."""
    _execute("simulate", config, dry_run)


@main.command()
@click.argument("config", type=click.Path(dir_okay=False), required=False)
@click.option("--preset", type=click.Choice(["coarse"]), default=None, help="Use a built-in lattice geometry.")
@_dry_run
def bmvd(config, preset, dry_run):
    """Plane-with-cylinder lattice demo."""
    if config is None and preset is None:
        _fail("validation", EXIT_VALIDATION, "give a config or --preset")
    _execute("bmvd", config, dry_run, preset)


@main.command(name="all")
@_config_arg
@_dry_run
def run_all(config, dry_run):
    """Run every step the config describes."""
    _execute("all", config, dry_run)


if __name__ == "__main__":  # pragma: no cover
    main()
