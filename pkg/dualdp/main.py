import sys

import click

from dualdp import __version__
from dualdp.app_log_config import logger
from dualdp.routers import gen_router, oracle_router, run_router, verify_router
from dualdp.services.exceptions import ConfigError, DualDPError


EXIT_OK = 0
EXIT_SOLVER_ERROR = 1
EXIT_USAGE = 2


@click.group(name="dualdp")
@click.version_option(__version__, prog_name="dualdp")
def cli():
    """Dual dynamic programming for infinite-horizon stochastic programs."""


# Include Commands
cli.add_command(gen_router.gen)
cli.add_command(run_router.run)
cli.add_command(oracle_router.oracle)
cli.add_command(verify_router.verify)


def main(argv: list[str] | None = None) -> int:
    """Runs the CLI and maps failures to exit codes: 1 solver error, 2 usage error."""
    try:
        outcome = cli.main(args=argv, prog_name="dualdp", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_SOLVER_ERROR
    except ConfigError as exc:
        logger.error(f"configuration error: {exc}")
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except DualDPError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_SOLVER_ERROR
    return outcome if isinstance(outcome, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
