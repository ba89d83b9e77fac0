import click

from dualdp.app_log_config import logger
from dualdp.middleware.run_logging import run_logging
from dualdp.routers.oracle_router import get_oracle_service


@click.command("verify")
@click.option("--instance", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--trace", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--oracle-horizon", type=click.IntRange(min=0), default=20, show_default=True)
@click.pass_context
@run_logging("verify")
def verify(ctx, instance, trace, oracle_horizon):
    """Check a trace's final lower bound against the oracle."""
    report = get_oracle_service().verify(instance, trace, oracle_horizon)
    click.echo(report.model_dump_json())
    if not report.passed:
        for reason in report.reasons:
            logger.error(f"verify failed: {reason}")
        ctx.exit(1)
