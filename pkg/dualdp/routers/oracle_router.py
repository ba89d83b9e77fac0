import click

from dualdp.middleware.run_logging import run_logging
from dualdp.services.service import InstanceRepository, OracleService


def get_oracle_service() -> OracleService:
    return OracleService(InstanceRepository())


@click.command("oracle")
@click.option("--instance", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--oracle-horizon", type=click.IntRange(min=0), default=20, show_default=True)
@click.option("--emit-extensive", type=click.Path(dir_okay=False), default=None,
              help="Also write the tree LP in [lp] format.")
@run_logging("oracle")
def oracle(instance, oracle_horizon, emit_extensive):
    """Truncated extensive-form value with its error bound."""
    report = get_oracle_service().value(instance, oracle_horizon, emit=emit_extensive)
    click.echo(report.model_dump_json())
