import click
from pydantic import ValidationError

from dualdp.middleware.run_logging import run_logging
from dualdp.services.service import GeneratorService, InstanceRepository


def get_generator_service() -> GeneratorService:
    return GeneratorService(InstanceRepository())


def _params(kind: str, scenarios, samples, size, discount) -> dict:
    params = {}
    if kind == "chain":
        if discount is not None:
            params["discount"] = discount
        return params
    if kind == "reservoir":
        names = {"num_scenarios": scenarios, "num_reservoirs": size}
    else:
        names = {"N1": scenarios, "N2": samples, "regions": size}
    params.update({k: v for k, v in names.items() if v is not None})
    if discount is not None:
        params["discount"] = discount
    return params


@click.command("gen")
@click.option("--kind", type=click.Choice(["chain", "reservoir", "ed"]), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--scenarios", type=int, default=None, help="Top-level scenario count.")
@click.option("--samples", type=int, default=None, help="Second-stage samples (ed only).")
@click.option("--size", type=int, default=None, help="Reservoirs or regions.")
@click.option("--discount", type=float, default=None)
@click.option("--emit-extensive", type=click.Path(dir_okay=False), default=None)
@click.option("--oracle-horizon", type=int, default=5, show_default=True)
@run_logging("gen")
def gen(kind, out, seed, scenarios, samples, size, discount, emit_extensive, oracle_horizon):
    """Generate a benchmark instance file."""
    params = _params(kind, scenarios, samples, size, discount)
    try:
        get_generator_service().generate(kind, out, seed=seed, params=params,
                                         emit_extensive=emit_extensive, oracle_horizon=oracle_horizon)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise click.UsageError(f"invalid {kind} parameter {'.'.join(map(str, first['loc']))}: {first['msg']}") \
            from None
    click.echo(f"wrote {kind} instance to {out}")
