import click
from pydantic import ValidationError

from dualdp import config
from dualdp.middleware.run_logging import run_logging
from dualdp.schemas.schemas import RunConfig
from dualdp.services.service import InstanceRepository, SolverService


# keys that steer the command but are not solver settings
OUTPUT_KEYS = ("instance", "out", "dump_dir", "oracle_horizon")


def get_solver_service() -> SolverService:
    return SolverService(InstanceRepository())


def build_run_config(options: dict) -> RunConfig:
    settings = {k: v for k, v in options.items() if k not in OUTPUT_KEYS}
    try:
        return RunConfig(**settings)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "config"
        raise click.UsageError(f"invalid option {where}: {first['msg']}") from None


def resolve_options(config_path, explicit: dict) -> dict:
    file_values = config.load_config_file(config_path) if config_path else {}
    # flags can only switch a setting on
    explicit = {k: (None if v is False else v) for k, v in explicit.items()}
    return config.merge_options(file_values, explicit)


# --- Commands ---
@click.command("run")
@click.option("--algo", type=click.Choice(["eddp", "eddp-fast", "eddp-lu", "sddp", "hddp"]), default=None)
@click.option("--instance", type=click.Path(dir_okay=False), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--T", "T", type=int, default=None, help="Effective planning horizon.")
@click.option("--epsilon", type=float, default=None)
@click.option("--max-iters", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None, help="0 means one worker per CPU.")
@click.option("--no-reset", is_flag=True, default=None)
@click.option("--eps-lo", type=float, default=None)
@click.option("--rho", type=float, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Trace CSV path.")
@click.option("--rollouts", type=int, default=None)
@click.option("--policy-horizon", type=int, default=None)
@click.option("--policy-every", type=int, default=None)
@click.option("--lipschitz-sum", type=float, default=None)
@click.option("--M0bar", "M0bar", type=float, default=None)
@click.option("--M-D", "M_D", type=float, default=None)
@click.option("--lp-method", type=click.Choice(["highs", "simplex"]), default=None)
@click.option("--dump-dir", type=click.Path(file_okay=False), default=None)
@click.option("--slack-cuts", is_flag=True, default=None)
@click.option("--exact-cut-period", type=int, default=None)
@click.option("--pdsa-max-iters", type=int, default=None)
@click.option("--dual-cap", type=float, default=None)
@click.option("--record-wall-time", is_flag=True, default=None)
@run_logging("run")
def run(config_path, **explicit):
    """Solve an instance and write the iteration trace."""
    options = resolve_options(config_path, explicit)
    if not options.get("instance"):
        raise click.UsageError("--instance is required (flag or config file)")
    cfg = build_run_config(options)

    result = get_solver_service().solve(cfg, options["instance"], out=options.get("out"),
                                        dump_dir=options.get("dump_dir"))
    click.echo(f"{result.algo} {result.status} after {result.iterations} iterations: "
               f"lb_root={result.lb_root:.12g} bound={result.reported_bound:.6g} "
               f"x={' '.join(repr(v) for v in result.x_final)}")
