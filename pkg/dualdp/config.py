import os
from pathlib import Path

from dotenv import load_dotenv, dotenv_values

from dualdp.app_log_config import logger
from dualdp.services.exceptions import ConfigError


# Load environment variables
load_dotenv()
ENV = os.getenv("ENV", default="dev")
LP_METHOD = os.getenv("LP_METHOD", default="highs").lower()
DEFAULT_WORKERS = int(os.getenv("DEFAULT_WORKERS", default="1"))
DEFAULT_MAX_ITERS = int(os.getenv("DEFAULT_MAX_ITERS", default="10000"))
RECORD_WALL_TIME = os.getenv("RECORD_WALL_TIME", default="false").lower() in ("1", "true", "yes")
MAX_TREE_NODES = int(float(os.getenv("MAX_TREE_NODES", default="1e6")))
PDSA_MAX_ITERS = int(os.getenv("PDSA_MAX_ITERS", default="2000"))


# Keys accepted in a --config file; they mirror the long CLI flags.
CONFIG_KEYS = frozenset({
    "algo", "instance", "T", "epsilon", "max_iters", "seed", "workers", "no_reset",
    "eps_lo", "rho", "out", "oracle_horizon", "rollouts", "policy_every",
    "lipschitz_sum", "M0bar", "lp_method", "dump_dir", "slack_cuts",
    "exact_cut_period", "pdsa_max_iters", "dual_cap", "record_wall_time",
    "policy_horizon", "M_D",
})

_KEY_ALIASES = {key.lower(): key for key in CONFIG_KEYS}


def _normalize_key(raw: str) -> str:
    key = raw.strip().lstrip("-").replace("-", "_")
    canonical = _KEY_ALIASES.get(key.lower())
    if canonical is None:
        raise ConfigError(f"unknown config key '{raw}'")
    return canonical


def load_config_file(path: str | os.PathLike) -> dict[str, str]:
    """
    Reads a key=value run configuration file.
    Values stay strings; pydantic does the typing when the RunConfig is built.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")

    values = {}
    for raw_key, raw_value in dotenv_values(path).items():
        if raw_value is None:
            raise ConfigError(f"config key '{raw_key}' has no value")
        values[_normalize_key(raw_key)] = raw_value.strip()

    logger.debug(f"Loaded {len(values)} config entries from {path}")
    return values


def merge_options(file_values: dict, explicit: dict) -> dict:
    """Explicit flags win over config-file values; None means 'not given'."""
    merged = dict(file_values)
    for key, value in explicit.items():
        if value is not None:
            merged[key] = value
    return merged
