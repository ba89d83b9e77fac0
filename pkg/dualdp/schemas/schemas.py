import math
from typing import Optional, Literal, Annotated

from pydantic import BaseModel, ConfigDict, Field, AfterValidator, BeforeValidator, model_validator

from dualdp import config


ALGORITHMS = ("eddp", "eddp_fast", "eddp_lu", "sddp", "hddp")


def normalize_algo_name(value):
    """
    Accepts the CLI spelling (eddp-fast) as well as the python one (eddp_fast).
    """
    if isinstance(value, str):
        return value.strip().lower().replace("-", "_")
    return value


def validate_seed_range(value: Optional[int]) -> Optional[int]:
    if value is not None and not 0 <= value < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return value


def validate_open_unit(value: float) -> float:
    if not 0.0 < value < 1.0:
        raise ValueError("value must lie strictly between 0 and 1")
    return value


def validate_interval(value: tuple[float, float]) -> tuple[float, float]:
    low, high = value
    if low > high:
        raise ValueError("interval lower end exceeds its upper end")
    return value


AlgoName = Annotated[
    Literal["eddp", "eddp_fast", "eddp_lu", "sddp", "hddp"],
    BeforeValidator(normalize_algo_name),
]

Seed = Annotated[Optional[int], AfterValidator(validate_seed_range)]

UnitInterval = Annotated[float, AfterValidator(validate_open_unit)]

Interval = Annotated[tuple[float, float], AfterValidator(validate_interval)]


# --- Run configuration ---

class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    algo: AlgoName = "eddp_fast"
    T: int = Field(default=6, ge=2)
    epsilon: float = Field(default=0.05, gt=0)
    max_iters: int = Field(default=config.DEFAULT_MAX_ITERS, ge=1)
    seed: Seed = None
    workers: int = Field(default=config.DEFAULT_WORKERS, ge=0)
    no_reset: bool = False
    lipschitz_sum: Optional[float] = Field(default=None, gt=0)

    # statistical upper bound by policy rollouts; rollouts=0 switches it off
    rollouts: int = Field(default=0, ge=0)
    policy_horizon: int = Field(default=50, ge=1)
    policy_every: int = Field(default=0, ge=0)

    M0bar: Optional[float] = Field(default=None, gt=0)

    # hierarchical runs
    eps_lo: float = Field(default=0.05, gt=0)
    rho: UnitInterval = 0.1
    M_D: Optional[float] = Field(default=None, gt=0)
    slack_cuts: bool = False
    exact_cut_period: int = Field(default=0, ge=0)
    pdsa_max_iters: int = Field(default=config.PDSA_MAX_ITERS, ge=1)
    dual_cap: float = Field(default=1.0, ge=0)

    lp_method: Literal["highs", "simplex"] = config.LP_METHOD if config.LP_METHOD in ("highs", "simplex") else "highs"
    record_wall_time: bool = config.RECORD_WALL_TIME
    stall_window: int = Field(default=50, ge=1)

    @model_validator(mode="after")
    def check_seed_for_sampling(self):
        if self.algo in ("sddp", "hddp") and self.seed is None:
            raise ValueError(f"a seed is required for algo={self.algo}")
        return self


# --- Trace rows ---

class IterationRecord(BaseModel):
    iter: int
    lb_root: float
    ub_model: Optional[float] = None
    ub_policy: Optional[float] = None
    t_star: int
    selected: int
    wall_ms: Optional[float] = None
    cuts_total: int
    eps0: Optional[float] = None
    saturation_progress: int = 0

    # hierarchical runs only
    eps_c_max: Optional[float] = None
    pdsa_iters: Optional[int] = None
    lb_exact: Optional[float] = None


TRACE_COLUMNS = ["iter", "lb_root", "ub_model", "ub_policy", "t_star", "selected", "wall_ms",
                 "cuts_total", "eps0", "saturation_progress"]
HDDP_COLUMNS = TRACE_COLUMNS + ["eps_c_max", "pdsa_iters", "lb_exact"]


# --- Benchmark parameters ---

class ReservoirParams(BaseModel):
    """Synthetic hydro-thermal system; the numbers are illustrative, not a real dataset."""

    num_reservoirs: int = Field(default=2, ge=1)
    num_scenarios: int = Field(default=10, ge=1)
    demand: float = Field(default=10.0, gt=0)
    thermal_cost: float = Field(default=5.0, gt=0)
    turbine_max: float = Field(default=6.0, gt=0)
    capacity: float = Field(default=20.0, gt=0)
    inflow_mean: float = Field(default=4.0, ge=0)
    inflow_spread: float = Field(default=2.0, ge=0)
    initial_fill: float = Field(default=0.5, ge=0, le=1)
    discount: UnitInterval = 0.9
    T_eff: int = Field(default=12, ge=2)


class EdParams(BaseModel):
    generators: int = Field(default=10, ge=1)
    regions: int = Field(default=4, ge=1)
    battery_bounds: Interval = (0.0, 10.0)
    battery_rate: float = Field(default=5.0, ge=0)
    generator_bounds: Interval = (0.0, 10.0)
    generator_cost: Interval = (1.0, 10.0)
    beta_range: Interval = (0.8, 1.0)
    alpha_range: Interval = (0.8, 1.0)
    penalty: float = Field(default=100.0, gt=0)
    demand_range: Interval = (5.0, 20.0)
    hospital_demand_range: Interval = (2.0, 8.0)
    supply_bounds: Interval = (0.0, 10.0)
    discount: UnitInterval = 0.95
    N1: int = Field(default=10, ge=1)
    N2: int = Field(default=10, ge=1)
    eps_lo: float = Field(default=0.05, gt=0)
    rho: UnitInterval = 0.1
    eps0: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def check_eps_lo(self):
        if self.eps_lo > self.eps0:
            raise ValueError("eps_lo must not exceed the declared regularity constant eps0")
        return self


class PdsaParams(BaseModel):
    """Constant step-size schedule; construction checks the convergence conditions."""

    N: int = Field(ge=1)
    w: float = Field(default=1.0, gt=0)
    theta: float = Field(default=1.0, gt=0)
    tau: float = Field(gt=0)
    eta: float = Field(gt=0)
    D_X: float = Field(ge=0)
    alpha_X: float = Field(default=1.0, gt=0)
    W_norm: float = Field(ge=0)

    @model_validator(mode="after")
    def check_step_conditions(self):
        # constant schedules make the w*tau and w*eta monotonicity conditions hold trivially
        if not math.isclose(self.w * self.theta, self.w, rel_tol=1e-12):
            raise ValueError("w * theta must equal w")
        needed = 2.0 * self.W_norm ** 2
        if self.w * self.tau * self.eta * self.alpha_X < self.w * needed * (1 - 1e-12):
            raise ValueError("w * tau * eta * alpha_X must be at least 2 * w * ||W||^2")
        if self.tau * self.eta * self.alpha_X < needed * (1 - 1e-12):
            raise ValueError("tau * eta * alpha_X must be at least 2 * ||W||^2")
        return self
