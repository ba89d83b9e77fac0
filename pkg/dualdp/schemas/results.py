from typing import Any, Optional, Literal

from pydantic import BaseModel, ConfigDict, Field

from dualdp.schemas.schemas import IterationRecord


class RunResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    algo: str
    status: Literal["converged", "max_iters", "stalled"]
    x_final: list[float]
    records: list[IterationRecord]
    eps_schedule: list[float] = []
    reported_bound: Optional[float] = None

    # live models, kept for dumps and diagnostics; never serialized
    lower: Any = Field(default=None, exclude=True, repr=False)
    upper: Any = Field(default=None, exclude=True, repr=False)
    saturation: Any = Field(default=None, exclude=True, repr=False)
    pdsa_diagnostics: Any = Field(default=None, exclude=True, repr=False)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def lb_root(self) -> float:
        return self.records[-1].lb_root if self.records else float("nan")


class OracleReport(BaseModel):
    value: float
    error_bound: float
    horizon: int
    nodes: int


class VerifyReport(BaseModel):
    passed: bool
    lb_final: float
    oracle_value: float
    error_bound: float
    eps0: float
    gap: float
    reasons: list[str] = []
