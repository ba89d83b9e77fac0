"""
Saturation levels over a dynamic discretization of the state box.

Cells are hypercubes of side epsilon / sqrt(n) anchored at the lower corner, so
any two points sharing a cell are within epsilon in the Euclidean norm. Only
touched cells are stored; an absent cell has level T - 1.
"""
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from dualdp.services.exceptions import ConfigError, EmptyCandidates, OutOfDomain, ScheduleError


DOMAIN_TOL = 1e-9

CellKey = tuple[int, ...]


@dataclass(eq=False)
class SaturationMap:
    epsilon: float
    T: int
    lower: np.ndarray
    upper: np.ndarray
    table: dict[CellKey, int] = field(default_factory=dict)

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        D = float((self.upper - self.lower).max())
        if self.T < 2:
            raise ConfigError(f"T must be at least 2, got {self.T}")
        if not 0.0 < self.epsilon < D:
            raise ConfigError(f"epsilon must lie in (0, D={D:.6g}), got {self.epsilon}")
        self.delta = self.epsilon / math.sqrt(self.lower.size)

    @property
    def top(self) -> int:
        return self.T - 1

    @property
    def progress(self) -> int:
        """Total level drop over touched cells; only ever grows."""
        return sum(self.top - level for level in self.table.values())

    def to_frame(self) -> pd.DataFrame:
        n = self.lower.size
        rows = [dict({f"c{j}": k for j, k in enumerate(key)}, level=level)
                for key, level in sorted(self.table.items())]
        return pd.DataFrame(rows, columns=[f"c{j}" for j in range(n)] + ["level"])


def cell_of(m: SaturationMap, x) -> CellKey:
    x = np.asarray(x, dtype=float).ravel()
    if (x < m.lower - DOMAIN_TOL).any() or (x > m.upper + DOMAIN_TOL).any():
        raise OutOfDomain(f"point {x} outside the box")
    x = np.clip(x, m.lower, m.upper)
    return tuple(int(i) for i in np.floor((x - m.lower) / m.delta))


def level(m: SaturationMap, x) -> int:
    return m.table.get(cell_of(m, x), m.top)


def lower_level(m: SaturationMap, x, t: int) -> None:
    if not 0 <= t <= m.top:
        raise ValueError(f"level {t} outside 0..{m.top}")
    key = cell_of(m, x)
    m.table[key] = min(m.table.get(key, m.top), int(t))


def select_most_distinguishable(m: SaturationMap, candidates) -> tuple[int, int]:
    if len(candidates) == 0:
        raise EmptyCandidates("no candidate points to select from")
    levels = [level(m, x) for x in candidates]
    best = max(levels)
    return levels.index(best), best


def gap_level(gap: float, eps_schedule) -> int | None:
    """Smallest t with gap <= eps_t, or None when the gap exceeds the last entry."""
    schedule = np.asarray(eps_schedule, dtype=float)
    if (np.diff(schedule) <= 0).any():
        raise ScheduleError("epsilon schedule must be strictly increasing")
    hits = np.flatnonzero(gap <= schedule)
    return int(hits[0]) if hits.size else None


def assign_gap_level(m: SaturationMap, x, gap: float, eps_schedule) -> None:
    if len(eps_schedule) != m.T:
        raise ScheduleError(f"schedule has {len(eps_schedule)} entries, expected {m.T}")
    t = gap_level(max(gap, 0.0), eps_schedule)
    if t is not None:
        lower_level(m, x, t)
