"""Lower cutting-plane model of the cost-to-go function."""
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from dualdp.models.problem_model import LinearConstraintBlock, StationaryInstance
from dualdp.services.exceptions import LengthMismatch


@dataclass(frozen=True, eq=False)
class Cut:
    intercept: float
    gradient: np.ndarray
    anchor: np.ndarray
    iteration: int
    slack_correction: float = 0.0

    def __call__(self, x) -> float:
        return float(self.intercept + self.gradient @ (np.asarray(x, dtype=float) - self.anchor)
                     - self.slack_correction)


@dataclass(eq=False)
class LowerModel:
    """max(v0, cuts) with cuts appended in iteration order; never pruned."""

    v0: float
    n: int
    cuts: list[Cut] = field(default_factory=list)

    def __post_init__(self):
        self._stack()

    def _stack(self):
        if self.cuts:
            self._grads = np.vstack([c.gradient for c in self.cuts])
            self._consts = np.array([c.intercept - c.gradient @ c.anchor - c.slack_correction
                                     for c in self.cuts])
        else:
            self._grads = np.zeros((0, self.n))
            self._consts = np.zeros(0)

    def __len__(self) -> int:
        return len(self.cuts)

    @property
    def gradients(self) -> np.ndarray:
        return self._grads

    @property
    def constants(self) -> np.ndarray:
        """Cut l evaluates to constants[l] + gradients[l].x."""
        return self._consts

    @property
    def max_gradient_norm(self) -> float:
        if not self.cuts:
            return 0.0
        return float(np.linalg.norm(self._grads, axis=1).max())

    def active_gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.cuts:
            return np.zeros(self.n)
        values = self._consts + self._grads @ x
        best = int(np.argmax(values))
        if values[best] < self.v0:
            return np.zeros(self.n)
        return self._grads[best].copy()

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for cut in self.cuts:
            row = {"iteration": cut.iteration, "intercept": cut.intercept, "slack": cut.slack_correction}
            row.update({f"g{j}": v for j, v in enumerate(cut.gradient)})
            row.update({f"a{j}": v for j, v in enumerate(cut.anchor)})
            rows.append(row)
        columns = (["iteration", "intercept", "slack"] + [f"g{j}" for j in range(self.n)]
                   + [f"a{j}" for j in range(self.n)])
        return pd.DataFrame(rows, columns=columns)


def init_lower(inst: StationaryInstance) -> LowerModel:
    """v0 = average over scenarios 1..N of the stage-cost minimum, divided by (1 - discount)."""
    minima = inst.cost_lo[1:]
    v0 = float(np.sum(minima)) / (inst.N * (1.0 - inst.discount))
    return LowerModel(v0=v0, n=inst.n)


def evaluate(m: LowerModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if not m.cuts:
        return m.v0
    return float(max(m.v0, (m.constants + m.gradients @ x).max()))


def add_averaged_cut(m: LowerModel, values, subgradients, anchor, slack: float = 0.0,
                     iteration: int | None = None) -> Cut:
    values = [float(v) for v in values]
    if len(values) != len(subgradients) or not values:
        raise LengthMismatch(f"{len(values)} values against {len(subgradients)} subgradients")

    # fixed ascending scenario order keeps the sum bit-reproducible
    value_sum = 0.0
    gradient_sum = np.zeros(m.n)
    for value, gradient in zip(values, subgradients):
        gradient = np.asarray(gradient, dtype=float).ravel()
        if gradient.size != m.n:
            raise LengthMismatch(f"subgradient has {gradient.size} entries, expected {m.n}")
        value_sum += value
        gradient_sum = gradient_sum + gradient

    count = len(values)
    cut = Cut(
        intercept=value_sum / count,
        gradient=gradient_sum / count,
        anchor=np.asarray(anchor, dtype=float).copy(),
        iteration=len(m.cuts) + 1 if iteration is None else iteration,
        slack_correction=float(slack),
    )
    m.cuts.append(cut)
    m._stack()
    return cut


def epigraph_block(m: LowerModel) -> LinearConstraintBlock:
    """Rows over (x, theta): theta >= v0 and theta - g.x >= const for every cut."""
    first = np.concatenate([np.zeros(m.n), [1.0]])
    rows = np.vstack([first, np.hstack([-m.gradients, np.ones((len(m), 1))])])
    rhs = np.concatenate([[m.v0], m.constants])
    return LinearConstraintBlock(
        matrix=rows,
        rhs=rhs,
        is_equality=np.zeros(rhs.size, dtype=bool),
        lower=np.full(m.n + 1, -np.inf),
        upper=np.full(m.n + 1, np.inf),
    )
