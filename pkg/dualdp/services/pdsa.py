"""
Primal-dual stochastic approximation for saddle problems of the form

    min_{x in box}  max_{y}  f(x) + E_j v(x, j) + <y, q + U u - W x>

where the rows W x >= q + U u have free duals on equality rows and
nonnegative duals otherwise. The expectation is over second-stage samples j,
reached through an oracle returning (value, subgradient) at (x, j).

Steps are constant, so the averaged output uses equal weights.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd

from dualdp.app_log_config import logger
from dualdp.models.problem_model import PiecewiseLinearCost
from dualdp.schemas.schemas import PdsaParams
from dualdp.services.exceptions import DimensionError, OracleError
from dualdp.services.lp_solver import LpProblem, solve_lp


STEP_FLOOR = 1e-12
ORACLE_SLACK = 1e-6

SecondStageOracle = Callable[[np.ndarray, int], tuple[float, np.ndarray]]


@dataclass(frozen=True, eq=False)
class SaddleProblem:
    W: np.ndarray
    U: np.ndarray
    q: np.ndarray
    u: np.ndarray
    f: PiecewiseLinearCost
    dual_free: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    second_stage: Optional[SecondStageOracle] = None
    num_samples: int = 1
    G_bar: float = 0.0

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        q = np.asarray(self.q, dtype=float).ravel()
        u = np.asarray(self.u, dtype=float).ravel()
        m, d = (q.size, self.f.dim)
        if W.size == 0:
            W = np.zeros((m, d))
        U = np.asarray(self.U, dtype=float)
        U = np.zeros((m, u.size)) if U.size == 0 else np.atleast_2d(U)
        if W.shape != (m, d):
            raise DimensionError(f"W is {W.shape}, expected {(m, d)}")
        if U.shape != (m, u.size):
            raise DimensionError(f"U is {U.shape}, expected {(m, u.size)}")
        dual_free = np.asarray(self.dual_free, dtype=bool).ravel()
        if dual_free.size != m:
            raise DimensionError("dual cone mask does not match the row count")
        lower = np.asarray(self.lower, dtype=float).ravel()
        upper = np.asarray(self.upper, dtype=float).ravel()
        if lower.size != d or upper.size != d:
            raise DimensionError("primal box does not match the primal dimension")
        if not (np.isfinite(lower).all() and np.isfinite(upper).all()):
            raise ValueError("the primal domain must be a bounded box")
        if self.num_samples < 1:
            raise ValueError("num_samples must be at least 1")
        for name, value in (("W", W), ("U", U), ("q", q), ("u", u), ("dual_free", dual_free),
                            ("lower", lower), ("upper", upper)):
            object.__setattr__(self, name, value)

    @property
    def m(self) -> int:
        return self.q.size

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def rhs(self) -> np.ndarray:
        return self.q + self.U @ self.u

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower) / math.sqrt(2.0))

    @property
    def W_norm(self) -> float:
        if self.W.size == 0:
            return 0.0
        return float(np.linalg.norm(self.W, 2))

    def project_dual(self, y: np.ndarray) -> np.ndarray:
        return np.where(self.dual_free, y, np.maximum(y, 0.0))

    def expected_second_stage(self, x) -> float:
        if self.second_stage is None:
            return 0.0
        return float(np.mean([self.second_stage(x, j)[0] for j in range(self.num_samples)]))

    def lagrangian(self, x, y) -> float:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return float(self.f.evaluate(x) + self.expected_second_stage(x) + y @ (self.rhs - self.W @ x))


@dataclass(frozen=True, eq=False)
class PdsaCertificate:
    x_bar: np.ndarray
    y_bar: np.ndarray
    delta: np.ndarray
    eps_p: float
    eps_d: float
    eps_c: float
    value: float
    iterations: int
    diagnostics: list[dict] = field(default_factory=list, repr=False)
    clipped: int = 0


def with_epigraph(sp: SaddleProblem) -> SaddleProblem:
    """Rewrites a multi-piece f as a linear cost on an extra variable e with dualized rows e - g.x >= o."""
    if sp.f.is_affine:
        return sp
    pieces, d = sp.f.n_pieces, sp.d
    e_low, e_high = sp.f.box_min(sp.lower, sp.upper), sp.f.box_max(sp.lower, sp.upper)
    W = np.vstack([np.hstack([sp.W, np.zeros((sp.m, 1))]),
                   np.hstack([-sp.f.gradients, np.ones((pieces, 1))])])
    U = np.vstack([sp.U, np.zeros((pieces, sp.u.size))])
    oracle = sp.second_stage

    def lifted(x, j):
        value, gradient = oracle(x[:d], j)
        return value, np.concatenate([gradient, [0.0]])

    return SaddleProblem(
        W=W, U=U, q=np.concatenate([sp.q, sp.f.offsets]), u=sp.u,
        f=PiecewiseLinearCost.linear(np.concatenate([np.zeros(d), [1.0]])),
        dual_free=np.concatenate([sp.dual_free, np.zeros(pieces, dtype=bool)]),
        lower=np.concatenate([sp.lower, [e_low]]), upper=np.concatenate([sp.upper, [e_high]]),
        second_stage=lifted if oracle is not None else None,
        num_samples=sp.num_samples, G_bar=sp.G_bar,
    )


def default_params(sp: SaddleProblem, N: int, diameter: float | None = None) -> PdsaParams:
    """w = theta = 1, tau = max(G sqrt(3N) / D_X, sqrt(2) ||W||), eta = sqrt(2) ||W||."""
    if N < 1:
        raise ValueError("N must be at least 1")
    D_X = sp.diameter if diameter is None else float(diameter)
    W_norm = sp.W_norm
    eta = math.sqrt(2.0) * W_norm
    sampled = sp.G_bar * math.sqrt(3.0 * N) / D_X if D_X > 0 else 0.0
    tau = max(sampled, eta)
    return PdsaParams(N=N, tau=max(tau, STEP_FLOOR), eta=max(eta, STEP_FLOOR), D_X=D_X, W_norm=W_norm)


def high_probability_constant(params: PdsaParams, G_bar: float, confidence: float) -> float:
    """Subgradient-noise constant C_N with sigma = 2 G_bar and constant steps."""
    sigma = 2.0 * G_bar
    w, N = params.w, params.N
    return (confidence * params.D_X * sigma * math.sqrt(N * w ** 2)
            + N * w * (4.0 * G_bar ** 2 + (1.0 + confidence) * sigma ** 2) / (params.alpha_X * params.tau))


def confidence_for(failure: float) -> float:
    """Smallest level c with exp(-c) + exp(-c^2 / 3) <= failure (up to the max of the two bounds)."""
    failure = min(max(failure, 1e-300), 1.0)
    return max(math.log(2.0 / failure), math.sqrt(3.0 * math.log(2.0 / failure)))


def run_pdsa(sp: SaddleProblem, params: PdsaParams, seed, x0=None, y0=None,
             failure: float = 0.05, record: bool = False, clip_oracle: bool = False) -> PdsaCertificate:
    """
    Runs N extrapolated primal-dual steps and returns the averaged pair with its certificate.

    `seed` may be an int or a numpy SeedSequence. With `record` each step's
    (k, ||y_k||, sampled index, objective estimate) is kept for a diagnostic CSV.
    A subgradient above G_bar raises OracleError, or with `clip_oracle` is
    scaled back to norm G_bar and counted in the certificate.
    """
    original = sp
    sp = with_epigraph(sp)
    d0, m0 = original.d, original.m

    rng = np.random.default_rng(seed)
    if x0 is None:
        x = sp.lower.copy()
    else:
        x = np.clip(np.asarray(x0, dtype=float).ravel(), original.lower, original.upper)
        if sp.d > d0:
            x = np.concatenate([x, np.clip([original.f.evaluate(x)], sp.lower[-1], sp.upper[-1])])
    y_init = np.zeros(sp.m)
    if y0 is not None:
        y_init[:m0] = np.asarray(y0, dtype=float).ravel()
    y_init = sp.project_dual(y_init)
    y, y_older = y_init.copy(), y_init.copy()

    c = sp.f.gradients[0]
    rhs = sp.rhs
    tau, eta, theta, w = params.tau, params.eta, params.theta, params.w
    limit = sp.G_bar * (1.0 + ORACLE_SLACK)

    x_sum, y_sum = np.zeros(sp.d), np.zeros(sp.m)
    diagnostics = []
    clipped = 0
    for k in range(1, params.N + 1):
        sample = int(rng.integers(0, sp.num_samples))
        value, G = 0.0, np.zeros(sp.d)
        if sp.second_stage is not None:
            value, G = sp.second_stage(x, sample)
            G = np.asarray(G, dtype=float)
            norm = float(np.linalg.norm(G))
            if norm > limit:
                if not clip_oracle:
                    raise OracleError(f"second-stage subgradient norm {norm:.6g} exceeds the bound {sp.G_bar:.6g}")
                G = G * (sp.G_bar / norm)
                clipped += 1

        extrapolated = theta * (y - y_older) + y
        x = np.clip(x - (c + G - sp.W.T @ extrapolated) / tau, sp.lower, sp.upper)
        y_older, y = y, sp.project_dual(y + (rhs - sp.W @ x) / eta)

        x_sum += w * x
        y_sum += w * y
        if record:
            diagnostics.append({"k": k, "y_norm": float(np.linalg.norm(y)), "sample": sample + 1,
                                "objective": float(c @ x + value)})

    if clipped:
        logger.warning(f"pdsa clipped {clipped} of {params.N} second-stage subgradients to the bound {sp.G_bar:.6g}")

    weight = w * params.N
    x_bar, y_bar = x_sum / weight, y_sum / weight
    delta = w * eta * (y_init - y) / weight

    C_N = high_probability_constant(params, sp.G_bar, confidence_for(failure))
    gap_bound = (2.0 * w * tau * params.D_X ** 2 + w * eta / 2.0 * float(y_init @ y_init) + C_N) / weight
    logger.debug(f"pdsa N={params.N} tau={tau:.4g} eta={eta:.4g} C_N={C_N:.4g} gap_bound={gap_bound:.4g} "
                 f"||delta||={np.linalg.norm(delta):.4g}")

    x_out, y_out = x_bar[:d0], y_bar[:m0]
    return PdsaCertificate(
        x_bar=x_out,
        y_bar=y_out,
        delta=delta,
        eps_p=gap_bound,
        eps_d=gap_bound,
        eps_c=float(np.linalg.norm(delta)),
        value=original.lagrangian(x_out, y_out),
        iterations=params.N,
        diagnostics=diagnostics,
        clipped=clipped,
    )


def diagnostics_frame(cert: PdsaCertificate) -> pd.DataFrame:
    return pd.DataFrame(cert.diagnostics, columns=["k", "y_norm", "sample", "objective"])


def exact_dual(sp: SaddleProblem, method: str | None = None) -> np.ndarray:
    """Optimal row multipliers of the saddle problem without a second stage, by one LP."""
    if sp.second_stage is not None:
        raise ValueError("exact duals are only available without a second-stage oracle")
    lifted = with_epigraph(sp)
    free = lifted.dual_free
    lp = LpProblem.build(
        lifted.f.gradients[0],
        eq=(lifted.W[free], lifted.rhs[free]),
        geq=(lifted.W[~free], lifted.rhs[~free]),
        lower=lifted.lower,
        upper=lifted.upper,
    )
    sol = solve_lp(lp, method)
    y = np.zeros(lifted.m)
    y[free] = sol.duals[: int(free.sum())]
    y[~free] = sol.duals[int(free.sum()):]
    return y[: sp.m]


def estimate_gaps(sp: SaddleProblem, cert: PdsaCertificate, test_points, y_star=None) -> tuple[float, float]:
    """
    Empirical lower estimates of the two gap functions at the certificate:
    max over the test points of L(x_bar, y*) - L(x, y_bar), and the same plus <delta, y*>.
    """
    if y_star is None:
        y_star = exact_dual(sp) if sp.second_stage is None else cert.y_bar
    y_star = np.asarray(y_star, dtype=float)
    anchor = sp.lagrangian(cert.x_bar, y_star)
    shift = float(cert.delta[: sp.m] @ y_star)
    gap_star = gap_delta = 0.0
    for point in test_points:
        point = np.clip(np.asarray(point, dtype=float).ravel(), sp.lower, sp.upper)
        diff = anchor - sp.lagrangian(point, cert.y_bar)
        gap_star = max(gap_star, diff)
        gap_delta = max(gap_delta, diff + shift)
    return gap_star, gap_delta
