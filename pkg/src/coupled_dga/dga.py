"""Distributed gradient-based algorithm for coupled equality constraints.

Every agent ``i`` holds a primal block ``x_i``, a local copy ``y_i`` of the
coupling multiplier, a tracker ``lambda_i`` and the cached neighbor
aggregate ``t_i = sum_j p_ij (y_i - y_j)``. One round is::

    x_i <- P_{X_i}(x_i - alpha (grad f_i(x_i) + A_i^T y_i))
    y_i <- y_i - (1/eta) (-A_i x_i^+ + d_i - lambda_i + rho t_i)
    exchange y^+ along the edges, t_i <- sum_j p_ij (y_i^+ - y_j^+)
    lambda_i <- lambda_i - rho t_i^+

The exact variant replaces the projected gradient step by the local argmin
of ``f_i(z) + <A_i z, y_i>`` over ``X_i``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .harness import Harness, StopCriteria
from .problem import AgentSpec, CoupledProblem, coordinate_argmin
from .trace import IterationTrace

log = logging.getLogger(__name__)

VARIANTS = ("dga", "exact_mm", "dga_algorithm1_literal")
DIVERGENCE_LIMIT = 1e12


# -- parameters -------------------------------------------------------------------


@dataclass(frozen=True)
class Hyperparameters:
    alpha: float
    eta: float
    rho: float

    def __post_init__(self):
        for name in ("alpha", "eta", "rho"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "eta": self.eta, "rho": self.rho}


@dataclass(frozen=True)
class Condition:
    """Strict inequality ``lhs < rhs``."""

    name: str
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return self.lhs < self.rhs

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def __str__(self) -> str:
        mark = "ok" if self.passed else "VIOLATED"
        return f"{self.name}: {self.lhs:.6g} < {self.rhs:.6g} [{mark}, margin {self.margin:.3g}]"


@dataclass(frozen=True)
class ValidityReport:
    level: str
    conditions: tuple[Condition, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    @property
    def failed(self) -> list[Condition]:
        return [c for c in self.conditions if not c.passed]

    def __str__(self) -> str:
        return "\n".join(str(c) for c in self.conditions)

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "passed": self.passed,
            "conditions": [
                {"name": c.name, "lhs": c.lhs, "rhs": c.rhs, "margin": c.margin, "passed": c.passed}
                for c in self.conditions
            ],
        }


def validate_params(problem: CoupledProblem, hp: Hyperparameters, level: str = "lemma1") -> ValidityReport:
    """Check the step-size conditions at ``level`` ``"lemma1"`` or ``"theorem1"``.

    Since ``W`` is PSD, ``lambda_min(eta I - rho W) = eta - rho lambda_max(W)``.
    """
    if level not in ("lemma1", "theorem1"):
        raise ValueError(f"unknown validation level {level!r}")
    lam_max = problem.graph.lambda_max
    l_f = problem.global_l_f
    conds = [
        Condition("rho/eta < 1/lambda_max(W)", hp.rho / hp.eta, 1.0 / lam_max),
        Condition("alpha < 1/l_f", hp.alpha, 1.0 / l_f if l_f > 0 else math.inf),
    ]
    if level == "theorem1":
        bound = 4.0 * (hp.eta - hp.rho * lam_max) / problem.coupling_norm**2
        conds.append(Condition("alpha < 4 lambda_min(eta I - rho W)/||A||^2", hp.alpha, bound))
    return ValidityReport(level, tuple(conds))


def default_params(problem: CoupledProblem, safety: float = 0.9) -> Hyperparameters:
    """``rho = 1``, ``eta = 2 rho lambda_max(W)`` and ``alpha`` at ``safety`` times its bound."""
    if not 0 < safety < 1:
        raise ValueError(f"safety must lie strictly inside (0, 1), got {safety}")
    lam_max = problem.graph.lambda_max
    l_f = problem.global_l_f
    rho = 1.0
    eta = 2.0 * rho * lam_max
    inv_lf = 1.0 / l_f if l_f > 0 else math.inf
    alpha = safety * min(inv_lf, 4.0 * (eta - rho * lam_max) / problem.coupling_norm**2)
    hp = Hyperparameters(alpha, eta, rho)
    assert validate_params(problem, hp, "theorem1").passed
    return hp


def linear_regime_params(problem: CoupledProblem, rho: float = 1.0, safety: float = 0.9,
                         theta1: float = 0.45, theta2: float = 0.45, eta_margin: float = 1.01) -> Hyperparameters:
    """Parameters meeting the strong-convexity lower bounds on ``eta``.

    Uses ``alpha = safety / l_f`` (which is below ``2/(l_f + mu)``),
    ``theta0 = 1/alpha`` and the given ``theta1 + theta2 < 1``, then scales
    ``eta`` by ``eta_margin`` above the larger of the two bounds.
    """
    l_f, mu = problem.global_l_f, problem.global_mu
    if mu <= 0:
        raise ValueError("strongly convex objectives required (mu > 0)")
    if theta1 + theta2 >= 1:
        raise ValueError("need theta1 + theta2 < 1")
    a2 = problem.coupling_norm**2
    w_norm = problem.graph.lambda_max
    alpha = safety / l_f
    theta0 = 1.0 / alpha
    first = alpha * a2 / ((2.0 / (l_f + mu) - 1.0 / theta0) * theta2)
    second = (l_f + mu) / (2.0 * mu * l_f * alpha) * (rho * a2 * w_norm + a2 / theta1)
    eta = eta_margin * max(first, second, 2.0 * rho * w_norm)
    return Hyperparameters(alpha, eta, rho)


# -- state ------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentState:
    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    t: np.ndarray


@dataclass(frozen=True, eq=False)
class SystemState:
    """Stacked agent variables: ``x`` is ``(n, p)``; ``y``, ``lam``, ``t`` are ``(n, m)``."""

    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    t: np.ndarray
    round: int = 0

    @property
    def agents(self) -> list[AgentState]:
        return [self.agent(i) for i in range(self.x.shape[0])]

    def agent(self, i: int) -> AgentState:
        return AgentState(self.x[i].copy(), self.y[i].copy(), self.lam[i].copy(), self.t[i].copy())

    @property
    def h(self) -> np.ndarray:
        return np.concatenate([self.x.ravel(), self.y.ravel(), self.lam.ravel()])

    def norm(self) -> float:
        return math.sqrt(float(np.sum(self.x**2) + np.sum(self.y**2) + np.sum(self.lam**2)))

    def copy(self) -> "SystemState":
        return SystemState(self.x.copy(), self.y.copy(), self.lam.copy(), self.t.copy(), self.round)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"x": self.x, "y": self.y, "lam": self.lam, "t": self.t}


def _shape(arr, shape, name) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.size != shape[0] * shape[1]:
        raise ValueError(f"{name} must have {shape[0]}x{shape[1]} entries, got shape {arr.shape}")
    return arr.reshape(shape).copy()


def init(problem: CoupledProblem, x0=None, y0=None, harness: Harness | None = None) -> SystemState:
    """Initial state: ``lambda^0 = 0`` and one exchange to form ``t^0``."""
    n, m, p = problem.n, problem.m, problem.p
    x = problem.project(np.zeros((n, p))) if x0 is None else _shape(x0, (n, p), "x0")
    y = np.zeros((n, m)) if y0 is None else _shape(y0, (n, m), "y0")
    lam = np.zeros((n, m))
    harness = harness or Harness(problem.graph)
    t = harness.exchange({"x": x, "y": y, "lam": lam}, round=0)
    return SystemState(x, y, lam, t, 0)


# -- local updates ------------------------------------------------------------------


def local_x_update(spec: AgentSpec, local: AgentState, hp: Hyperparameters) -> np.ndarray:
    """Projected gradient step on the agent's Lagrangian term."""
    g = spec.objective.gradient(local.x) + spec.A.T @ local.y
    return spec.set.project(local.x - hp.alpha * g)


def local_y_update(spec: AgentSpec, local: AgentState, hp: Hyperparameters, x_new) -> np.ndarray:
    resid = -spec.A @ np.asarray(x_new, dtype=float) + spec.d - local.lam + hp.rho * local.t
    return local.y - resid / hp.eta


def local_lambda_update(local: AgentState, hp: Hyperparameters, t_new, literal: bool = False) -> np.ndarray:
    """``lambda - rho t``; ``literal=True`` drops the ``rho`` factor."""
    scale = 1.0 if literal else hp.rho
    return local.lam - scale * np.asarray(t_new, dtype=float)


# -- rounds -------------------------------------------------------------------------


def _at_y(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    if A.shape[1] == 1 and A.shape[2] == 1:
        return A[:, 0, :] * y
    return np.einsum("nmp,nm->np", A, y)


def _a_x(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    if A.shape[1] == 1 and A.shape[2] == 1:
        return A[:, :, 0] * x
    return np.einsum("nmp,np->nm", A, x)


def _round(state: SystemState, problem: CoupledProblem, hp: Hyperparameters, harness: Harness,
           x_phase: Callable, literal: bool) -> SystemState:
    x, y, lam, t = state.x, state.y, state.lam, state.t
    A, d = problem.A, problem.d
    x_new = np.empty_like(x)
    y_new = np.empty_like(y)
    lam_new = np.empty_like(lam)

    def y_phase(r):
        resid = -_a_x(A[r], x_new[r]) + d[r] - lam[r] + hp.rho * t[r]
        y_new[r] = y[r] - resid / hp.eta

    harness.run_phase(lambda r: x_phase(r, x_new))
    harness.run_phase(y_phase)
    t_new = harness.exchange({"x": x_new, "y": y_new, "lam": lam}, round=state.round + 1)
    scale = 1.0 if literal else hp.rho

    def lam_phase(r):
        lam_new[r] = lam[r] - scale * t_new[r]

    harness.run_phase(lam_phase)
    return SystemState(x_new, y_new, lam_new, t_new, state.round + 1)


def step(state: SystemState, problem: CoupledProblem, hp: Hyperparameters,
         harness: Harness | None = None, literal: bool = False) -> SystemState:
    """One synchronous round of the gradient-based algorithm."""
    harness = harness or Harness(problem.graph)
    x, y = state.x, state.y
    A, lo, hi = problem.A, problem.lower, problem.upper

    def x_phase(r, out):
        g = problem.gradients(x[r], r) + _at_y(A[r], y[r])
        out[r] = np.clip(x[r] - hp.alpha * g, lo[r], hi[r])

    return _round(state, problem, hp, harness, x_phase, literal)


def exact_mm_step(state: SystemState, problem: CoupledProblem, hp: Hyperparameters,
                  harness: Harness | None = None, tol: float = 1e-12, max_halvings: int = 200) -> SystemState:
    """One round with the x-step solved exactly by per-coordinate bisection."""
    harness = harness or Harness(problem.graph)
    y, A = state.y, problem.A

    def x_phase(r, out):
        out[r] = coordinate_argmin(problem, _at_y(A[r], y[r]), rows=r, tol=tol, max_halvings=max_halvings)

    return _round(state, problem, hp, harness, x_phase, literal=False)


# -- driver -------------------------------------------------------------------------


def run(problem: CoupledProblem, hp: Hyperparameters, stop: StopCriteria | None = None,
        variant: str = "dga", harness: Harness | None = None, x0=None, y0=None,
        reference=None, metric=None, keep_history: bool = False,
        on_round: Callable[[SystemState], None] | None = None) -> IterationTrace:
    """Iterate until the stopping rule, the round budget or the divergence guard.

    Parameters
    ----------
    reference : object with ``x``, ``y``, ``lam`` arrays, optional
        Optimal point; enables the ``dist_sq`` and ``gap_omega_sq`` columns.
    metric : OmegaMetric, optional
        Enables the Omega-norm columns.
    keep_history : bool
        Store every :class:`SystemState` in ``trace.history``.

    Returns
    -------
    IterationTrace
        ``status`` is ``"converged"``, ``"max_rounds"`` or ``"diverged"``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    stop = stop or StopCriteria()
    own_harness = harness is None
    harness = harness or Harness(problem.graph)
    trace = IterationTrace(variant=variant)
    if keep_history:
        trace.history = []

    if variant == "exact_mm":
        advance = lambda s: exact_mm_step(s, problem, hp, harness)  # noqa: E731
    else:
        literal = variant == "dga_algorithm1_literal"
        advance = lambda s: step(s, problem, hp, harness, literal=literal)  # noqa: E731

    def record(state: SystemState, prev: SystemState | None, elapsed: float) -> None:
        resid = problem.constraint_residual(state.x)
        row = {
            "round": state.round,
            "feas_sq": float(resid @ resid),
            "consensus_sq": float(np.sum(state.y * state.t)),
            "wall_time_s": elapsed,
        }
        if prev is not None:
            row["opt_sq"] = float(np.sum((state.x - prev.x) ** 2))
            if metric is not None:
                row["delta_h_omega_sq"] = metric.norm_sq(state.x - prev.x, state.y - prev.y, state.lam - prev.lam)
        if reference is not None:
            row["dist_sq"] = float(np.sum((state.x - reference.x) ** 2))
            if metric is not None:
                row["gap_omega_sq"] = metric.norm_sq(
                    state.x - reference.x, state.y - reference.y, state.lam - reference.lam
                )
        trace.append(**row)
        if keep_history:
            trace.history.append(state)
        if on_round is not None:
            on_round(state)

    try:
        t0 = time.perf_counter()
        state = init(problem, x0, y0, harness)
        elapsed = time.perf_counter() - t0
        record(state, None, elapsed)
        trace.status = "max_rounds"
        for _ in range(stop.max_rounds):
            t0 = time.perf_counter()
            new = advance(state)
            elapsed += time.perf_counter() - t0
            record(new, state, elapsed)
            prev, state = state, new
            size = state.norm()
            if not math.isfinite(size) or size > DIVERGENCE_LIMIT:
                trace.status = "diverged"
                trace.message = f"||h^k|| = {size:.3e} exceeded {DIVERGENCE_LIMIT:.0e} at round {state.round}"
                log.warning(trace.message)
                break
            feas = math.sqrt(trace.feas_sq[-1])
            move = math.sqrt(trace.opt_sq[-1]) / hp.alpha
            if feas <= stop.feasibility_tol and move <= stop.step_tol:
                trace.status = "converged"
                break
        trace.final_state = state
    finally:
        if own_harness:
            harness.close()
    return trace
