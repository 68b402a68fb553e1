"""Coupled-constraint problem instances and a centralized reference solver.

A problem couples ``n`` agents through one affine constraint
``sum_i A_i x_i = sum_i d_i``; each agent owns a separable objective and a
box-shaped feasible set.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .topology import NetworkGraph

EXP_CLAMP = 700.0


class DomainOverflowWarning(RuntimeWarning):
    """The exponent of an exponential cost term was clamped."""


class UncertifiableSmoothnessError(ValueError):
    """A smoothness constant cannot be derived for an objective."""


class InfeasibleProblemError(ValueError):
    """The coupled constraint cannot be met within the local sets."""


class OracleError(RuntimeError):
    """The centralized solver failed to reach its tolerance."""


class UnsupportedObjectiveError(TypeError):
    """The requested operation needs a built-in separable objective."""


def _vec(values, p: int | None = None, name: str = "value") -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=float)).ravel()
    if p is not None:
        if arr.size == 1 and p > 1:
            arr = np.full(p, arr[0])
        if arr.size != p:
            raise ValueError(f"{name} must have dimension {p}, got {arr.size}")
    return arr


def _exp_clamped(z: np.ndarray) -> np.ndarray:
    if z.size and z.max() > EXP_CLAMP:
        warnings.warn(
            f"exponent {z.max():.4g} exceeds {EXP_CLAMP}; clamped",
            DomainOverflowWarning,
            stacklevel=3,
        )
        z = np.minimum(z, EXP_CLAMP)
    return np.exp(z)


# -- objectives ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuadExp:
    """Per-coordinate cost ``a u^2 + b u + delta exp(ell u)`` (plus constant ``c``)."""

    a: np.ndarray
    b: np.ndarray
    delta: np.ndarray
    ell: np.ndarray
    c: float = 0.0

    kind = "quadexp"

    def __post_init__(self):
        a = _vec(self.a, name="a")
        p = a.size
        for name in ("a", "b", "delta", "ell"):
            arr = _vec(getattr(self, name), p, name)
            if name != "b" and np.any(arr < 0):
                raise ValueError(f"{name} must be nonnegative")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self) -> int:
        return self.a.size

    def value(self, u) -> float:
        u = _vec(u, self.dim)
        e = _exp_clamped(self.ell * u)
        return float(np.sum(self.a * u * u + self.b * u + self.delta * e) + self.c)

    def gradient(self, u) -> np.ndarray:
        u = _vec(u, self.dim)
        return 2 * self.a * u + self.b + self.delta * self.ell * _exp_clamped(self.ell * u)

    def curvature(self, u) -> np.ndarray:
        """Diagonal of the Hessian."""
        u = _vec(u, self.dim)
        return 2 * self.a + self.delta * self.ell**2 * _exp_clamped(self.ell * u)

    def smoothness(self, lower, upper) -> tuple[float, float]:
        """``(l_f, mu)`` certified over the box ``[lower, upper]``."""
        lower, upper = _vec(lower, self.dim), _vec(upper, self.dim)
        expo = (self.delta > 0) & (self.ell > 0)
        if np.any(expo & ~np.isfinite(upper)):
            raise UncertifiableSmoothnessError(
                "exponential term on an unbounded box has no finite smoothness "
                "constant; declare a bound with a Custom objective"
            )
        up = np.where(expo, upper, 0.0)
        low = np.where(expo & np.isfinite(lower), lower, 0.0)
        with np.errstate(over="ignore"):
            hi = np.where(expo, self.delta * self.ell**2 * np.exp(self.ell * up), 0.0)
            lo_arg = np.where(expo & np.isfinite(lower), self.ell * low, -np.inf)
            lo = np.where(expo, self.delta * self.ell**2 * np.exp(lo_arg), 0.0)
        return float(np.max(2 * self.a + hi)), float(np.min(2 * self.a + lo))

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "delta": self.delta.tolist(),
            "ell": self.ell.tolist(),
            "c": self.c,
        }


class Quadratic(QuadExp):
    """Per-coordinate cost ``a u^2 + b u + c``; ``l_f = max 2a`` and ``mu = min 2a``."""

    kind = "quadratic"

    def __init__(self, a, b, c: float = 0.0):
        a = _vec(a, name="a")
        zeros = np.zeros(a.size)
        super().__init__(a, _vec(b, a.size, "b"), zeros, zeros, c)

    def to_json(self) -> dict:
        return {"kind": self.kind, "a": self.a.tolist(), "b": self.b.tolist(), "c": self.c}


@dataclass(frozen=True, eq=False)
class Custom:
    """User-supplied objective with declared constants.

    Custom objectives are not assumed separable, so the exact argmin step and
    the centralized solver reject them.
    """

    value_fn: Callable[[np.ndarray], float]
    gradient_fn: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    strong_convexity: float = 0.0
    dim: int = 1

    kind = "custom"

    def __post_init__(self):
        if not self.lipschitz >= self.strong_convexity >= 0:
            raise ValueError("need lipschitz >= strong_convexity >= 0")

    def value(self, u) -> float:
        return float(self.value_fn(_vec(u, self.dim)))

    def gradient(self, u) -> np.ndarray:
        return _vec(self.gradient_fn(_vec(u, self.dim)), self.dim, "gradient")

    def smoothness(self, lower, upper) -> tuple[float, float]:
        return float(self.lipschitz), float(self.strong_convexity)

    def to_json(self) -> dict:
        raise UnsupportedObjectiveError("custom objectives cannot be serialized")


Objective = QuadExp | Custom


def evaluate(obj: Objective, u) -> float:
    return obj.value(u)


def gradient(obj: Objective, u) -> np.ndarray:
    return obj.gradient(u)


def objective_from_json(data: dict) -> QuadExp:
    kind = data["kind"]
    if kind == "quadratic":
        return Quadratic(data["a"], data["b"], data.get("c", 0.0))
    if kind == "quadexp":
        return QuadExp(data["a"], data["b"], data["delta"], data["ell"], data.get("c", 0.0))
    raise ValueError(f"unknown objective kind {kind!r}")


# -- feasible sets ------------------------------------------------------------


class Box:
    """Axis-aligned box ``lower <= u <= upper``; bounds may be infinite."""

    kind = "box"

    def __init__(self, lower, upper):
        lower = _vec(lower, name="lower")
        upper = _vec(upper, lower.size, "upper")
        if np.any(lower > upper) or np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("box needs lower <= upper componentwise")
        lower.setflags(write=False)
        upper.setflags(write=False)
        self.lower, self.upper = lower, upper

    @property
    def dim(self) -> int:
        return self.lower.size

    def project(self, u) -> np.ndarray:
        return np.clip(_vec(u, self.dim), self.lower, self.upper)

    def violation(self, u) -> float:
        u = _vec(u, self.dim)
        gap = np.maximum(np.maximum(self.lower - u, u - self.upper), 0.0)
        return float(np.linalg.norm(gap))

    def to_json(self) -> dict:
        def enc(arr):
            return [float(v) if np.isfinite(v) else None for v in arr]

        return {"kind": self.kind, "lo": enc(self.lower), "hi": enc(self.upper)}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.lower.tolist()}, {self.upper.tolist()})"


class FullSpace(Box):
    kind = "full"

    def __init__(self, p: int = 1):
        super().__init__(np.full(p, -np.inf), np.full(p, np.inf))

    def to_json(self) -> dict:
        return {"kind": self.kind, "p": self.dim}


class Fixed(Box):
    """Degenerate box pinning the variable to ``point``."""

    kind = "fixed"

    def __init__(self, point):
        point = _vec(point, name="point")
        super().__init__(point, point)

    def to_json(self) -> dict:
        return {"kind": self.kind, "point": self.lower.tolist()}


FeasibleSet = Box


def project(s: Box, u) -> np.ndarray:
    return s.project(u)


def set_from_json(data: dict, p: int) -> Box:
    kind = data["kind"]
    if kind == "full":
        return FullSpace(p)
    if kind == "fixed":
        return Fixed(_vec(data["point"], p, "point"))

    def dec(values, default):
        if values is None:
            return np.full(p, default)
        return np.array([default if v is None else float(v) for v in np.atleast_1d(values)])

    if kind == "box":
        return Box(dec(data.get("lo"), -np.inf), dec(data.get("hi"), np.inf))
    raise ValueError(f"unknown set kind {kind!r}")


# -- problem ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AgentSpec:
    objective: Objective
    A: np.ndarray
    d: np.ndarray
    set: Box

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d = _vec(self.d, A.shape[0], "d")
        if self.set.dim != A.shape[1] or self.objective.dim != A.shape[1]:
            raise ValueError(
                f"agent dimensions disagree: A is {A.shape}, set has {self.set.dim}, "
                f"objective has {self.objective.dim}"
            )
        A.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "d", d)

    @cached_property
    def smoothness(self) -> tuple[float, float]:
        return self.objective.smoothness(self.set.lower, self.set.upper)

    def to_json(self) -> dict:
        return {
            "objective": self.objective.to_json(),
            "A": self.A.tolist(),
            "d": self.d.tolist(),
            "set": self.set.to_json(),
        }


@dataclass(frozen=True, eq=False)
class CoupledProblem:
    """``min sum_i f_i(x_i)`` s.t. ``sum_i A_i x_i = sum_i d_i``, ``x_i in X_i``."""

    agents: tuple[AgentSpec, ...]
    graph: NetworkGraph

    def __post_init__(self):
        agents = tuple(self.agents)
        object.__setattr__(self, "agents", agents)
        if len(agents) != self.graph.n:
            raise ValueError(f"{len(agents)} agents but graph has {self.graph.n} nodes")
        shapes = {a.A.shape for a in agents}
        if len(shapes) != 1:
            raise ValueError(f"inconsistent A_i shapes: {sorted(shapes)}")
        m, p = shapes.pop()
        if all(not np.any(a.A) for a in agents):
            raise ValueError("the matrices A_i are all zero")
        if m > self.n * p:
            raise ValueError(f"need m <= n*p, got m={m}, n*p={self.n * p}")

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def m(self) -> int:
        return self.agents[0].A.shape[0]

    @property
    def p(self) -> int:
        return self.agents[0].A.shape[1]

    @cached_property
    def A(self) -> np.ndarray:
        """Stacked ``(n, m, p)`` coupling matrices."""
        return np.stack([a.A for a in self.agents])

    @cached_property
    def d(self) -> np.ndarray:
        return np.stack([a.d for a in self.agents])

    @cached_property
    def lower(self) -> np.ndarray:
        return np.stack([a.set.lower for a in self.agents])

    @cached_property
    def upper(self) -> np.ndarray:
        return np.stack([a.set.upper for a in self.agents])

    @property
    def total_demand(self) -> np.ndarray:
        return self.d.sum(axis=0)

    @cached_property
    def separable(self) -> bool:
        return all(isinstance(a.objective, QuadExp) for a in self.agents)

    @cached_property
    def coefficients(self) -> tuple[np.ndarray, ...]:
        """Stacked ``(a, b, delta, ell)`` arrays of shape ``(n, p)``."""
        if not self.separable:
            raise UnsupportedObjectiveError("problem has non-separable objectives")
        objs = [a.objective for a in self.agents]
        return tuple(np.stack([getattr(o, k) for o in objs]) for k in ("a", "b", "delta", "ell"))

    @cached_property
    def has_exp(self) -> bool:
        if not self.separable:
            return False
        _, _, delta, ell = self.coefficients
        return bool(np.any((delta > 0) & (ell > 0)))

    @property
    def global_l_f(self) -> float:
        return smoothness_bounds(self)[0]

    @property
    def global_mu(self) -> float:
        return smoothness_bounds(self)[1]

    @cached_property
    def coupling_norm(self) -> float:
        """Spectral norm of ``diag(A_1, ..., A_n)``, i.e. ``max_i ||A_i||``."""
        return max(float(np.linalg.norm(a.A, 2)) for a in self.agents)

    @property
    def unconstrained(self) -> bool:
        return bool(np.all(np.isneginf(self.lower)) and np.all(np.isposinf(self.upper)))

    def gradients(self, x: np.ndarray, rows: slice = slice(None)) -> np.ndarray:
        """Stacked gradients ``grad f_i(x_i)`` for the agents in ``rows``."""
        if self.separable:
            a, b, delta, ell = (c[rows] for c in self.coefficients)
            g = 2 * a * x + b
            if self.has_exp:
                g = g + delta * ell * _exp_clamped(ell * x)
            return g
        idx = range(self.n)[rows]
        return np.stack([self.agents[i].objective.gradient(xi) for i, xi in zip(idx, x)])

    def objective_value(self, x: np.ndarray) -> float:
        return float(sum(a.objective.value(xi) for a, xi in zip(self.agents, x)))

    def constraint_residual(self, x: np.ndarray) -> np.ndarray:
        """``sum_i A_i x_i - sum_i d_i``."""
        return np.einsum("nmp,np->m", self.A, x) - self.total_demand

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "p": self.p,
            "agents": [a.to_json() for a in self.agents],
            "graph": self.graph.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict, base: Path | None = None) -> "CoupledProblem":
        m, p = int(data["m"]), int(data["p"])
        graph = data["graph"]
        if isinstance(graph, str):
            gpath = Path(graph)
            if base is not None and not gpath.is_absolute():
                gpath = base / gpath
            graph = NetworkGraph.load(gpath)
        else:
            graph = NetworkGraph.from_json(graph)
        agents = []
        for spec in data["agents"]:
            A = np.asarray(spec["A"], dtype=float).reshape(m, p)
            agents.append(
                AgentSpec(
                    objective_from_json(spec["objective"]),
                    A,
                    _vec(spec["d"], m, "d"),
                    set_from_json(spec["set"], p),
                )
            )
        return cls(tuple(agents), graph)

    def save(self, path) -> None:
        Path(path).write_text(dumps_problem(self))

    @classmethod
    def load(cls, path) -> "CoupledProblem":
        path = Path(path)
        return cls.from_json(json.loads(path.read_text()), base=path.parent)


def dumps_problem(problem: CoupledProblem) -> str:
    return json.dumps(problem.to_json(), indent=1, sort_keys=True)


def smoothness_bounds(problem: CoupledProblem) -> tuple[float, float]:
    """Global ``(l_f, mu)``: the largest agent ``l_f`` and the smallest ``mu``."""
    pairs = [a.smoothness for a in problem.agents]
    return max(l for l, _ in pairs), min(mu for _, mu in pairs)


# -- exact per-coordinate argmin ---------------------------------------------


def coordinate_argmin(problem: CoupledProblem, shift: np.ndarray, rows: slice = slice(None),
                      tol: float = 1e-12, max_halvings: int = 200) -> np.ndarray:
    """Solve ``argmin_{z in X_i} f_i(z) + <shift_i, z>`` for every agent in ``rows``.

    Each coordinate is independent for separable objectives, so the
    stationarity equation ``f_i'(z) + shift = 0`` is solved by vectorized
    bisection on the box. Unbounded sides are bracketed by doubling first.
    ``tol`` is the bracket width at which bisection stops (0 runs to
    machine precision or ``max_halvings``).
    """
    if not problem.separable:
        raise UnsupportedObjectiveError("exact argmin requires built-in separable objectives")
    a, b, delta, ell = (c[rows] for c in problem.coefficients)
    lo_set, hi_set = problem.lower[rows], problem.upper[rows]
    shift = np.asarray(shift, dtype=float)

    def slope(z):
        g = 2 * a * z + b + shift
        if problem.has_exp:
            g = g + delta * ell * np.exp(np.minimum(ell * z, EXP_CLAMP))
        return g

    lo = np.where(np.isfinite(lo_set), lo_set, np.minimum(np.where(np.isfinite(hi_set), hi_set, 0.0), 0.0) - 1.0)
    hi = np.where(np.isfinite(hi_set), hi_set, np.maximum(lo, 0.0) + 1.0)
    for _ in range(2100):
        with np.errstate(over="ignore", invalid="ignore"):
            grow_lo = ~np.isfinite(lo_set) & (slope(lo) > 0)
            grow_hi = ~np.isfinite(hi_set) & (slope(hi) < 0)
        if not (grow_lo.any() or grow_hi.any()):
            break
        width = hi - lo
        with np.errstate(over="ignore", invalid="ignore"):
            lo = np.where(grow_lo, lo - 2 * width, lo)
            hi = np.where(grow_hi, hi + 2 * width, hi)
    else:
        raise OracleError("no finite minimizer: objective is unbounded below on its set")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise OracleError("no finite minimizer: objective is unbounded below on its set")

    z_lo, z_hi = lo.copy(), hi.copy()
    at_lo = slope(lo) >= 0
    at_hi = slope(hi) <= 0
    for _ in range(max_halvings):
        if np.all((z_hi - z_lo) <= tol):
            break
        mid = 0.5 * (z_lo + z_hi)
        if np.all((mid == z_lo) | (mid == z_hi)):
            break
        up = slope(mid) > 0
        z_hi = np.where(up, mid, z_hi)
        z_lo = np.where(up, z_lo, mid)
    z = 0.5 * (z_lo + z_hi)
    z = np.where(at_lo, lo, np.where(at_hi & ~at_lo, hi, z))
    return np.clip(z, lo_set, hi_set)


# -- centralized oracle -------------------------------------------------------


class CentralizedSolution(NamedTuple):
    x: np.ndarray
    delta: np.ndarray
    iterations: int
    residual: float


def _achievable_range(problem: CoupledProblem) -> tuple[float, float]:
    A = problem.A[:, 0, :]
    lo, hi = problem.lower, problem.upper
    with np.errstate(invalid="ignore"):
        lo_terms = np.where(A > 0, A * lo, np.where(A < 0, A * hi, 0.0))
        hi_terms = np.where(A > 0, A * hi, np.where(A < 0, A * lo, 0.0))
    return float(lo_terms.sum()), float(hi_terms.sum())


def _check_feasible_lp(problem: CoupledProblem) -> None:
    from scipy.optimize import linprog

    n, m, p = problem.n, problem.m, problem.p
    A_eq = np.concatenate(list(problem.A), axis=1)
    bounds = [
        (None if np.isneginf(lo) else lo, None if np.isposinf(hi) else hi)
        for lo, hi in zip(problem.lower.ravel(), problem.upper.ravel())
    ]
    res = linprog(np.zeros(n * p), A_eq=A_eq, b_eq=problem.total_demand, bounds=bounds, method="highs")
    if res.status == 2:
        raise InfeasibleProblemError("total demand is outside the achievable range of sum A_i X_i")


def solve_centralized(problem: CoupledProblem, tol: float = 1e-10, delta0=None,
                      max_iter: int = 500) -> CentralizedSolution:
    """Reference optimum by dual ascent on the coupling multiplier.

    For a multiplier ``delta`` every agent solves
    ``argmin_{z in X_i} f_i(z) + <A_i z, delta>`` coordinate-wise by
    bisection. The outer loop drives ``sum A_i x_i(delta) - sum d_i`` to zero:
    scalar bisection when ``m == 1`` and generalized-Newton ascent with
    Armijo backtracking on the concave dual otherwise. Once dual increments
    drop below roundoff a step is accepted if it shrinks the residual.

    Returns
    -------
    CentralizedSolution
        ``(x, delta, iterations, residual)`` with ``x`` of shape ``(n, p)``.
    """
    if not problem.separable:
        raise UnsupportedObjectiveError("centralized solver requires built-in separable objectives")
    m = problem.m
    A = problem.A

    def primal(dl):
        return coordinate_argmin(problem, np.einsum("nmp,m->np", A, dl), tol=0.0)

    def resid(dl):
        return problem.constraint_residual(primal(dl))

    if m == 1:
        lo_sum, hi_sum = _achievable_range(problem)
        target = float(problem.total_demand[0])
        slack = 1e-12 * max(1.0, abs(target))
        if target < lo_sum - slack or target > hi_sum + slack:
            raise InfeasibleProblemError(
                f"total demand {target} outside achievable range [{lo_sum}, {hi_sum}]"
            )
        # residual is nonincreasing in delta
        center = 0.0 if delta0 is None else float(np.ravel(delta0)[0])
        width = 1.0
        left, right = center - width, center + width
        for _ in range(200):
            r_left, r_right = resid(np.array([left]))[0], resid(np.array([right]))[0]
            if r_left >= 0 >= r_right:
                break
            width *= 2
            if r_left < 0:
                left = center - width
            if r_right > 0:
                right = center + width
        else:
            raise OracleError("could not bracket the optimal multiplier")
        best = None
        it = 0
        for it in range(1, max_iter + 1):
            mid = 0.5 * (left + right)
            r = resid(np.array([mid]))[0]
            if best is None or abs(r) < abs(best[1]):
                best = (mid, r)
            if r == 0 or mid in (left, right):
                break
            if r > 0:
                left = mid
            else:
                right = mid
        dl = np.array([best[0]])
        x = primal(dl)
        res = float(np.linalg.norm(problem.constraint_residual(x)))
        if res > tol:
            raise OracleError(f"dual bisection stalled at residual {res:.3e} > {tol:.1e}")
        return CentralizedSolution(x, dl, it, res)

    if np.any(np.isfinite(problem.lower)) or np.any(np.isfinite(problem.upper)):
        _check_feasible_lp(problem)
    a, _, delta_c, ell = problem.coefficients
    dl = np.zeros(m) if delta0 is None else _vec(delta0, m, "delta0").copy()
    # concave dual: q(dl) = sum f_i(x_i(dl)) + <dl, sum A_i x_i(dl) - sum d_i>
    def dual_value(dl, x):
        return problem.objective_value(x) + float(dl @ problem.constraint_residual(x))

    l_f, mu = smoothness_bounds(problem)
    curv_floor = max(mu, 1e-12)
    step_grad = curv_floor / max(sum(np.linalg.norm(ag.A, 2) ** 2 for ag in problem.agents), 1e-300)
    step_grad_inv = 1.0 / step_grad
    x = primal(dl)
    r = problem.constraint_residual(x)
    q = dual_value(dl, x)
    for it in range(1, max_iter + 1):
        if np.linalg.norm(r) <= tol:
            return CentralizedSolution(x, dl, it - 1, float(np.linalg.norm(r)))
        curv = 2 * a + delta_c * ell**2 * np.exp(np.minimum(ell * x, EXP_CLAMP))
        free = (x > problem.lower) & (x < problem.upper) & (curv > 0)
        inv = np.where(free, 1.0 / np.where(curv > 0, curv, 1.0), 0.0)
        H = np.einsum("nmp,np,nkp->mk", A, inv, A)
        # a positive shift keeps the step an ascent direction when bounds pin a subspace
        H = H + (1e-9 * max(np.trace(H), step_grad_inv) / m) * np.eye(m)
        direction = np.linalg.solve(H, r)
        slope = float(r @ direction)
        accepted = False
        scale = 1.0
        for _ in range(80):
            cand = dl + scale * direction
            xc = primal(cand)
            rc = problem.constraint_residual(xc)
            qc = dual_value(cand, xc)
            flat = qc >= q - 1e-13 * max(1.0, abs(q))
            if qc >= q + 1e-4 * scale * slope or (flat and np.linalg.norm(rc) < np.linalg.norm(r)):
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            cand = dl + step_grad * r
            xc = primal(cand)
            rc = problem.constraint_residual(xc)
        dl, x, r = cand, xc, rc
        q = dual_value(dl, x)
    res = float(np.linalg.norm(r))
    if res > tol:
        raise OracleError(f"dual ascent did not converge: residual {res:.3e} > {tol:.1e}")
    return CentralizedSolution(x, dl, max_iter, res)


# -- KKT report -----------------------------------------------------------------


@dataclass(frozen=True)
class KKTReport:
    feasibility: float
    stationarity: float
    membership: float
    per_agent_stationarity: np.ndarray = field(repr=False, default=None)

    @property
    def worst(self) -> float:
        return max(self.feasibility, self.stationarity, self.membership)

    def ok(self, tol: float) -> bool:
        return self.worst <= tol


def kkt_check(problem: CoupledProblem, x, delta, active_tol: float = 1e-9) -> KKTReport:
    """Residuals of the KKT system at a primal point and a shared multiplier.

    Stationarity is the distance from ``-(grad f_i(x_i) + A_i^T delta)`` to
    the normal cone of ``X_i`` at ``x_i``: coordinates within ``active_tol``
    of a bound only penalize the wrong sign, pinned coordinates are free.
    """
    x = np.asarray(x, dtype=float).reshape(problem.n, problem.p)
    delta = _vec(delta, problem.m, "delta")
    feas = float(np.linalg.norm(problem.constraint_residual(x)))
    r = problem.gradients(x) + np.einsum("nmp,m->np", problem.A, delta)
    lo, hi = problem.lower, problem.upper
    at_lo = x <= lo + active_tol * np.maximum(1.0, np.abs(np.where(np.isfinite(lo), lo, 0.0)))
    at_hi = x >= hi - active_tol * np.maximum(1.0, np.abs(np.where(np.isfinite(hi), hi, 0.0)))
    viol = np.where(
        at_lo & at_hi,
        0.0,
        np.where(at_lo, np.maximum(-r, 0.0), np.where(at_hi, np.maximum(r, 0.0), np.abs(r))),
    )
    per_agent = np.linalg.norm(viol, axis=1)
    gap = np.maximum(np.maximum(lo - x, x - hi), 0.0)
    return KKTReport(feas, float(np.linalg.norm(viol)), float(np.linalg.norm(gap)), per_agent)
