"""Reproducible problem instances.

Every generator draws from ``numpy.random.default_rng(seed)`` (PCG64) in a
fixed order documented on the function, so the same ``(kind, seed,
overrides)`` always produces the same instance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .problem import AgentSpec, Box, CoupledProblem, Fixed, FullSpace, QuadExp, Quadratic, dumps_problem
from .topology import NetworkGraph

KINDS = ("dispatch118", "random_quadratic", "two_agent_analytic")

DISPATCH_BUSES = 118
DISPATCH_GENERATORS = 14
DISPATCH_DEMAND = 950.0
DISPATCH_CAPACITY = 250.0

TWO_AGENT_X_STAR = np.array([[0.5], [1.5]])
TWO_AGENT_DELTA_STAR = np.array([-1.0])


def _ranges(overrides: dict, defaults: dict) -> dict:
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ValueError(f"unknown overrides {sorted(unknown)}; allowed: {sorted(defaults)}")
    return {**defaults, **overrides}


def dispatch_edges(n: int = DISPATCH_BUSES) -> list[tuple[int, int]]:
    """Pairs ``(i, i+1)`` and ``(i, i+2)`` for 0-based ``i = 0..n-3``."""
    return [(i, i + k) for i in range(n - 2) for k in (1, 2)]


def dispatch118(seed: int = 0, overrides: dict | None = None) -> CoupledProblem:
    """Economic dispatch on a 118-bus chain-like network.

    Draw order: generator buses (``choice`` without replacement, sorted),
    then ``a``, ``b``, ``delta``, ``ell`` as length-14 uniform vectors.

    Overrides: ``demand``, ``generators``, ``capacity`` and the coefficient
    ranges ``a``, ``b``, ``delta``, ``ell`` as ``[low, high]``.
    """
    cfg = _ranges(overrides or {}, {
        "demand": DISPATCH_DEMAND,
        "generators": DISPATCH_GENERATORS,
        "capacity": DISPATCH_CAPACITY,
        "a": (0.3, 0.7),
        "b": (100.0, 400.0),
        "delta": (1e-4, 1e-3),
        "ell": (1e-2, 1e-1),
    })
    n, k = DISPATCH_BUSES, int(cfg["generators"])
    if not 1 <= k <= n:
        raise ValueError(f"generators must lie in [1, {n}]")
    if k * cfg["capacity"] < cfg["demand"]:
        raise ValueError("total generator capacity is below the demand")
    rng = np.random.default_rng(seed)
    gens = np.sort(rng.choice(n, size=k, replace=False))
    coef = {name: rng.uniform(*cfg[name], size=k) for name in ("a", "b", "delta", "ell")}

    shares = _exact_split(float(cfg["demand"]), n, gens)
    agents = [AgentSpec(Quadratic(0.0, 0.0), [[1.0]], [0.0], Fixed([0.0])) for _ in range(n)]
    for slot, bus in enumerate(gens):
        cost = QuadExp(*(coef[name][slot] for name in ("a", "b", "delta", "ell")))
        agents[bus] = AgentSpec(cost, [[1.0]], [shares[bus]], Box([0.0], [cfg["capacity"]]))
    return CoupledProblem(tuple(agents), NetworkGraph.metropolis(n, dispatch_edges(n)))


def _exact_split(total: float, n: int, buses: np.ndarray) -> np.ndarray:
    """Equal shares on ``buses`` whose floating-point sum is exactly ``total``.

    Shares are rounded to multiples of 2**-40 so every partial sum is exact in
    any order; the last bus takes the remainder.
    """
    grid = 2.0 ** -40
    d = np.zeros(n)
    d[buses] = np.round(total / len(buses) / grid) * grid
    d[buses[-1]] = total - d[buses[:-1]].sum()
    return d


def generator_buses(problem: CoupledProblem) -> np.ndarray:
    """Indices of agents that are not pinned to a single point."""
    return np.flatnonzero(np.any(problem.upper > problem.lower, axis=1))


def ring_chord_pairs(n: int) -> list[tuple[int, int]]:
    """Ring ``(i, i+1 mod n)`` plus chords ``(i, i + n//2)``."""
    if n < 2:
        raise ValueError("need at least two agents")
    pairs = {tuple(sorted((i, (i + 1) % n))) for i in range(n)}
    if n >= 4:
        pairs |= {tuple(sorted((i, (i + n // 2) % n))) for i in range(n)}
    return sorted(p for p in pairs if p[0] != p[1])


def random_quadratic(n: int = 10, p: int = 2, m: int = 2, seed: int = 0, box: bool = False,
                     overrides: dict | None = None) -> CoupledProblem:
    """Random strongly convex separable quadratics with a dense coupling.

    Draw order: ``a`` (n, p) from U[0.5, 2], ``b`` (n, p) from U[-1, 1],
    ``A`` (n, m, p) from U[-1, 1], then the feasible point ``x_hat`` (n, p)
    from U[-0.4, 0.4]. ``d_i = A_i x_hat_i``. With ``box`` every coordinate
    lives in [-0.5, 0.5], so ``x_hat`` is interior.

    Overrides: ``half_width`` of the box.
    """
    cfg = _ranges(overrides or {}, {"half_width": 0.5})
    if m > n * p:
        raise ValueError(f"need m <= n*p, got m={m}, n*p={n * p}")
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 2.0, size=(n, p))
    b = rng.uniform(-1.0, 1.0, size=(n, p))
    A = rng.uniform(-1.0, 1.0, size=(n, m, p))
    x_hat = rng.uniform(-0.4, 0.4, size=(n, p))
    w = float(cfg["half_width"])
    if box and w <= 0.4:
        raise ValueError("half_width must exceed 0.4 so the generating point is interior")
    agents = []
    for i in range(n):
        region = Box(-w * np.ones(p), w * np.ones(p)) if box else FullSpace(p)
        agents.append(AgentSpec(Quadratic(a[i], b[i]), A[i], A[i] @ x_hat[i], region))
    return CoupledProblem(tuple(agents), NetworkGraph.metropolis(n, ring_chord_pairs(n)))


def random_quadratic_point(n: int = 10, p: int = 2, m: int = 2, seed: int = 0) -> np.ndarray:
    """The interior point used to set ``d`` in :func:`random_quadratic`."""
    rng = np.random.default_rng(seed)
    rng.uniform(size=(n, p))
    rng.uniform(size=(n, p))
    rng.uniform(size=(n, m, p))
    return rng.uniform(-0.4, 0.4, size=(n, p))


def two_agent_analytic() -> tuple[CoupledProblem, np.ndarray]:
    """``u^2`` and ``(u - 1)^2`` with ``x_1 + x_2 = 2`` on a single unit edge.

    Returns the problem and ``x* = (0.5, 1.5)``; the multiplier is
    :data:`TWO_AGENT_DELTA_STAR`.
    """
    agents = (
        AgentSpec(Quadratic(1.0, 0.0), [[1.0]], [1.0], FullSpace(1)),
        AgentSpec(Quadratic(1.0, -2.0, c=1.0), [[1.0]], [1.0], FullSpace(1)),
    )
    return CoupledProblem(agents, NetworkGraph(2, [(0, 1, 1.0)])), TWO_AGENT_X_STAR.copy()


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    seed: int = 0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be an integer in [0, 2**64), got {self.seed!r}")
        if not isinstance(self.overrides, dict):
            raise ValueError("overrides must be a mapping")

    def build(self) -> CoupledProblem:
        if self.kind == "dispatch118":
            return dispatch118(self.seed, self.overrides)
        if self.kind == "random_quadratic":
            extra = dict(self.overrides)
            shape = {key: extra.pop(key) for key in ("n", "p", "m", "box") if key in extra}
            return random_quadratic(seed=self.seed, overrides=extra, **shape)
        if self.overrides:
            raise ValueError("two_agent_analytic takes no overrides")
        return two_agent_analytic()[0]

    def to_json(self) -> dict:
        return {"kind": self.kind, "seed": int(self.seed), "overrides": self.overrides}

    @classmethod
    def from_json(cls, data: dict) -> "ScenarioSpec":
        unknown = set(data) - {"kind", "seed", "overrides"}
        if unknown:
            raise ValueError(f"unknown scenario fields {sorted(unknown)}")
        return cls(data["kind"], data.get("seed", 0), dict(data.get("overrides") or {}))


def generate(spec: ScenarioSpec, out: str | Path) -> tuple[Path, Path]:
    """Write the problem JSON and a ``<name>.scenario.json`` sidecar manifest."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps_problem(spec.build()))
    sidecar = out.with_name(out.stem + ".scenario.json")
    sidecar.write_text(json.dumps(spec.to_json(), indent=1, sort_keys=True))
    return out, sidecar
