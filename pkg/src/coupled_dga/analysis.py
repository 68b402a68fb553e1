"""Lyapunov quantities, KKT residuals and convergence-rate checks on traces.

The weighted quadratic form used throughout is, for a stacked difference
``v = (vx, vy, vl)``::

    ||v||_Omega^2 = |vx|^2 - alpha vx.A^T vy + alpha eta |vy|^2
                    - alpha rho vy.W vy + (alpha/rho) vl.W^+ vl

with ``W = L (x) I_m`` and ``W^+`` its pseudoinverse. Dense matrices are
built here only, for cross-checks; the algorithm never sees them.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import block_diag

from .dga import Hyperparameters, SystemState, validate_params
from .problem import CoupledProblem, solve_centralized
from .topology import apply_mixing
from .trace import IterationTrace

SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class OmegaMetric:
    alpha: float
    eta: float
    rho: float
    l_f: float
    A: np.ndarray
    L: np.ndarray
    L_pinv: np.ndarray
    theorem1_valid: bool = True

    @classmethod
    def build(cls, problem: CoupledProblem, hp: Hyperparameters) -> "OmegaMetric":
        valid = validate_params(problem, hp, "theorem1").passed
        return cls(hp.alpha, hp.eta, hp.rho, problem.global_l_f, problem.A,
                   problem.graph.laplacian, problem.graph.laplacian_pinv, valid)

    @property
    def dims(self) -> tuple[int, int, int]:
        n, m, p = self.A.shape
        return n, m, p

    def split(self, v) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n, m, p = self.dims
        v = np.asarray(v, dtype=float).ravel()
        if v.size != n * p + 2 * n * m:
            raise ValueError(f"expected a vector of length {n * p + 2 * n * m}, got {v.size}")
        return (v[:n * p].reshape(n, p), v[n * p:n * p + n * m].reshape(n, m), v[n * p + n * m:].reshape(n, m))

    def norm_sq(self, dx, dy, dl) -> float:
        """Block formula for ``||(dx, dy, dl)||_Omega^2``."""
        cross = float(np.sum(dx * np.einsum("nmp,nm->np", self.A, dy)))
        wy = float(np.sum(dy * (self.L @ dy)))
        wl = float(np.sum(dl * (self.L_pinv @ dl)))
        a, e, r = self.alpha, self.eta, self.rho
        return float(np.sum(dx * dx)) - a * cross + a * e * float(np.sum(dy * dy)) - a * r * wy + (a / r) * wl

    def dense(self) -> np.ndarray:
        """The (non-symmetric) matrix Omega."""
        n, m, p = self.dims
        Ad = block_diag(*self.A)
        W = np.kron(self.L, np.eye(m))
        Wp = np.kron(self.L_pinv, np.eye(m))
        N1, N2 = n * p, n * m
        om = np.zeros((N1 + 2 * N2, N1 + 2 * N2))
        om[:N1, :N1] = np.eye(N1)
        om[:N1, N1:N1 + N2] = -self.alpha * Ad.T
        om[N1:N1 + N2, N1:N1 + N2] = self.alpha * self.eta * (np.eye(N2) - (self.rho / self.eta) * W)
        om[N1 + N2:, N1 + N2:] = (self.alpha / self.rho) * Wp
        return om

    def symmetric_part(self) -> np.ndarray:
        om = self.dense()
        return 0.5 * (om + om.T)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.symmetric_part())[0])


def omega_norm_sq(metric: OmegaMetric, v) -> float:
    if not metric.theorem1_valid:
        warnings.warn("parameters violate the step-size bounds; Omega may be indefinite", RuntimeWarning)
    return metric.norm_sq(*metric.split(v))


# -- reference point ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReferencePoint:
    """Optimal triple ``h* = (x*, 1 (x) delta*, -(A_i x_i* - d_i))``."""

    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    delta: np.ndarray

    @property
    def h(self) -> np.ndarray:
        return np.concatenate([self.x.ravel(), self.y.ravel(), self.lam.ravel()])

    def as_state(self, problem: CoupledProblem) -> SystemState:
        return SystemState(self.x.copy(), self.y.copy(), self.lam.copy(), apply_mixing(problem.graph, self.y), 0)


def reference_point(problem: CoupledProblem, x_star, delta_star) -> ReferencePoint:
    x = np.asarray(x_star, dtype=float).reshape(problem.n, problem.p)
    delta = np.asarray(delta_star, dtype=float).reshape(problem.m)
    y = np.tile(delta, (problem.n, 1))
    lam = -(np.einsum("nmp,np->nm", problem.A, x) - problem.d)
    return ReferencePoint(x, y, lam, delta)


def oracle_reference(problem: CoupledProblem, tol: float = 1e-10) -> ReferencePoint:
    sol = solve_centralized(problem, tol=tol)
    return reference_point(problem, sol.x, sol.delta)


# -- per-round series -----------------------------------------------------------------


def omega_series(trace: IterationTrace, metric: OmegaMetric, reference: ReferencePoint | None = None):
    """Return ``(gap, delta, dx_sq)`` where ``gap[k] = ||h^k - h*||_Omega^2``,
    ``delta[k] = ||h^k - h^{k-1}||_Omega^2`` and ``dx_sq[k] = ||x^k - x^{k-1}||^2``
    (index 0 of the last two is NaN)."""
    if trace.history:
        hist = trace.history
        K = len(hist)
        delta = np.full(K, np.nan)
        dx = np.full(K, np.nan)
        gap = np.full(K, np.nan)
        for k, s in enumerate(hist):
            if k:
                p = hist[k - 1]
                delta[k] = metric.norm_sq(s.x - p.x, s.y - p.y, s.lam - p.lam)
                dx[k] = float(np.sum((s.x - p.x) ** 2))
            if reference is not None:
                gap[k] = metric.norm_sq(s.x - reference.x, s.y - reference.y, s.lam - reference.lam)
        return gap, delta, dx
    return trace.column("gap_omega_sq"), trace.column("delta_h_omega_sq"), trace.column("opt_sq")


class LemmaReport(NamedTuple):
    margins: np.ndarray
    min_margin: float
    scale: float
    passed: bool


def _scale(gap: np.ndarray) -> float:
    return 1.0 + float(gap[0]) if gap.size and math.isfinite(gap[0]) else 1.0


def verify_lemma1(trace: IterationTrace, h_star: ReferencePoint, metric: OmegaMetric,
                  slack: float = SLACK) -> LemmaReport:
    """Per-round margin of the one-step Lyapunov decrease.

    ``margin_k = (G_k - G_{k+1}) - (D_{k+1} - alpha l_f |dx_{k+1}|^2)`` with
    ``G`` the Omega-gap to ``h*`` and ``D`` the Omega-norm of the step.
    """
    gap, delta, dx = omega_series(trace, metric, h_star)
    if np.isnan(gap).any():
        raise ValueError("trace has no Omega gap; run with reference and metric or keep history")
    margins = (gap[:-1] - gap[1:]) - (delta[1:] - metric.alpha * metric.l_f * dx[1:])
    scale = _scale(gap)
    lo = float(margins.min()) if margins.size else 0.0
    return LemmaReport(margins, lo, scale, bool(lo >= -slack * scale))


def verify_lemma2(trace: IterationTrace, metric: OmegaMetric, slack: float = SLACK,
                  scale: float | None = None) -> LemmaReport:
    """Margins ``D_k - D_{k+1}`` for ``k >= 1``."""
    gap, delta, _ = omega_series(trace, metric)
    if len(delta) < 3:
        raise ValueError("need at least three rounds")
    margins = delta[1:-1] - delta[2:]
    if scale is None:
        scale = _scale(gap) if np.isfinite(gap).all() else 1.0
    lo = float(margins.min()) if margins.size else 0.0
    return LemmaReport(margins, lo, scale, bool(lo >= -slack * scale))


class SumBound(NamedTuple):
    prefix_sums: np.ndarray
    bound: float
    passed: bool


def summation_bound(trace: IterationTrace, h_star: ReferencePoint, metric: OmegaMetric) -> SumBound:
    """Check ``sum_{t<=k} ||dh^{t+1}||_Omega^2 < G_0 / (1 - alpha l_f)`` for every prefix."""
    gap, delta, _ = omega_series(trace, metric, h_star)
    prefix = np.cumsum(delta[1:])
    factor = 1.0 - metric.alpha * metric.l_f
    bound = gap[0] / factor if factor > 0 else math.inf
    ok = factor > 0 and bool(np.all(prefix < bound))
    return SumBound(prefix, float(bound), bool(ok))


# -- residuals ------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualRecord:
    round: int
    feas_sq: float
    opt_sq: float
    consensus_sq: float
    dist_sq: float = math.nan
    delta_h_omega_sq: float = math.nan
    gap_omega_sq: float = math.nan


def kkt_residuals(h_k: SystemState, h_k1: SystemState, problem: CoupledProblem,
                  metric: OmegaMetric | None = None, reference: ReferencePoint | None = None) -> ResidualRecord:
    """Residuals of round ``k+1``.

    ``opt_sq = ||x^{k+1} - x^k||^2``; the first-order optimality error is at
    most ``(alpha l_f + 1)^2`` times this.
    """
    resid = problem.constraint_residual(h_k1.x)
    wy = apply_mixing(problem.graph, h_k1.y)
    rec = dict(
        round=h_k1.round,
        feas_sq=float(resid @ resid),
        opt_sq=float(np.sum((h_k1.x - h_k.x) ** 2)),
        consensus_sq=float(np.sum(h_k1.y * wy)),
    )
    if reference is not None:
        rec["dist_sq"] = float(np.sum((h_k1.x - reference.x) ** 2))
    if metric is not None:
        rec["delta_h_omega_sq"] = metric.norm_sq(h_k1.x - h_k.x, h_k1.y - h_k.y, h_k1.lam - h_k.lam)
        if reference is not None:
            rec["gap_omega_sq"] = metric.norm_sq(
                h_k1.x - reference.x, h_k1.y - reference.y, h_k1.lam - reference.lam
            )
    return ResidualRecord(**rec)


# -- rates ----------------------------------------------------------------------------


@dataclass(frozen=True)
class RateReport:
    mode: str
    passed: bool
    tail_ratio: float = math.nan
    slope: float = math.nan
    r2: float = math.nan
    window: tuple[int, int] = (0, 0)


def _linear_fit(k: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    slope, intercept = np.polyfit(k, v, 1)
    fitted = slope * k + intercept
    ss_res = float(np.sum((v - fitted) ** 2))
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    if ss_tot == 0:
        r2 = 1.0 if ss_res == 0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(slope), r2


def estimate_rate(series, mode: str, tail: float | None = None, floor_rel: float = 1e-18,
                  min_r2: float = 0.99, max_tail_ratio: float = 0.01, norms: bool = False) -> RateReport:
    """Empirical rate checks.

    ``series`` is an :class:`IterationTrace` or a sequence indexed by round.
    In ``"sublinear"`` mode it holds ``||dh^k||_Omega^2`` and the check is
    that ``max k * series[k]`` over the last ``tail`` (default 20%) of rounds
    is at most ``max_tail_ratio`` of its overall maximum. In ``"linear"``
    mode it holds a squared optimality gap; values are kept up to the first
    one at or below ``floor_rel * max`` (round-off floor) and ``log`` of the
    last ``tail`` (default 50%) of those is fitted against ``k``.

    With ``norms=True`` the sequence holds unsquared norms and is squared
    first, so ``r**k`` yields slope ``log(r**2)``.
    """
    if isinstance(series, IterationTrace):
        name = "delta_h_omega_sq" if mode == "sublinear" else "gap_omega_sq"
        values = series.column(name)
    else:
        values = np.asarray(series, dtype=float)
    if norms:
        values = values**2
    if values.size < 100:
        raise ValueError(f"trace too short for a rate estimate ({values.size} < 100)")
    if mode == "sublinear":
        frac = 0.2 if tail is None else tail
        k = np.arange(values.size, dtype=float)
        s = np.where(np.isfinite(values), k * values, 0.0)[1:]
        start = int(math.floor(s.size * (1 - frac)))
        top = float(s.max())
        ratio = float(s[start:].max()) / top if top > 0 else 0.0
        return RateReport(mode, ratio <= max_tail_ratio, tail_ratio=ratio, window=(start + 1, values.size - 1))
    if mode == "linear":
        frac = 0.5 if tail is None else tail
        ok = np.isfinite(values)
        top = float(values[ok].max())
        below = np.flatnonzero(~ok | (values <= floor_rel * top))
        end = int(below[0]) if below.size else values.size
        start = int(math.floor(end * (1 - frac)))
        if end - start < 10:
            return RateReport(mode, False, window=(start, end))
        k = np.arange(start, end, dtype=float)
        slope, r2 = _linear_fit(k, np.log(values[start:end]))
        return RateReport(mode, slope < 0 and r2 >= min_r2, slope=slope, r2=r2, window=(start, end))
    raise ValueError(f"unknown mode {mode!r}")


# -- full report ----------------------------------------------------------------------


def verification_report(problem: CoupledProblem, hp: Hyperparameters, trace: IterationTrace,
                        reference: ReferencePoint, metric: OmegaMetric | None = None,
                        check_linear: bool | None = None) -> dict:
    """Run every check on a trace and collect the JSON-ready report."""
    metric = metric or OmegaMetric.build(problem, hp)
    l1 = verify_lemma1(trace, reference, metric)
    l2 = verify_lemma2(trace, metric, scale=l1.scale) if len(trace) >= 3 else None
    sb = summation_bound(trace, reference, metric)
    checks = {
        "params_lemma1": validate_params(problem, hp, "lemma1").passed,
        "params_theorem1": validate_params(problem, hp, "theorem1").passed,
        "lemma1": l1.passed,
        "sum_bound": sb.passed,
    }
    if l2 is not None:
        checks["lemma2"] = l2.passed
    if trace.status == "diverged":
        checks["bounded"] = False
    report = {
        "lemma1_min_margin": l1.min_margin,
        "lemma2_min_margin": l2.min_margin if l2 else None,
        "margin_scale": l1.scale,
        "sum_bound_ok": sb.passed,
        "sublinear_tail_ratio": None,
        "linear_slope": None,
        "linear_r2": None,
    }
    if len(trace) >= 100:
        sub = estimate_rate(trace.column("delta_h_omega_sq"), "sublinear")
        report["sublinear_tail_ratio"] = sub.tail_ratio
        checks["sublinear"] = sub.passed
    if check_linear is None:
        check_linear = problem.unconstrained and problem.global_mu > 0
    if check_linear and len(trace) >= 100:
        lin = estimate_rate(trace.column("gap_omega_sq"), "linear")
        report["linear_slope"] = lin.slope
        report["linear_r2"] = lin.r2
        checks["linear"] = lin.passed
    report["psd_min_eigenvalue"] = metric.min_eigenvalue() if problem.n * (problem.p + 2 * problem.m) <= 4000 else None
    report["checks"] = checks
    report["failed"] = [name for name, ok in checks.items() if not ok]
    report["passed"] = not report["failed"]
    report["params"] = validate_params(problem, hp, "theorem1").to_json()
    return report
