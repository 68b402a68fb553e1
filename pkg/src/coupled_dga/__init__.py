"""Distributed gradient-based solver for coupled equality constraints over a network."""

from .analysis import (
    OmegaMetric,
    ReferencePoint,
    ResidualRecord,
    estimate_rate,
    kkt_residuals,
    omega_norm_sq,
    oracle_reference,
    reference_point,
    summation_bound,
    verification_report,
    verify_lemma1,
    verify_lemma2,
)
from .dga import (
    Hyperparameters,
    SystemState,
    default_params,
    exact_mm_step,
    init,
    linear_regime_params,
    run,
    step,
    validate_params,
)
from .harness import Harness, StopCriteria, audit_locality, exchange
from .problem import (
    AgentSpec,
    Box,
    CoupledProblem,
    Custom,
    Fixed,
    FullSpace,
    QuadExp,
    Quadratic,
    kkt_check,
    solve_centralized,
)
from .scenarios import ScenarioSpec, dispatch118, random_quadratic, two_agent_analytic
from .topology import NetworkGraph, apply_mixing, laplacian, laplacian_pseudoinverse, spectral_extremes
from .trace import IterationTrace

__all__ = [
    "AgentSpec", "Box", "CoupledProblem", "Custom", "Fixed", "FullSpace", "Harness", "Hyperparameters",
    "IterationTrace", "NetworkGraph", "OmegaMetric", "QuadExp", "Quadratic", "ReferencePoint",
    "ResidualRecord", "ScenarioSpec", "StopCriteria", "SystemState", "apply_mixing", "audit_locality",
    "default_params", "dispatch118", "estimate_rate", "exact_mm_step", "exchange", "init", "kkt_check",
    "kkt_residuals", "laplacian", "laplacian_pseudoinverse", "linear_regime_params", "omega_norm_sq",
    "oracle_reference", "random_quadratic", "reference_point", "run", "solve_centralized",
    "spectral_extremes", "step", "summation_bound", "two_agent_analytic", "validate_params",
    "verification_report", "verify_lemma1", "verify_lemma2",
]
