import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coupled_dga.problem import CoupledProblem, Fixed, dumps_problem, kkt_check, solve_centralized
from coupled_dga.scenarios import (
    TWO_AGENT_DELTA_STAR,
    ScenarioSpec,
    dispatch118,
    generate,
    generator_buses,
    random_quadratic,
    random_quadratic_point,
    ring_chord_pairs,
    two_agent_analytic,
)


@pytest.mark.parametrize("seed", [0, 1, 7])
def test_dispatch_structure(seed):
    p = dispatch118(seed)
    assert p.n == 118 and p.p == 1 and p.m == 1
    assert p.total_demand[0] == 950.0
    gens = generator_buses(p)
    assert len(gens) == 14
    costly = [i for i, ag in enumerate(p.agents) if ag.objective.kind == "quadexp"]
    assert costly == list(gens)
    for i in set(range(118)) - set(gens):
        assert isinstance(p.agents[i].set, Fixed) and p.d[i, 0] == 0.0
    # Slater: demand strictly inside the aggregate capacity range
    assert 0 < 950 < 14 * 250
    np.testing.assert_array_equal(p.upper[gens], 250.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dispatch_coefficients_in_range(seed):
    p = dispatch118(seed)
    for i in generator_buses(p):
        obj = p.agents[i].objective
        assert 0.3 <= obj.a[0] <= 0.7 and 100 <= obj.b[0] <= 400
        assert 1e-4 <= obj.delta[0] <= 1e-3 and 1e-2 <= obj.ell[0] <= 1e-1
        # exponent stays far below overflow on the box
        assert obj.ell[0] * 250 <= 25


@pytest.mark.parametrize("seed", [0, 3])
def test_dispatch_oracle_residual(seed):
    p = dispatch118(seed)
    sol = solve_centralized(p, tol=1e-10)
    assert kkt_check(p, sol.x, sol.delta).worst <= 1e-10
    assert abs(sol.x.sum() - 950) <= 1e-9


def test_same_seed_same_bytes():
    assert dumps_problem(dispatch118(5)) == dumps_problem(dispatch118(5))
    assert dumps_problem(dispatch118(5)) != dumps_problem(dispatch118(6))
    assert dumps_problem(random_quadratic(seed=2, box=True)) == dumps_problem(random_quadratic(seed=2, box=True))


def test_dispatch_overrides():
    p = dispatch118(0, {"demand": 500.0, "generators": 5})
    assert len(generator_buses(p)) == 5 and p.total_demand[0] == pytest.approx(500.0)
    with pytest.raises(ValueError, match="capacity"):
        dispatch118(0, {"generators": 2})
    with pytest.raises(ValueError, match="unknown"):
        dispatch118(0, {"gamma": 1})


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(1, 3), st.integers(1, 3))
def test_random_quadratic_is_feasible_and_strongly_convex(seed, n, p, m):
    m = min(m, n * p)
    prob = random_quadratic(n, p, m, seed=seed, box=True)
    x_hat = random_quadratic_point(n, p, m, seed)
    resid = np.einsum("nmp,np->m", prob.A, x_hat) - prob.total_demand
    assert np.abs(resid).max() <= 1e-12
    assert np.all(np.abs(x_hat) < 0.5)
    assert prob.global_mu >= 1.0 - 1e-12


def test_random_quadratic_rejects_bad_shapes():
    with pytest.raises(ValueError):
        random_quadratic(2, 1, 3)
    with pytest.raises(ValueError):
        random_quadratic(box=True, overrides={"half_width": 0.3})


def test_ring_chords():
    assert ring_chord_pairs(2) == [(0, 1)]
    assert ring_chord_pairs(4) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    with pytest.raises(ValueError):
        ring_chord_pairs(1)


def test_two_agent_exact_solution():
    prob, x_star = two_agent_analytic()
    report = kkt_check(prob, x_star, TWO_AGENT_DELTA_STAR)
    assert report.worst == 0.0
    sol = solve_centralized(prob, tol=1e-12)
    np.testing.assert_allclose(sol.x, x_star, atol=1e-10)
    np.testing.assert_allclose(sol.delta, TWO_AGENT_DELTA_STAR, atol=1e-10)


def test_spec_validation():
    with pytest.raises(ValueError, match="kind"):
        ScenarioSpec("grid")
    with pytest.raises(ValueError, match="seed"):
        ScenarioSpec("dispatch118", -1)
    with pytest.raises(ValueError):
        ScenarioSpec("two_agent_analytic", 0, {"x": 1}).build()
    with pytest.raises(ValueError, match="fields"):
        ScenarioSpec.from_json({"kind": "dispatch118", "colour": 1})


def test_spec_builds_shaped_random_problem():
    prob = ScenarioSpec("random_quadratic", 4, {"n": 6, "p": 3, "m": 2, "box": True}).build()
    assert (prob.n, prob.p, prob.m) == (6, 3, 2)


def test_generate_writes_problem_and_sidecar(tmp_path):
    spec = ScenarioSpec("dispatch118", 9)
    prob_path, side = generate(spec, tmp_path / "sub" / "d.json")
    assert side.name == "d.scenario.json"
    assert ScenarioSpec.from_json(json.loads(side.read_text())) == spec
    again = CoupledProblem.load(prob_path)
    assert dumps_problem(again) == dumps_problem(dispatch118(9))
