import io
import json

import numpy as np
import pytest

from coupled_dga.dga import default_params, run
from coupled_dga.harness import Harness, StopCriteria, audit_locality, exchange
from coupled_dga.scenarios import dispatch118, random_quadratic, two_agent_analytic
from coupled_dga.topology import NetworkGraph, apply_mixing


def test_consensus_gives_zero_aggregate():
    g = NetworkGraph.metropolis(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
    _, t = exchange(g, np.full((5, 3), 2.0))
    np.testing.assert_array_equal(t, 0)


@pytest.mark.parametrize("m", [1, 3])
def test_mailbox_aggregate_matches_mixing(m):
    p = dispatch118(1)
    y = np.random.default_rng(m).normal(size=(p.n, m))
    box, t = exchange(p.graph, y)
    np.testing.assert_allclose(t, apply_mixing(p.graph, y), atol=1e-15)
    assert box.count == 2 * len(p.graph.edges)
    assert box.volume == 2 * len(p.graph.edges) * m


def test_mailbox_holds_read_only_copies():
    g = NetworkGraph(2, [(0, 1, 1.0)])
    y = np.array([[3.0], [1.0]])
    box, _ = exchange(g, y)
    y[:] = 99
    assert box.inbox(0) == {1: pytest.approx([1.0])}
    with pytest.raises(ValueError):
        box.messages[0, 0] = 5.0


def test_exchange_is_pure():
    g = NetworkGraph.metropolis(4, [(0, 1), (1, 2), (2, 3)])
    y = np.random.default_rng(0).normal(size=(4, 2))
    a, b = exchange(g, y)[1], exchange(g, y.copy())[1]
    assert a.tobytes() == b.tobytes()


def test_exchange_dimension_mismatch():
    g = NetworkGraph(2, [(0, 1, 1.0)])
    with pytest.raises(ValueError):
        exchange(g, np.zeros((3, 1)))


def test_volume_independent_of_primal_dimension():
    for p_dim in (1, 4):
        prob = random_quadratic(8, p_dim, 2, seed=0)
        with Harness(prob.graph) as h:
            run(prob, default_params(prob), StopCriteria(10, 0, 0), harness=h)
        edges = len(prob.graph.edges)
        assert h.rounds_exchanged == 11
        assert h.messages_sent == 11 * 2 * edges
        assert h.reals_sent == 11 * 2 * edges * 2


def test_message_log_lines():
    p, _ = two_agent_analytic()
    sink = io.StringIO()
    with Harness(p.graph, message_log=sink) as h:
        run(p, default_params(p), StopCriteria(2, 0, 0), harness=h)
    lines = [json.loads(line) for line in sink.getvalue().splitlines()]
    assert len(lines) == 3 * 2
    assert set(lines[0]) == {"round", "from", "to", "y"}
    assert [line["round"] for line in lines] == [0, 0, 1, 1, 2, 2]


def test_harness_rejects_bad_options():
    g = NetworkGraph(2, [(0, 1, 1.0)])
    with pytest.raises(ValueError):
        Harness(g, threads=0)
    with pytest.raises(ValueError):
        Harness(g, order="random")
    with pytest.raises(ValueError):
        StopCriteria(-1)


def test_block_partition_covers_all_agents():
    g = NetworkGraph.metropolis(130, [(i, i + 1) for i in range(129)])
    h = Harness(g, block_size=64)
    assert [(b.start, b.stop) for b in h.blocks] == [(0, 64), (64, 128), (128, 130)]
    seen = np.zeros(130, dtype=int)

    def mark(block):
        seen[block] += 1

    h.run_phase(mark)
    assert np.all(seen == 1)


def test_audit_passes_on_standard_run():
    p = dispatch118(0)
    rep = audit_locality(p, default_params(p), rounds=30)
    assert rep.passed, str(rep)
    assert rep.replayed_steps == 30 * 118


def test_audit_catches_primal_leak_at_round_zero():
    p, _ = two_agent_analytic()
    rep = audit_locality(p, default_params(p), rounds=5, payload="x")
    assert not rep.passed
    first = rep.violations[0]
    assert first.round == 0
    assert "'x'" in first.reason
    assert "round 0" in str(rep)


def test_audit_exact_variant():
    p = random_quadratic(8, 1, 1, seed=1, box=True)
    assert audit_locality(p, default_params(p), rounds=10, variant="exact_mm").passed


def test_thread_counts_give_identical_traces():
    p = random_quadratic(150, 2, 2, seed=3, box=True)
    hp = default_params(p)
    csvs = set()
    for threads in (1, 2, 8):
        with Harness(p.graph, threads=threads, block_size=16) as h:
            csvs.add(run(p, hp, StopCriteria(200, 0, 0), harness=h).to_csv(timing=False))
    assert len(csvs) == 1
