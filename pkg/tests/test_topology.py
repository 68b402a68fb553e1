import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coupled_dga.scenarios import dispatch_edges
from coupled_dga.topology import (
    DisconnectedGraphError,
    GraphError,
    NetworkGraph,
    apply_mixing,
    laplacian,
    laplacian_pseudoinverse,
    spectral_extremes,
)


def unit(n, pairs):
    return NetworkGraph(n, [(i, j, 1.0) for i, j in pairs])


PATH3 = unit(3, [(0, 1), (1, 2)])
K3 = unit(3, [(0, 1), (1, 2), (0, 2)])
EDGE = unit(2, [(0, 1)])


@st.composite
def connected_graphs(draw, max_n=9):
    n = draw(st.integers(2, max_n))
    # random spanning tree, then extra edges
    pairs = {(draw(st.integers(0, k - 1)), k) for k in range(1, n)}
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=2 * n))
    pairs |= {(min(a, b), max(a, b)) for a, b in extra if a != b}
    weights = draw(st.lists(st.floats(0.05, 5.0), min_size=len(pairs), max_size=len(pairs)))
    return NetworkGraph(n, [(i, j, w) for (i, j), w in zip(sorted(pairs), weights)])


def test_two_node_laplacian():
    np.testing.assert_array_equal(laplacian(EDGE), [[1, -1], [-1, 1]])


def test_path_laplacian():
    np.testing.assert_array_equal(laplacian(PATH3), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])


def test_dispatch_topology_rows_sum_to_zero():
    g = NetworkGraph.metropolis(118, dispatch_edges(118))
    assert len(g.edges) == 232
    assert np.abs(laplacian(g).sum(axis=1)).max() <= 1e-12


def test_metropolis_weights():
    g = NetworkGraph.metropolis(3, [(0, 1), (1, 2)])
    # degrees 1, 2, 1 -> both edges get 1/(1+2)
    assert [w for *_, w in g.edges] == pytest.approx([1 / 3, 1 / 3])


@pytest.mark.parametrize("edges, exc", [
    ([(0, 0, 1.0), (0, 1, 1.0)], GraphError),
    ([(0, 1, 1.0), (1, 0, 1.0)], GraphError),
    ([(0, 1, 0.0)], GraphError),
    ([(0, 1, -1.0)], GraphError),
    ([(0, 5, 1.0)], GraphError),
])
def test_invalid_edges_rejected(edges, exc):
    with pytest.raises(exc):
        NetworkGraph(2, edges)


def test_disconnected_graph_lists_components():
    with pytest.raises(DisconnectedGraphError) as info:
        unit(4, [(0, 1), (2, 3)])
    assert info.value.components == [[0, 1], [2, 3]]
    assert "{2, 3}" in str(info.value)


@pytest.mark.parametrize("g, expected", [(EDGE, (2, 2)), (K3, (3, 3)), (PATH3, (1, 3))])
def test_spectral_extremes(g, expected):
    assert spectral_extremes(laplacian(g)) == pytest.approx(expected, rel=1e-8)


def test_path_spectrum_matches_characteristic_polynomial():
    # det(L - s I) = -s (s - 1)(s - 3) for the unit 3-path
    roots = np.sort(np.roots(np.poly(laplacian(PATH3))).real)
    np.testing.assert_allclose(roots, [0, 1, 3], atol=1e-10)
    np.testing.assert_allclose(PATH3.spectrum.eigenvalues, [0, 1, 3], atol=1e-12)


def test_nonsymmetric_rejected():
    with pytest.raises(ValueError):
        spectral_extremes(np.array([[1.0, -1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        laplacian_pseudoinverse(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_pseudoinverse_two_node():
    np.testing.assert_allclose(laplacian_pseudoinverse(laplacian(EDGE)), [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)


def test_pseudoinverse_complete_graph():
    # L^2 = 3L on K3, so L^+ = L/9
    np.testing.assert_allclose(K3.laplacian_pinv, laplacian(K3) / 9, atol=1e-14)


def test_apply_mixing_hand_case():
    np.testing.assert_array_equal(apply_mixing(EDGE, np.array([3.0, 1.0])), [2.0, -2.0])


def test_apply_mixing_rejects_wrong_size():
    with pytest.raises(ValueError):
        apply_mixing(PATH3, np.zeros((4, 2)))


def test_graph_json_roundtrip(tmp_path):
    g = NetworkGraph.metropolis(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
    path = tmp_path / "g.json"
    g.save(path)
    data = json.loads(path.read_text())
    assert set(data) == {"n", "edges"} and data["n"] == 5
    again = NetworkGraph.load(path)
    assert again.edges == g.edges


@settings(max_examples=60, deadline=None)
@given(connected_graphs())
def test_laplacian_invariants(g):
    L = laplacian(g)
    assert np.allclose(L, L.T)
    assert np.abs(L @ np.ones(g.n)).max() <= 1e-12
    eig = g.spectrum.eigenvalues
    assert eig.min() >= -1e-10
    assert abs(eig[0]) <= 1e-10
    v0 = g.spectrum.eigenvectors[:, 0]
    np.testing.assert_allclose(np.abs(v0), np.full(g.n, 1 / np.sqrt(g.n)), atol=1e-10)
    lam2, lam_max = spectral_extremes(L)
    assert lam2 > 0 and lam_max == pytest.approx(eig[-1])


@settings(max_examples=60, deadline=None)
@given(connected_graphs(), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_mixing_matches_dense_kronecker(g, m, seed):
    y = np.random.default_rng(seed).standard_normal((g.n, m))
    dense = np.kron(laplacian(g), np.eye(m)) @ y.ravel()
    np.testing.assert_allclose(apply_mixing(g, y).ravel(), dense, atol=1e-12)
    np.testing.assert_allclose(apply_mixing(g, np.ones((g.n, m)) * 2.5), 0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(connected_graphs())
def test_pseudoinverse_identities(g):
    L = laplacian(g)
    P = laplacian_pseudoinverse(L)
    np.testing.assert_allclose(L @ P @ L, L, atol=1e-9)
    np.testing.assert_allclose(P @ np.ones(g.n), 0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(connected_graphs(), st.integers(0, 2**32 - 1))
def test_mixing_reads_only_neighbors(g, seed):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((g.n, 2))
    base = apply_mixing(g, y)
    for i in range(g.n):
        local = {i, *g.neighbors[i]}
        z = y.copy()
        others = [j for j in range(g.n) if j not in local]
        z[others] = rng.standard_normal((len(others), 2)) * 1e6
        assert apply_mixing(g, z)[i].tobytes() == base[i].tobytes()
