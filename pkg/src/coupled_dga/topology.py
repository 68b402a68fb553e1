"""Communication graphs, Laplacians and the block mixing operator.

The mixing operator ``W = L (x) I_m`` is never formed densely here; it is
applied block-wise through :func:`apply_mixing`, which touches only the
rows of a sparse adjacency matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    """Raised for malformed communication graphs."""


class DisconnectedGraphError(GraphError):
    """Raised when the communication graph has more than one component."""

    def __init__(self, components: list[list[int]]):
        self.components = components
        listing = "; ".join("{" + ", ".join(map(str, c)) + "}" for c in components)
        super().__init__(f"graph is disconnected, components: {listing}")


class LaplacianSpectrum(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    """Weighted undirected communication graph over ``n`` agents.

    Edges are stored once as ``(i, j, p_ij)`` with ``i < j``; the weight is
    shared by both directions. Construction rejects self-loops, duplicate
    edges, nonpositive weights and disconnected graphs.
    """

    n: int
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise GraphError(f"agent count must be positive, got {self.n}")
        seen = set()
        normalized = []
        for edge in self.edges:
            if len(edge) != 3:
                raise GraphError(f"edge {edge!r} must be (i, j, weight)")
            i, j, w = int(edge[0]), int(edge[1]), float(edge[2])
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge ({i}, {j}) out of range for n={n}")
            if not w > 0 or not np.isfinite(w):
                raise GraphError(f"edge ({i}, {j}) has nonpositive weight {w}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise GraphError(f"duplicate edge {key}")
            seen.add(key)
            normalized.append((key[0], key[1], w))
        normalized.sort()
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", tuple(normalized))
        if n > 1:
            count, labels = connected_components(self.adjacency, directed=False)
            if count > 1:
                comps = [np.flatnonzero(labels == c).tolist() for c in range(count)]
                raise DisconnectedGraphError(comps)

    @classmethod
    def metropolis(cls, n: int, pairs: Iterable[tuple[int, int]]) -> "NetworkGraph":
        """Build a graph with Metropolis weights ``1 / (1 + max(deg_i, deg_j))``."""
        pairs = [(int(i), int(j)) for i, j in pairs]
        deg = np.zeros(n, dtype=int)
        for i, j in pairs:
            deg[i] += 1
            deg[j] += 1
        edges = [(i, j, 1.0 / (1 + max(deg[i], deg[j]))) for i, j in pairs]
        return cls(n, tuple(edges))

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        if not self.edges:
            return sp.csr_matrix((self.n, self.n))
        i, j, w = (np.array(c) for c in zip(*self.edges))
        rows = np.concatenate([i, j]).astype(int)
        cols = np.concatenate([j, i]).astype(int)
        vals = np.concatenate([w, w]).astype(float)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def weighted_degree(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj = self.adjacency
        return tuple(
            tuple(int(j) for j in adj.indices[adj.indptr[i]:adj.indptr[i + 1]])
            for i in range(self.n)
        )

    @cached_property
    def directed_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Arrays ``(src, dst, weight)`` listing both directions of every edge."""
        if not self.edges:
            empty = np.zeros(0, dtype=int)
            return empty, empty, np.zeros(0)
        i, j, w = (np.array(c) for c in zip(*self.edges))
        src = np.concatenate([i, j]).astype(int)
        dst = np.concatenate([j, i]).astype(int)
        return src, dst, np.concatenate([w, w]).astype(float)

    @cached_property
    def laplacian(self) -> np.ndarray:
        return laplacian(self)

    @cached_property
    def spectrum(self) -> LaplacianSpectrum:
        vals, vecs = np.linalg.eigh(self.laplacian)
        return LaplacianSpectrum(vals, vecs)

    @property
    def lambda_max(self) -> float:
        return float(self.spectrum.eigenvalues[-1])

    @cached_property
    def laplacian_pinv(self) -> np.ndarray:
        return laplacian_pseudoinverse(self.laplacian)

    def to_json(self) -> dict:
        return {"n": self.n, "edges": [[i, j, w] for i, j, w in self.edges]}

    @classmethod
    def from_json(cls, data: dict) -> "NetworkGraph":
        return cls(int(data["n"]), tuple(tuple(e) for e in data["edges"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "NetworkGraph":
        return cls.from_json(json.loads(Path(path).read_text()))


def laplacian(g: NetworkGraph) -> np.ndarray:
    """Dense weighted Laplacian ``L = D - P``."""
    L = -g.adjacency.toarray()
    L[np.diag_indices(g.n)] = g.weighted_degree
    return L


def _check_symmetric(L: np.ndarray) -> np.ndarray:
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {L.shape}")
    if not np.allclose(L, L.T, rtol=0, atol=1e-12 * max(1.0, np.abs(L).max())):
        raise ValueError("Laplacian must be symmetric")
    return L


def spectral_extremes(L: np.ndarray) -> tuple[float, float]:
    """Return ``(lambda_2, lambda_max)`` of a Laplacian.

    ``lambda_2`` is the smallest eigenvalue above the numerical zero
    threshold; for a single-node graph it is reported as 0.
    """
    L = _check_symmetric(L)
    vals = np.linalg.eigvalsh(L)
    lam_max = float(vals[-1])
    nonzero = vals[vals > 1e-10 * max(1.0, lam_max)]
    lam2 = float(nonzero[0]) if nonzero.size else 0.0
    return lam2, lam_max


def laplacian_pseudoinverse(L: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudoinverse via eigendecomposition, null eigenvalue zeroed."""
    L = _check_symmetric(L)
    vals, vecs = np.linalg.eigh(L)
    keep = vals > 1e-10 * max(1.0, vals[-1])
    inv = np.zeros_like(vals)
    inv[keep] = 1.0 / vals[keep]
    return (vecs * inv) @ vecs.T


def apply_mixing(g: NetworkGraph, y) -> np.ndarray:
    """Apply ``W = L (x) I_m`` to stacked blocks ``y`` of shape ``(n, m)``.

    Row ``i`` of the result is ``sum_j p_ij (y_i - y_j)`` and reads only
    ``y_i`` and the neighbor blocks ``y_j``.
    """
    y = np.asarray(y, dtype=float)
    flat = y.ndim == 1
    if flat:
        y = y[:, None]
    if y.ndim != 2 or y.shape[0] != g.n:
        raise ValueError(f"expected {g.n} blocks, got array of shape {np.shape(y)}")
    t = g.weighted_degree[:, None] * y - g.adjacency @ y
    return t[:, 0] if flat else t
