"""Undirected graph topologies and static combination matrices.

Graphs are small (tens of nodes), so everything here works on dense
numpy arrays.  Node ``k`` of a hypercube has coordinates given by the
binary digits of ``k``; its neighbor along dimension ``j`` is
``k ^ (1 << j)``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "KINDS",
    "Graph",
    "GraphError",
    "build_graph",
    "custom_graph",
    "laplacian",
    "metropolis_weights",
    "second_largest_eigenvalue",
    "validate_combination_matrix",
    "to_edgelist",
    "from_edgelist",
]

KINDS = ("path", "ring", "hypercube", "complete", "custom")

DEFAULT_TOL = 1e-12


class GraphError(ValueError):
    """Raised when a topology cannot be built or fails validation."""


def _is_power_of_two(K: int) -> bool:
    return K >= 2 and (K & (K - 1)) == 0


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0 .. K-1``.

    Parameters
    ----------
    K : int
        Number of nodes.
    edges : tuple of (int, int)
        Edge list with ``u < v``, sorted, without duplicates.
    kind : str
        One of :data:`KINDS`.

    Notes
    -----
    Instances are immutable.  Use :func:`build_graph` or
    :func:`custom_graph` rather than the constructor so that
    connectivity and edge normalisation are checked.
    """

    K: int
    edges: tuple
    kind: str = "custom"
    _adj: tuple = field(default=(), repr=False, compare=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        """Return the 0/1 adjacency matrix as a float array."""
        A = np.zeros((self.K, self.K))
        for u, v in self.edges:
            A[u, v] = A[v, u] = 1.0
        return A

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1).astype(int)

    def neighbors(self, k: int) -> tuple:
        return self._adj[k]

    def support(self) -> np.ndarray:
        """Boolean mask of entries a combination matrix may use (edges plus diagonal)."""
        return self.adjacency().astype(bool) | np.eye(self.K, dtype=bool)

    def is_connected(self) -> bool:
        if self.K == 1:
            return True
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in self._adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.K

    def diameter(self) -> int:
        """Longest shortest-path length (breadth-first search from every node)."""
        best = 0
        for s in range(self.K):
            dist = {s: 0}
            queue = deque([s])
            while queue:
                u = queue.popleft()
                for v in self._adj[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        queue.append(v)
            if len(dist) < self.K:
                raise GraphError("graph is disconnected; diameter undefined")
            best = max(best, max(dist.values()))
        return best


def _make(K: int, edges, kind: str, check_connected: bool = True) -> Graph:
    norm = set()
    for e in edges:
        u, v = int(e[0]), int(e[1])
        if not (0 <= u < K and 0 <= v < K):
            raise GraphError(f"edge ({u}, {v}) has an endpoint outside [0, {K})")
        if u == v:
            raise GraphError(f"self-loop at node {u} is not allowed")
        norm.add((min(u, v), max(u, v)))
    edges = tuple(sorted(norm))
    adj = [[] for _ in range(K)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    g = Graph(K=K, edges=edges, kind=kind, _adj=tuple(tuple(sorted(a)) for a in adj))
    if check_connected and not g.is_connected():
        raise GraphError("graph is disconnected")
    return g


def build_graph(kind: str, K: int) -> Graph:
    """Build one of the named topologies.

    Parameters
    ----------
    kind : {'path', 'ring', 'hypercube', 'complete'}
    K : int
        Number of nodes.  A ring needs ``K >= 3``; a hypercube needs
        ``K = 2**d`` with ``d >= 1``.

    Returns
    -------
    Graph

    Raises
    ------
    GraphError
        If ``K`` does not suit the requested kind.

    Examples
    --------
    >>> build_graph("path", 4).edges
    ((0, 1), (1, 2), (2, 3))
    """
    if isinstance(K, bool) or not isinstance(K, (int, np.integer)):
        raise GraphError(f"K must be an integer, got {K!r}")
    K = int(K)
    if K < 1:
        raise GraphError("K must be a positive integer")
    if kind == "path":
        edges = [(k, k + 1) for k in range(K - 1)]
    elif kind == "ring":
        if K < 3:
            raise GraphError("ring requires K >= 3")
        edges = [(k, (k + 1) % K) for k in range(K)]
    elif kind == "hypercube":
        if not _is_power_of_two(K):
            raise GraphError("K must be a power of two")
        d = K.bit_length() - 1
        edges = [(k, k ^ (1 << j)) for k in range(K) for j in range(d) if k < k ^ (1 << j)]
    elif kind == "complete":
        edges = [(u, v) for u in range(K) for v in range(u + 1, K)]
    elif kind == "custom":
        raise GraphError("use custom_graph(K, edges) for custom topologies")
    else:
        raise GraphError(f"unknown topology kind {kind!r}; expected one of {KINDS[:-1]}")
    return _make(K, edges, kind)


def custom_graph(K: int, edges) -> Graph:
    """Build a connected graph from an explicit edge list."""
    if K < 1:
        raise GraphError("K must be a positive integer")
    return _make(int(K), edges, "custom")


def laplacian(g: Graph) -> np.ndarray:
    """Combinatorial Laplacian ``L = D - A``."""
    A = g.adjacency()
    return np.diag(A.sum(axis=1)) - A


def metropolis_weights(g: Graph) -> np.ndarray:
    """Metropolis-Hastings combination matrix.

    Off-diagonal weight ``1 / (1 + max(d_k, d_l))`` on every edge; the
    diagonal takes whatever is left so rows sum to one.
    """
    if not g.is_connected():
        raise GraphError("graph is disconnected")
    d = g.degrees()
    A = np.zeros((g.K, g.K))
    for u, v in g.edges:
        A[u, v] = A[v, u] = 1.0 / (1.0 + max(d[u], d[v]))
    A[np.diag_indices(g.K)] = 1.0 - A.sum(axis=1)
    return A


def second_largest_eigenvalue(m: np.ndarray, tol: float = 1e-10) -> float:
    """Largest eigenvalue modulus after removing one eigenvalue equal to 1.

    The removed eigenvalue is the one whose eigenvector is closest to the
    all-ones direction, which for a doubly stochastic matrix is exactly
    the consensus mode.

    Raises
    ------
    ValueError
        If ``m`` is not symmetric.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(m, m.T, atol=tol, rtol=0):
        raise ValueError("matrix must be symmetric")
    K = m.shape[0]
    if K == 1:
        return 0.0
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    ones = np.ones(K) / np.sqrt(K)
    drop = int(np.argmax(np.abs(vecs.T @ ones)))
    return float(np.max(np.abs(np.delete(vals, drop))))


def validate_combination_matrix(A, g: Graph | None = None, tol: float = DEFAULT_TOL,
                                check_spectral: bool = True) -> dict:
    """Check the combination-matrix invariants.

    Returns
    -------
    dict
        Keys ``symmetry_defect``, ``row_sum_defect``, ``sparsity_ok``,
        ``spectral_radius`` and ``ok``.
    """
    A = np.asarray(A, dtype=float)
    sym = float(np.max(np.abs(A - A.T))) if A.size else 0.0
    rows = float(np.max(np.abs(A.sum(axis=1) - 1.0)))
    sparsity_ok = True
    if g is not None:
        if A.shape != (g.K, g.K):
            raise ValueError(f"matrix shape {A.shape} does not match K={g.K}")
        sparsity_ok = not np.any(A[~g.support()] != 0)
    rho = float(np.max(np.abs(np.linalg.eigvals(A)))) if check_spectral else float("nan")
    ok = sym <= tol and rows <= tol and sparsity_ok
    if check_spectral:
        ok = ok and rho <= 1.0 + max(tol, 1e-12)
    return {"symmetry_defect": sym, "row_sum_defect": rows, "sparsity_ok": bool(sparsity_ok),
            "spectral_radius": rho, "ok": bool(ok)}


def to_edgelist(g: Graph) -> str:
    """Serialise to the plain-text edge list: ``K`` then one ``u v`` per line."""
    lines = [str(g.K)] + [f"{u} {v}" for u, v in g.edges]
    return "\n".join(lines) + "\n"


def from_edgelist(text: str, kind: str = "custom") -> Graph:
    """Parse the format written by :func:`to_edgelist`."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise GraphError("empty edge list")
    try:
        K = int(lines[0])
        edges = [tuple(int(t) for t in ln.split()) for ln in lines[1:]]
    except ValueError as exc:
        raise GraphError(f"malformed edge list: {exc}") from None
    if any(len(e) != 2 for e in edges):
        raise GraphError("each edge line must hold exactly two node indices")
    if kind not in KINDS:
        raise GraphError(f"unknown topology kind {kind!r}")
    return _make(K, edges, kind)
