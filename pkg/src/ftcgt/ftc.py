"""Finite-time consensus (FTC) matrix sequences.

A sequence ``A_1, ..., A_tau`` is an exact FTC sequence when the product
``A_tau ... A_1`` equals the averaging matrix ``(1/K) 11^T``.  The
spectral distance of the product from that matrix is the approximation
error ``epsilon``.  At iteration ``i >= 1`` the optimizer applies
``matrices[(i - 1) % tau]``, so the first period multiplies ``A_1`` first.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import least_squares

from .graph import (
    DEFAULT_TOL,
    Graph,
    GraphError,
    laplacian,
    metropolis_weights,
    validate_combination_matrix,
)

__all__ = [
    "FTCError",
    "MatrixSequence",
    "averaging_matrix",
    "measure_epsilon",
    "hypercube_sequence",
    "laplacian_factorization",
    "path_matching_sequence",
    "complete_sequence",
    "metropolis_sequence",
    "exact_sequence",
    "perturb",
    "perturb_to_target",
    "truncate",
    "reorder_for_prefix",
    "validate_mixing",
    "dumps_sequence",
    "loads_sequence",
]

ORDERINGS = ("descending", "ascending", "leja")


class FTCError(ValueError):
    """Raised for invalid sequence operations."""


def averaging_matrix(K: int) -> np.ndarray:
    """The exact averaging matrix ``(1/K) 11^T``."""
    return np.full((K, K), 1.0 / K)


def _as_matrices(seq) -> list:
    mats = seq.matrices if isinstance(seq, MatrixSequence) else seq
    mats = [np.asarray(A, dtype=float) for A in mats]
    if not mats:
        raise FTCError("sequence must contain at least one matrix")
    K = mats[0].shape[0]
    for j, A in enumerate(mats):
        if A.shape != (K, K):
            raise FTCError(f"matrix {j} has shape {A.shape}, expected {(K, K)}")
    return mats


def sequence_product(seq) -> np.ndarray:
    """Return ``A_tau ... A_2 A_1``."""
    mats = _as_matrices(seq)
    P = mats[0].copy()
    for A in mats[1:]:
        P = A @ P
    return P


def measure_epsilon(seq) -> float:
    """Spectral norm of ``A_tau ... A_1 - (1/K) 11^T``.

    Parameters
    ----------
    seq : MatrixSequence or sequence of (K, K) arrays

    Returns
    -------
    float
    """
    P = sequence_product(seq)
    return float(np.linalg.norm(P - averaging_matrix(P.shape[0]), 2))


@dataclass(frozen=True)
class MatrixSequence:
    """Ordered, immutable list of combination matrices.

    Parameters
    ----------
    matrices : sequence of (K, K) arrays
        ``A_1`` first.
    label : str, optional
        Free-form description used in reports.
    graph : Graph, optional
        Topology the matrices should respect.
    tol : float, default=1e-12
        Tolerance for the per-matrix validation flags.

    Attributes
    ----------
    epsilon : float
        Measured approximation error of the full product.
    mixing_ok : tuple of bool
        Per matrix: symmetric, rows summing to one and spectral radius
        at most one, each within ``tol``.
    """

    matrices: tuple
    label: str = ""
    graph: Graph | None = field(default=None, compare=False)
    tol: float = DEFAULT_TOL
    epsilon: float = field(init=False)
    mixing_ok: tuple = field(init=False)

    def __post_init__(self):
        mats = _as_matrices(self.matrices)
        frozen = []
        for A in mats:
            B = np.array(A, dtype=float, copy=True)
            B.setflags(write=False)
            frozen.append(B)
        object.__setattr__(self, "matrices", tuple(frozen))
        if self.graph is not None and self.graph.K != self.K:
            raise FTCError(f"graph has K={self.graph.K} but matrices are {self.K}x{self.K}")
        object.__setattr__(self, "epsilon", measure_epsilon(frozen))
        flags = tuple(r["ok"] for r in validate_mixing(frozen, self.tol))
        object.__setattr__(self, "mixing_ok", flags)

    @property
    def K(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def tau(self) -> int:
        return len(self.matrices)

    def __len__(self) -> int:
        return self.tau

    def __getitem__(self, j):
        return self.matrices[j]

    def matrix_at(self, i: int) -> np.ndarray:
        """Matrix applied at iteration ``i`` (``i >= 1``; ``i = 0`` wraps to ``A_tau``)."""
        return self.matrices[(i - 1) % self.tau]

    def product(self) -> np.ndarray:
        return sequence_product(self.matrices)

    def with_matrices(self, matrices, label: str | None = None) -> "MatrixSequence":
        return MatrixSequence(tuple(matrices), label=self.label if label is None else label,
                              graph=self.graph, tol=self.tol)


# ----------------------------------------------------------------------------
# constructions
# ----------------------------------------------------------------------------

def hypercube_sequence(g: Graph) -> MatrixSequence:
    """Dimension-wise pairwise averaging on a hypercube.

    ``A_j = (I + P_j) / 2`` where ``P_j`` swaps every node with its
    neighbor along dimension ``j``.  The ``d`` factors commute and their
    product is exactly the averaging matrix.
    """
    if g.kind != "hypercube":
        raise FTCError("hypercube_sequence requires a hypercube graph")
    K = g.K
    d = K.bit_length() - 1
    idx = np.arange(K)
    mats = []
    for j in range(d):
        P = np.zeros((K, K))
        P[idx, idx ^ (1 << j)] = 1.0
        mats.append(0.5 * (np.eye(K) + P))
    return MatrixSequence(tuple(mats), label=f"hypercube K={K}", graph=g)


def _leja(values: np.ndarray) -> np.ndarray:
    vals = list(values)
    order = [int(np.argmax(np.abs(vals)))]
    while len(order) < len(vals):
        rest = [j for j in range(len(vals)) if j not in order]
        score = [np.sum(np.log(np.abs(vals[j] - np.array([vals[o] for o in order])))) for j in rest]
        order.append(rest[int(np.argmax(score))])
    return np.array([vals[j] for j in order])


def laplacian_factorization(g: Graph, ordering: str = "descending",
                            multiplicity: str = "instances", rtol: float = 1e-9) -> MatrixSequence:
    """Exact FTC sequence ``A_j = I - L / lambda_j`` over nonzero Laplacian eigenvalues.

    The product over all nonzero eigenvalues annihilates every eigenvector
    orthogonal to the all-ones vector.  Factors are symmetric, rows sum to
    one and respect the graph, but many have spectral radius above one;
    they are flagged in ``mixing_ok`` rather than rejected.

    Parameters
    ----------
    g : Graph
        Connected graph.
    ordering : {'descending', 'ascending', 'leja'}, default='descending'
        Order of the factors.  ``descending`` applies the largest
        eigenvalue first; ``leja`` greedily maximises the distance of each
        new root from those already used, which keeps intermediate
        products better scaled.
    multiplicity : {'instances', 'distinct'}, default='instances'
        ``instances`` uses one factor per eigenvalue counted with
        multiplicity; ``distinct`` merges repeated eigenvalues, which is
        still exact because the Laplacian is diagonalisable.
    rtol : float, default=1e-9
        Relative tolerance used to merge numerically equal eigenvalues.
    """
    if not g.is_connected():
        raise GraphError("graph is disconnected")
    if ordering not in ORDERINGS:
        raise FTCError(f"unknown ordering {ordering!r}; expected one of {ORDERINGS}")
    if multiplicity not in ("instances", "distinct"):
        raise FTCError("multiplicity must be 'instances' or 'distinct'")
    K = g.K
    if K == 1:
        return MatrixSequence((np.eye(1),), label="laplacian K=1", graph=g)
    L = laplacian(g)
    lam = np.sort(np.linalg.eigvalsh(L))[1:]
    scale = max(lam[-1], 1.0)
    # snap clusters of numerically equal eigenvalues to their mean
    groups = [[lam[0]]]
    for v in lam[1:]:
        if abs(v - groups[-1][-1]) <= rtol * scale:
            groups[-1].append(v)
        else:
            groups.append([v])
    if multiplicity == "distinct":
        roots = np.array([np.mean(gr) for gr in groups])
    else:
        roots = np.concatenate([[np.mean(gr)] * len(gr) for gr in groups])
    if ordering == "descending":
        roots = roots[::-1]
    elif ordering == "leja":
        roots = _leja(roots)
    mats = [np.eye(K) - L / r for r in roots]
    return MatrixSequence(tuple(mats), label=f"laplacian {g.kind} K={K} ({ordering})", graph=g)


def _pair_layers(K: int, n_layers: int) -> list:
    return [list(range(layer % 2, K - 1, 2)) for layer in range(n_layers)]


def _matching_matrices(x: np.ndarray, K: int, layers: list) -> list:
    mats = []
    k = 0
    for pairs in layers:
        A = np.eye(K)
        for u in pairs:
            a = x[k]
            k += 1
            A[u, u] = A[u + 1, u + 1] = 1.0 - a
            A[u, u + 1] = A[u + 1, u] = a
        mats.append(A)
    return mats


def _product_and_jacobian(x: np.ndarray, K: int, layers: list):
    """Product of the matching factors and its Jacobian in the pair weights."""
    mats = _matching_matrices(x, K, layers)
    tau = len(mats)
    heads = [np.eye(K)]
    for A in mats:
        heads.append(A @ heads[-1])
    tails = [None] * (tau + 1)
    T = np.eye(K)
    for j in range(tau - 1, -1, -1):
        tails[j + 1] = T
        T = T @ mats[j]
    cols = []
    for j, pairs in enumerate(layers):
        Tj, Hj = tails[j + 1], heads[j]
        for u in pairs:
            # d A_j / d a = -(e_u - e_{u+1})(e_u - e_{u+1})^T
            a = Tj[:, u] - Tj[:, u + 1]
            b = Hj[u, :] - Hj[u + 1, :]
            cols.append(-np.outer(a, b).ravel())
    return heads[-1], np.array(cols).T


@lru_cache(maxsize=32)
def _design_matching(K: int, weight_floor: float, seed: int, restarts: int,
                     max_layers: int, tol: float):
    J = averaging_matrix(K)
    for n_layers in range(max(K - 1, 1), max_layers + 1):
        layers = _pair_layers(K, n_layers)
        n = sum(len(p) for p in layers)
        for r in range(restarts):
            rng = np.random.default_rng([seed, n_layers, r])
            x0 = rng.uniform(weight_floor, 1.0 - weight_floor, n)

            def fun(x):
                return (_product_and_jacobian(x, K, layers)[0] - J).ravel()

            def jac(x):
                return _product_and_jacobian(x, K, layers)[1]

            sol = least_squares(fun, x0, jac=jac, bounds=(weight_floor, 1.0 - weight_floor),
                                xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=3000)
            mats = _matching_matrices(sol.x, K, layers)
            if measure_epsilon(mats) <= tol:
                return tuple(sol.x), n_layers
    raise FTCError(f"no exact matching sequence found for K={K} with up to {max_layers} layers")


def path_matching_sequence(g: Graph, weight_floor: float = 0.05, seed: int = 0,
                           restarts: int = 8, max_layers: int | None = None,
                           tol: float = 1e-11) -> MatrixSequence:
    """Exact FTC sequence on a path built from alternating edge matchings.

    Layer ``j`` activates the edges ``(u, u+1)`` with ``u = j mod 2,
    j mod 2 + 2, ...``; each active pair mixes with weight ``a`` in
    ``[weight_floor, 1 - weight_floor]``, giving a block ``[[1-a, a],
    [a, 1-a]]``.  Every factor is therefore symmetric, doubly stochastic,
    nonnegative and of spectral radius one.  The weights are found by
    nonlinear least squares on the entries of the product, starting from
    seeded random points, with ``K - 1`` layers first and more layers only
    if no start reaches ``tol``.

    Parameters
    ----------
    g : Graph
        A path graph.
    weight_floor : float, default=0.05
        Lower bound on every pair weight (upper bound ``1 - weight_floor``).
    seed : int, default=0
        Seed for the start points; the design is deterministic given it.
    restarts : int, default=8
        Start points tried per layer count.
    max_layers : int, optional
        Largest layer count to try; defaults to ``2 K``.
    tol : float, default=1e-11
        Required approximation error.
    """
    if g.kind != "path":
        raise FTCError("path_matching_sequence requires a path graph")
    if not 0.0 < weight_floor < 0.5:
        raise FTCError("weight_floor must lie in (0, 0.5)")
    K = g.K
    if K == 1:
        return MatrixSequence((np.eye(1),), label="path K=1", graph=g)
    max_layers = 2 * K if max_layers is None else int(max_layers)
    x, n_layers = _design_matching(K, float(weight_floor), int(seed), int(restarts), max_layers, float(tol))
    mats = _matching_matrices(np.array(x), K, _pair_layers(K, n_layers))
    return MatrixSequence(tuple(mats), label=f"path matching K={K}", graph=g)


def complete_sequence(g: Graph) -> MatrixSequence:
    """One-step exact averaging on the complete graph."""
    if g.kind != "complete" and g.n_edges != g.K * (g.K - 1) // 2:
        raise FTCError("complete_sequence requires a complete graph")
    return MatrixSequence((averaging_matrix(g.K),), label=f"complete K={g.K}", graph=g)


def metropolis_sequence(g: Graph) -> MatrixSequence:
    """Static Metropolis-Hastings matrix as a length-one sequence."""
    return MatrixSequence((metropolis_weights(g),), label=f"metropolis {g.kind} K={g.K}", graph=g)


CONSTRUCTIONS = ("auto", "hypercube", "laplacian", "matching", "complete")


def exact_sequence(g: Graph, construction: str = "auto", ordering: str = "descending",
                   seed: int = 0) -> MatrixSequence:
    """Pick an exact FTC construction for ``g``.

    ``auto`` maps complete graphs to one-step averaging, hypercubes to
    pairwise averaging, paths to the matching design and everything else
    to the Laplacian factorization.
    """
    if construction not in CONSTRUCTIONS:
        raise FTCError(f"unknown construction {construction!r}; expected one of {CONSTRUCTIONS}")
    if construction == "auto":
        construction = {"complete": "complete", "hypercube": "hypercube",
                        "path": "matching"}.get(g.kind, "laplacian")
    if construction == "complete":
        return complete_sequence(g)
    if construction == "hypercube":
        return hypercube_sequence(g)
    if construction == "matching":
        return path_matching_sequence(g, seed=seed)
    return laplacian_factorization(g, ordering=ordering)


# ----------------------------------------------------------------------------
# derived sequences
# ----------------------------------------------------------------------------

def _noise_pattern(mats: list, rng_seed: int) -> list:
    rng = np.random.default_rng(rng_seed)
    out = []
    for A in mats:
        iu, ju = np.triu_indices(A.shape[0], 1)
        mask = A[iu, ju] != 0
        u = rng.uniform(-1.0, 1.0, int(mask.sum()))
        out.append((iu[mask], ju[mask], u))
    return out


def _apply_noise(mats: list, pattern: list, amplitude: float) -> list:
    out = []
    for A, (iu, ju, u) in zip(mats, pattern):
        B = A.copy()
        B[iu, ju] += amplitude * u
        B[ju, iu] = B[iu, ju]
        np.fill_diagonal(B, 0.0)
        np.fill_diagonal(B, 1.0 - B.sum(axis=1))
        out.append(B)
    return out


def perturb(seq: MatrixSequence, amplitude: float, rng_seed: int) -> MatrixSequence:
    """Add symmetric uniform noise of the given amplitude to nonzero off-diagonals.

    Each nonzero entry ``(k, l)`` with ``k < l`` gets ``amplitude * u``
    with ``u`` uniform on ``[-1, 1]``, mirrored to ``(l, k)``; the diagonal
    is reset so every row sums to one.  Zero amplitude returns the input
    matrices unchanged.
    """
    mats = _as_matrices(seq)
    if amplitude == 0:
        return seq.with_matrices(mats)
    noisy = _apply_noise(mats, _noise_pattern(mats, rng_seed), float(amplitude))
    return seq.with_matrices(noisy, label=f"{seq.label} perturbed(amp={amplitude:.6g})")


def perturb_to_target(seq: MatrixSequence, target_eps: float, rng_seed: int,
                      tol: float = 0.01, max_iter: int = 60):
    """Perturb ``seq`` until its approximation error is ``target_eps`` within ``tol``.

    One noise pattern is drawn from ``rng_seed``; only its scalar
    amplitude is searched.  The amplitude is bracketed by doubling from
    ``1e-3`` and then bisected.

    Returns
    -------
    MatrixSequence
        The perturbed sequence.  Its ``label`` records the amplitude.

    Raises
    ------
    FTCError
        If ``target_eps`` is not above the current error, or no bracket or
        no amplitude within ``tol`` is found in ``max_iter`` steps.  The
        message reports the achievable range seen.
    """
    if not 0.0 <= target_eps < 1.0:
        raise FTCError("target_eps must lie in [0, 1)")
    if tol <= 0:
        raise FTCError("tol must be positive")
    if target_eps <= seq.epsilon:
        raise FTCError(f"target_eps={target_eps} must exceed the current epsilon={seq.epsilon:.3g}")
    mats = _as_matrices(seq)
    pattern = _noise_pattern(mats, rng_seed)

    def eps_at(a):
        return measure_epsilon(_apply_noise(mats, pattern, a))

    lo, hi = 0.0, 1e-3
    seen = [seq.epsilon]
    for _ in range(max_iter):
        e = eps_at(hi)
        seen.append(e)
        if e >= target_eps:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise FTCError(f"could not bracket target_eps={target_eps}; achievable epsilon range "
                       f"[{min(seen):.6g}, {max(seen):.6g}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        e = eps_at(mid)
        seen.append(e)
        if abs(e - target_eps) <= tol:
            noisy = _apply_noise(mats, pattern, mid)
            return seq.with_matrices(noisy, label=f"{seq.label} perturbed(eps~{target_eps:g}, amp={mid:.6g})")
        if e < target_eps:
            lo = mid
        else:
            hi = mid
    raise FTCError(f"bisection did not reach target_eps={target_eps} within tol={tol}; achievable "
                   f"epsilon range [{min(seen):.6g}, {max(seen):.6g}]")


def truncate(seq: MatrixSequence, tau_prime: int) -> MatrixSequence:
    """Keep the first ``tau_prime`` matrices; epsilon is recomputed from scratch."""
    if isinstance(tau_prime, bool) or not isinstance(tau_prime, (int, np.integer)):
        raise FTCError("tau_prime must be an integer")
    if not 1 <= tau_prime <= seq.tau:
        raise FTCError(f"tau_prime must lie in [1, {seq.tau}], got {tau_prime}")
    return seq.with_matrices(seq.matrices[:tau_prime], label=f"{seq.label} truncated({tau_prime})")


def reorder_for_prefix(seq: MatrixSequence, tau_prime: int) -> MatrixSequence:
    """Reorder factors so the first ``tau_prime`` have the smallest product error.

    Every ordered selection of ``tau_prime`` factors is tried.  The chosen
    ones are moved to the front in their best order; the remaining
    factors follow in their original order.
    """
    if not 1 <= tau_prime <= seq.tau:
        raise FTCError(f"tau_prime must lie in [1, {seq.tau}], got {tau_prime}")
    best = None
    for perm in itertools.permutations(range(seq.tau), tau_prime):
        e = measure_epsilon([seq.matrices[j] for j in perm])
        if best is None or e < best[0] - 1e-15:
            best = (e, perm)
    perm = list(best[1])
    rest = [j for j in range(seq.tau) if j not in perm]
    return seq.with_matrices([seq.matrices[j] for j in perm + rest],
                             label=f"{seq.label} reordered{tuple(perm)}")


def validate_mixing(seq, tol: float = DEFAULT_TOL) -> list:
    """Per-matrix report of symmetry, row sums and spectral radius.

    Individual matrices need not be primitive or connected; only the
    three listed properties are checked.
    """
    return [validate_combination_matrix(A, None, tol=tol, check_spectral=True)
            for A in _as_matrices(seq)]


# ----------------------------------------------------------------------------
# text format
# ----------------------------------------------------------------------------

def dumps_sequence(seq: MatrixSequence) -> str:
    """Header ``K tau epsilon`` then ``tau`` blocks of ``K`` rows (17 significant digits)."""
    lines = [f"{seq.K} {seq.tau} {seq.epsilon:.17g}"]
    for A in seq.matrices:
        lines.append("")
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in A)
    return "\n".join(lines) + "\n"


def loads_sequence(text: str, label: str = "loaded") -> MatrixSequence:
    """Parse the format written by :func:`dumps_sequence`."""
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 3:
        raise FTCError("sequence header must be 'K tau epsilon'")
    try:
        K, tau = int(rows[0][0]), int(rows[0][1])
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise FTCError(f"malformed sequence file: {exc}") from None
    if data.shape != (K * tau, K):
        raise FTCError(f"expected {tau} blocks of {K}x{K} values, got shape {data.shape}")
    return MatrixSequence(tuple(data.reshape(tau, K, K)), label=label)
