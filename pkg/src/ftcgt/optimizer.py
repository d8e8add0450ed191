"""Aug-DGM gradient tracking driven by a cycled matrix sequence.

Network recursion, with ``A_i = matrices[(i - 1) % tau]`` and
``g_i`` the stacked gradient estimate at ``W_i``::

    W_i = A_i (W_{i-1} - G_{i-1})
    G_i = A_i (G_{i-1} + mu g_i - mu g_{i-1}),     G_0 = mu g_0

Each iteration draws exactly one new stochastic gradient per agent; the
estimate at ``W_{i-1}`` is the cached draw from the previous iteration.
The tracker update is evaluated as ``A ((G - mu g_old) + mu g_new)``,
which is the same formula in exact arithmetic and keeps ``G = mu g``
bit-for-bit when there is a single agent.

With diagnostics on, a companion recursion in ``(W, Y)`` runs on the same
sample indices::

    W_i = A_i W_{i-1} - A_i Y_{i-1} - mu A_i A_{i-1} g_{i-1}
    Y_i = A_i Y_{i-1} - mu A_i (I - A_{i-1}) g_{i-1}

with ``Y_0 = G_0 - mu A_0 g_0`` and ``A_0 = matrices[-1]``.  Its model
iterates coincide with the primal ones, and ``1^T Y_i = 0`` throughout.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .ftc import MatrixSequence, exact_sequence, metropolis_sequence
from .graph import build_graph
from .problem import LeastSquaresProblem, ProblemError

__all__ = [
    "MODES",
    "TRAJECTORY_HEADER",
    "DivergenceError",
    "NetworkState",
    "TransformedState",
    "Metrics",
    "Trajectory",
    "GradientSource",
    "init",
    "step",
    "transformed_init",
    "transformed_step",
    "measure",
    "run",
    "AugDGMRegressor",
]

MODES = ("stochastic", "deterministic")
TRAJECTORY_HEADER = "iter,msd,centroid_err,consensus_w,consensus_z,equiv_defect"


class DivergenceError(ArithmeticError):
    """Raised when an iterate stops being finite."""

    def __init__(self, iteration: int, what: str = "W"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


class GradientSource:
    """Gradient estimates for one run, tied to a recorded sample-index stream.

    Parameters
    ----------
    problem : LeastSquaresProblem
    mode : {'stochastic', 'deterministic'}
    indices : ndarray of shape (n_iter + 1, K), optional
        Sample index of each agent at each iteration.  Required in
        stochastic mode; ignored in deterministic mode.
    """

    def __init__(self, problem: LeastSquaresProblem, mode: str, indices=None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.problem = problem
        self.mode = mode
        if mode == "stochastic":
            if indices is None:
                raise ValueError("stochastic mode needs a sample-index record")
            indices = np.asarray(indices)
            if indices.ndim != 2 or indices.shape[1] != problem.K:
                raise ValueError("indices must have shape (n_iter + 1, K)")
        self.indices = indices

    @classmethod
    def draw(cls, problem: LeastSquaresProblem, mode: str, n_iter: int, rng):
        """Record ``n_iter + 1`` rows of uniform sample indices from ``rng``."""
        if mode == "deterministic":
            return cls(problem, mode)
        rng = np.random.default_rng(rng)
        return cls(problem, mode, rng.integers(problem.N, size=(n_iter + 1, problem.K)))

    def __call__(self, W: np.ndarray, i: int) -> np.ndarray:
        if self.mode == "deterministic":
            return self.problem.full_gradients(W)
        if i >= len(self.indices):
            raise IndexError(f"sample-index record has no row for iteration {i}")
        return self.problem.sample_gradients(W, self.indices[i])


@dataclass(frozen=True)
class NetworkState:
    """Stacked models ``W`` and trackers ``G`` at iteration ``iter``.

    ``last_grad`` is the gradient estimate at ``W``, reused by the next
    tracker update.
    """

    W: np.ndarray
    G: np.ndarray
    iter: int
    last_grad: np.ndarray


@dataclass(frozen=True)
class TransformedState:
    """Companion ``(W, Y)`` state of the transformed recursion."""

    W: np.ndarray
    Y: np.ndarray
    iter: int
    last_grad: np.ndarray


@dataclass(frozen=True)
class Metrics:
    """Error metrics at one iteration.

    ``msd`` is per agent, ``(1/K) sum_k ||w_k - w^o||^2``.  ``consensus_z``
    is NaN when no transformed state was supplied, in which case
    ``consensus_x`` equals ``consensus_w`` and ``z_available`` is False.
    """

    msd: float
    centroid_err: float
    consensus_w: float
    consensus_z: float
    consensus_x: float
    z_available: bool


def _check_seq(problem, seq):
    if seq.K != problem.K:
        raise ValueError(f"sequence is {seq.K}x{seq.K} but the problem has K={problem.K}")


def init(problem: LeastSquaresProblem, seq: MatrixSequence, mu: float, w0=None,
         grads: GradientSource | None = None, rng=None, mode: str = "stochastic") -> NetworkState:
    """Initial state ``W_0 = w0``, ``G_0 = mu g_0``.

    Parameters
    ----------
    problem, seq, mu
        Problem, sequence and step size.
    w0 : array_like of shape (K, M) or (M,), optional
        Initial models; a single vector is copied to every agent.
        Defaults to zeros.
    grads : GradientSource, optional
        Source of gradient estimates.  When omitted one is drawn from
        ``rng`` for this single evaluation.
    """
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    _check_seq(problem, seq)
    W = _initial_models(problem, w0)
    if grads is None:
        grads = GradientSource.draw(problem, mode, 0, rng)
    g = grads(W, 0)
    return NetworkState(W=W, G=mu * g, iter=0, last_grad=g)


def _initial_models(problem, w0):
    if w0 is None:
        return np.zeros((problem.K, problem.M))
    W = np.asarray(w0, dtype=float)
    if W.shape == (problem.M,):
        W = np.tile(W, (problem.K, 1))
    if W.shape != (problem.K, problem.M):
        raise ValueError(f"w0 must have shape ({problem.K}, {problem.M}) or ({problem.M},)")
    return W.copy()


def step(state: NetworkState, seq: MatrixSequence, mu: float, grads: GradientSource) -> NetworkState:
    """Advance one Aug-DGM iteration.

    Raises
    ------
    DivergenceError
        If the new models or trackers are not finite.
    """
    i = state.iter + 1
    A = seq.matrix_at(i)
    W = A @ (state.W - state.G)
    if not np.isfinite(W).all():
        raise DivergenceError(i)
    g = grads(W, i)
    G = A @ ((state.G - mu * state.last_grad) + mu * g)
    if not np.isfinite(G).all():
        raise DivergenceError(i, "G")
    return NetworkState(W=W, G=G, iter=i, last_grad=g)


def transformed_init(state0: NetworkState, seq: MatrixSequence, mu: float) -> TransformedState:
    """``Y_0 = G_0 - mu A_0 g_0`` with ``A_0`` the matrix at cycle position of iteration 0."""
    if state0.iter != 0:
        raise ValueError("transformed recursion must start from the initial state")
    A0 = seq.matrix_at(0)
    Y = state0.G - mu * (A0 @ state0.last_grad)
    return TransformedState(W=state0.W.copy(), Y=Y, iter=0, last_grad=state0.last_grad)


def transformed_step(tstate: TransformedState, seq: MatrixSequence, mu: float,
                     grads: GradientSource | None) -> TransformedState:
    """Advance the ``(W, Y)`` recursion using the shared sample-index record."""
    if grads is None:
        raise ValueError("the transformed recursion needs the shared gradient record")
    i = tstate.iter + 1
    A = seq.matrix_at(i)
    A_prev = seq.matrix_at(i - 1)
    g_prev = tstate.last_grad
    Ag = A_prev @ g_prev
    W = A @ tstate.W - A @ tstate.Y - mu * (A @ Ag)
    Y = A @ tstate.Y - mu * (A @ (g_prev - Ag))
    if not np.isfinite(W).all():
        raise DivergenceError(i, "transformed W")
    return TransformedState(W=W, Y=Y, iter=i, last_grad=grads(W, i))


def _centroid_gradients(problem, wc):
    R = problem.hessians()
    r = _linear_terms(problem)
    return R @ wc - r


def _linear_terms(problem):
    if "r" not in problem._cache:
        problem._cache["r"] = np.einsum("knm,kn->km", problem.features, problem.labels) / problem.N
    return problem._cache["r"]


def measure(state, problem: LeastSquaresProblem, tstate: TransformedState | None = None,
            seq: MatrixSequence | None = None, mu: float | None = None, w_opt=None) -> Metrics:
    """Compute :class:`Metrics` for a primal state.

    ``consensus_z`` needs the transformed companion state together with
    ``seq`` and ``mu``: ``Z_i = Y_i + mu A_i grad J(1 w_c)`` and
    ``consensus_z = ||(I - 11^T/K) Z_i||^2``.
    """
    if w_opt is None:
        w_opt = problem.optima_and_constants()[0]
    W = state.W
    K = W.shape[0]
    wc = W.mean(axis=0)
    msd = float(np.sum((W - w_opt) ** 2) / K)
    cen = float(np.sum((w_opt - wc) ** 2))
    cw = float(np.sum((W - wc) ** 2))
    if tstate is None:
        return Metrics(msd, cen, cw, float("nan"), cw, False)
    if seq is None or mu is None:
        raise ValueError("seq and mu are required to form Z")
    A = seq.matrix_at(tstate.iter)
    Z = tstate.Y + mu * (A @ _centroid_gradients(problem, wc))
    cz = float(np.sum((Z - Z.mean(axis=0)) ** 2))
    return Metrics(msd, cen, cw, cz, cw + cz, True)


@dataclass
class Trajectory:
    """Per-iteration metric series of one run (length ``n_iter + 1``).

    If the run diverged, the arrays stop at the last finite iteration and
    ``diverged_at`` holds the iteration that failed.
    """

    msd: np.ndarray
    centroid_err: np.ndarray
    consensus_w: np.ndarray
    consensus_z: np.ndarray
    equiv_defect: np.ndarray
    tracking_defect: np.ndarray
    centroid_defect: np.ndarray
    y_sum_defect: np.ndarray
    n_iter: int
    mu: float
    mode: str
    seed: int | None
    label: str = ""
    diverged_at: int | None = None
    final_W: np.ndarray | None = field(default=None, repr=False)

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def iters(self) -> np.ndarray:
        return np.arange(len(self.msd))

    def steady_state(self, fraction: float = 0.2) -> float:
        """Mean MSD over the final ``fraction`` of iterations (inf if diverged)."""
        if self.diverged:
            return float("inf")
        n = max(1, int(round(fraction * self.n_iter)))
        return float(np.mean(self.msd[-n:]))

    def iterations_to(self, threshold: float) -> float:
        """First iteration with ``msd <= threshold``; inf if never reached."""
        hit = np.nonzero(self.msd <= threshold)[0]
        return float(hit[0]) if hit.size else float("inf")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(TRAJECTORY_HEADER + "\n")
        cols = (self.msd, self.centroid_err, self.consensus_w, self.consensus_z, self.equiv_defect)
        for i in range(len(self.msd)):
            buf.write(f"{i}," + ",".join(f"{c[i]:.17g}" for c in cols) + "\n")
        return buf.getvalue()


def run(problem: LeastSquaresProblem, seq: MatrixSequence, mu: float, n_iter: int,
        rng_seed: int | None = 0, mode: str = "stochastic", diagnostics: bool = False,
        w0=None, grads: GradientSource | None = None, label: str = "") -> Trajectory:
    """Run Aug-DGM for ``n_iter`` iterations and record metrics.

    Parameters
    ----------
    problem : LeastSquaresProblem
    seq : MatrixSequence
    mu : float
        Step size.
    n_iter : int
        Number of iterations (the series hold ``n_iter + 1`` entries).
    rng_seed : int, optional
        Seed of the sample-index stream in stochastic mode.
    mode : {'stochastic', 'deterministic'}
    diagnostics : bool, default=False
        Also run the transformed recursion and record ``consensus_z``,
        the max-norm defect between the two model iterates and the
        ``1^T Y`` defect.
    w0 : array_like, optional
        Initial models (default zeros).
    grads : GradientSource, optional
        Pre-recorded gradient source; overrides ``rng_seed``.

    Returns
    -------
    Trajectory
        Tracking and centroid-recursion residuals are recorded in every
        run.  A divergence ends the run early with ``diverged_at`` set.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    _check_seq(problem, seq)
    if grads is None:
        grads = GradientSource.draw(problem, mode, n_iter, rng_seed)
    w_opt = problem.optima_and_constants()[0]
    nan = float("nan")
    out = {k: np.full(n_iter + 1, nan) for k in
           ("msd", "centroid_err", "consensus_w", "consensus_z", "equiv_defect",
            "tracking_defect", "centroid_defect", "y_sum_defect")}
    state = init(problem, seq, mu, w0=w0, grads=grads)
    tstate = transformed_init(state, seq, mu) if diagnostics else None
    diverged_at = None

    def record(i, st, ts, prev):
        m = measure(st, problem, ts, seq, mu, w_opt)
        out["msd"][i] = m.msd
        out["centroid_err"][i] = m.centroid_err
        out["consensus_w"][i] = m.consensus_w
        out["consensus_z"][i] = m.consensus_z
        out["tracking_defect"][i] = float(np.max(np.abs(st.G.mean(axis=0) - mu * st.last_grad.mean(axis=0))))
        if prev is not None:
            pred = prev.W.mean(axis=0) - mu * prev.last_grad.mean(axis=0)
            out["centroid_defect"][i] = float(np.max(np.abs(st.W.mean(axis=0) - pred)))
        else:
            out["centroid_defect"][i] = 0.0
        if ts is not None:
            out["equiv_defect"][i] = float(np.max(np.abs(st.W - ts.W)))
            out["y_sum_defect"][i] = float(np.max(np.abs(ts.Y.sum(axis=0))))

    with np.errstate(over="ignore", invalid="ignore"):
        record(0, state, tstate, None)
        for i in range(1, n_iter + 1):
            try:
                new = step(state, seq, mu, grads)
                if diagnostics:
                    tstate = transformed_step(tstate, seq, mu, grads)
            except DivergenceError as exc:
                diverged_at = exc.iteration
                break
            record(i, new, tstate, state)
            state = new
    if diverged_at is not None:
        for k in out:
            out[k] = out[k][:diverged_at]
    return Trajectory(n_iter=n_iter, mu=float(mu), mode=mode, seed=rng_seed, label=label,
                      diverged_at=diverged_at, final_W=state.W, **out)


class AugDGMRegressor(RegressorMixin, BaseEstimator):
    """Decentralized least-squares regression solved with Aug-DGM.

    The training data is split across agents: ``X`` has shape
    ``(K, N, M)`` (agent, sample, feature) and ``y`` has shape ``(K, N)``.
    After fitting, ``coef_`` is the network centroid of the agents'
    models.

    Parameters
    ----------
    mu : float, default=0.01
        Step size.
    n_iter : int, default=1000
    topology : {'path', 'ring', 'hypercube', 'complete'}, default='path'
        Graph connecting the ``K`` agents.
    sequence : {'exact', 'metropolis'} or MatrixSequence, default='exact'
        Combination matrices.  ``exact`` selects an exact FTC construction
        for the topology; a :class:`MatrixSequence` is used as given.
    mode : {'stochastic', 'deterministic'}, default='deterministic'
    random_state : int, default=0
        Seed of the sample-index stream.

    Attributes
    ----------
    coef_ : ndarray of shape (M,)
    agent_coefs_ : ndarray of shape (K, M)
    trajectory_ : Trajectory
    sequence_ : MatrixSequence
    n_features_in_ : int
    """

    def __init__(self, mu=0.01, n_iter=1000, topology="path", sequence="exact",
                 mode="deterministic", random_state=0):
        self.mu = mu
        self.n_iter = n_iter
        self.topology = topology
        self.sequence = sequence
        self.mode = mode
        self.random_state = random_state

    def _resolve_sequence(self, K):
        if isinstance(self.sequence, MatrixSequence):
            if self.sequence.K != K:
                raise ValueError(f"sequence is for K={self.sequence.K}, data has K={K}")
            return self.sequence
        g = build_graph(self.topology, K)
        if self.sequence == "exact":
            return exact_sequence(g)
        if self.sequence == "metropolis":
            return metropolis_sequence(g)
        raise ValueError(f"sequence must be 'exact', 'metropolis' or a MatrixSequence, got {self.sequence!r}")

    def fit(self, X, y):
        X = check_array(X, allow_nd=True, ensure_2d=False)
        y = check_array(y, ensure_2d=False)
        if X.ndim != 3:
            raise ValueError("X must have shape (n_agents, n_samples, n_features)")
        if y.shape != X.shape[:2]:
            raise ValueError(f"y must have shape {X.shape[:2]}, got {y.shape}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        K, N, M = X.shape
        try:
            problem = LeastSquaresProblem(X, y, np.zeros(M), np.zeros((K, N)))
            problem.optima_and_constants()
        except ProblemError as exc:
            raise ValueError(str(exc)) from None
        seq = self._resolve_sequence(K)
        traj = run(problem, seq, float(self.mu), int(self.n_iter), rng_seed=self.random_state,
                   mode=self.mode)
        if traj.diverged:
            raise ArithmeticError(f"Aug-DGM diverged at iteration {traj.diverged_at}; reduce mu")
        self.sequence_ = seq
        self.trajectory_ = traj
        self.agent_coefs_ = traj.final_W
        self.coef_ = traj.final_W.mean(axis=0)
        self.n_features_in_ = M
        return self

    def predict(self, X):
        """Predict with the centroid model; ``X`` is ``(n, M)`` or ``(K, N, M)``."""
        check_is_fitted(self, "coef_")
        X = check_array(X, allow_nd=True)
        if X.shape[-1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[-1]} features, expected {self.n_features_in_}")
        return X @ self.coef_
