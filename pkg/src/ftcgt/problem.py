"""Decentralized least-squares problem with exact and single-sample gradients.

Agent ``k`` holds ``N`` samples ``(h_{k,n}, gamma_{k,n})`` with
``gamma = h^T w_true + v`` and minimises

    J_k(w) = 1/(2N) * sum_n (gamma_{k,n} - h_{k,n}^T w)^2 .

The network objective is the average ``J = (1/K) sum_k J_k``.  The
stochastic gradient of agent ``k`` draws one sample index uniformly and
returns ``h_n (h_n^T w - gamma_n)``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ProblemError",
    "ProblemConstants",
    "LeastSquaresProblem",
    "generate",
    "box_muller",
    "dumps_problem",
    "loads_problem",
]

PROBE_RADII = (0.1, 1.0, 10.0)
N_PROBES = 200


class ProblemError(ValueError):
    """Raised for malformed problems or inputs."""


def box_muller(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal draws from pairs of uniforms (Box-Muller, cosine branch).

    Each output consumes two consecutive uniforms ``u1, u2`` from
    ``rng.random``; ``1 - u1`` is used inside the logarithm so the
    argument is never zero.
    """
    n = int(np.prod(shape))
    u = rng.random(2 * n)
    u1, u2 = u[0::2], u[1::2]
    z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
    return z.reshape(shape)


@dataclass(frozen=True)
class ProblemConstants:
    """Constants entering the performance bounds.

    Attributes
    ----------
    nu : float
        Smallest eigenvalue of the Hessian of the average objective.
    delta : float
        Largest eigenvalue over all local Hessians.
    zeta_sq : float
        ``sum_k ||w_k^o - w^o||^2``.
    sigma_sq : float
        ``sum_k sigma_k^2``, gradient-noise variance at the local optima.
    beta_sq : float
        ``sum_k beta_k^2``, growth of the noise variance away from them.
    """

    nu: float
    delta: float
    zeta_sq: float
    sigma_sq: float
    beta_sq: float
    sigma_k_sq: tuple = field(default=(), repr=False)
    beta_k_sq: tuple = field(default=(), repr=False)
    singular_local: tuple = field(default=(), repr=False)


@dataclass(frozen=True, eq=False)
class LeastSquaresProblem:
    """Per-agent regression data.

    Attributes
    ----------
    features : ndarray of shape (K, N, M)
    labels : ndarray of shape (K, N)
    w_true : ndarray of shape (M,)
        Generating model.
    noise : ndarray of shape (K, N)
        Recorded label-noise draws.
    noise_variance : float
    seed : int or None
    """

    features: np.ndarray
    labels: np.ndarray
    w_true: np.ndarray
    noise: np.ndarray
    noise_variance: float = 0.0
    seed: int | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        H = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if H.ndim != 3:
            raise ProblemError("features must have shape (K, N, M)")
        if y.shape != H.shape[:2]:
            raise ProblemError(f"labels shape {y.shape} does not match features {H.shape[:2]}")
        for name, arr in (("features", H), ("labels", y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        w = np.asarray(self.w_true, dtype=float).reshape(-1)
        if w.shape != (H.shape[2],):
            raise ProblemError("w_true must have length M")
        object.__setattr__(self, "w_true", w)
        object.__setattr__(self, "noise", np.asarray(self.noise, dtype=float).reshape(y.shape))

    @property
    def K(self) -> int:
        return self.features.shape[0]

    @property
    def N(self) -> int:
        return self.features.shape[1]

    @property
    def M(self) -> int:
        return self.features.shape[2]

    # -- objectives and gradients ---------------------------------------------

    def _check_k(self, k):
        if not 0 <= k < self.K:
            raise ProblemError(f"agent index {k} outside [0, {self.K})")

    def _check_w(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.M,):
            raise ProblemError(f"w must have shape ({self.M},), got {w.shape}")
        return w

    def local_cost(self, k: int, w) -> float:
        self._check_k(k)
        w = self._check_w(w)
        r = self.labels[k] - self.features[k] @ w
        return float(0.5 * np.mean(r * r))

    def full_gradient(self, k: int, w) -> np.ndarray:
        """``(1/N) sum_n h_{k,n} (h_{k,n}^T w - gamma_{k,n})``."""
        self._check_k(k)
        w = self._check_w(w)
        Hk = self.features[k]
        return Hk.T @ (Hk @ w - self.labels[k]) / self.N

    def sample_gradient(self, k: int, w, n: int) -> np.ndarray:
        """Gradient of the single-sample loss ``n`` of agent ``k``."""
        self._check_k(k)
        w = self._check_w(w)
        h = self.features[k, n]
        return h * (h @ w - self.labels[k, n])

    def stochastic_gradient(self, k: int, w, rng: np.random.Generator) -> np.ndarray:
        """Single-sample gradient at a uniformly drawn index."""
        return self.sample_gradient(k, w, int(rng.integers(self.N)))

    def full_gradients(self, W) -> np.ndarray:
        """Stacked exact gradients for the ``(K, M)`` model matrix ``W``."""
        W = np.asarray(W, dtype=float)
        res = np.einsum("knm,km->kn", self.features, W) - self.labels
        return np.einsum("knm,kn->km", self.features, res) / self.N

    def sample_gradients(self, W, idx) -> np.ndarray:
        """Stacked single-sample gradients; agent ``k`` uses sample ``idx[k]``."""
        W = np.asarray(W, dtype=float)
        ar = np.arange(self.K)
        h = self.features[ar, idx]
        r = np.einsum("km,km->k", h, W) - self.labels[ar, idx]
        return h * r[:, None]

    def noise_second_moment(self, k: int, w) -> float:
        """``E ||s_k(w)||^2`` by exact enumeration over the ``N`` samples."""
        self._check_k(k)
        w = self._check_w(w)
        Hk = self.features[k]
        r = Hk @ w - self.labels[k]
        per = (Hk * r[:, None])
        g = per.mean(axis=0)
        return float(np.mean(np.sum(per * per, axis=1)) - g @ g)

    # -- optima and constants -------------------------------------------------

    def hessians(self) -> np.ndarray:
        """Local Hessians ``(1/N) H_k^T H_k``, shape ``(K, M, M)``."""
        if "R" not in self._cache:
            self._cache["R"] = np.einsum("knm,knp->kmp", self.features, self.features) / self.N
        return self._cache["R"]

    def optima_and_constants(self):
        """Global optimum, local optima and the bound constants.

        Returns
        -------
        w_opt : ndarray of shape (M,)
        local_opt : ndarray of shape (K, M)
        constants : ProblemConstants

        Raises
        ------
        ProblemError
            If the Hessian of the average objective is singular.
        """
        if "optima" in self._cache:
            return self._cache["optima"]
        R = self.hessians()
        r = np.einsum("knm,kn->km", self.features, self.labels) / self.N
        Rbar = R.mean(axis=0)
        evals = np.linalg.eigvalsh(Rbar)
        if evals[0] <= 1e-12 * max(evals[-1], 1.0):
            raise ProblemError("aggregate Hessian is singular; w^o is not unique")
        w_opt = np.linalg.solve(Rbar, r.mean(axis=0))
        local, singular = [], []
        for k in range(self.K):
            ev = np.linalg.eigvalsh(R[k])
            if ev[0] > 1e-12 * max(ev[-1], 1.0):
                local.append(np.linalg.solve(R[k], r[k]))
                singular.append(False)
            else:
                local.append(np.linalg.lstsq(R[k], r[k], rcond=None)[0])
                singular.append(True)
        local = np.array(local)
        delta = float(max(np.linalg.eigvalsh(R[k])[-1] for k in range(self.K)))
        zeta_sq = float(np.sum((local - w_opt) ** 2))
        sigma_k = np.array([self.noise_second_moment(k, local[k]) for k in range(self.K)])
        sigma_k = np.maximum(sigma_k, 0.0)
        beta_k = []
        probes = self.probe_points(local)
        for k in range(self.K):
            ratios = [(self.noise_second_moment(k, w) - sigma_k[k]) / np.sum((local[k] - w) ** 2)
                      for w in probes[k]]
            beta_k.append(max(0.0, float(np.max(ratios))))
        beta_k = np.array(beta_k)
        consts = ProblemConstants(nu=float(evals[0]), delta=delta, zeta_sq=zeta_sq,
                                  sigma_sq=float(sigma_k.sum()), beta_sq=float(beta_k.sum()),
                                  sigma_k_sq=tuple(sigma_k), beta_k_sq=tuple(beta_k),
                                  singular_local=tuple(singular))
        self._cache["optima"] = (w_opt, local, consts)
        return self._cache["optima"]

    def probe_points(self, local=None) -> np.ndarray:
        """Deterministic probe set used to fit ``beta_k``, shape ``(K, 200, M)``.

        Points sit at distances 0.1, 1 and 10 from each local optimum along
        random directions drawn from a generator seeded by the problem seed.
        """
        if local is None:
            local = self.optima_and_constants()[1]
        rng = np.random.default_rng([0 if self.seed is None else int(self.seed), 7919])
        radii = np.array([PROBE_RADII[j % len(PROBE_RADII)] for j in range(N_PROBES)])
        out = np.empty((self.K, N_PROBES, self.M))
        for k in range(self.K):
            d = rng.standard_normal((N_PROBES, self.M))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            out[k] = local[k] + radii[:, None] * d
        return out


def generate(K: int, M: int, N: int, noise_variance: float, rng_seed: int) -> LeastSquaresProblem:
    """Draw a problem instance.

    Features and ``w_true`` are standard normal; labels follow the linear
    model with Gaussian noise of variance ``noise_variance``.  All normals
    come from :func:`box_muller` over a PCG64 uniform stream seeded with
    ``rng_seed``, in the order ``w_true``, features, noise.  If the
    aggregate Hessian happens to be singular the draw continues on the same
    stream until it is not.
    """
    for name, v in (("K", K), ("M", M), ("N", N)):
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
            raise ProblemError(f"{name} must be a positive integer")
    if noise_variance < 0:
        raise ProblemError("noise_variance must be nonnegative")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    w_true = box_muller(rng, (M,))
    for _ in range(100):
        H = box_muller(rng, (K, N, M))
        v = box_muller(rng, (K, N))
        noise = np.sqrt(noise_variance) * v
        y = np.einsum("knm,m->kn", H, w_true) + noise
        Rbar = np.einsum("knm,knp->mp", H, H) / (K * N)
        if np.linalg.eigvalsh(Rbar)[0] > 1e-10:
            return LeastSquaresProblem(H, y, w_true, noise, float(noise_variance), int(rng_seed))
    raise ProblemError("could not draw a problem with positive definite aggregate Hessian "
                       f"(K*N={K * N} samples for M={M})")


def dumps_problem(p: LeastSquaresProblem) -> str:
    """Text CSV blocks: ``# w_true``, ``# features`` (k,n,h...), ``# labels`` (k,n,gamma,noise)."""
    buf = io.StringIO()
    buf.write(f"# problem K={p.K} M={p.M} N={p.N} noise_variance={p.noise_variance:.17g} seed={p.seed}\n")
    buf.write("# w_true\n")
    buf.write(",".join(f"{v:.17g}" for v in p.w_true) + "\n")
    buf.write("# features\n")
    for k in range(p.K):
        for n in range(p.N):
            buf.write(f"{k},{n}," + ",".join(f"{v:.17g}" for v in p.features[k, n]) + "\n")
    buf.write("# labels\n")
    for k in range(p.K):
        for n in range(p.N):
            buf.write(f"{k},{n},{p.labels[k, n]:.17g},{p.noise[k, n]:.17g}\n")
    return buf.getvalue()


def loads_problem(text: str) -> LeastSquaresProblem:
    """Inverse of :func:`dumps_problem`."""
    blocks, cur, header = {}, None, None
    for ln in text.splitlines():
        if not ln.strip():
            continue
        if ln.startswith("# problem"):
            header = dict(t.split("=") for t in ln[len("# problem"):].split())
        elif ln.startswith("# "):
            cur = ln[2:].strip()
            blocks[cur] = []
        elif cur is None:
            raise ProblemError("data before the first block header")
        else:
            blocks[cur].append([float(t) for t in ln.split(",")])
    if header is None or not {"w_true", "features", "labels"} <= blocks.keys():
        raise ProblemError("missing header or block")
    K, M, N = int(header["K"]), int(header["M"]), int(header["N"])
    w_true = np.array(blocks["w_true"][0])
    F = np.array(blocks["features"])
    L = np.array(blocks["labels"])
    if F.shape != (K * N, M + 2) or L.shape != (K * N, 4):
        raise ProblemError("block sizes do not match the header")
    H = np.zeros((K, N, M))
    y = np.zeros((K, N))
    v = np.zeros((K, N))
    for row in F:
        H[int(row[0]), int(row[1])] = row[2:]
    for row in L:
        y[int(row[0]), int(row[1])] = row[2]
        v[int(row[0]), int(row[1])] = row[3]
    seed = None if header["seed"] == "None" else int(header["seed"])
    return LeastSquaresProblem(H, y, w_true, v, float(header["noise_variance"]), seed)
