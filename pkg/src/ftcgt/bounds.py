"""Closed-form performance constants for Aug-DGM with an inexact FTC sequence.

All functions are pure.  Inputs live in :class:`BoundInputs`; problem
constants follow :class:`~ftcgt.problem.ProblemConstants` (``sigma_sq``,
``beta_sq`` and ``zeta_sq`` are sums over agents).

Step-size conditions that the formulas assume are not enforced: a
violated condition sets a warning flag and the report marks the bound as
not certified.  Leading-order remainders (``O(mu^2)`` in ``alpha2`` and
in the coupled recursion) are carried as zero; :data:`REMAINDER_CAVEAT`
is attached to every report.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "BoundError",
    "BoundInputs",
    "BoundConstants",
    "REMAINDER_CAVEAT",
    "inputs_from_problem",
    "consensus_constants",
    "centroid_constants",
    "coupling_and_rate",
    "spectral_radius_2x2",
    "convergence_step_limit",
    "explicit_bound_vector",
    "steady_state_bound",
    "o_form",
    "transient_constant",
    "evaluate",
    "format_report",
]

REMAINDER_CAVEAT = "higher-order remainders in alpha2 and the coupled recursion are set to zero"

EPS_REGIME_MAX = 0.75


class BoundError(ValueError):
    """Raised when inputs fall outside the domain of a formula."""


@dataclass(frozen=True)
class BoundInputs:
    """Inputs to the bound formulas.

    Parameters
    ----------
    mu : float
        Step size, ``mu > 0``.
    tau : int
        Sequence length, ``tau >= 1``.
    eps : float
        Sequence inexactness, ``0 <= eps < 1``.
    K : int
        Number of agents.
    nu, delta : float
        Strong convexity of the average objective and the largest local
        smoothness constant.
    sigma_sq, beta_sq, zeta_sq : float
        Summed noise, noise-growth and heterogeneity constants.
    """

    mu: float
    tau: int
    eps: float
    K: int
    nu: float
    delta: float
    sigma_sq: float
    beta_sq: float
    zeta_sq: float

    def __post_init__(self):
        if not self.mu > 0:
            raise BoundError("mu must be positive")
        if int(self.tau) != self.tau or self.tau < 1:
            raise BoundError("tau must be a positive integer")
        if not 0 <= self.eps < 1:
            raise BoundError("eps must lie in [0, 1)")
        if int(self.K) != self.K or self.K < 1:
            raise BoundError("K must be a positive integer")
        if not (self.nu > 0 and self.delta > 0):
            raise BoundError("nu and delta must be positive")
        if self.nu > self.delta * (1 + 1e-12):
            raise BoundError("nu cannot exceed delta")
        for name in ("sigma_sq", "beta_sq", "zeta_sq"):
            if getattr(self, name) < 0:
                raise BoundError(f"{name} must be nonnegative")


def inputs_from_problem(constants, mu: float, tau: int, eps: float, K: int) -> BoundInputs:
    """Build :class:`BoundInputs` from a ``ProblemConstants`` instance."""
    return BoundInputs(mu=float(mu), tau=int(tau), eps=float(max(eps, 0.0)), K=int(K),
                       nu=constants.nu, delta=constants.delta, sigma_sq=constants.sigma_sq,
                       beta_sq=constants.beta_sq, zeta_sq=constants.zeta_sq)


def consensus_constants(b: BoundInputs):
    """Consensus-error constants ``(theta1, theta2, theta3, theta4)``.

    Examples
    --------
    >>> b = BoundInputs(1e-3, 3, 0.0, 8, 0.5, 2.0, 1.0, 1.0, 1.0)
    >>> consensus_constants(b)[0]
    0.0
    """
    mu, tau, e, K = b.mu, b.tau, b.eps, b.K
    d2, be2, s2, z2 = b.delta ** 2, b.beta_sq, b.sigma_sq, b.zeta_sq
    r = (1 + e) / (1 - e)
    m2 = mu * mu
    t1 = 0.5 * e * (1 + e)
    t2 = 3 * tau * (4 * d2 + be2) * r * m2 + 18 * tau * be2 * m2
    t3 = 4 * tau * (d2 + be2 * K) * r * m2 + 18 * tau * be2 * K * m2
    t4 = (2 * tau * (3 * tau * be2 * r + 18 * tau * be2) * m2 * z2
          + 2 * tau * (6 * tau + r) * m2 * s2)
    return t1, t2, t3, t4


def centroid_constants(b: BoundInputs):
    """Centroid-error constants ``(alpha1, alpha2, alpha3)`` at leading order."""
    mu, K = b.mu, b.K
    a1 = 1 - b.nu * mu / 2
    a2 = 2 * b.delta ** 2 * mu / (b.nu * K)
    a3 = 3 * b.beta_sq * mu * mu * b.zeta_sq / K + mu * mu * b.sigma_sq / K
    return a1, a2, a3


def spectral_radius_2x2(H) -> float:
    """Spectral radius of a 2x2 matrix with nonnegative off-diagonal product."""
    a, b_, c, d = H[0][0], H[0][1], H[1][0], H[1][1]
    disc = (a - d) ** 2 + 4 * b_ * c
    if disc < 0:
        return math.sqrt(a * d - b_ * c)
    s = math.sqrt(disc)
    return max(abs((a + d + s) / 2), abs((a + d - s) / 2))


def _gamma(b: BoundInputs) -> float:
    if b.eps == 0:
        return 1 - b.tau * b.nu * b.mu / 8
    if b.eps > EPS_REGIME_MAX:
        raise BoundError(f"eps={b.eps:g} is outside the contraction regime (0 < eps <= 3/4)")
    return 1 - b.tau * b.nu * b.mu / 4 + (1 + b.eps) / 2


def coupling_and_rate(b: BoundInputs):
    """Coupling matrix ``H``, drive ``p``, ``rho(H)`` and contraction factor ``gamma``.

    Raises
    ------
    BoundError
        If ``eps > 3/4`` (no contraction factor is available there).
    """
    gamma = _gamma(b)
    t1, t2, t3, t4 = consensus_constants(b)
    a1, a2, a3 = centroid_constants(b)
    tau = b.tau
    H = np.array([[a1 ** tau, a2 * tau * (1 + 1.5 * t1)],
                  [1.5 * tau * t3, 1.5 * (t1 + tau * t2)]])
    p = np.array([tau * a3, 1.5 * t4])
    return H, p, spectral_radius_2x2(H), gamma


def convergence_step_limit(b: BoundInputs) -> float:
    """Largest step size for which the convergence guarantee applies."""
    e = b.eps
    lim1 = math.sqrt(max((1 - 0.75 * e) * (1 - e), 0.0)) / (5 * b.tau * math.sqrt(4 * b.delta ** 2 + b.beta_sq))
    lim2 = 4 / (3 * b.nu * b.tau)
    return min(lim1, lim2)


def explicit_bound_vector(b: BoundInputs):
    """Explicit upper bounds ``(v1, v2)`` on the two entries of ``(I - H)^{-1} p``."""
    mu, tau, e, K = b.mu, b.tau, b.eps, b.K
    nu, d2 = b.nu, b.delta ** 2
    s2, bz = b.sigma_sq, b.beta_sq * b.zeta_sq
    m2, t2 = mu * mu, tau * tau
    q1, q2 = 1 - e, (1 - e) ** 2
    v1 = (4 * mu * s2 / (nu * K)
          + 8640 * m2 * t2 * d2 * s2 / (nu ** 2 * K * q1)
          + 1440 * m2 * tau * (1 + e) * d2 * s2 / (nu ** 2 * K * q2)
          + 12 * mu * bz / (nu * K)
          + 4320 * m2 * t2 * (1 + e) * d2 * bz / (nu ** 2 * K * q2)
          + 25920 * m2 * t2 * d2 * bz / (nu ** 2 * K * q1))
    v2 = (540 * m2 * t2 * s2 / q1
          + 90 * m2 * tau * (1 + e) * s2 / q2
          + 1620 * m2 * t2 * bz / q1
          + 270 * m2 * t2 * (1 + e) * bz / q2)
    return v1, v2


def steady_state_bound(b: BoundInputs) -> float:
    """Steady-state MSD bound ``2 (v1 + v2)``.

    The returned value bounds the per-agent MSD ``(1/K) sum_k ||w_k - w^o||^2``.
    """
    v1, v2 = explicit_bound_vector(b)
    return 2.0 * (v1 + v2)


def o_form(b: BoundInputs) -> float:
    """Three-term order expression with unit constants, for trend comparison."""
    mu, tau, e, K = b.mu, b.tau, b.eps, b.K
    S = b.sigma_sq + b.beta_sq * b.zeta_sq
    r = (1 + e) / (1 - e) ** 2
    return (mu * S / (b.nu * K)
            + mu * mu * tau * tau * b.delta ** 2 * r * S / (b.nu ** 2 * K)
            + mu * mu * tau * tau * r * S)


def transient_constant(H, omega1: float, chi1: float) -> float:
    """Initial-error constant ``kappa (omega1 + chi1)`` with ``kappa = cond(H)``.

    ``omega1`` and ``chi1`` are the centroid and consensus errors measured
    after the first period of an actual run.
    """
    return float(np.linalg.cond(np.asarray(H, dtype=float)) * (omega1 + chi1))


@dataclass(frozen=True)
class BoundConstants:
    """Every evaluated constant plus admissibility flags."""

    inputs: BoundInputs
    theta1: float
    theta2: float
    theta3: float
    theta4: float
    alpha1: float
    alpha2: float
    alpha3: float
    H: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    rho_H: float
    gamma: float
    v1: float
    v2: float
    steady_state: float
    o_form: float
    step_limit: float
    warnings: tuple = ()
    caveat: str = REMAINDER_CAVEAT

    @property
    def certified(self) -> bool:
        return not self.warnings


def evaluate(b: BoundInputs) -> BoundConstants:
    """Evaluate all constants and collect warning flags.

    Flags: ``mu_consensus`` (``mu > 1/(2 delta)``), ``mu_centroid``
    (``mu > nu / delta^2``), ``mu_convergence`` (step-size condition of the
    convergence guarantee), ``gamma_ge_1`` and ``rho_ge_1``.

    Raises
    ------
    BoundError
        If ``eps > 3/4``.
    """
    H, p, rho, gamma = coupling_and_rate(b)
    t = consensus_constants(b)
    a = centroid_constants(b)
    v1, v2 = explicit_bound_vector(b)
    limit = convergence_step_limit(b)
    warns = []
    if b.mu > 1 / (2 * b.delta):
        warns.append("mu_consensus")
    if b.mu > b.nu / b.delta ** 2:
        warns.append("mu_centroid")
    if b.mu > limit:
        warns.append("mu_convergence")
    if gamma >= 1:
        warns.append("gamma_ge_1")
    if rho >= 1:
        warns.append("rho_ge_1")
    return BoundConstants(b, *t, *a, H=H, p=p, rho_H=rho, gamma=gamma, v1=v1, v2=v2,
                          steady_state=2 * (v1 + v2), o_form=o_form(b), step_limit=limit,
                          warnings=tuple(warns))


def format_report(c: BoundConstants) -> str:
    """Flat ``key=value`` text, one pair per line, stable order."""
    lines = [f"{k}={v:.17g}" if isinstance(v, float) else f"{k}={v}" for k, v in asdict(c.inputs).items()]
    for k in ("theta1", "theta2", "theta3", "theta4", "alpha1", "alpha2", "alpha3"):
        lines.append(f"{k}={getattr(c, k):.17g}")
    for (i, j), v in np.ndenumerate(c.H):
        lines.append(f"H{i + 1}{j + 1}={v:.17g}")
    lines.append(f"p1={c.p[0]:.17g}")
    lines.append(f"p2={c.p[1]:.17g}")
    for k in ("rho_H", "gamma", "v1", "v2", "steady_state", "o_form", "step_limit"):
        lines.append(f"{k}={getattr(c, k):.17g}")
    lines.append(f"steady_state_db={10 * math.log10(c.steady_state) if c.steady_state > 0 else float('-inf'):.6f}")
    lines.append(f"certified={str(c.certified).lower()}")
    lines.append(f"warnings={','.join(c.warnings) if c.warnings else 'none'}")
    lines.append(f"caveat={c.caveat}")
    return "\n".join(lines) + "\n"
