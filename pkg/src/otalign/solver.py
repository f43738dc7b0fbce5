"""Balanced entropic OT: Bregman projections, stabilized Sinkhorn, diagnostics."""

from dataclasses import dataclass, field

import numpy as np

from . import _backends
from .kernel import GibbsKernel


class SolverError(Exception):
    pass


@dataclass(frozen=True)
class Marginals:
    mu: np.ndarray
    nu: np.ndarray


def default_marginals(B):
    """Each sample carries mass 1, total mass B."""
    return Marginals(mu=np.ones(B), nu=np.ones(B))


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 5
    tolerance: float = 1e-6
    absorption_threshold: float = 1e3
    floor: float = 1e-30
    mode: str = "fixed"  # "fixed" | "tolerance"

    def __post_init__(self):
        if self.max_iterations <= 0 or self.tolerance <= 0:
            raise SolverError("iteration count and tolerance must be positive")
        if self.absorption_threshold <= 0 or self.floor <= 0:
            raise SolverError("absorption threshold and floor must be positive")
        if self.mode not in ("fixed", "tolerance"):
            raise SolverError(f"unknown mode: {self.mode}")


@dataclass(frozen=True)
class ScalingState:
    u: np.ndarray
    v: np.ndarray
    f: np.ndarray
    g: np.ndarray
    iterations: int


@dataclass(frozen=True)
class TransportPlan:
    matrix: np.ndarray
    epsilon: float
    converged: bool
    row_residual: float
    col_residual: float


@dataclass(frozen=True)
class Trajectory:
    """Per-half-step total dual potentials and L1 marginal residuals.

    Half-step h (1-based) is a row update for odd h and a column update
    for even h; ``plan_at`` rebuilds the plan at any half-step.
    """

    f: np.ndarray  # (n_half, B)
    g: np.ndarray
    row_err: np.ndarray
    col_err: np.ndarray
    cost: np.ndarray = field(repr=False)
    epsilon: float = 1.0

    @property
    def n_half(self):
        return self.f.shape[0]

    def plan_at(self, half_step):
        fh = self.f[half_step - 1]
        gh = self.g[half_step - 1]
        return np.exp((fh[:, None] + gh[None, :] - self.cost) / self.epsilon)


def _as_matrix(P):
    if isinstance(P, GibbsKernel):
        return P.matrix
    if isinstance(P, TransportPlan):
        return P.matrix
    return np.asarray(P, dtype=np.float64)


def project_rows(P, mu):
    """KL projection onto the row-marginal set: diag(mu / (P @ 1)) @ P."""
    P = _as_matrix(P)
    sums = P.sum(axis=1)
    if np.any(sums <= 0):
        raise SolverError("zero row sum in projection")
    return (np.asarray(mu) / sums)[:, None] * P


def project_cols(P, nu):
    P = _as_matrix(P)
    sums = P.sum(axis=0)
    if np.any(sums <= 0):
        raise SolverError("zero column sum in projection")
    return P * (np.asarray(nu) / sums)[None, :]


def sinkhorn(K: GibbsKernel, marginals=None, opts=None):
    """Alternating row/column scalings of K with log-domain absorption.

    Returns (TransportPlan, ScalingState, Trajectory).  One iteration is a
    row update followed by a column update; the trajectory records both
    half-steps.
    """
    if not isinstance(K, GibbsKernel):
        raise SolverError("sinkhorn expects a GibbsKernel")
    Km = K.matrix
    if np.any(Km <= 0) or not np.all(np.isfinite(Km)):
        raise SolverError("kernel must be strictly positive and finite")
    B = Km.shape[0]
    if marginals is None:
        marginals = default_marginals(B)
    opts = opts or SolverOptions()
    mu = np.asarray(marginals.mu, dtype=np.float64)
    nu = np.asarray(marginals.nu, dtype=np.float64)
    Km = np.ascontiguousarray(Km)
    f, g, F, G, row_err, col_err, nh, iters = _backends.sinkhorn_core(
        Km,
        np.ascontiguousarray(Km.T),
        np.ascontiguousarray(K.cost),
        mu,
        nu,
        K.epsilon,
        opts.max_iterations,
        opts.tolerance,
        opts.mode == "tolerance",
        opts.absorption_threshold,
        opts.floor,
    )
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise SolverError(f"overflow despite absorption at iteration {iters}")
    traj = Trajectory(
        f=np.array(F[:nh]),
        g=np.array(G[:nh]),
        row_err=np.array(row_err[:nh]),
        col_err=np.array(col_err[:nh]),
        cost=K.cost,
        epsilon=K.epsilon,
    )
    P = np.exp((f[:, None] + g[None, :] - K.cost) / K.epsilon)
    rr = float(np.sum(np.abs(P.sum(axis=1) - mu)))
    cr = float(np.sum(np.abs(P.sum(axis=0) - nu)))
    state = ScalingState(
        u=np.exp(f / K.epsilon), v=np.exp(g / K.epsilon), f=f, g=g, iterations=int(iters)
    )
    plan = TransportPlan(
        matrix=P,
        epsilon=K.epsilon,
        converged=bool(max(rr, cr) <= opts.tolerance),
        row_residual=rr,
        col_residual=cr,
    )
    return plan, state, traj


def hilbert_metric(u, u_star):
    """Projective distance log max_{i,j} (u_i u*_j) / (u_j u*_i)."""
    u = np.asarray(u, dtype=np.float64)
    u_star = np.asarray(u_star, dtype=np.float64)
    if np.any(u <= 0) or np.any(u_star <= 0):
        raise SolverError("hilbert_metric requires strictly positive vectors")
    r = np.log(u) - np.log(u_star)
    return float(np.max(r) - np.min(r))


def marginal_error(P, marginals):
    P = _as_matrix(P)
    mu = np.asarray(marginals.mu)
    nu = np.asarray(marginals.nu)
    if P.shape != (mu.size, nu.size):
        raise SolverError(f"shape mismatch: plan {P.shape}, marginals {mu.size}x{nu.size}")
    return (
        float(np.sum(np.abs(P.sum(axis=1) - mu))),
        float(np.sum(np.abs(P.sum(axis=0) - nu))),
    )


def dual_objective(f, g, C, epsilon, marginals):
    """Discrete EOT dual E[f + g - eps*e^{(f+g-C)/eps}] + eps.

    The expectation is over the product of the marginals normalized to
    probability vectors.
    """
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    mu = np.asarray(marginals.mu, dtype=np.float64)
    nu = np.asarray(marginals.nu, dtype=np.float64)
    if C.shape != (f.size, g.size) or mu.size != f.size or nu.size != g.size:
        raise SolverError("dual_objective shape mismatch")
    mh = mu / mu.sum()
    nh = nu / nu.sum()
    lin = float(f @ mh + g @ nh)
    expo = np.exp((f[:, None] + g[None, :] - C) / epsilon)
    return lin - epsilon * float(mh @ expo @ nh) + epsilon
