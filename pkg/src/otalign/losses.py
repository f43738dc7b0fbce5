"""Contrastive alignment losses and their transport-plan generalizations.

All losses take row-normalized embedding batches Z1, Z2 of shape (B, d)
and return a LossResult.  Gradients for the plan-based losses are taken
with the transport scalings held fixed (envelope gradient); each result
carries the frozen quantities needed to re-evaluate the loss at perturbed
embeddings, which is what the finite-difference checker uses.
"""

from dataclasses import dataclass

import numpy as np

from .kernel import cosine_cost, gibbs_kernel
from .plans import identity_plan
from .solver import SolverOptions, default_marginals, sinkhorn
from .uot import UotOptions, _solve_scalings


class LossError(Exception):
    pass


@dataclass(frozen=True)
class LossResult:
    value: float
    grad_z1: np.ndarray
    grad_z2: np.ndarray
    plan: np.ndarray = None
    frozen: dict = None


def _check_batch(Z1, Z2):
    Z1 = np.asarray(Z1, dtype=np.float64)
    Z2 = np.asarray(Z2, dtype=np.float64)
    if Z1.ndim != 2 or Z1.shape != Z2.shape:
        raise LossError(f"embedding shapes differ: {Z1.shape} vs {Z2.shape}")
    return Z1, Z2


def _check_rince(q, lam):
    if not (0 < q <= 1):
        raise LossError("q must lie in (0, 1]")
    if lam < 0:
        raise LossError("lam must be non-negative")


def kl_plan_divergence(target, P, floor=1e-300):
    """Generalized KL divergence sum t*log(t/p) - t + p between plans."""
    target = np.asarray(target, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if target.shape != P.shape:
        raise LossError("plan shapes differ")
    if np.any(target < 0) or np.any(P < 0):
        raise LossError("plans must be non-negative")
    if np.any((target > 0) & (P <= 0)):
        raise LossError("target puts mass where the plan is zero")
    mask = target > 0
    term = np.zeros_like(target)
    term[mask] = target[mask] * (np.log(target[mask]) - np.log(np.maximum(P[mask], floor)))
    return float(term.sum() - target.sum() + P.sum())


def ince_loss(Z1, Z2, epsilon=0.5):
    """Row-wise cross entropy against the matching index.

    sum_i [-s_ii + log sum_j exp(s_ij)] with s = Z1 Z2' / epsilon.
    """
    Z1, Z2 = _check_batch(Z1, Z2)
    s = (Z1 @ Z2.T) / epsilon
    m = s.max(axis=1)
    lse = np.log(np.exp(s - m[:, None]).sum(axis=1)) + m
    value = float(np.sum(lse - np.diag(s)))
    P = np.exp(s - lse[:, None])
    I = np.eye(Z1.shape[0])
    return LossResult(
        value=value,
        grad_z1=(P - I) @ Z2 / epsilon,
        grad_z2=(P - I).T @ Z1 / epsilon,
        plan=P,
    )


def _solve_plan(Z1, Z2, epsilon, n_iters):
    K = gibbs_kernel(cosine_cost(Z1, Z2), epsilon)
    return sinkhorn(K, opts=SolverOptions(max_iterations=n_iters))


def gca_ince_loss(Z1, Z2, epsilon=0.5, n_iters=5, target=None, half_step=False,
                  frozen=None):
    """KL from a target coupling to the entropic plan of the batch.

    With ``half_step`` the plan after the final row update is used
    instead of the fully iterated one; at n_iters=1 that plan is
    row-stochastic and the identity-target value coincides with
    ince_loss.  ``frozen`` reuses previously computed dual potentials
    instead of solving, making the loss a plain function of the
    embeddings.
    """
    Z1, Z2 = _check_batch(Z1, Z2)
    B = Z1.shape[0]
    tgt = identity_plan(B) if target is None else np.asarray(target, dtype=np.float64)
    C = cosine_cost(Z1, Z2)
    if frozen is not None:
        f, g = frozen["f"], frozen["g"]
        P = np.exp((f[:, None] + g[None, :] - C) / epsilon)
    else:
        plan, state, traj = _solve_plan(Z1, Z2, epsilon, n_iters)
        if half_step:
            h = 2 * n_iters - 1
            f, g = traj.f[h - 1], traj.g[h - 1]
            P = traj.plan_at(h)
        else:
            f, g = state.f, state.g
            P = plan.matrix
    value = kl_plan_divergence(tgt, P)
    dLdC = (tgt - P) / epsilon
    return LossResult(
        value=value,
        grad_z1=-dLdC @ Z2,
        grad_z2=-dLdC.T @ Z1,
        plan=P,
        frozen={"f": f, "g": g},
    )


def rince_loss(Z1, Z2, epsilon=0.5, q=0.98, lam=0.01):
    """Robust InfoNCE: (1/q) sum_i [-e^{q s_ii} + (lam sum_j e^{s_ij})^q]."""
    Z1, Z2 = _check_batch(Z1, Z2)
    _check_rince(q, lam)
    s = (Z1 @ Z2.T) / epsilon
    lse = np.logaddexp.reduce(s, axis=1)
    pos = np.exp(q * np.diag(s))
    if lam > 0:
        neg = np.exp(q * (lse + np.log(lam)))
        # c_ij = d(value)/d(s_ij)
        c = np.exp((q - 1.0) * lse[:, None] + s + q * np.log(lam))
    else:
        neg = np.zeros_like(pos)
        c = np.zeros_like(s)
    c[np.diag_indices_from(c)] -= pos
    value = float(np.sum(neg - pos) / q)
    return LossResult(
        value=value,
        grad_z1=c @ Z2 / epsilon,
        grad_z2=c.T @ Z1 / epsilon,
        plan=None,
    )


def rince_proximal_form(Z1, Z2, epsilon=0.5, q=0.98, lam=0.01):
    """Robust objective written on the half-step scaled kernel.

    Builds K, one row scaling u = 1/(K 1), and returns
    (1/q) sum_i [(lam / u_i)^q - (diag(u K)_i / u_i)^q].  Equals
    exp(-q/epsilon) times rince_loss of the same batch.
    """
    Z1, Z2 = _check_batch(Z1, Z2)
    _check_rince(q, lam)
    K = gibbs_kernel(cosine_cost(Z1, Z2), epsilon).matrix
    u = 1.0 / (K.sum(axis=1))
    half = u[:, None] * K
    pos = (np.diag(half) / u) ** q
    neg = (lam / u) ** q if lam > 0 else np.zeros_like(pos)
    return float(np.sum(neg - pos) / q)


def gca_rince_loss(Z1, Z2, epsilon=0.5, q=0.98, lam=0.01, n_iters=5,
                   target=None, frozen=None):
    """Robust loss on the partially scaled kernel after n_iters sweeps.

    (1/q) sum_i [(lam t_ii / u_i)^q - (K_ii v_i)^q], where v is the
    column scaling entering the final sweep and u = 1/(K v) the row
    scaling leaving it.  Only the history v is frozen in the gradient;
    u is a function of the current kernel by definition, so the second
    term contributes the repulsive part.  One sweep with an identity
    target reduces to the proximal form.
    """
    Z1, Z2 = _check_batch(Z1, Z2)
    _check_rince(q, lam)
    B = Z1.shape[0]
    tgt = identity_plan(B) if target is None else np.asarray(target, dtype=np.float64)
    C = cosine_cost(Z1, Z2)
    K = np.exp(-C / epsilon)
    if frozen is not None:
        v_prev = frozen["v_prev"]
    elif n_iters >= 2:
        _, _, traj = _solve_plan(Z1, Z2, epsilon, n_iters - 1)
        v_prev = np.exp(traj.g[2 * (n_iters - 1) - 1] / epsilon)
    else:
        v_prev = np.ones(B)
    Kv = K @ v_prev
    pos = (np.diag(K) * v_prev) ** q
    neg = (lam * np.diag(tgt) * Kv) ** q if lam > 0 else np.zeros_like(pos)
    value = float(np.sum(neg - pos) / q)
    # d(value)/dC: attraction on the diagonal, repulsion through K v
    dLdC = -(neg / np.maximum(Kv, 1e-300))[:, None] * (K * v_prev[None, :]) / epsilon
    dLdC[np.diag_indices_from(dLdC)] += pos / epsilon
    return LossResult(
        value=value,
        grad_z1=-dLdC @ Z2,
        grad_z2=-dLdC.T @ Z1,
        plan=None,
        frozen={"v_prev": v_prev},
    )


def gca_uot_loss(Z1, Z2, epsilon=0.5, lambda1=1.0, lambda2=1.0, q=0.98,
                 lam=0.01, weight=0.5, n_iters=5, target=None,
                 column_normalize=True, frozen=None):
    """Weighted mix of the robust diagonal term and a KL term on the
    unbalanced plan.

    weight * robust_term + (1 - weight) * KL(target || plan).  The robust
    term reuses the unbalanced scalings; with weight 1, a single sweep
    and large penalties it approaches the proximal form of the robust
    loss, and with weight 0 and large penalties it approaches the
    balanced KL loss.
    """
    Z1, Z2 = _check_batch(Z1, Z2)
    _check_rince(q, lam)
    if not (0.0 <= weight <= 1.0):
        raise LossError("weight must lie in [0, 1]")
    B = Z1.shape[0]
    tgt = identity_plan(B) if target is None else np.asarray(target, dtype=np.float64)
    C = cosine_cost(Z1, Z2)
    K = gibbs_kernel(C, epsilon)
    if frozen is not None:
        log_u, log_v, log_v_prev = frozen["log_u"], frozen["log_v"], frozen["log_v_prev"]
    else:
        opts = UotOptions(
            lambda1=lambda1,
            lambda2=lambda2,
            epsilon=epsilon,
            iterations=n_iters,
            column_normalize=False,
        )
        log_u, log_v, log_v_prev, _ = _solve_scalings(K, default_marginals(B), opts)
    P = np.exp(log_u)[:, None] * K.matrix * np.exp(log_v)[None, :]
    # KL evaluated on the support of the target only; the gradient terms
    # are assembled without materializing d(loss)/dC as a full matrix
    ti, tj = np.nonzero(tgt)
    tv = tgt[ti, tj]
    if column_normalize:
        s = P.sum(axis=0)
        kl = float(
            np.sum(tv * (np.log(tv) - np.log(P[ti, tj]) + np.log(s)[tj]))
            - tgt.sum() + B
        )
        w = tgt.sum(axis=0) / s
        Pw = P * w[None, :]
    else:
        kl = float(
            np.sum(tv * (np.log(tv) - np.log(P[ti, tj]))) - tgt.sum() + P.sum()
        )
        Pw = P
    pos = (np.diag(K.matrix) * np.exp(log_v_prev)) ** q
    neg = (lam * np.diag(tgt) / np.exp(log_u)) ** q if lam > 0 else np.zeros_like(pos)
    robust = float(np.sum(neg - pos) / q)
    value = weight * robust + (1.0 - weight) * kl
    ck = (1.0 - weight) / epsilon
    diag = weight * pos / epsilon
    grad_z1 = ck * (Pw @ Z2 - tgt @ Z2) - diag[:, None] * Z2
    grad_z2 = ck * (Pw.T @ Z1 - tgt.T @ Z1) - diag[:, None] * Z1
    return LossResult(
        value=value,
        grad_z1=grad_z1,
        grad_z2=grad_z2,
        plan=P / s[None, :] if column_normalize else P,
        frozen={"log_u": log_u, "log_v": log_v, "log_v_prev": log_v_prev},
    )


def byol_loss(Q, Z2):
    """Summed squared distance between predictions and targets.

    The target branch is constant: grad_z2 is identically zero.
    """
    Q, Z2 = _check_batch(Q, Z2)
    d = Q - Z2
    return LossResult(
        value=float(np.sum(d * d)),
        grad_z1=2.0 * d,
        grad_z2=np.zeros_like(Z2),
        plan=None,
    )


LOSS_FUNCTIONS = {
    "ince": ince_loss,
    "gca-ince": gca_ince_loss,
    "rince": rince_loss,
    "gca-rince": gca_rince_loss,
    "gca-uot": gca_uot_loss,
    "byol": byol_loss,
}

# losses whose gradients hold inner scalings fixed; the checker reuses
# the scalings captured at the base point
_FROZEN = {"gca-ince", "gca-rince", "gca-uot"}
# losses that stop the gradient on the second argument by contract
_STOP_GRAD_Z2 = {"byol"}


def loss_grad_check(loss_id, Z1, Z2, config=None, h=1e-6):
    """Central finite differences of a loss against its analytic grads.

    For the plan-based losses the perturbed evaluations reuse the
    scalings captured at the base point, matching the fixed-scaling
    gradient contract.  Returns the max relative error over both
    arguments, measured as max absolute deviation over max absolute
    numeric entry.
    """
    if loss_id not in LOSS_FUNCTIONS:
        raise LossError(f"unknown loss: {loss_id}")
    fn = LOSS_FUNCTIONS[loss_id]
    cfg = dict(config or {})
    Z1 = np.asarray(Z1, dtype=np.float64)
    Z2 = np.asarray(Z2, dtype=np.float64)
    base = fn(Z1, Z2, **cfg)
    if loss_id in _FROZEN:
        cfg["frozen"] = base.frozen
    errs = []
    grads = [(0, base.grad_z1), (1, base.grad_z2)]
    if loss_id in _STOP_GRAD_Z2:
        grads = grads[:1]
    for arg, grad in grads:
        num = np.zeros_like(grad)
        Z = (Z1, Z2)[arg].copy()
        for idx in np.ndindex(Z.shape):
            orig = Z[idx]
            Z[idx] = orig + h
            hi = fn(Z, Z2, **cfg).value if arg == 0 else fn(Z1, Z, **cfg).value
            Z[idx] = orig - h
            lo = fn(Z, Z2, **cfg).value if arg == 0 else fn(Z1, Z, **cfg).value
            Z[idx] = orig
            num[idx] = (hi - lo) / (2.0 * h)
        scale = max(float(np.max(np.abs(num))), 1e-12)
        errs.append(float(np.max(np.abs(grad - num))) / scale)
    return max(errs)
