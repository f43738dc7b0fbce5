"""Hot scaling loops, compiled with numba when available.

The same source is used for both paths: ``_sinkhorn_core`` / ``_uot_core``
are plain-numpy functions, and when numba is importable (and the
``OTALIGN_NUMPY`` environment flag is not set) the module exports
``@njit``-compiled versions of them.  ``benchmarks/backend_bench.py`` times
the two paths against each other.
"""

import os

import numpy as np


def _sinkhorn_core(K, KT, C, mu, nu, eps, max_iter, tol, to_tol, tau, floor):
    """Gauss-Seidel scaling loop with log-domain absorption.

    Returns total dual potentials (f, g), per-half-step potential and
    residual trajectories, the number of half-steps taken, and the number
    of full iterations run.
    """
    B = K.shape[0]
    u = np.ones(B)
    v = np.ones(B)
    fa = np.zeros(B)  # absorbed part of f
    ga = np.zeros(B)
    Kw = K.copy()
    KTw = KT.copy()
    F = np.zeros((2 * max_iter, B))
    G = np.zeros((2 * max_iter, B))
    row_err = np.zeros(2 * max_iter)
    col_err = np.zeros(2 * max_iter)
    nh = 0
    iters = 0
    for _ in range(max_iter):
        Kv = Kw @ v
        u = mu / (Kv + floor)
        KTu = KTw @ u
        # odd half-step: rows feasible by construction
        F[nh] = fa + eps * np.log(u)
        G[nh] = ga + eps * np.log(v)
        row_err[nh] = np.sum(np.abs(u * Kv - mu))
        col_err[nh] = np.sum(np.abs(v * KTu - nu))
        nh += 1
        v = nu / (KTu + floor)
        # even half-step: columns feasible, row residual needs one matvec
        Kv2 = Kw @ v
        re = np.sum(np.abs(u * Kv2 - mu))
        ce = np.sum(np.abs(v * (KTw @ u) - nu))
        F[nh] = fa + eps * np.log(u)
        G[nh] = ga + eps * np.log(v)
        row_err[nh] = re
        col_err[nh] = ce
        nh += 1
        iters += 1
        if to_tol and re <= tol and ce <= tol:
            break
        if np.max(u) > tau or np.max(v) > tau:
            fa = fa + eps * np.log(u)
            ga = ga + eps * np.log(v)
            Kw = np.exp((fa.reshape(B, 1) + ga.reshape(1, B) - C) / eps)
            KTw = Kw.T.copy()
            u = np.ones(B)
            v = np.ones(B)
    f = fa + eps * np.log(u)
    g = ga + eps * np.log(v)
    return f, g, F, G, row_err, col_err, nh, iters


def _uot_core(K, KT, C, mu, nu, eps, lam1, lam2, max_iter, tau, floor):
    """Exponent-damped scaling loop for KL-relaxed marginals.

    Returns total log scalings (log u, log v), the total log v from the
    start of the final iteration, and the iteration count.
    """
    B = K.shape[0]
    fi1 = lam1 / (lam1 + eps)
    fi2 = lam2 / (lam2 + eps)
    u = np.ones(B)
    v = np.ones(B)
    fa = np.zeros(B)
    ga = np.zeros(B)
    Kw = K.copy()
    KTw = KT.copy()
    log_v_prev = np.zeros(B)
    for _ in range(max_iter):
        log_v_prev = ga / eps + np.log(v)
        df = np.exp(-fa / (eps + lam1))
        u = df * (mu / (Kw @ v + floor)) ** fi1
        dg = np.exp(-ga / (eps + lam2))
        v = dg * (nu / (KTw @ u + floor)) ** fi2
        if np.max(u) > tau or np.max(v) > tau:
            fa = fa + eps * np.log(u)
            ga = ga + eps * np.log(v)
            Kw = np.exp((fa.reshape(B, 1) + ga.reshape(1, B) - C) / eps)
            KTw = Kw.T.copy()
            u = np.ones(B)
            v = np.ones(B)
    log_u = fa / eps + np.log(u)
    log_v = ga / eps + np.log(v)
    return log_u, log_v, log_v_prev, max_iter


numpy_backend = {"sinkhorn_core": _sinkhorn_core, "uot_core": _uot_core}

numba_backend = None
if os.environ.get("OTALIGN_NUMPY", "") != "1":
    try:
        from numba import njit

        numba_backend = {
            "sinkhorn_core": njit(cache=True)(_sinkhorn_core),
            "uot_core": njit(cache=True)(_uot_core),
        }
    except ImportError:  # pragma: no cover
        numba_backend = None

_active = numba_backend if numba_backend is not None else numpy_backend

sinkhorn_core = _active["sinkhorn_core"]
uot_core = _active["uot_core"]

BACKEND = "numba" if _active is numba_backend else "numpy"
