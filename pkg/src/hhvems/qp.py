"""Small dense convex QPs: min 0.5 z'Hz + q'z  s.t.  D z <= c.

A primal active-set method, plus the L1-relaxed variant used when the
state rows of a stage problem cannot all be met.
"""
from __future__ import annotations

import itertools

import numpy as np

TOL = 1e-10


class InfeasibleQP(ValueError):
    pass


def _eqp(H, g, A):
    """Minimise 0.5 p'Hp + g'p subject to A p = 0; returns (p, lambda)."""
    n = H.shape[0]
    m = A.shape[0]
    if m == 0:
        return np.linalg.solve(H, -g), np.zeros(0)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([-g, np.zeros(m)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def active_set(H, q, D, c, z0, max_iter: int = 200):
    """Primal active-set iterations from a feasible start z0."""
    H = np.asarray(H, dtype=float)
    q = np.asarray(q, dtype=float)
    D = np.asarray(D, dtype=float).reshape(-1, H.shape[0])
    c = np.asarray(c, dtype=float)
    z = np.array(z0, dtype=float)
    scale = 1.0 + np.abs(c)
    work: list[int] = []
    for i in np.nonzero(np.abs(D @ z - c) <= 1e-12 * scale)[0]:
        trial = work + [int(i)]
        if np.linalg.matrix_rank(D[trial]) == len(trial) and len(trial) <= H.shape[0]:
            work = trial
    for _ in range(max_iter):
        g = H @ z + q
        p, lam = _eqp(H, g, D[work])
        if np.max(np.abs(p), initial=0.0) <= 1e-12 * (1.0 + np.max(np.abs(z), initial=0.0)):
            # multipliers of D z <= c: H z + q + D_W' lam = 0, need lam >= 0
            if len(work) == 0 or lam.min() >= -1e-12:
                return z
            work.pop(int(np.argmin(lam)))
            continue
        alpha, block = 1.0, -1
        Dp = D @ p
        slack = c - D @ z
        for i in range(D.shape[0]):
            if i in work or Dp[i] <= 1e-14:
                continue
            a = max(slack[i], 0.0) / Dp[i]
            if a < alpha:
                alpha, block = a, i
        z = z + alpha * p
        if block >= 0:
            work.append(block)
    return z


def feasible_point(D, c):
    """Feasible point of {D z <= c} in two dimensions by vertex search."""
    D = np.asarray(D, dtype=float)
    c = np.asarray(c, dtype=float)
    n = D.shape[1]
    cands = [np.zeros(n)]
    for i in range(D.shape[0]):
        nrm = D[i] @ D[i]
        if nrm > 0:
            cands.append(D[i] * (c[i] / nrm))
    for idx in itertools.combinations(range(D.shape[0]), n):
        M = D[list(idx)]
        if abs(np.linalg.det(M)) > 1e-14:
            cands.append(np.linalg.solve(M, c[list(idx)]))
    tol = 1e-9 * (1.0 + np.abs(c))
    for z in cands:
        if np.all(D @ z - c <= tol):
            return z
    raise InfeasibleQP("constraint set is empty")


def stage_qp(H, q, D, c):
    """KKT-optimal solution of the stage quadratic program."""
    D = np.asarray(D, dtype=float).reshape(-1, len(q))
    c = np.asarray(c, dtype=float)
    if D.shape[0] == 0:
        return np.linalg.solve(H, -np.asarray(q, dtype=float))
    z0 = feasible_point(D, c)
    return active_set(H, q, D, c, z0)


def relaxed_stage_qp(H, q, Dx, cx, lo, hi, rho: float = 1e6, eps: float = 1e-6):
    """Stage QP with soft state rows (L1 slack of weight rho) and hard input bounds.

    Returns (du, max_slack).
    """
    nu = len(q)
    Dx = np.asarray(Dx, dtype=float).reshape(-1, nu)
    m = Dx.shape[0]
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise InfeasibleQP("empty input box")
    u0 = np.clip(np.zeros(nu), lo, hi)
    D = np.vstack([Dx, np.eye(nu), -np.eye(nu)])
    c = np.concatenate([cx, hi, -lo])
    try:
        start = u0 if np.all(Dx @ u0 <= cx) else feasible_point(D, c)
        return active_set(H, q, D, c, start), 0.0
    except InfeasibleQP:
        pass
    n = nu + m
    Hz = np.zeros((n, n))
    Hz[:nu, :nu] = H
    Hz[nu:, nu:] = eps * np.eye(m)
    qz = np.concatenate([q, np.full(m, rho)])
    D = np.zeros((m + m + 2 * nu, n))
    D[:m, :nu] = Dx
    D[:m, nu:] = -np.eye(m)
    D[m:2 * m, nu:] = -np.eye(m)
    D[2 * m:2 * m + nu, :nu] = np.eye(nu)
    D[2 * m + nu:, :nu] = -np.eye(nu)
    c = np.concatenate([cx, np.zeros(m), hi, -lo])
    z0 = np.concatenate([u0, np.maximum(Dx @ u0 - cx, 0.0)])
    z = active_set(Hz, qz, D, c, z0)
    return z[:nu], float(np.max(z[nu:], initial=0.0))


def kkt_enumerate(H, q, D, c):
    """Reference solver: try every active set, keep the KKT point (tests only)."""
    D = np.asarray(D, dtype=float)
    c = np.asarray(c, dtype=float)
    n = H.shape[0]
    best = None
    for k in range(0, n + 1):
        for idx in itertools.combinations(range(D.shape[0]), k):
            A = D[list(idx)]
            if k and np.linalg.matrix_rank(A) < k:
                continue
            K = np.block([[H, A.T], [A, np.zeros((k, k))]]) if k else H
            rhs = np.concatenate([-q, c[list(idx)]]) if k else -q
            sol = np.linalg.solve(K, rhs)
            z, lam = sol[:n], sol[n:]
            if np.all(D @ z <= c + 1e-9) and np.all(lam >= -1e-9):
                val = 0.5 * z @ H @ z + q @ z
                if best is None or val < best[0] - 1e-14:
                    best = (val, z)
    if best is None:
        raise InfeasibleQP("no KKT point")
    return best[1]
