"""DDP family: stochastic (ASDDP), averaged-path (APDDP) and the
deterministic oracle with a known demand forecast.

All three share one sweep. The backward pass weights each stage's expansion
by a probability row over demand outcomes; the forward pass propagates the
expected state and solves a small constrained QP per stage.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .driver_model import MarkovModel, multi_step_rows
from .qp import relaxed_stage_qp


def hessian_floor(Quu, delta: float = 0.003):
    """Shift the spectrum so that the smallest eigenvalue is at least delta."""
    Quu = 0.5 * (np.asarray(Quu, dtype=float) + np.asarray(Quu, dtype=float).T)
    lam_min = float(np.linalg.eigvalsh(Quu)[0])
    # a few ulps of headroom so the floor survives the eigenvalue round-off
    guard = 8.0 * np.finfo(float).eps * float(np.abs(Quu).sum())
    tau = max(0.0, delta + guard - lam_min)
    return Quu + tau * np.eye(Quu.shape[0])


@dataclass
class StageExpansion:
    Q0: float
    Qx: np.ndarray
    Qu: np.ndarray
    Qxx: np.ndarray
    Quu: np.ndarray
    Qux: np.ndarray
    Vx: np.ndarray
    Vxx: np.ndarray


@dataclass
class SweepResult:
    X: np.ndarray
    U: np.ndarray
    stages: list = field(default_factory=list)
    max_slack: float = 0.0


def _pairs(W, P):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    return W, P


def backward_pass(problem, Xhat, Uhat, Wb, Pb, delta: float = 0.003):
    """Probability-weighted expansions, last stage first. Returns stages 0..N-1."""
    Wb, Pb = _pairs(Wb, Pb)
    N = Uhat.shape[0]
    h, Vx, Vxx = problem.terminal(Xhat[N])
    anchor = Xhat[N]
    stages = [None] * N
    for n in range(N - 1, -1, -1):
        x, u = Xhat[n], Uhat[n]
        keep = Pb[n] > 0
        w, pj = Wb[n][keep], Pb[n][keep]
        xn, Fx, Fu = problem.dynamics(n, x, u, w)
        g, gx, gu, gxx, guu, gux = problem.expansion(n, x, xn, u, w, Fx, Fu)
        # next-stage slope evaluated away from its anchor
        Vxj = Vx[None, :] + (xn - anchor[None, :]) @ Vxx.T
        Qx = pj @ (gx + np.einsum("jab,ja->jb", Fx, Vxj))
        Qu = pj @ (gu + np.einsum("jab,ja->jb", Fu, Vxj))
        FxV = np.einsum("jab,ac->jbc", Fx, Vxx)
        FuV = np.einsum("jab,ac->jbc", Fu, Vxx)
        Qxx = np.einsum("j,jab->ab", pj, gxx + FxV @ Fx)
        Quu = np.einsum("j,jab->ab", pj, guu + FuV @ Fu)
        Qux = np.einsum("j,jab->ab", pj, gux + FuV @ Fx)
        Qxx = 0.5 * (Qxx + Qxx.T)
        Quu = hessian_floor(Quu, delta)
        K = np.linalg.solve(Quu, Qux)
        Vx = Qx - Qux.T @ np.linalg.solve(Quu, Qu)
        Vxx = Qxx - Qux.T @ K
        Vxx = 0.5 * (Vxx + Vxx.T)
        anchor = x
        stages[n] = StageExpansion(float(pj @ g), Qx, Qu, Qxx, Quu, Qux, Vx, Vxx)
    return stages


def forward_pass(problem, stages, x0, Xhat, Uhat, Wf, Pf, rho: float = 1e6):
    """Expected-state forward pass with per-stage constrained QPs."""
    Wf, Pf = _pairs(Wf, Pf)
    N = Uhat.shape[0]
    X = np.empty((N + 1, Xhat.shape[1]))
    U = np.empty_like(Uhat)
    X[0] = x0
    worst = 0.0
    for n in range(N):
        st = stages[n]
        keep = Pf[n] > 0
        w, pj = Wf[n][keep], Pf[n][keep]
        q = st.Qu + st.Qux @ (X[n] - Xhat[n])
        cons = problem.constraints(n, X[n])
        if cons is None:
            du = -np.linalg.solve(st.Quu, q)
        else:
            Dx, cx, lo, hi = cons
            xn, _, Fu = problem.dynamics(n, X[n], Uhat[n], w)
            Fbar = pj @ xn
            Fubar = np.einsum("j,jab->ab", pj, Fu)
            du, slack = relaxed_stage_qp(st.Quu, q, Dx @ Fubar, cx - Dx @ Fbar,
                                         lo - Uhat[n], hi - Uhat[n], rho)
            worst = max(worst, slack)
        U[n] = Uhat[n] + du
        xn, _, _ = problem.dynamics(n, X[n], U[n], w)
        X[n + 1] = pj @ xn
    return X, U, worst


def sweep(problem, x0, Xhat, Uhat, Wb, Pb, Wf, Pf, delta=0.003, rho=1e6) -> SweepResult:
    stages = backward_pass(problem, Xhat, Uhat, Wb, Pb, delta)
    X, U, slack = forward_pass(problem, stages, x0, Xhat, Uhat, Wf, Pf, rho)
    return SweepResult(X, U, stages, slack)


def expected_rollout(problem, x0, U, Wf, Pf):
    Wf, Pf = _pairs(Wf, Pf)
    X = np.empty((U.shape[0] + 1, len(x0)))
    X[0] = x0
    for n in range(U.shape[0]):
        xn, _, _ = problem.dynamics(n, X[n], U[n], Wf[n])
        X[n + 1] = Pf[n] @ xn
    return X


# ------------------------------------------------------------------ drivers

def outcome_tables(m: MarkovModel, i0: int, N: int):
    """Per-stage demand values and probabilities conditioned on index i0."""
    rows = multi_step_rows(m, i0, N - 1)
    W = np.broadcast_to(m.grid.levels, rows.shape).copy()
    return W, rows


def _iterate(problem, x0, warm, Wb, Pb, Wf, Pf, iters, delta, rho, use_kernel):
    Uhat = np.array(warm[1], dtype=float)
    Xhat = warm[0]
    if Xhat is None:
        Xhat = expected_rollout(problem, x0, Uhat, Wf, Pf)
    Xhat = np.array(Xhat, dtype=float)
    res = None
    for _ in range(max(1, iters)):
        if use_kernel:
            X, U, slack = kernels.ddp_sweep(problem, x0, Xhat, Uhat, Wb, Pb, Wf, Pf, delta, rho)
            res = SweepResult(X, U, [], slack)
        else:
            res = sweep(problem, x0, Xhat, Uhat, Wb, Pb, Wf, Pf, delta, rho)
        Xhat, Uhat = res.X, res.U
    return res


def _use_kernel(problem, backend: str) -> bool:
    return kernels.supports(problem) and backend != "python"


def solve_asddp(problem, x0, i0: int, warm, m: MarkovModel, iters: int = 1,
                delta: float = 0.003, rho: float = 1e6, backend: str = "auto") -> SweepResult:
    """warm = (Xhat or None, Uhat)."""
    N = np.asarray(warm[1]).shape[0]
    W, P = outcome_tables(m, i0, N)
    return _iterate(problem, x0, warm, W, P, W, P, iters, delta, rho,
                    _use_kernel(problem, backend))


def solve_apddp(problem, x0, i0: int, warm, m: MarkovModel, iters: int = 1,
                delta: float = 0.003, rho: float = 1e6, backend: str = "auto") -> SweepResult:
    N = np.asarray(warm[1]).shape[0]
    W, P = outcome_tables(m, i0, N)
    wbar = (P * W).sum(axis=1, keepdims=True)
    return _iterate(problem, x0, warm, wbar, np.ones_like(wbar), W, P, iters, delta, rho,
                    _use_kernel(problem, backend))


def solve_ddp_oracle(problem, x0, future_w, warm, iters: int = 1, delta: float = 0.003,
                     rho: float = 1e6, backend: str = "auto") -> SweepResult:
    W = np.asarray(future_w, dtype=float).reshape(-1, 1)
    P = np.ones_like(W)
    return _iterate(problem, x0, warm, W, P, W, P, iters, delta, rho,
                    _use_kernel(problem, backend))


def shift_warm(res: SweepResult):
    """Receding-horizon warm start: drop stage 0, repeat the last stage."""
    U = np.vstack([res.U[1:], res.U[-1:]])
    X = np.vstack([res.X[1:], res.X[-1:]])
    return X, U
