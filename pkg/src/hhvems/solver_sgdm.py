"""Monte-Carlo stochastic gradient descent with Nesterov momentum.

Each iteration draws one demand path from fixed random streams, evaluates
the exact gradient of that path's horizon cost through a forward
sensitivity recursion (using the full Jacobians of the discrete step when
the problem provides them), and takes a look-ahead momentum step.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .driver_model import MarkovModel, sample_index_path
from .params import SgdmConfig


def rollout(problem, x0, U, w_path):
    X = np.empty((U.shape[0] + 1, len(x0)))
    X[0] = x0
    for n in range(U.shape[0]):
        xn, _, _ = problem.dynamics(n, X[n], U[n], w_path[n:n + 1])
        X[n + 1] = xn[0]
    return X


def horizon_cost(problem, U, w_path, x0) -> float:
    U = np.asarray(U, dtype=float)
    x = np.asarray(x0, dtype=float)
    J = 0.0
    for n in range(U.shape[0]):
        xn, _, _ = problem.dynamics(n, x, U[n], w_path[n:n + 1])
        g, _, _, _ = problem.partials(n, x, xn, U[n], w_path[n:n + 1])
        J += float(g[0])
        x = xn[0]
    return J


def gradient(problem, U, w_path, x0, check_causality: bool = False):
    """dJ/dU (N, nu) via C_{n+1} = Fx C_n + [0 .. Fu .. 0]."""
    U = np.asarray(U, dtype=float)
    N, nu = U.shape
    x = np.asarray(x0, dtype=float)
    C = np.zeros((len(x), N * nu))
    grad = np.zeros(N * nu)
    J = 0.0
    for n in range(N):
        w = w_path[n:n + 1]
        xn, Fx, Fu = problem.dynamics(n, x, U[n], w)
        g, gx, gxn, gu = problem.partials(n, x, xn, U[n], w)
        Cn = Fx[0] @ C
        Cn[:, n * nu:(n + 1) * nu] += Fu[0]
        if check_causality and np.any(Cn[:, (n + 1) * nu:]):
            raise AssertionError("sensitivity leaked into future inputs")
        grad += gx[0] @ C + gxn[0] @ Cn
        grad[n * nu:(n + 1) * nu] += gu[0]
        J += float(g[0])
        C = Cn
        x = xn[0]
    return grad.reshape(N, nu), J


def step_size(k: int, cfg: SgdmConfig) -> float:
    """Constant for the first `warmup` iterations (1-based k), then 1/(1+k eps) decay."""
    if k <= cfg.warmup:
        return cfg.gamma0
    return cfg.gamma0 / (1.0 + (k - cfg.warmup - 1) * cfg.epsilon)


def solve(problem, x0, i0: int, warm, omegas: np.ndarray, m: MarkovModel, cfg: SgdmConfig,
          backend: str = "auto", trace: list | None = None):
    """Run cfg.K iterations; returns (U, V). warm = (U, V)."""
    U = np.array(warm[0], dtype=float)
    V = np.array(warm[1], dtype=float)
    levels = m.grid.levels
    if kernels.supports(problem) and backend != "python" and trace is None:
        return kernels.sgdm_solve(problem, x0, i0, U, V, omegas, m.P, levels, cfg)
    for k in range(1, cfg.K + 1):
        path = levels[sample_index_path(m.P, i0, omegas[(k - 1) % omegas.shape[0]])]
        look = U + cfg.mu * V
        grad, Jk = gradient(problem, look, path, x0)
        gam = step_size(k, cfg)
        V = cfg.mu * V - gam * grad
        U = U + V
        if trace is not None:
            trace.append((k, Jk, float(np.linalg.norm(grad)), gam))
    return U, V


def shift_warm(U, V):
    return np.vstack([U[1:], U[-1:]]), np.vstack([V[1:], V[-1:]])
