"""Horizon problems consumed by the solvers.

A problem exposes, for stage n and a batch of demand values w (J,):
    dynamics(n, x, u, w)            -> x_next (J,nx), Fx (J,nx,nx), Fu (J,nx,nu)
    partials(n, x, xn, u, w)        -> g (J,), dg/dx (J,nx), dg/dx_next (J,nx), dg/du (J,nu)
    expansion(n, x, xn, u, w, Fx, Fu) -> g, gx, gu, gxx, guu, gux (totals through x_next)
    terminal(x)                     -> h, hx, hxx
    constraints(n, x)               -> (Dx, cx, lo, hi) or None
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control_model import IN, IP, NU, NX, step_and_jac, taylor_step, torque_max
from .cost import Box, HHVCost
from .params import FuelMap, VehicleParams, CostWeights
from .terrain import GradeModel


class HHVProblem:
    def __init__(self, pr: VehicleParams, fm: FuelMap, weights: CostWeights, box: Box,
                 dt: float = 1.0, grade: GradeModel | None = None, p_set: float = 0.0,
                 use_penalty: bool = False):
        self.pr, self.fm, self.weights, self.box = pr, fm, weights, box
        self.dt = dt
        self.grade = grade
        self.cost = HHVCost(pr, fm, weights, box, p_set, use_penalty)
        self.nx, self.nu = NX, NU

    @property
    def p_set(self) -> float:
        return self.cost.p_set

    def dynamics(self, n, x, u, w):
        return step_and_jac(x, u, w, self.dt, self.pr, self.grade)

    def partials(self, n, x, xn, u, w):
        return self.cost.partials(x, xn, u, w, self.grade)

    def expansion(self, n, x, xn, u, w, Fx, Fu):
        return self.cost.expansion(x, xn, u, w, Fx, Fu, self.grade)

    def terminal(self, x):
        return 0.0, np.zeros(NX), np.zeros((NX, NX))

    def constraints(self, n, x):
        """Next-state box on (n_eng, p) in rad/s and bar; input box from the torque curve."""
        b = self.box
        Dx = np.zeros((4, NX))
        Dx[0, IN], Dx[1, IN] = 1.0, -1.0
        Dx[2, IP], Dx[3, IP] = 1e-5, -1e-5
        cx = np.array([b.n_max, -b.n_min, 1e-5 * b.p_max, -1e-5 * b.p_min])
        u1_hi = max(float(torque_max(x[IN], self.fm)) / self.pr.m1, b.u1_min)
        lo = np.array([b.u1_min, b.u2_min])
        hi = np.array([min(u1_hi, b.u1_max), b.u2_max])
        return Dx, cx, lo, hi


@dataclass
class LQProblem:
    """Continuous linear system xdot = A x + B u + E w, discretised by the same
    second-order Taylor step, with cost
        0.5 x'Qx + 0.5 u'Ru + 0.5 x_next' S x_next   per stage, 0.5 x'Qf x terminal.
    Optional box constraints make it a test bed for the constrained passes."""

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray
    Qf: np.ndarray
    dt: float = 1.0
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    @property
    def nx(self):
        return self.A.shape[0]

    @property
    def nu(self):
        return self.B.shape[1]

    def discrete(self):
        dt, A = self.dt, self.A
        eye = np.eye(self.nx)
        Ad = eye + dt * A + 0.5 * dt * dt * A @ A
        Bd = dt * self.B + 0.5 * dt * dt * A @ self.B
        Ed = dt * self.E + 0.5 * dt * dt * A @ self.E
        return Ad, Bd, Ed

    def dynamics(self, n, x, u, w):
        w = np.atleast_1d(np.asarray(w, dtype=float))
        f = (self.A @ x + self.B @ u)[None, :] + w[:, None] * self.E[None, :]
        J = w.size
        Aj = np.broadcast_to(self.A, (J,) + self.A.shape)
        Bj = np.broadcast_to(self.B, (J,) + self.B.shape)
        return taylor_step(np.asarray(x, dtype=float), f, Aj, Bj, self.dt)

    def partials(self, n, x, xn, u, w):
        J = xn.shape[0]
        g = 0.5 * x @ self.Q @ x + 0.5 * u @ self.R @ u + 0.5 * np.einsum("ja,ab,jb->j", xn, self.S, xn)
        gx = np.broadcast_to(self.Q @ x, (J, self.nx)).copy()
        gxn = xn @ self.S.T
        gu = np.broadcast_to(self.R @ u, (J, self.nu)).copy()
        return g, gx, gxn, gu

    def expansion(self, n, x, xn, u, w, Fx, Fu):
        g, gx, gxn, gu = self.partials(n, x, xn, u, w)
        gx = gx + np.einsum("jab,ja->jb", Fx, gxn)
        gu = gu + np.einsum("jab,ja->jb", Fu, gxn)
        gxx = self.Q + np.einsum("jab,ac,jcd->jbd", Fx, self.S, Fx)
        guu = self.R + np.einsum("jab,ac,jcd->jbd", Fu, self.S, Fu)
        gux = np.einsum("jab,ac,jcd->jbd", Fu, self.S, Fx)
        return g, gx, gu, gxx, guu, gux

    def terminal(self, x):
        return 0.5 * x @ self.Qf @ x, self.Qf @ x, self.Qf.copy()

    def constraints(self, n, x):
        if self.lo is None:
            return None
        return np.zeros((0, self.nx)), np.zeros(0), self.lo, self.hi


def random_lq(rng: np.random.Generator, nx: int = 4, nu: int = 2, dt: float = 0.5,
              terminal: bool = True) -> LQProblem:
    A = 0.3 * rng.standard_normal((nx, nx))
    B = rng.standard_normal((nx, nu))
    E = rng.standard_normal(nx)
    M = rng.standard_normal((nx, nx))
    Q = M @ M.T / nx + 0.1 * np.eye(nx)
    M = rng.standard_normal((nu, nu))
    R = M @ M.T / nu + 0.5 * np.eye(nu)
    M = rng.standard_normal((nx, nx))
    S = 0.1 * M @ M.T / nx
    Qf = Q.copy() if terminal else np.zeros((nx, nx))
    return LQProblem(A, B, E, Q, R, S, Qf, dt)
