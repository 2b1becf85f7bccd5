"""Running cost, SGDM penalty and the minimum-pressure target."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .control_model import (IN, IP, IV, IL, NU, NX, fuel_poly, pressure_gain,
                            propulsion_cmd, required_pressure, torque_max, torque_max_dn,
                            _grade)
from .params import BAR, CostWeights, FuelMap, VehicleParams
from .terrain import GradeModel


def setpoint_pressure(w_set: float, v: float, pr: VehicleParams) -> float:
    """Pressure floor implied by the statistical acceleration setpoint."""
    return float(required_pressure(pr.m_veh * w_set, v, pr))


def pressure_target(w, v, phi, pr: VehicleParams, p_set: float = 0.0):
    """p* = max(p_req(w), p_set)."""
    F = propulsion_cmd(w, v, phi, pr)
    return np.maximum(required_pressure(F, v, pr), p_set)


def running_cost(x, x_next, u, w, p_star, weights: CostWeights, fm: FuelMap,
                 pr: VehicleParams) -> float:
    n, p = x[IN], x[IP]
    g = weights.K1 * (x_next[IN] - n) ** 2
    g += weights.K2 * fuel_poly(n, pr.m1 * u[0], fm)
    if p < p_star:
        g += weights.K3 * (p - p_star) ** 2
    return float(g)


@dataclass(frozen=True)
class Box:
    """Operating box shared by the SGDM penalty and the DDP stage constraints."""

    n_min: float = 80.0
    n_max: float = 524.0
    p_min: float = 20e5
    p_max: float = 350e5
    u1_min: float = 0.0
    u1_max: float = 1e9     # refined by the torque curve
    u2_min: float = 0.0
    u2_max: float = 63.0

    @classmethod
    def from_config(cls, ddp, pr: VehicleParams, fm: FuelMap) -> "Box":
        n = np.linspace(0.0, fm.n_max, 2001)
        return cls(ddp.n_min, ddp.n_max, ddp.p_min, ddp.p_max, 0.0,
                   float(torque_max(n, fm).max()) / pr.m1, 0.0, pr.Vp_max / pr.m2)


def penalty(x, u, weights: CostWeights, fm: FuelMap, pr: VehicleParams, box: Box) -> float:
    """One-sided quadratic penalties on the state box (pressure in bar), the input
    box and the torque curve."""
    n, p = x[IN], x[IP]
    B = weights.b0 * (max(n - box.n_max, 0.0) ** 2 + max(box.n_min - n, 0.0) ** 2)
    B += weights.b0 * (max(p - box.p_max, 0.0) ** 2 + max(box.p_min - p, 0.0) ** 2) / BAR ** 2
    B += weights.b1 * (max(u[0] - box.u1_max, 0.0) ** 2 + max(box.u1_min - u[0], 0.0) ** 2
                       + max(u[1] - box.u2_max, 0.0) ** 2 + max(box.u2_min - u[1], 0.0) ** 2)
    B += weights.b2 * max(u[0] - float(torque_max(n, fm)) / pr.m1, 0.0) ** 2
    return float(B)


def expected_running_cost(x, x_next_per_j, u, row, p_star_per_j, weights, fm, pr) -> float:
    row = np.asarray(row, dtype=float)
    if abs(row.sum() - 1.0) > 1e-9:
        raise ValueError("probability row must sum to 1")
    return float(sum(r * running_cost(x, xn, u, 0.0, ps, weights, fm, pr)
                     for r, xn, ps in zip(row, x_next_per_j, p_star_per_j)))


def fuel_hessian_psd(K2: float, fm: FuelMap, m1: float) -> tuple[float, float, float]:
    """Fuel Hessian in (n_eng, u1) with its negative eigenvalue clipped to zero.

    The n*T term makes the raw block indefinite; the expansions use this
    convexified block so that the value-function Hessian stays bounded.
    """
    a, b, d = K2 * 2 * fm.c11, K2 * fm.c2 * m1, K2 * 2 * fm.c3 * m1 * m1
    mid, rad = 0.5 * (a + d), math.hypot(0.5 * (a - d), b)
    lam1, lam2 = mid + rad, mid - rad
    if lam2 >= 0.0:
        return a, b, d
    if lam1 <= 0.0:
        return 0.0, 0.0, 0.0
    # eigenvector of lam1
    if b != 0.0:
        vx, vy = b, lam1 - a
    else:
        vx, vy = (1.0, 0.0) if a >= d else (0.0, 1.0)
    nrm = vx * vx + vy * vy
    return lam1 * vx * vx / nrm, lam1 * vx * vy / nrm, lam1 * vy * vy / nrm


class HHVCost:
    """Stage cost of the hybrid-vehicle problem with analytic derivatives."""

    def __init__(self, pr: VehicleParams, fm: FuelMap, weights: CostWeights, box: Box,
                 p_set: float = 0.0, use_penalty: bool = False):
        self.pr, self.fm, self.w, self.box = pr, fm, weights, box
        self.p_set = float(p_set)
        self.use_penalty = use_penalty

    def _pstar(self, x, w, grade: GradeModel | None):
        """p* per outcome and its gradient with respect to x."""
        pr = self.pr
        ell, v = float(x[IL]), float(x[IV])
        phi, dphi = _grade(grade, ell)
        F = propulsion_cmd(np.asarray(w, dtype=float), v, phi, pr)
        preq = required_pressure(F, v, pr)
        k2 = pr.k2(v)
        s = pressure_gain(pr)
        dv = s * (pr.r_tire / k2 * pr.C_d * pr.rho_air * v + pr.motor_loss.mu2 * k2 / pr.r_tire)
        dl = s * pr.r_tire / k2 * pr.m_veh * pr.g * (math.cos(phi) - pr.C_r * math.sin(phi)) * dphi
        active = preq > self.p_set
        pstar = np.where(active, preq, self.p_set)
        grad = np.zeros((np.size(w), NX))
        grad[:, IV] = np.where(active, dv, 0.0)
        grad[:, IL] = np.where(active, dl, 0.0)
        return pstar, grad

    def partials(self, x, xn, u, w, grade=None):
        """g and its partials w.r.t. x_n, x_{n+1} and u_n, one row per outcome."""
        wt, fm, pr = self.w, self.fm, self.pr
        w = np.atleast_1d(w)
        J = w.size
        n, p = float(x[IN]), float(x[IP])
        T = pr.m1 * float(u[0])
        r1 = xn[:, IN] - n
        g = wt.K1 * r1 * r1 + wt.K2 * fuel_poly(n, T, fm)
        gx = np.zeros((J, NX))
        gxn = np.zeros((J, NX))
        gu = np.zeros((J, NU))
        gxn[:, IN] = 2 * wt.K1 * r1
        gx[:, IN] = -2 * wt.K1 * r1 + wt.K2 * (fm.c1 + 2 * fm.c11 * n + fm.c2 * T)
        gu[:, 0] = wt.K2 * pr.m1 * (fm.c2 * n + 2 * fm.c3 * T)
        pstar, dps = self._pstar(x, w, grade)
        dp = np.minimum(p - pstar, 0.0)
        g = g + wt.K3 * dp * dp
        gx[:, IP] += 2 * wt.K3 * dp
        gx -= (2 * wt.K3 * dp)[:, None] * dps
        if self.use_penalty:
            Bv, Bn, Bp, Bu = self._penalty_grad(n, p, u)
            g = g + Bv
            gx[:, IN] += Bn
            gx[:, IP] += Bp
            gu += Bu
        return g, gx, gxn, gu

    def _penalty_grad(self, n, p, u):
        wt, box, fm, pr = self.w, self.box, self.fm, self.pr
        hi, lo = max(n - box.n_max, 0.0), max(box.n_min - n, 0.0)
        B = wt.b0 * (hi * hi + lo * lo)
        dn = 2 * wt.b0 * (hi - lo)
        hi, lo = max(p - box.p_max, 0.0) / BAR, max(box.p_min - p, 0.0) / BAR
        B += wt.b0 * (hi * hi + lo * lo)
        dp = 2 * wt.b0 * (hi - lo) / BAR
        du = np.zeros(NU)
        for k, (a, b) in enumerate(((box.u1_min, box.u1_max), (box.u2_min, box.u2_max))):
            uh, ul = max(u[k] - b, 0.0), max(a - u[k], 0.0)
            B += wt.b1 * (uh * uh + ul * ul)
            du[k] += 2 * wt.b1 * (uh - ul)
        e = max(u[0] - float(torque_max(n, fm)) / pr.m1, 0.0)
        B += wt.b2 * e * e
        du[0] += 2 * wt.b2 * e
        dn -= 2 * wt.b2 * e * float(torque_max_dn(n, fm)) / pr.m1
        return B, dn, dp, du

    def expansion(self, x, xn, u, w, Fx, Fu, grade=None):
        """Total first derivatives and Gauss-Newton second derivatives of
        g(x, F(x,u,w), u) with respect to (x, u)."""
        wt, fm, pr = self.w, self.fm, self.pr
        g, gx, gxn, gu = self.partials(x, xn, u, w, grade)
        J = g.size
        gx = gx + np.einsum("jab,ja->jb", Fx, gxn)
        gu = gu + np.einsum("jab,ja->jb", Fu, gxn)
        rx = Fx[:, IN, :].copy()
        rx[:, IN] -= 1.0
        ru = Fu[:, IN, :]
        c = 2 * wt.K1
        gxx = c * rx[:, :, None] * rx[:, None, :]
        guu = c * ru[:, :, None] * ru[:, None, :]
        gux = c * ru[:, :, None] * rx[:, None, :]
        hnn, hnu, huu = fuel_hessian_psd(wt.K2, fm, pr.m1)
        gxx[:, IN, IN] += hnn
        gux[:, 0, IN] += hnu
        guu[:, 0, 0] += huu
        pstar, dps = self._pstar(x, w, grade)
        act = (float(x[IP]) < pstar).astype(float)
        e = -dps
        e[:, IP] += 1.0
        gxx += (2 * wt.K3 * act)[:, None, None] * e[:, :, None] * e[:, None, :]
        return g, gx, gu, gxx, guu, gux
