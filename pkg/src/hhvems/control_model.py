"""Embedded 4-state model used by every horizon solver.

State x = [position, vehicle speed, engine speed, differential pressure];
input u = [T_cyl/m1, V_p/m2]; disturbance w = driver acceleration demand.
The functions here broadcast over a trailing batch of demands so that one
call evaluates all Markov outcomes of a stage.
"""
from __future__ import annotations

import math

import numpy as np

from .params import TWO_PI, FuelMap, VehicleParams
from .terrain import GradeModel

NX, NU = 4, 2
IL, IV, IN, IP = range(4)


# ---------------------------------------------------------------- static maps

def propulsion_cmd(w, v, phi, pr: VehicleParams):
    """Force needed to realise acceleration w at speed v on grade phi."""
    return pr.m_veh * w + 0.5 * pr.C_d * pr.rho_air * v * v + pr.m_veh * pr.g * (
        pr.C_r * np.cos(phi) + np.sin(phi))


def motor_displacement(F, p, v, pr: VehicleParams):
    """Motor displacement that delivers force F at pressure p, clamped to +-Vm_max."""
    k2 = pr.k2(v)
    ml = pr.motor_loss
    Mm = ml.mu0 + ml.mu1 * p + ml.mu2 * abs(k2 * v / pr.r_tire)
    pf = np.maximum(p, pr.p_floor)
    Vm = TWO_PI / pf * (F * pr.r_tire / k2 + Mm)
    return np.clip(Vm, -pr.Vm_max, pr.Vm_max)


def capacitance(p, pr: VehicleParams):
    """Hydraulic capacitance dV/dp of accumulator gas plus line compliance."""
    g = pr.gamma_gas
    p = np.maximum(p, 0.0)
    return pr.V_ha * pr.p_ha ** (1 / g) / (g * (p + pr.p_lp) ** (1 + 1 / g)) + pr.V_L / pr.K_L


def capacitance_dp(p, pr: VehicleParams):
    g = pr.gamma_gas
    pc = np.maximum(p, 0.0)
    d = -(1 + 1 / g) * pr.V_ha * pr.p_ha ** (1 / g) / (g * (pc + pr.p_lp) ** (2 + 1 / g))
    return np.where(p > 0.0, d, 0.0)


def torque_max(n, fm: FuelMap):
    n = np.asarray(n, dtype=float)
    poly = fm.t0 + fm.t1 * n + fm.t2 * n * n
    cap = fm.P_max / np.maximum(n, 1e-9)
    return np.maximum(np.minimum(poly, cap), 0.0)


def torque_max_dn(n, fm: FuelMap):
    n = np.asarray(n, dtype=float)
    poly = fm.t0 + fm.t1 * n + fm.t2 * n * n
    cap = fm.P_max / np.maximum(n, 1e-9)
    return np.where(poly <= cap, fm.t1 + 2 * fm.t2 * n, -fm.P_max / np.maximum(n, 1e-9) ** 2)


def fuel_poly(n, T, fm: FuelMap):
    """Raw fuel polynomial, used by the solvers' cost."""
    return fm.c0 + fm.c1 * n + fm.c11 * n * n + fm.c2 * n * T + fm.c3 * T * T


def fuel_rate(n_eng, T_cyl, fm: FuelMap):
    """Fuel mass rate in g/s with inputs clamped to the operating box."""
    n = np.clip(n_eng, 0.0, fm.n_max)
    T = np.clip(T_cyl, 0.0, torque_max(n, fm))
    return np.maximum(fuel_poly(n, T, fm), 0.0)


def accumulator_energy(p1, p2, p0, V0, gamma):
    """Energy stored by compressing gas from p1 to p2 along p V^gamma = const."""
    if not (p2 >= p1 >= p0):
        raise ValueError("require p2 >= p1 >= p0")
    e = 1.0 - 1.0 / gamma
    # work done on the gas; positive when p2 > p1
    return p0 ** (1 / gamma) * V0 / (gamma - 1) * (p2 ** e - p1 ** e)


def pressure_gain(pr: VehicleParams):
    """dp_req/d(motor torque): 2 pi / Vm_max corrected for the p-proportional loss."""
    return TWO_PI / pr.Vm_max / (1.0 - TWO_PI * pr.motor_loss.mu1 / pr.Vm_max)


def required_pressure(F, v, pr: VehicleParams):
    """Pressure at which full motor displacement delivers F (losses included)."""
    k2 = pr.k2(v)
    ml = pr.motor_loss
    return pressure_gain(pr) * (F * pr.r_tire / k2 + ml.mu0 + ml.mu2 * k2 * v / pr.r_tire)


# ---------------------------------------------------------------- dynamics

def _grade(grade: GradeModel | None, ell):
    if grade is None or grade.is_flat:
        return 0.0, 0.0
    s = float(grade.slope(ell))
    s = max(-0.999, min(0.999, s))
    phi = math.asin(s)
    dphi = float(grade.curvature(ell)) / math.sqrt(1.0 - s * s)
    return phi, dphi


def rhs_and_jac(x, u, w, pr: VehicleParams, grade: GradeModel | None = None):
    """f(x,u,w) with analytic df/dx and df/du.

    x (4,), u (2,), w scalar or (J,). Returns f (J,4), A (J,4,4), B (J,4,2).
    """
    w = np.atleast_1d(np.asarray(w, dtype=float))
    J = w.size
    ell, v, n, p = (float(c) for c in x)
    T = pr.m1 * float(u[0])
    Vp = pr.m2 * float(u[1])
    phi, dphi = _grade(grade, ell)
    k2 = pr.k2(v)
    r = pr.r_tire
    F = pr.m_veh * w + 0.5 * pr.C_d * pr.rho_air * v * v + pr.m_veh * pr.g * (
        pr.C_r * math.cos(phi) + math.sin(phi))
    dF_dv = pr.C_d * pr.rho_air * v
    dF_dl = pr.m_veh * pr.g * (math.cos(phi) - pr.C_r * math.sin(phi)) * dphi

    ml, pl = pr.motor_loss, pr.pump_loss
    nm = k2 * v / r
    Mm = ml.mu0 + ml.mu1 * p + ml.mu2 * abs(nm)
    floored = p <= pr.p_floor
    pf = pr.p_floor if floored else p
    Vm_raw = TWO_PI / pf * (F * r / k2 + Mm)
    free = np.abs(Vm_raw) < pr.Vm_max
    Vm = np.clip(Vm_raw, -pr.Vm_max, pr.Vm_max)
    dVm_dp = np.where(free, (0.0 if floored else -Vm_raw / pf) + TWO_PI / pf * ml.mu1, 0.0)
    dVm_dv = np.where(free, TWO_PI / pf * (dF_dv * r / k2 + ml.mu2 * k2 / r * np.sign(nm)), 0.0)
    dVm_dl = np.where(free, TWO_PI / pf * (r / k2) * dF_dl, 0.0)

    k1, I = pr.k1, pr.I_eng
    Mp = pl.mu0 + pl.mu1 * p + pl.mu2 * abs(n)
    ndot = (T - k1 * Vp * p / TWO_PI - k1 * Mp) / I
    Qp = pl.kap1 * p + pl.kap2 * p * abs(Vp)
    Qm = ml.kap1 * p + ml.kap2 * p * np.abs(Vm)
    Nflow = k1 * Vp * n / TWO_PI - k2 * Vm * v / (TWO_PI * r) - Qp - Qm
    C = capacitance(p, pr)
    Cp = capacitance_dp(p, pr)
    pdot = Nflow / C

    f = np.empty((J, NX))
    f[:, IL] = v
    f[:, IV] = w
    f[:, IN] = ndot
    f[:, IP] = pdot

    A = np.zeros((J, NX, NX))
    A[:, IL, IV] = 1.0
    A[:, IN, IN] = -k1 * pl.mu2 * np.sign(n) / I
    A[:, IN, IP] = -(k1 * Vp / TWO_PI + k1 * pl.mu1) / I
    gm = k2 * v / (TWO_PI * r) + ml.kap2 * p * np.sign(Vm)
    A[:, IP, IL] = -gm * dVm_dl / C
    A[:, IP, IV] = (-k2 * Vm / (TWO_PI * r) - gm * dVm_dv) / C
    A[:, IP, IN] = k1 * Vp / TWO_PI / C
    dN_dp = -gm * dVm_dp - pl.kap1 - pl.kap2 * abs(Vp) - ml.kap1 - ml.kap2 * np.abs(Vm)
    A[:, IP, IP] = dN_dp / C - Nflow * Cp / (C * C)

    B = np.zeros((J, NX, NU))
    B[:, IN, 0] = pr.m1 / I
    B[:, IN, 1] = -k1 * pr.m2 * p / (TWO_PI * I)
    B[:, IP, 1] = (k1 * pr.m2 * n / TWO_PI - pl.kap2 * p * pr.m2 * np.sign(Vp)) / C
    return f, A, B


def dynamics_rhs(x, u, w, pr: VehicleParams, grade: GradeModel | None = None) -> np.ndarray:
    f, _, _ = rhs_and_jac(x, u, w, pr, grade)
    return f[0] if np.ndim(w) == 0 else f


def taylor_step(x, f, A, B, dt):
    """Second-order Taylor propagation and its neglected-curvature Jacobians."""
    Af = np.einsum("jab,jb->ja", A, f)
    xn = x + dt * f + 0.5 * dt * dt * Af
    eye = np.eye(A.shape[-1])
    Fx = eye + dt * A + 0.5 * dt * dt * (A @ A)
    Fu = dt * B + 0.5 * dt * dt * (A @ B)
    return xn, Fx, Fu


def step_and_jac(x, u, w, dt, pr: VehicleParams, grade: GradeModel | None = None):
    f, A, B = rhs_and_jac(x, u, w, pr, grade)
    return taylor_step(np.asarray(x, dtype=float), f, A, B, dt)


def step(x, u, w, dt, pr: VehicleParams, grade: GradeModel | None = None) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    xn, _, _ = step_and_jac(x, u, w, dt, pr, grade)
    return xn[0] if np.ndim(w) == 0 else xn


def jacobians(x, u, w, dt, pr: VehicleParams, grade: GradeModel | None = None):
    _, Fx, Fu = step_and_jac(x, u, w, dt, pr, grade)
    if np.ndim(w) == 0:
        return Fx[0], Fu[0]
    return Fx, Fu
