"""Higher-fidelity plant: vehicle, engine with intake manifold and throttle PI,
hydraulic circuit with its own (perturbed) loss maps. Integrated by RK4."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .control_model import capacitance, fuel_rate, torque_max
from .params import TWO_PI, EngineParams, FuelMap, VehicleParams


class PlantFault(RuntimeError):
    pass


@dataclass
class PlantState:
    ell: float = 0.0
    v: float = 0.0
    n_eng: float = 80.0
    p: float = 150e5
    p_im: float = 101325.0
    thr_int: float = 0.0

    def system(self) -> np.ndarray:
        return np.array([self.ell, self.v, self.n_eng, self.p])

    def as_array(self) -> np.ndarray:
        return np.array([self.ell, self.v, self.n_eng, self.p, self.p_im, self.thr_int])

    @classmethod
    def from_array(cls, a) -> "PlantState":
        return cls(*(float(x) for x in a))


def cylinder_torque(p_im, ep: EngineParams):
    return ep.eta_t * ep.eta_v * ep.Q_lhv * ep.V_d * p_im / (4 * math.pi * ep.R * ep.T_im * ep.AFR)


def throttle_pi(T_cmd, T_act, integral, gains: EngineParams):
    """Throttle mass flow from the torque error; never negative."""
    return min(max(gains.thr_kp * (T_cmd - T_act) + integral, 0.0), gains.W_max)


def manifold_pressure_for(T, ep: EngineParams) -> float:
    return T / cylinder_torque(1.0, ep)


@dataclass(frozen=True)
class Plant:
    pr: VehicleParams
    fm: FuelMap
    ep: EngineParams

    @classmethod
    def with_perturbation(cls, pr: VehicleParams, fm: FuelMap, ep: EngineParams,
                          perturbation: float = 0.1) -> "Plant":
        f = 1.0 + perturbation
        return cls(replace(pr, pump_loss=pr.pump_loss.scaled(f),
                           motor_loss=pr.motor_loss.scaled(f)), fm, ep)

    def propulsion_force(self, Vm, p, v):
        pr = self.pr
        k2 = pr.k2(v)
        ml = pr.motor_loss
        nm = k2 * v / pr.r_tire
        Vm = min(max(Vm, -pr.Vm_max), pr.Vm_max)
        return (Vm * p / TWO_PI - (ml.mu0 + ml.mu1 * p + ml.mu2 * abs(nm))) * k2 / pr.r_tire

    def deriv(self, s, T_cmd, Vp, Vm, phi):
        pr, ep = self.pr, self.ep
        ell, v, n, p, p_im, I_thr = s
        v = max(v, 0.0)
        n = max(n, 0.0)
        k2 = pr.k2(v)
        r = pr.r_tire
        F = self.propulsion_force(Vm, p, v)
        resist = 0.5 * pr.C_d * pr.rho_air * v * v + pr.m_veh * pr.g * (
            pr.C_r * math.cos(phi) + math.sin(phi))
        vdot = (F - resist) / pr.m_veh
        if v <= 0.0 and vdot < 0.0:
            vdot = 0.0
        T_act = cylinder_torque(p_im, ep)
        pl, ml = pr.pump_loss, pr.motor_loss
        load = pr.k1 * Vp * p / TWO_PI + pr.k1 * (pl.mu0 + pl.mu1 * p + pl.mu2 * n)
        ndot = (T_act - load) / pr.I_eng
        if n <= 0.0 and ndot < 0.0:
            ndot = 0.0
        Vm_c = min(max(Vm, -pr.Vm_max), pr.Vm_max)
        flow = (pr.k1 * Vp * n / TWO_PI - k2 * Vm_c * v / (TWO_PI * r)
                - (pl.kap1 * p + pl.kap2 * p * abs(Vp)) - (ml.kap1 * p + ml.kap2 * p * abs(Vm_c)))
        pdot = flow / capacitance(max(p, 0.0), pr)
        if p >= pr.p_max and pdot > 0.0:
            pdot = 0.0          # relief valve
        err = T_cmd - T_act
        raw = ep.thr_kp * err + I_thr
        W = min(max(raw, 0.0), ep.W_max)
        # conditional integration: stop winding up while saturated
        Idot = 0.0 if (raw >= ep.W_max and err > 0) or (raw <= 0.0 and err < 0) else ep.thr_ki * err
        pimdot = ep.R * ep.T_im / ep.V_im * (W - ep.eta_v * ep.V_d * n * p_im / (4 * math.pi * ep.R * ep.T_im))
        if p_im >= ep.p_amb and pimdot > 0.0:
            pimdot = 0.0
        return np.array([v, vdot, ndot, pdot, pimdot, Idot])

    def step(self, ps: PlantState, T_cmd: float, Vp: float, Vm: float, phi: float,
             dt: float = 0.01) -> PlantState:
        """One RK4 step with commands held over dt."""
        if dt > 0.01 + 1e-12:
            raise ValueError("plant step must not exceed 0.01 s")
        T_cmd = min(max(T_cmd, 0.0), float(torque_max(max(ps.n_eng, 0.0), self.fm)))
        Vp = min(max(Vp, 0.0), self.pr.Vp_max)
        s = ps.as_array()
        k1 = self.deriv(s, T_cmd, Vp, Vm, phi)
        k2 = self.deriv(s + 0.5 * dt * k1, T_cmd, Vp, Vm, phi)
        k3 = self.deriv(s + 0.5 * dt * k2, T_cmd, Vp, Vm, phi)
        k4 = self.deriv(s + dt * k3, T_cmd, Vp, Vm, phi)
        s = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        s[1] = max(s[1], 0.0)
        s[2] = max(s[2], 0.0)
        s[4] = min(max(s[4], 1.0), self.ep.p_amb)
        if s[3] < 0.0 or not np.all(np.isfinite(s)):
            raise PlantFault(f"non-physical plant state {s}")
        s[3] = min(s[3], self.pr.p_max)
        return PlantState.from_array(s)

    def torque(self, ps: PlantState) -> float:
        return float(cylinder_torque(ps.p_im, self.ep))

    def fuel(self, ps: PlantState) -> float:
        return float(fuel_rate(ps.n_eng, self.torque(ps), self.fm))


def plant_step(plant: Plant, ps: PlantState, T_cmd, Vp, Vm, phi, dt=0.01) -> PlantState:
    return plant.step(ps, T_cmd, Vp, Vm, phi, dt)


def equilibrium_state(plant: Plant, v=0.0, n=80.0, p=150e5, T=None) -> PlantState:
    """Plant state with the manifold and throttle integrator settled for torque T."""
    pr, ep = plant.pr, plant.ep
    if T is None:
        pl = pr.pump_loss
        T = pr.k1 * (pl.mu0 + pl.mu1 * p + pl.mu2 * n)
    p_im = manifold_pressure_for(T, ep)
    W = ep.eta_v * ep.V_d * n * p_im / (4 * math.pi * ep.R * ep.T_im)
    return PlantState(0.0, v, n, p, p_im, W)
