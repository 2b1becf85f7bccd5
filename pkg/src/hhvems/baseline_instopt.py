"""Instantaneous-optimization baseline: hold a reference pressure with the pump
and run the engine at the lowest speed that can supply the pump."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control_model import motor_displacement, torque_max
from .params import TWO_PI, FuelMap, InstOptConfig, VehicleParams


@dataclass
class InstOptState:
    p_ref: float = 150e5
    pump_int: float = 0.0
    trim_int: float = 0.0
    speed_int: float = 0.0


class InstOpt:
    def __init__(self, pr: VehicleParams, fm: FuelMap, cfg: InstOptConfig):
        self.pr, self.fm, self.cfg = pr, fm, cfg
        self._n_grid = np.linspace(fm.n_idle, fm.n_max, 600)
        self._t_grid = torque_max(self._n_grid, fm)
        # running maximum so the lookup returns the lowest adequate speed
        self._t_env = np.maximum.accumulate(self._t_grid)

    def initial_state(self) -> InstOptState:
        return InstOptState(p_ref=self.cfg.p_ref0)

    def min_speed_for_torque(self, T: float) -> float:
        k = int(np.searchsorted(self._t_env, T))
        return float(self._n_grid[min(k, self._n_grid.size - 1)])

    def step(self, x, F_cmd: float, dt: float, st: InstOptState):
        """Returns (T_cyl, V_p, V_m, n_cmd); st is updated in place."""
        pr, fm, c = self.pr, self.fm, self.cfg
        if dt <= 0:
            raise ValueError("dt must be positive")
        _, v, n, p = (float(a) for a in x)
        Vm = float(motor_displacement(F_cmd, p, v, pr))
        unmet = Vm >= pr.Vm_max * (1 - 1e-9)
        if unmet:
            st.p_ref = min(st.p_ref + c.raise_rate * dt, pr.p_max)
        else:
            st.p_ref = max(st.p_ref - c.decay_rate * dt, c.p_ref0)

        e = st.p_ref - p
        st.pump_int = min(max(st.pump_int + c.pump_ki * e * dt, 0.0), 1.0)
        frac = min(max(c.pump_kp * e + st.pump_int, 0.0), 1.0)
        Vp = frac * pr.Vp_max

        k2 = pr.k2(v)
        n_flow = k2 * Vm * v / (pr.r_tire * pr.k1 * Vp) if Vp > 0 and Vm > 0 else 0.0
        pl = pr.pump_loss
        load = pr.k1 * Vp * p / TWO_PI + pr.k1 * (pl.mu0 + pl.mu1 * p + pl.mu2 * n)
        n_torque = self.min_speed_for_torque(load) if Vp > 0 else 0.0
        deficit = st.p_ref - c.eps - p
        if deficit > 0:
            st.trim_int = min(st.trim_int + c.trim_ki * deficit * dt, fm.n_max)
            trim = c.trim_kp * deficit + st.trim_int
        else:
            st.trim_int = 0.0
            trim = 0.0
        n_cmd = min(max(fm.n_idle, n_flow, n_torque) + trim, fm.n_max)

        err = n_cmd - n
        st.speed_int = min(max(st.speed_int + c.speed_ki * err * dt, -100.0), 100.0)
        T = load + c.speed_kp * err + st.speed_int
        T = min(max(T, 0.0), float(torque_max(n, fm)))
        return T, Vp, Vm, n_cmd


def instopt_step(x, F_cmd: float, dt: float, st: InstOptState, ctx: InstOpt):
    T, Vp, Vm, _ = ctx.step(x, F_cmd, dt, st)
    return T, Vp, Vm, st
