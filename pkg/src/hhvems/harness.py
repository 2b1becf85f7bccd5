"""Closed-loop simulation, metrics and the learning experiments."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import solver_ddp, solver_sgdm
from .baseline_instopt import InstOpt
from .control_model import motor_displacement, torque_max
from .cost import Box, setpoint_pressure
from .cycles import CycleTrace, VirtualDriverState, driver_force
from .driver_model import (DualSpeedModel, _streams, accel_setpoint, learn_from_demands,
                           learn_step, observe_demand, quantize, stationary)
from .params import Config
from .plant import Plant, PlantFault, equilibrium_state
from .problems import HHVProblem
from .terrain import ElevationProfile

ALGOS = ("sgdm", "asddp", "apddp", "ddp", "instopt")
STOCHASTIC = ("sgdm", "asddp", "apddp")
LOG_COLUMNS = ("t", "v_ref", "v", "F_cmd", "F_act", "n_eng", "p", "p_im", "T_cyl", "V_p",
               "V_m", "b_f", "grade")


@dataclass
class RunConfig:
    cycle: CycleTrace
    algo: str = "asddp"
    config: Config = field(default_factory=Config)
    Ts: float | None = None
    max_time: float | None = None
    seed: int = 0
    freeze_learning: bool = False
    backend: str = "auto"

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algorithm {self.algo!r}")


@dataclass
class RunMetrics:
    fuel_g: float
    tracking_m_per_km: float
    distance_km: float
    runtime_s: float = 0.0
    solver_ms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"fuel_g": self.fuel_g, "tracking_m_per_km": self.tracking_m_per_km,
                "distance_km": self.distance_km, "runtime_s": self.runtime_s,
                "solver_ms": self.solver_ms}


@dataclass
class RunResult:
    metrics: RunMetrics
    log: dict
    stats: DualSpeedModel | None
    fault: str | None = None


# ------------------------------------------------------------------ metrics

def fuel_metric(log) -> float:
    t = np.asarray(log["t"], dtype=float)
    b = np.asarray(log["b_f"], dtype=float)
    if t.size < 2:
        return 0.0
    return float(np.sum(0.5 * (b[1:] + b[:-1]) * np.diff(t)))


def tracking_metric(log, Vm_max: float, distance_km: float) -> float:
    """Speed error accumulated only while the motor is at full displacement, per km."""
    if distance_km <= 0:
        raise ValueError("zero-distance cycle")
    t = np.asarray(log["t"], dtype=float)
    err = np.abs(np.asarray(log["v_ref"], dtype=float) - np.asarray(log["v"], dtype=float))
    gate = np.asarray(log["V_m"], dtype=float) >= Vm_max * (1 - 1e-9)
    y = err * gate
    if t.size < 2:
        return 0.0
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)) / distance_km)


# ------------------------------------------------------------------ controllers

def _fractional_shift(A, frac):
    """Advance a stage sequence by `frac` stages (linear interpolation, last row held)."""
    if frac <= 0:
        return A.copy()
    idx = np.minimum(np.arange(A.shape[0]) + frac, A.shape[0] - 1)
    lo = np.floor(idx).astype(int)
    hi = np.minimum(lo + 1, A.shape[0] - 1)
    s = (idx - lo)[:, None]
    return (1 - s) * A[lo] + s * A[hi]


def oracle_setpoints(trace: CycleTrace, cfg: Config) -> tuple[float, float]:
    """(low, high speed) acceleration setpoints from the realized reference demand.

    Same weighting as the learned setpoint, but over the empirical distribution of
    the whole trace; this is the oracle's stand-in for long-term statistics.
    """
    d, c = cfg.driver, cfg.cost
    t = np.arange(0.0, trace.t[-1], d.learn_dt)
    v = np.interp(t, trace.t, trace.v_ref)
    w, v = np.diff(v) / d.learn_dt, v[:-1]
    out = []
    for sel in (v < d.v_switch, v >= d.v_switch):
        wp = w[sel & (w >= 0)]
        out.append(c.alpha_w * float(wp.mean()) + c.beta_w * float(wp.std()) if wp.size else 0.0)
    return out[0], out[1]


class PredictiveController:
    """Wraps one horizon solver in the receding-horizon loop."""

    def __init__(self, algo: str, cfg: Config, stats: DualSpeedModel | None, trace: CycleTrace,
                 profile: ElevationProfile | None, Ts: float, backend: str = "auto"):
        self.algo, self.cfg, self.stats = algo, cfg, stats
        self.trace, self.profile, self.Ts, self.backend = trace, profile, Ts, backend
        pr, fm = cfg.vehicle, cfg.fuel
        self.box = Box.from_config(cfg.ddp, pr, fm)
        self.weights = cfg.cost.inflated() if algo == "apddp" else cfg.cost
        N = cfg.sim.N
        self.N = N
        self.U = None
        self.V = np.zeros((N, 2))
        self.X = None
        self.omegas = _streams(cfg.sgdm.K, N, cfg.sgdm.seed)
        self._wset_cache: dict = {}
        self._oracle_wset = oracle_setpoints(trace, cfg) if algo == "ddp" else None

    def _default_U(self, x0):
        pr = self.cfg.vehicle
        pl = pr.pump_loss
        Vp = 0.3 * pr.Vp_max
        T = pr.k1 * Vp * x0[3] / (2 * math.pi) + pr.k1 * (pl.mu0 + pl.mu1 * x0[3] + pl.mu2 * x0[2])
        return np.tile([T / pr.m1, Vp / pr.m2], (self.N, 1))

    def w_set(self, model) -> float:
        key = (id(model), model.P.tobytes().__hash__())
        if key not in self._wset_cache:
            self._wset_cache.clear()
            nu = stationary(model)
            self._wset_cache[key] = accel_setpoint(model, self.weights.alpha_w,
                                                   self.weights.beta_w, nu)
        return self._wset_cache[key]

    def control(self, t: float, x0: np.ndarray, w_meas: float):
        cfg = self.cfg
        pr = cfg.vehicle
        v = float(x0[1])
        grade = self.profile.fit_ahead(float(x0[0])) if self.profile is not None else None
        if self.algo == "ddp":
            p_set = setpoint_pressure(self._oracle_wset[int(v >= cfg.driver.v_switch)], v, pr)
        else:
            p_set = setpoint_pressure(self.w_set(self.stats.active(v)), v, pr)
        problem = HHVProblem(pr, cfg.fuel, self.weights, self.box, cfg.sim.dt_model, grade,
                             p_set, use_penalty=(self.algo == "sgdm"))
        frac = self.Ts / cfg.sim.dt_model
        if self.U is None:
            self.U = self._default_U(x0)
        else:
            self.U = _fractional_shift(self.U, frac)
            self.V = _fractional_shift(self.V, frac)
            if self.X is not None:
                self.X = _fractional_shift(self.X, frac)
        if self.algo == "sgdm":
            model = self.stats.active(v)
            i0 = quantize(w_meas, model.grid)
            self.U, self.V = solver_sgdm.solve(problem, x0, i0, (self.U, self.V), self.omegas,
                                               model, cfg.sgdm, backend=self.backend)
        else:
            warm = (self.X, self.U)
            if self.algo == "ddp":
                res = solver_ddp.solve_ddp_oracle(problem, x0, self.future_w(t, w_meas), warm,
                                                  cfg.ddp.iters, cfg.ddp.delta,
                                                  cfg.ddp.slack_weight, self.backend)
            else:
                model = self.stats.active(v)
                i0 = quantize(w_meas, model.grid)
                solve = solver_ddp.solve_asddp if self.algo == "asddp" else solver_ddp.solve_apddp
                res = solve(problem, x0, i0, warm, model, cfg.ddp.iters, cfg.ddp.delta,
                            cfg.ddp.slack_weight, self.backend)
            self.X, self.U = res.X, res.U
        u0 = self.U[0]
        return pr.m1 * float(u0[0]), pr.m2 * float(u0[1])

    def future_w(self, t: float, w_meas: float) -> np.ndarray:
        """Non-causal demand forecast from the reference trace (oracle only)."""
        dt = self.cfg.sim.dt_model
        times = t + dt * np.arange(self.N + 1)
        v = np.interp(times, self.trace.t, self.trace.v_ref)
        w = np.diff(v) / dt
        w[0] = w_meas
        return w


# ------------------------------------------------------------------ closed loop

def initial_stats(cfg: Config) -> DualSpeedModel:
    d = cfg.driver
    return DualSpeedModel.gaussian(d.alpha, d.sigma_steps, d.v_switch)


def run_closed_loop(rc: RunConfig, stats: DualSpeedModel | None = None) -> RunResult:
    cfg = rc.config
    pr, fm = cfg.vehicle, cfg.fuel
    trace = rc.cycle if rc.max_time is None else rc.cycle.truncate(rc.max_time)
    Ts = rc.Ts if rc.Ts is not None else cfg.sim.Ts
    dt = cfg.sim.dt_fine
    if stats is None:
        stats = initial_stats(cfg)
    plant = Plant.with_perturbation(pr, fm, cfg.engine, cfg.sim.loss_perturbation)
    profile = ElevationProfile.from_trace(trace)
    n_ticks = int(round(trace.duration / dt))
    ctrl_every = max(1, int(round(Ts / dt)))
    learn_every = max(1, int(round(cfg.driver.learn_dt / dt)))
    times = trace.t[0] + dt * np.arange(n_ticks + 1)
    v_ref_all = np.interp(times, trace.t, trace.v_ref)

    driver = VirtualDriverState(cfg.driver.kp, cfg.driver.ki, 0.0, pr.Fp_max)
    ps = equilibrium_state(plant, v=float(v_ref_all[0]), n=cfg.fuel.n_idle,
                           p=cfg.instopt.p_ref0)
    if rc.algo == "instopt":
        ctrl = InstOpt(pr, fm, cfg.instopt)
        ist = ctrl.initial_state()
    else:
        ctrl = PredictiveController(rc.algo, cfg, stats, trace, profile, Ts, rc.backend)
    log = {c: np.zeros(n_ticks + 1) for c in LOG_COLUMNS}
    solver_times = []
    T_cmd, Vp = 0.0, 0.0
    prev_idx = None
    fault = None
    t_wall = time.perf_counter()
    for k in range(n_ticks + 1):
        t = float(times[k])
        v_ref = float(v_ref_all[k])
        phi = profile.grade(ps.ell) if profile is not None else 0.0
        F_cmd = driver_force(driver, v_ref, ps.v, dt)
        x = ps.system()
        if k % learn_every == 0 or (rc.algo != "instopt" and k % ctrl_every == 0):
            w_meas = observe_demand(F_cmd, ps.v, phi, pr)
        if k % learn_every == 0:
            model = stats.active(ps.v)
            idx = quantize(w_meas, model.grid)
            if prev_idx is not None and not rc.freeze_learning:
                learn_step(stats.active(prev_idx[1]), prev_idx[0], idx)
            prev_idx = (idx, ps.v)
        if rc.algo == "instopt":
            T_cmd, Vp, Vm, _ = ctrl.step(x, F_cmd, dt, ist)
        else:
            if k % ctrl_every == 0:
                t0 = time.perf_counter()
                T_cmd, Vp = ctrl.control(t, x, w_meas)
                solver_times.append(time.perf_counter() - t0)
            Vm = float(motor_displacement(F_cmd, ps.p, ps.v, pr))
        T_applied = min(max(T_cmd, 0.0), float(torque_max(ps.n_eng, fm)))
        Vp_applied = min(max(Vp, 0.0), pr.Vp_max)
        row = (t, v_ref, ps.v, F_cmd, plant.propulsion_force(Vm, ps.p, ps.v), ps.n_eng, ps.p,
               ps.p_im, plant.torque(ps), Vp_applied, Vm, plant.fuel(ps), phi)
        for c, val in zip(LOG_COLUMNS, row):
            log[c][k] = val
        if k == n_ticks:
            break
        try:
            ps = plant.step(ps, T_applied, Vp_applied, Vm, phi, dt)
        except PlantFault as exc:
            fault = str(exc)
            log = {c: a[:k + 1] for c, a in log.items()}
            break
    runtime = time.perf_counter() - t_wall
    dist_km = float(trace.distance()[-1]) / 1000.0
    st = np.asarray(solver_times) * 1e3
    solver_ms = ({"p50": float(np.percentile(st, 50)), "p90": float(np.percentile(st, 90)),
                  "p99": float(np.percentile(st, 99)), "max": float(st.max())}
                 if st.size else {})
    metrics = RunMetrics(fuel_metric(log),
                         tracking_metric(log, pr.Vm_max, dist_km) if dist_km > 0 else 0.0,
                         dist_km, runtime, solver_ms)
    return RunResult(metrics, log, stats, fault)


# ------------------------------------------------------------------ I/O

def write_log(log: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        cols = [log[c] for c in LOG_COLUMNS]
        for k in range(len(cols[0])):
            w.writerow([repr(float(c[k])) for c in cols])


def write_summary(result: RunResult, rc: RunConfig, path: str | Path, extra: dict | None = None):
    data = {"algo": rc.algo, "cycle": rc.cycle.name, "seed": rc.seed,
            "synthetic_cycle": rc.cycle.name.startswith("synthetic"),
            **result.metrics.to_dict(), "fault": result.fault}
    if extra:
        data.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


# ------------------------------------------------------------------ experiments

def experiment_progression(rc: RunConfig, n_runs: int, stats: DualSpeedModel | None = None,
                           out_dir: str | Path | None = None) -> list[RunMetrics]:
    """Repeat the cycle, carrying the learned statistics from run to run."""
    if n_runs < 2:
        raise ValueError("n_runs must be at least 2")
    stats = stats if stats is not None else initial_stats(rc.config)
    out = []
    for k in range(n_runs):
        res = run_closed_loop(rc, stats)
        stats = res.stats
        out.append(res.metrics)
        if out_dir is not None:
            _dump_run(res, rc, out_dir, k)
    return out


def experiment_crosstrain(rc: RunConfig, source_stats: DualSpeedModel, n_runs: int = 4,
                          out_dir: str | Path | None = None) -> list[RunMetrics]:
    """Run 0 with frozen foreign statistics, then adaptive runs."""
    stats = source_stats.copy()
    out = []
    for k in range(n_runs):
        res = run_closed_loop(replace(rc, freeze_learning=(k == 0)), stats)
        stats = res.stats
        out.append(res.metrics)
        if out_dir is not None:
            _dump_run(res, rc, out_dir, k)
    return out


def _dump_run(res: RunResult, rc: RunConfig, out_dir, k: int):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_log(res.log, out_dir / f"run{k}.csv")
    write_summary(res, rc, out_dir / f"run{k}.json")
    res.stats.save(out_dir / f"stats_run{k}.json")


def learn_stats_from_cycle(trace: CycleTrace, cfg: Config, passes: int = 3,
                           stats: DualSpeedModel | None = None) -> DualSpeedModel:
    """Learn demand statistics from a cycle's 1 Hz reference accelerations."""
    stats = stats if stats is not None else initial_stats(cfg)
    dtl = cfg.driver.learn_dt
    tt = np.arange(trace.t[0], trace.t[-1] + 1e-9, dtl)
    v = np.interp(tt, trace.t, trace.v_ref)
    w = np.diff(v, append=v[-1]) / dtl
    for _ in range(passes):
        learn_from_demands(stats, w, v)
    return stats
