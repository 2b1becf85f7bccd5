"""Timings of one receding-horizon step for each backend."""
from __future__ import annotations

import time

import numpy as np

from . import kernels, solver_ddp, solver_sgdm
from .cost import Box, setpoint_pressure
from .cycles import builtin_cycle
from .driver_model import _streams, accel_setpoint, quantize
from .harness import learn_stats_from_cycle
from .params import Config
from .problems import HHVProblem


def bench_case(cfg: Config | None = None, sgdm: bool = False):
    """A mid-cycle operating point with UDDS-learned statistics."""
    cfg = cfg or Config()
    pr, fm = cfg.vehicle, cfg.fuel
    stats = learn_stats_from_cycle(builtin_cycle("udds"), cfg, passes=2)
    x0 = np.array([500.0, 12.0, 150.0, 220e5])
    m = stats.active(float(x0[1]))
    p_set = setpoint_pressure(accel_setpoint(m, cfg.cost.alpha_w, cfg.cost.beta_w), x0[1], pr)
    problem = HHVProblem(pr, fm, cfg.cost, Box.from_config(cfg.ddp, pr, fm), cfg.sim.dt_model,
                         None, p_set, use_penalty=sgdm)
    N = cfg.sim.N
    U = np.tile([60.0 / pr.m1, 0.4 * pr.Vp_max / pr.m2], (N, 1))
    return cfg, problem, x0, quantize(0.3, m.grid), m, U


def _median_ms(fn, repeats: int) -> float:
    fn()  # warm caches
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return 1e3 * float(np.median(ts))


def run_benchmarks(repeats: int = 20) -> dict:
    cfg, prob, x0, i0, m, U = bench_case()
    _, sprob, _, _, _, _ = bench_case(sgdm=True)
    d, rho = cfg.ddp.delta, cfg.ddp.slack_weight
    W, P = solver_ddp.outcome_tables(m, i0, U.shape[0])
    wbar = (P * W).sum(axis=1, keepdims=True)
    ones = np.ones_like(wbar)
    X = solver_ddp.expected_rollout(prob, x0, U, W, P)
    omegas = _streams(cfg.sgdm.K, cfg.sim.N, 0)
    V = np.zeros_like(U)

    if kernels.HAVE_COMPILED:
        back_as = kernels.backward_call(prob, X, U, W, P, d)
        back_ap = kernels.backward_call(prob, X, U, wbar, ones, d)
    cases = {
        "asddp_step": lambda b: solver_ddp.solve_asddp(prob, x0, i0, (X, U), m, 1, d, rho, b),
        "apddp_step": lambda b: solver_ddp.solve_apddp(prob, x0, i0, (X, U), m, 1, d, rho, b),
        "asddp_backward": lambda b: (back_as() if b == "auto"
                                     else solver_ddp.backward_pass(prob, X, U, W, P, d)),
        "apddp_backward": lambda b: (back_ap() if b == "auto"
                                     else solver_ddp.backward_pass(prob, X, U, wbar, ones, d)),
        "sgdm_step": lambda b: solver_sgdm.solve(sprob, x0, i0, (U, V), omegas, m, cfg.sgdm, b),
    }
    backends = ["python"] + (["auto"] if kernels.HAVE_COMPILED else [])
    out: dict = {"compiled_available": kernels.HAVE_COMPILED, "repeats": repeats, "ms": {}}
    for name, fn in cases.items():
        row = {}
        for b in backends:
            reps = max(3, repeats // 10) if (b == "python" and name == "sgdm_step") else repeats
            row["compiled" if b == "auto" else "python"] = _median_ms(lambda: fn(b), reps)
        if "compiled" in row:
            row["speedup"] = row["python"] / row["compiled"]
        out["ms"][name] = row
    for b in ("python", "compiled"):
        if b in out["ms"]["asddp_backward"]:
            out[f"backward_ratio_{b}"] = (out["ms"]["asddp_backward"][b]
                                          / out["ms"]["apddp_backward"][b])
    return out
