"""Backend selection for the hot loops.

The compiled extension `_core` specialises the DDP sweep and the SGDM solve
to the hybrid-vehicle problem. When it is missing (or HHVEMS_PURE_PYTHON=1)
the generic numpy solvers are used instead.
"""
from __future__ import annotations

import os

import numpy as np

try:
    if os.environ.get("HHVEMS_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("compiled core disabled by environment")
    from . import _core
except ImportError:  # pragma: no cover - exercised when the build is absent
    _core = None

HAVE_COMPILED = _core is not None
BACKEND = "compiled" if HAVE_COMPILED else "python"


def supports(problem) -> bool:
    from .problems import HHVProblem
    return HAVE_COMPILED and type(problem) is HHVProblem


def pack(problem) -> tuple[np.ndarray, np.ndarray]:
    """Flatten problem parameters and the grade model for the compiled core."""
    from .control_model import pressure_gain
    pr, fm, wt, box = problem.pr, problem.fm, problem.weights, problem.box
    pl, ml = pr.pump_loss, pr.motor_loss
    vals = [
        pr.m_veh, pr.C_d, pr.C_r, pr.rho_air, pr.g, pr.r_tire, pr.k1, pr.k2_lo, pr.k2_hi,
        pr.v_hi_switch, pr.I_eng, pr.Vm_max, pr.p_floor,
        pl.mu0, pl.mu1, pl.mu2, pl.kap1, pl.kap2,
        ml.mu0, ml.mu1, ml.mu2, ml.kap1, ml.kap2,
        pr.V_ha, pr.p_ha, pr.gamma_gas, pr.p_lp, pr.V_L / pr.K_L, pr.m1, pr.m2,
        fm.c0, fm.c1, fm.c11, fm.c2, fm.c3, fm.t0, fm.t1, fm.t2, fm.P_max,
        wt.K1, wt.K2, wt.K3, wt.b0, wt.b1, wt.b2,
        box.n_min, box.n_max, box.p_min, box.p_max, box.u1_min, box.u1_max, box.u2_min,
        box.u2_max, problem.p_set, problem.dt, pressure_gain(pr),
        1.0 if problem.cost.use_penalty else 0.0,
    ]
    prm = np.asarray(vals, dtype=float)
    g = problem.grade
    if g is None or g.is_flat:
        ga = np.zeros(4)
    else:
        ga = g.arrays()
    return prm, ga


def ddp_sweep(problem, x0, Xhat, Uhat, Wb, Pb, Wf, Pf, delta, rho):
    prm, ga = pack(problem)
    Wb = np.ascontiguousarray(np.atleast_2d(Wb), dtype=float)
    Pb = np.ascontiguousarray(np.atleast_2d(Pb), dtype=float)
    Wf = np.ascontiguousarray(np.atleast_2d(Wf), dtype=float)
    Pf = np.ascontiguousarray(np.atleast_2d(Pf), dtype=float)
    return _core.ddp_sweep(prm, ga, np.asarray(x0, dtype=float),
                           np.ascontiguousarray(Xhat, dtype=float),
                           np.ascontiguousarray(Uhat, dtype=float), Wb, Pb, Wf, Pf,
                           float(delta), float(rho))


def backward_call(problem, Xhat, Uhat, Wb, Pb, delta):
    """Pack once and return a zero-argument callable running only the compiled
    backward pass (it returns the stage Quu, Qu, Qux blocks). Used for timing."""
    prm, ga = pack(problem)
    Wb = np.ascontiguousarray(np.atleast_2d(Wb), dtype=float)
    Pb = np.ascontiguousarray(np.atleast_2d(Pb), dtype=float)
    Xhat = np.ascontiguousarray(Xhat, dtype=float)
    Uhat = np.ascontiguousarray(Uhat, dtype=float)
    x0 = Xhat[0].copy()
    return lambda: _core.ddp_sweep(prm, ga, x0, Xhat, Uhat, Wb, Pb, Wb, Pb, float(delta), 0.0,
                                   False)


def sgdm_solve(problem, x0, i0, U, V, omegas, P, levels, cfg):
    prm, ga = pack(problem)
    return _core.sgdm_solve(prm, ga, np.asarray(x0, dtype=float), int(i0),
                            np.ascontiguousarray(U, dtype=float),
                            np.ascontiguousarray(V, dtype=float),
                            np.ascontiguousarray(omegas, dtype=float),
                            np.ascontiguousarray(P, dtype=float),
                            np.ascontiguousarray(levels, dtype=float),
                            int(cfg.K), float(cfg.gamma0), float(cfg.epsilon), float(cfg.mu),
                            int(cfg.warmup))


def model_step(problem, x, u, w):
    """Single compiled step with Jacobians (used by equivalence tests)."""
    prm, ga = pack(problem)
    return _core.model_step(prm, ga, np.asarray(x, dtype=float), np.asarray(u, dtype=float),
                            float(w))
