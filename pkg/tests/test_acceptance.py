"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a one-line verdict; the lines are printed together at the
end of the pytest run (see conftest.py). Criteria 9 and 10 run full
closed-loop drives and are marked slow.
"""
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import random_stochastic
from oracles import (ToyProblem, balanced_hhv_instance, box_oracle, directional_agreement,
                     enumerate_expected_cost, fd_grad, lq_batch_optimum, random_search)
from hhvems import kernels, solver_ddp, solver_sgdm
from hhvems.cycles import builtin_cycle
from hhvems.driver_model import (DemandGrid, MarkovModel, learn_step, multi_step,
                                 sample_index_path, stationary)
from hhvems.harness import (RunConfig, experiment_crosstrain, experiment_progression,
                            learn_stats_from_cycle, run_closed_loop, write_log)
from hhvems.params import Config
from hhvems.problems import random_lq
from hhvems.qp import kkt_enumerate, stage_qp
from hhvems.solver_ddp import hessian_floor
from hhvems.terrain import KNOT_OFFSETS, SAMPLE_OFFSETS, ZETA, fit_elevation, grade_at

RESULTS: dict[int, str] = {}


@contextmanager
def criterion(k: int, title: str):
    """Run one criterion body; record PASS/FAIL with whatever it put in `info`."""
    info: dict = {}
    t0 = time.perf_counter()
    try:
        yield info
    except BaseException as exc:
        detail = "; ".join(f"{a}={b}" for a, b in info.items())
        RESULTS[k] = f"[FAIL] {k:2d}. {title}: {detail} ({type(exc).__name__})"
        raise
    detail = "; ".join(f"{a}={b}" for a, b in info.items())
    RESULTS[k] = f"[PASS] {k:2d}. {title}: {detail} ({time.perf_counter() - t0:.1f} s)"


def fmt(x: float) -> str:
    return f"{x:.3g}"


def eig_stationary(P):
    vals, vecs = np.linalg.eig(P.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


def test_c01_markov_laws():
    with criterion(1, "Markov laws") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(1)
        m = MarkovModel.gaussian()
        pairs = rng.integers(0, 19, (100_000, 2))
        worst_row = 0.0
        for k, (i, j) in enumerate(pairs):
            learn_step(m, int(i), int(j))
            if k % 1000 == 999:
                worst_row = max(worst_row, np.max(np.abs(m.P.sum(axis=1) - 1.0)))
        worst_row = max(worst_row, np.max(np.abs(m.P.sum(axis=1) - 1.0)))
        worst_ck = 0.0
        for _ in range(100):
            P = random_stochastic(rng, int(rng.integers(2, 20)))
            a, b = (int(v) for v in rng.integers(1, 13, 2))
            worst_ck = max(worst_ck, np.max(np.abs(multi_step(P, a + b)
                                                   - multi_step(P, a) @ multi_step(P, b))))
        elapsed = time.perf_counter() - t0
        info.update(row_sum_err=fmt(worst_row), ck_err=fmt(worst_ck), runtime_s=f"{elapsed:.2f}")
        assert worst_row <= 1e-12
        assert np.all((m.P >= 0) & (m.P <= 1))
        assert worst_ck <= 1e-12
        assert elapsed < 5.0


def test_c02_estimator_convergence():
    with criterion(2, "Estimator convergence") as info:
        t0 = time.perf_counter()
        Pstar = random_stochastic(np.random.default_rng(2), 19)
        n_seeds, steps, alpha = 200, 20_000, 0.025
        est = np.empty((n_seeds, 19, 19))
        visits = np.empty((n_seeds, 19), dtype=int)
        for s in range(n_seeds):
            rng = np.random.default_rng(1000 + s)
            path = sample_index_path(Pstar, int(rng.integers(19)), rng.random(steps))
            m = MarkovModel(np.full((19, 19), 1 / 19), alpha=alpha)
            for i, j in zip(path[:-1].tolist(), path[1:].tolist()):
                learn_step(m, i, j)
            est[s] = m.P
            visits[s] = np.bincount(path[:-1], minlength=19)
        elapsed = time.perf_counter() - t0
        per_seed = [np.abs(est[s] - Pstar)[visits[s] >= 500].max() for s in range(n_seeds)]
        rows = np.all(visits >= 500, axis=0)
        bias = np.abs(est.mean(axis=0) - Pstar)[rows].max()
        info.update(single_run_max_err=fmt(per_seed[0]),
                    runs_within_0_05=f"{sum(e <= 0.05 for e in per_seed)}/{n_seeds}",
                    mean_err=fmt(bias), runtime_s=f"{elapsed:.1f}")
        assert bias <= 0.01
        assert elapsed < 30.0
        assert max(per_seed) <= 0.05


def test_c03_stationary():
    with criterion(3, "Stationary distribution") as info:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(100):
            P = random_stochastic(rng, int(rng.integers(2, 20)), density=0.5)
            worst = max(worst, np.max(np.abs(stationary(P) - eig_stationary(P))))
        two = np.abs(stationary(np.array([[0.5, 0.5], [1.0, 0.0]])) - [2 / 3, 1 / 3]).max()
        info.update(eig_err=fmt(worst), two_state_err=fmt(two))
        assert worst <= 1e-9
        assert two <= 1e-12


def test_c04_gradient():
    with criterion(4, "SGDM gradient") as info:
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            prob = random_lq(rng, terminal=False)
            U = rng.standard_normal((8, prob.nu))
            w = rng.standard_normal(8)
            x0 = rng.standard_normal(prob.nx)
            g, _ = solver_sgdm.gradient(prob, U, w, x0)
            G = fd_grad(prob, U, w, x0)
            worst = max(worst, np.linalg.norm(g - G) / np.linalg.norm(G))
        prob, U, x0, w, _ = balanced_hhv_instance(0)
        err, per = directional_agreement(prob, U, w, x0, np.random.default_rng(4), ndir=100)
        info.update(lq_rel_err=fmt(worst), hhv_dir_err=fmt(err),
                    hhv_median_per_dir=fmt(float(np.median(per))))
        assert worst <= 1e-6
        assert err <= 0.05


def test_c05_lq_equivalence():
    with criterion(5, "LQ equivalence") as info:
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(500 + seed)
            prob = random_lq(rng, nx=int(rng.integers(2, 6)), nu=int(rng.integers(1, 3)))
            N = int(rng.integers(4, 13))
            x0 = rng.standard_normal(prob.nx)
            wv = float(rng.standard_normal())
            Xo, Uo = lq_batch_optimum(prob, x0, np.full(N, wv))
            warm = (None, rng.standard_normal((N, prob.nu)))
            m = MarkovModel(np.ones((1, 1)), grid=DemandGrid(np.array([wv])))
            for res in (solver_ddp.solve_asddp(prob, x0, 0, warm, m),
                        solver_ddp.solve_apddp(prob, x0, 0, warm, m),
                        solver_ddp.solve_ddp_oracle(prob, x0, np.full(N, wv), warm)):
                worst = max(worst, np.abs(res.U - Uo).max(), np.abs(res.X - Xo).max())
        info.update(max_err=fmt(worst))
        assert worst <= 1e-8


def test_c06_toy_stochastic_optimality():
    with criterion(6, "Toy stochastic optimality") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(3)
        P = rng.random((3, 3))
        P /= P.sum(axis=1, keepdims=True)
        lv = np.array([-0.5, 0.0, 0.5])
        m = MarkovModel(P, grid=DemandGrid(lv))
        prob, x0, N, i0 = ToyProblem(), np.zeros(2), 4, 1
        costs = []
        for k in range(1, 9):
            U = solver_ddp.solve_asddp(prob, x0, i0, (None, np.zeros((N, 1))), m, iters=k).U
            costs.append(float(enumerate_expected_cost(prob, x0, U[:, 0], P, lv, i0)))
        best = random_search(prob, x0, P, lv, i0, N, np.random.default_rng(6))
        elapsed = time.perf_counter() - t0
        gap = costs[-1] / best - 1
        info.update(asddp=f"{costs[-1]:.8f}", search=f"{best:.8f}", gap=f"{100 * gap:.4f}%",
                    max_increase=fmt(max(np.diff(costs).max(), 0.0)), runtime_s=f"{elapsed:.1f}")
        assert gap <= 0.02
        # nonincreasing up to round-off in the expected cost
        assert np.all(np.diff(costs) <= 1e-9 * costs[0])
        assert elapsed < 60.0


def test_c07_qp():
    with criterion(7, "QP subproblem") as info:
        rng = np.random.default_rng(7)
        worst_box = worst_kkt = 0.0
        for _ in range(10_000):
            M = rng.standard_normal((2, 2))
            H = M @ M.T + 0.05 * np.eye(2)
            q = 3 * rng.standard_normal(2)
            lo = rng.uniform(-2, 0.5, 2)
            hi = lo + rng.uniform(0.01, 3, 2)
            D, c = np.vstack([np.eye(2), -np.eye(2)]), np.concatenate([hi, -lo])
            z = stage_qp(H, q, D, c)
            worst_box = max(worst_box, np.abs(z - box_oracle(H, q, lo, hi)).max())
            worst_kkt = max(worst_kkt, np.abs(z - kkt_enumerate(H, q, D, c)).max())
        delta, lam = 0.003, np.inf
        for _ in range(10_000):
            M = rng.standard_normal((2, 2)) * 10.0 ** rng.uniform(-4, 3)
            lam = min(lam, np.linalg.eigvalsh(hessian_floor(M + M.T, delta))[0])
        info.update(box_err=fmt(worst_box), kkt_err=fmt(worst_kkt), min_eig=fmt(lam))
        assert worst_box <= 1e-8 and worst_kkt <= 1e-8
        assert lam >= delta * (1 - 1e-12)


def test_c08_grade_fit():
    with criterion(8, "Grade fitting") as info:
        grid_ok = (np.allclose(np.diff(SAMPLE_OFFSETS), 20.0)
                   and np.allclose(np.diff(KNOT_OFFSETS), 40.0) and ZETA == 7.5e-5)
        gm = fit_elevation(SAMPLE_OFFSETS, 100.0 + 0.05 * SAMPLE_OFFSETS)
        # controller look-ahead queries lie in 0..290 m
        ell = np.linspace(0.0, 290.0, 59)
        slope_err = np.degrees(np.abs(grade_at(gm, ell) - math.atan(0.05))).max()
        span_err = np.degrees(np.abs(grade_at(gm, np.linspace(-20.0, 300.0, 65))
                                     - math.atan(0.05))).max()
        rng = np.random.default_rng(8)
        gm = fit_elevation(SAMPLE_OFFSETS, np.cumsum(rng.normal(0, 0.5, SAMPLE_OFFSETS.size)))
        h, fd_err = 1e-3, 0.0
        for e in rng.uniform(-10, 290, 200):
            fd = (gm.elevation(e + h) - gm.elevation(e - h)) / (2 * h)
            fd_err = max(fd_err, abs(grade_at(gm, e) - math.asin(fd)))
        info.update(grid_ok=grid_ok, slope_err_deg=fmt(slope_err),
                    full_span_err_deg=fmt(span_err), fd_err=fmt(fd_err))
        assert grid_ok
        assert slope_err <= 0.1
        assert fd_err <= 1e-6


@pytest.mark.slow
def test_c09_closed_loop_ordering():
    with criterion(9, "Closed-loop ordering") as info:
        t0 = time.perf_counter()
        rc = RunConfig(builtin_cycle("udds"), "ddp", Config(), max_time=400.0)
        fuel, track = {}, {}
        for algo in ("ddp", "instopt"):
            r = run_closed_loop(RunConfig(rc.cycle, algo, rc.config, max_time=rc.max_time))
            fuel[algo], track[algo] = r.metrics.fuel_g, r.metrics.tracking_m_per_km
        for algo in ("asddp", "sgdm", "apddp"):
            runs = experiment_progression(RunConfig(rc.cycle, algo, rc.config,
                                                    max_time=rc.max_time), 4)
            fuel[algo], track[algo] = runs[3].fuel_g, runs[3].tracking_m_per_km
        elapsed = time.perf_counter() - t0
        info.update(fuel_g="/".join(f"{a}:{fuel[a]:.1f}" for a in fuel),
                    tracking="/".join(f"{a}:{track[a]:.2f}" for a in track),
                    runtime_s=f"{elapsed:.0f}")
        assert fuel["ddp"] <= fuel["asddp"] <= fuel["instopt"]
        assert fuel["sgdm"] <= fuel["instopt"]
        assert all(track[a] <= 4.0 for a in ("asddp", "sgdm", "apddp"))
        assert elapsed < 600.0


@pytest.mark.slow
def test_c10_learning_effect():
    with criterion(10, "Learning effect") as info:
        t0 = time.perf_counter()
        cfg = Config()
        source = learn_stats_from_cycle(builtin_cycle("us06"), cfg)
        out = {}
        for algo in ("asddp", "apddp"):
            runs = experiment_crosstrain(RunConfig(builtin_cycle("udds"), algo, cfg,
                                                   max_time=400.0), source, 4)
            out[algo] = (runs[0].fuel_g, runs[3].fuel_g)
        elapsed = time.perf_counter() - t0
        info.update(**{a: f"{f0:.1f}->{f3:.1f}" for a, (f0, f3) in out.items()},
                    runtime_s=f"{elapsed:.0f}")
        assert all(f3 < f0 for f0, f3 in out.values())
        assert elapsed < 900.0


def test_c11_realtime_headroom():
    from hhvems.bench import bench_case

    with criterion(11, "Real-time headroom") as info:
        cfg, prob, x0, i0, m, U = bench_case()
        d, rho = cfg.ddp.delta, cfg.ddp.slack_weight
        W, P = solver_ddp.outcome_tables(m, i0, U.shape[0])
        assert W.shape == (12, 19)
        X = solver_ddp.expected_rollout(prob, x0, U, W, P)

        def median_ms(fn, reps=30):
            fn()
            ts = []
            for _ in range(reps):
                t = time.perf_counter()
                fn()
                ts.append(time.perf_counter() - t)
            return 1e3 * float(np.median(ts))

        step = median_ms(lambda: solver_ddp.solve_asddp(prob, x0, i0, (X, U), m, 1, d, rho))
        wbar = (P * W).sum(axis=1, keepdims=True)
        if kernels.HAVE_COMPILED:
            fa = kernels.backward_call(prob, X, U, W, P, d)
            fp = kernels.backward_call(prob, X, U, wbar, np.ones_like(wbar), d)
        else:
            fa = lambda: solver_ddp.backward_pass(prob, X, U, W, P, d)
            fp = lambda: solver_ddp.backward_pass(prob, X, U, wbar, np.ones_like(wbar), d)
        ratio = median_ms(fa, 200) / median_ms(fp, 200)
        info.update(compiled=kernels.HAVE_COMPILED, asddp_step_ms=f"{step:.2f}",
                    backward_ratio=f"{ratio:.1f}")
        assert step <= 100.0
        assert ratio >= 5.0


def test_c12_determinism(tmp_path):
    with criterion(12, "Determinism") as info:
        trace = builtin_cycle("udds").truncate(60.0)
        same = {}
        for algo in ("asddp", "sgdm"):
            blobs = []
            for k in range(2):
                res = run_closed_loop(RunConfig(trace, algo, seed=11))
                path = tmp_path / f"{algo}_{k}.csv"
                write_log(res.log, path)
                blobs.append(path.read_bytes())
            same[algo] = blobs[0] == blobs[1]
        info.update(**{a: "identical" if v else "differ" for a, v in same.items()})
        assert all(same.values())
