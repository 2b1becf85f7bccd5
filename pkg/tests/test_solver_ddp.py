import numpy as np
import pytest

from oracles import ToyProblem, enumerate_expected_cost, lq_batch_optimum
from hhvems import solver_ddp
from hhvems.cost import Box
from hhvems.driver_model import DemandGrid, MarkovModel
from hhvems.params import Config
from hhvems.problems import HHVProblem, random_lq


def single_level(w):
    return MarkovModel(np.ones((1, 1)), grid=DemandGrid(np.array([w])))


@pytest.mark.parametrize("seed", range(10))
def test_lq_one_sweep_is_optimal(seed):
    rng = np.random.default_rng(seed)
    prob = random_lq(rng, nx=int(rng.integers(2, 6)), nu=int(rng.integers(1, 3)))
    N = 8
    x0 = rng.standard_normal(prob.nx)
    w = 0.7
    Xo, Uo = lq_batch_optimum(prob, x0, np.full(N, w))
    warm = (None, rng.standard_normal((N, prob.nu)))
    m = single_level(w)
    for res in (solver_ddp.solve_asddp(prob, x0, 0, warm, m),
                solver_ddp.solve_apddp(prob, x0, 0, warm, m),
                solver_ddp.solve_ddp_oracle(prob, x0, np.full(N, w), warm)):
        np.testing.assert_allclose(res.U, Uo, atol=1e-8)
        np.testing.assert_allclose(res.X, Xo, atol=1e-8)


def test_oracle_time_varying_demand(rng):
    prob = random_lq(rng)
    w = rng.standard_normal(10)
    x0 = rng.standard_normal(prob.nx)
    Xo, Uo = lq_batch_optimum(prob, x0, w)
    res = solver_ddp.solve_ddp_oracle(prob, x0, w, (None, np.zeros((10, prob.nu))))
    np.testing.assert_allclose(res.U, Uo, atol=1e-8)


def test_value_function_matches_cost_to_go(rng):
    prob = random_lq(rng)
    N, x0 = 6, rng.standard_normal(prob.nx)
    Xo, Uo = lq_batch_optimum(prob, x0, np.zeros(N))
    W, P = np.zeros((N, 1)), np.ones((N, 1))
    stages = solver_ddp.backward_pass(prob, Xo, Uo, W, P)
    # at the optimum the stage-0 control gradient vanishes
    assert np.max(np.abs(stages[0].Qu)) < 1e-9


def test_apddp_uses_mean_path():
    m = MarkovModel.gaussian()
    W, P = solver_ddp.outcome_tables(m, 14, 5)
    assert W.shape == P.shape == (5, 19)
    assert P[0, 14] == 1.0
    np.testing.assert_allclose(P.sum(axis=1), 1.0)


def test_box_constraints_respected(rng):
    prob = random_lq(rng, nx=3, nu=2)
    prob.lo, prob.hi = np.array([-0.1, -0.1]), np.array([0.1, 0.1])
    x0 = 5 * rng.standard_normal(3)
    res = solver_ddp.solve_asddp(prob, x0, 0, (None, np.zeros((8, 2))), single_level(0.0))
    assert np.all(res.U <= 0.1 + 1e-12) and np.all(res.U >= -0.1 - 1e-12)


def test_toy_sweeps_do_not_increase_cost():
    rng = np.random.default_rng(3)
    P = rng.random((3, 3))
    P /= P.sum(axis=1, keepdims=True)
    lv = np.array([-0.5, 0.0, 0.5])
    m = MarkovModel(P, grid=DemandGrid(lv))
    prob, x0 = ToyProblem(), np.zeros(2)
    costs = [enumerate_expected_cost(prob, x0, solver_ddp.solve_asddp(
        prob, x0, 1, (None, np.zeros((4, 1))), m, iters=k).U[:, 0], P, lv, 1) for k in range(1, 7)]
    assert np.all(np.diff(costs) <= 1e-9 * costs[0])


def test_hhv_pressure_rows_hold():
    cfg = Config()
    pr = cfg.vehicle
    box = Box.from_config(cfg.ddp, pr, cfg.fuel)
    prob = HHVProblem(pr, cfg.fuel, cfg.cost, box, cfg.sim.dt_model, None, 200e5)
    x0 = np.array([0.0, 10.0, 150.0, 150e5])
    U = np.tile([60.0 / pr.m1, 0.3 * pr.Vp_max / pr.m2], (cfg.sim.N, 1))
    res = solver_ddp.solve_asddp(prob, x0, 9, (None, U), MarkovModel.gaussian(), iters=3,
                                 backend="python")
    assert res.max_slack == 0.0
    assert np.all(res.X[1:, 3] <= box.p_max * (1 + 1e-9))
    assert np.all(res.U[:, 1] >= -1e-9) and np.all(res.U[:, 1] <= box.u2_max + 1e-9)


def test_shift_warm():
    res = solver_ddp.SweepResult(np.arange(10.0).reshape(5, 2), np.arange(8.0).reshape(4, 2))
    X, U = solver_ddp.shift_warm(res)
    np.testing.assert_array_equal(U, [[2, 3], [4, 5], [6, 7], [6, 7]])
    assert X.shape == (5, 2)
