import math

import numpy as np
import pytest

from hhvems.params import BAR, TWO_PI, Config
from hhvems.plant import (Plant, PlantFault, PlantState, cylinder_torque, equilibrium_state,
                          manifold_pressure_for, throttle_pi)

CFG = Config()


@pytest.fixture
def plant():
    return Plant.with_perturbation(CFG.vehicle, CFG.fuel, CFG.engine, 0.1)


def test_perturbation_scales_losses(plant):
    base = CFG.vehicle.pump_loss
    assert plant.pr.pump_loss.mu1 == pytest.approx(1.1 * base.mu1)
    assert plant.pr.motor_loss.kap2 == pytest.approx(1.1 * CFG.vehicle.motor_loss.kap2)


def test_manifold_inverse():
    ep = CFG.engine
    assert cylinder_torque(manifold_pressure_for(123.0, ep), ep) == pytest.approx(123.0)


def test_throttle_limits():
    ep = CFG.engine
    assert throttle_pi(0.0, 100.0, 0.0, ep) == 0.0
    assert throttle_pi(1e6, 0.0, 0.0, ep) == ep.W_max


def test_equilibrium_holds(plant):
    ps = equilibrium_state(plant, v=0.0, n=100.0, p=150 * BAR)
    T = plant.torque(ps)
    for _ in range(200):
        ps = plant.step(ps, T, 0.0, 0.0, 0.0)
    assert ps.n_eng == pytest.approx(100.0, rel=1e-3)
    assert ps.v == 0.0


def test_energy_balance_coasting(plant):
    """At zero displacement the vehicle decelerates by drag, rolling resistance
    and the motor's own friction torque."""
    pr = plant.pr
    ps = PlantState(0.0, 20.0, 100.0, 150 * BAR, 5e4, 0.0)
    v0 = ps.v
    for _ in range(100):
        ps = plant.step(ps, 0.0, 0.0, 0.0, 0.0)
    v = 0.5 * (v0 + ps.v)
    ml, k2 = pr.motor_loss, pr.k2(v)
    friction = (ml.mu0 + ml.mu1 * ps.p + ml.mu2 * k2 * v / pr.r_tire) * k2 / pr.r_tire
    decel = (0.5 * pr.C_d * pr.rho_air * v ** 2 + friction) / pr.m_veh + pr.g * pr.C_r
    assert (v0 - ps.v) == pytest.approx(decel * 1.0, rel=0.01)


def test_pump_charges_and_relief_caps(plant):
    ps = equilibrium_state(plant, n=300.0, p=340 * BAR, T=250.0)
    for _ in range(500):
        ps = plant.step(ps, 250.0, plant.pr.Vp_max, 0.0, 0.0)
    assert ps.p <= plant.pr.p_max


def test_motor_propels(plant):
    ps = equilibrium_state(plant, n=100.0, p=250 * BAR)
    F = plant.propulsion_force(plant.pr.Vm_max, ps.p, 0.0)
    assert F > 0
    nxt = plant.step(ps, plant.torque(ps), 0.0, plant.pr.Vm_max, 0.0)
    assert nxt.v > 0 and nxt.p < ps.p


def test_step_limit(plant):
    with pytest.raises(ValueError):
        plant.step(PlantState(), 0.0, 0.0, 0.0, 0.0, dt=0.02)


def test_fault_on_negative_pressure(plant):
    ps = PlantState(0.0, 20.0, 100.0, 1.0, 5e4, 0.0)
    with pytest.raises(PlantFault):
        for _ in range(100):
            ps = plant.step(ps, 0.0, 0.0, plant.pr.Vm_max, 0.0)


def test_rk4_convergence(plant):
    """Halving the step changes the 1 s state by ~1/16 as much (fourth order)."""
    def run(dt):
        ps = equilibrium_state(plant, v=5.0, n=150.0, p=200 * BAR)
        for _ in range(int(round(1.0 / dt))):
            ps = plant.step(ps, 60.0, 20e-6, 10e-6, 0.02, dt)
        return ps.as_array()
    a, b, c = run(0.01), run(0.005), run(0.0025)
    ratio = np.abs(a - b)[:4] / np.maximum(np.abs(b - c)[:4], 1e-300)
    assert np.all((ratio > 8) | (np.abs(a - b)[:4] < 1e-9 * (1 + np.abs(a[:4]))))
