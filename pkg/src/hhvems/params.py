"""Parameter containers and the JSON configuration loader.

Every physical quantity is SI: shaft speeds in rad/s, displacements in
m^3/rev, pressures in Pa. Torque from a unit is p*V/(2*pi), flow n*V/(2*pi).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

BAR = 1e5
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class LossCoeffs:
    """Polynomial loss model of one hydraulic unit.

    Torque loss  M = mu0 + mu1*p + mu2*|n|      [N m]
    Flow loss    Q = kap1*p + kap2*p*|V|        [m^3/s]
    """

    mu0: float = 1.0
    mu1: float = 2.4e-7
    mu2: float = 0.01
    kap1: float = 2.0e-13
    kap2: float = 5.0e-8

    def scaled(self, factor: float) -> "LossCoeffs":
        return LossCoeffs(*(factor * getattr(self, f.name) for f in fields(self)))


@dataclass(frozen=True)
class VehicleParams:
    m_veh: float = 2091.0
    C_d: float = 1.62          # drag coefficient times frontal area, m^2
    C_r: float = 0.01
    rho_air: float = 1.2
    g: float = 9.81
    r_tire: float = 0.35
    k1: float = 1.0
    k2_lo: float = 10.0
    k2_hi: float = 6.67
    v_hi_switch: float = 20.0
    I_eng: float = 0.5
    Vp_max: float = 63e-6
    Vm_max: float = 50e-6
    Fp_max: float = 6500.0
    v_max: float = 125.0 / 3.6
    p_max: float = 350 * BAR
    p_floor: float = 5 * BAR
    pump_loss: LossCoeffs = field(default_factory=LossCoeffs)
    motor_loss: LossCoeffs = field(default_factory=LossCoeffs)
    V_ha: float = 0.05
    p_ha: float = 70 * BAR
    gamma_gas: float = 1.4
    p_lp: float = 10 * BAR
    V_L: float = 2e-3
    K_L: float = 1.5e9
    m1: float = 0.5
    m2: float = 1e-7

    def k2(self, v: float) -> float:
        return self.k2_lo if v < self.v_hi_switch else self.k2_hi


@dataclass(frozen=True)
class FuelMap:
    """b_f = c0 + c1 n + c11 n^2 + c2 n T + c3 T^2 [g/s], n in rad/s, T in N m.

    The max-torque curve is min(t0 + t1 n + t2 n^2, P_max / n).
    """

    c0: float = 0.1
    c1: float = 8e-4
    c11: float = 3e-6
    c2: float = 5.7e-5
    c3: float = 2.5e-6
    t0: float = 160.0
    t1: float = 0.8
    t2: float = -0.0012
    P_max: float = 125e3
    n_max: float = 5000 * TWO_PI / 60
    n_idle: float = 80.0


@dataclass(frozen=True)
class EngineParams:
    R: float = 287.0
    T_im: float = 300.0
    eta_v: float = 0.85
    eta_t: float = 0.42
    V_d: float = 3.0e-3
    V_im: float = 3.5e-3
    AFR: float = 14.6
    Q_lhv: float = 44e6
    p_amb: float = 101325.0
    thr_kp: float = 3e-4
    thr_ki: float = 3e-3
    W_max: float = 0.2


@dataclass(frozen=True)
class CostWeights:
    K1: float = 0.01
    K2: float = 50.0
    K3: float = 1e-11
    b0: float = 0.01
    b1: float = 0.01
    b2: float = 0.01
    alpha_w: float = 1.0
    beta_w: float = 1.25
    apddp_inflation: float = 1.5

    def inflated(self) -> "CostWeights":
        f = self.apddp_inflation
        return replace(self, K3=f * self.K3, alpha_w=f * self.alpha_w, beta_w=f * self.beta_w)


@dataclass(frozen=True)
class SgdmConfig:
    K: int = 200
    gamma0: float = 0.2
    epsilon: float = 0.1
    mu: float = 0.95
    warmup: int = 50
    seed: int = 0


@dataclass(frozen=True)
class DdpConfig:
    delta: float = 0.003
    iters: int = 1
    n_min: float = 80.0
    n_max: float = 524.0
    p_min: float = 20 * BAR
    p_max: float = 350 * BAR
    slack_weight: float = 1e6


@dataclass(frozen=True)
class InstOptConfig:
    p_ref0: float = 150 * BAR
    eps: float = 5 * BAR
    raise_rate: float = 2 * BAR
    decay_rate: float = 1 * BAR
    pump_kp: float = 2e-7          # fraction of Vp_max per Pa
    pump_ki: float = 2e-7
    trim_kp: float = 2e-5          # rad/s per Pa
    trim_ki: float = 2e-5
    speed_kp: float = 2.0          # N m per rad/s
    speed_ki: float = 4.0


@dataclass(frozen=True)
class DriverConfig:
    kp: float = 8000.0
    ki: float = 3000.0
    alpha: float = 0.025
    sigma_steps: float = 2.0
    v_switch: float = 10.0
    learn_dt: float = 1.0


@dataclass(frozen=True)
class SimConfig:
    Ts: float = 0.1
    dt_fine: float = 0.01
    dt_model: float = 1.0
    N: int = 12
    loss_perturbation: float = 0.1
    speed_interp: bool = False


@dataclass(frozen=True)
class Config:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    fuel: FuelMap = field(default_factory=FuelMap)
    engine: EngineParams = field(default_factory=EngineParams)
    cost: CostWeights = field(default_factory=CostWeights)
    sgdm: SgdmConfig = field(default_factory=SgdmConfig)
    ddp: DdpConfig = field(default_factory=DdpConfig)
    instopt: InstOptConfig = field(default_factory=InstOptConfig)
    driver: DriverConfig = field(default_factory=DriverConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: dict[str, Any]):
    """Instantiate a (possibly nested) dataclass, rejecting unknown keys."""
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value)
        elif isinstance(current, bool):
            kwargs[name] = bool(value)
        elif isinstance(current, int):
            kwargs[name] = int(value)
        else:
            kwargs[name] = float(value)
    return cls(**kwargs)


def config_from_dict(data: dict[str, Any]) -> Config:
    return _build(Config, data)


def load_config(path: str | Path | None = None) -> Config:
    """Read a JSON config; missing keys fall back to the shipped defaults."""
    if path is None:
        return Config()
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def save_config(cfg: Config, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")


def defaults_path() -> Path:
    return Path(__file__).parent / "data" / "defaults.json"
