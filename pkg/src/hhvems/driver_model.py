"""Markov-chain model of the driver's acceleration demand."""
from __future__ import annotations

import json
from bisect import bisect_left
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_LEVELS = 19
W_MIN, W_MAX = -3.0, 3.0


@dataclass(frozen=True)
class DemandGrid:
    levels: np.ndarray = field(default_factory=lambda: np.linspace(W_MIN, W_MAX, N_LEVELS))

    @property
    def step(self) -> float:
        return float(self.levels[1] - self.levels[0])

    def __len__(self) -> int:
        return self.levels.size


GRID = DemandGrid()


def quantize(w: float, grid: DemandGrid = GRID) -> int:
    """0-based index of the nearest level; ties go to the level nearer zero."""
    if not math.isfinite(w):
        raise ValueError("demand must be finite")
    lv = grid.levels
    if w <= lv[0]:
        return 0
    if w >= lv[-1]:
        return lv.size - 1
    x = (w - lv[0]) / grid.step
    lo = int(math.floor(x))
    frac = x - lo
    if frac > 0.5 + 1e-9:
        return lo + 1
    if frac < 0.5 - 1e-9:
        return lo
    return lo if abs(lv[lo]) <= abs(lv[lo + 1]) else lo + 1


def observe_demand(F_cmd: float, v: float, phi: float, pr) -> float:
    """Acceleration implied by a propulsion force command."""
    resist = 0.5 * pr.C_d * pr.rho_air * v * v + pr.m_veh * pr.g * (
        pr.C_r * math.cos(phi) + math.sin(phi)
    )
    return (F_cmd - resist) / pr.m_veh


def gaussian_rows(n: int = N_LEVELS, sigma_steps: float = 2.0) -> np.ndarray:
    """Initial transition matrix: discretized normal centred on the diagonal."""
    idx = np.arange(n)
    P = np.exp(-0.5 * ((idx[None, :] - idx[:, None]) / sigma_steps) ** 2)
    return P / P.sum(axis=1, keepdims=True)


class MarkovModel:
    """Row-stochastic transition matrix with an exponential-forgetting learner."""

    def __init__(self, P: np.ndarray, alpha: float = 0.025, grid: DemandGrid = GRID,
                 which: str = "low"):
        P = np.array(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        if np.any(P < 0) or np.any(P > 1) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("P must be row-stochastic")
        if not 0.0 <= alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        self.P = P
        self.alpha = float(alpha)
        self.grid = grid if len(grid) == P.shape[0] else DemandGrid(
            np.linspace(W_MIN, W_MAX, P.shape[0]))
        self.which = which

    @classmethod
    def gaussian(cls, alpha: float = 0.025, sigma_steps: float = 2.0, which: str = "low"):
        return cls(gaussian_rows(N_LEVELS, sigma_steps), alpha, GRID, which)

    @property
    def size(self) -> int:
        return self.P.shape[0]

    def copy(self) -> "MarkovModel":
        return MarkovModel(self.P.copy(), self.alpha, self.grid, self.which)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "grid": self.grid.levels.tolist(),
            "P": self.P.tolist(),
            "which": self.which,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarkovModel":
        P = np.asarray(d["P"], dtype=float)
        if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("stored transition matrix rows do not sum to 1")
        return cls(P, d["alpha"], DemandGrid(np.asarray(d["grid"], dtype=float)),
                   d.get("which", "low"))


def learn_step(m: MarkovModel, i_prev: int, i_next: int) -> MarkovModel:
    """First-order filter on row i_prev toward the observed transition (in place)."""
    a = m.alpha
    row = m.P[i_prev]
    row *= 1.0 - a
    row[i_next] += a
    # Rounding drift is confined to the updated row; fold it into the entry just raised
    # (or the largest one if that entry is too small to absorb it).
    drift = 1.0 - row.sum()
    if drift != 0.0:
        k = i_next if row[i_next] > abs(drift) else int(np.argmax(row))
        row[k] += drift
    return m


def multi_step(m: MarkovModel | np.ndarray, n: int) -> np.ndarray:
    P = m.P if isinstance(m, MarkovModel) else np.asarray(m, dtype=float)
    if n < 0:
        raise ValueError("n must be non-negative")
    return np.linalg.matrix_power(P, n)


def multi_step_rows(m: MarkovModel, i0: int, N: int) -> np.ndarray:
    """Rows i0 of P^(0)..P^(N), shape (N+1, size)."""
    out = np.empty((N + 1, m.size))
    row = np.zeros(m.size)
    row[i0] = 1.0
    for n in range(N + 1):
        out[n] = row
        row = row @ m.P
    return out


def is_primitive(P: np.ndarray) -> bool:
    """Irreducible and aperiodic: some power is strictly positive (Wielandt bound)."""
    n = P.shape[0]
    A = (P > 0).astype(np.int64)
    bound = (n - 1) ** 2 + 1
    power = 1
    while power < bound:
        A = (A @ A > 0).astype(np.int64)
        power *= 2
    return bool(np.all(A > 0))


def stationary(m: MarkovModel | np.ndarray, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Long-run occupation fractions, the common row of lim P^(n)."""
    P = m.P if isinstance(m, MarkovModel) else np.asarray(m, dtype=float)
    if not is_primitive(P):
        raise ValueError("chain is reducible or periodic; no unique stationary distribution")
    Q = P.copy()
    it = 0
    # Repeated squaring: Q = P^(2^k) until every row agrees.
    while np.max(Q.max(axis=0) - Q.min(axis=0)) > tol * 1e-2:
        Q = Q @ Q
        it += 1
        if it > 64:
            break
    nu = Q.mean(axis=0)
    nu /= nu.sum()
    for _ in range(max_iter):
        nxt = nu @ P
        nxt /= nxt.sum()
        done = np.max(np.abs(nxt - nu)) <= tol * 1e-3
        nu = nxt
        if done:
            break
    return nu


def demand_moments(m: MarkovModel, i0: int, N: int) -> tuple[np.ndarray, np.ndarray]:
    rows = multi_step_rows(m, i0, N)
    w = m.grid.levels
    mean = rows @ w
    var = np.maximum(rows @ (w * w) - mean * mean, 0.0)
    return mean, var


def accel_setpoint(m: MarkovModel, alpha_w: float = 1.0, beta_w: float = 1.25,
                   nu: np.ndarray | None = None) -> float:
    """alpha*mean + beta*std of the stationary demand restricted to w >= 0."""
    if nu is None:
        nu = stationary(m)
    w = m.grid.levels
    pos = w >= 0
    mass = nu[pos].sum()
    if mass <= 0:
        raise ValueError("no stationary mass on non-negative demands")
    q = nu[pos] / mass
    ave = float(q @ w[pos])
    std = math.sqrt(max(float(q @ (w[pos] - ave) ** 2), 0.0))
    return alpha_w * ave + beta_w * std


@dataclass(frozen=True)
class RandomStreams:
    """K fixed sequences of N-1 uniforms, regenerated bit-identically from seed."""

    K: int
    N: int
    seed: int = 0

    @property
    def omegas(self) -> np.ndarray:
        return _streams(self.K, self.N, self.seed)


_STREAM_CACHE: dict = {}


def _streams(K: int, N: int, seed: int) -> np.ndarray:
    key = (K, N, seed)
    if key not in _STREAM_CACHE:
        arr = np.random.default_rng(seed).random((K, max(N - 1, 0)))
        arr.setflags(write=False)
        _STREAM_CACHE[key] = arr
    return _STREAM_CACHE[key]


def sample_index_path(P: np.ndarray, i0: int, omegas: np.ndarray) -> np.ndarray:
    """Index path by CDF inversion: pick j with cdf[j-1] < omega <= cdf[j]."""
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0
    rows = cdf.tolist()
    last = P.shape[0] - 1
    out = [int(i0)]
    i = int(i0)
    for om in np.asarray(omegas, dtype=float).ravel().tolist():
        i = min(bisect_left(rows[i], om), last)
        out.append(i)
    return np.array(out, dtype=np.int64)


def sample_path(m: MarkovModel, i0: int, omegas: np.ndarray) -> np.ndarray:
    return m.grid.levels[sample_index_path(m.P, i0, np.asarray(omegas))]


class DualSpeedModel:
    """Low-speed and high-speed chains switched at v_switch."""

    def __init__(self, low: MarkovModel, high: MarkovModel, v_switch: float = 10.0):
        if v_switch <= 0:
            raise ValueError("v_switch must be positive")
        self.low = low
        self.high = high
        self.v_switch = float(v_switch)
        self.low.which, self.high.which = "low", "high"

    @classmethod
    def gaussian(cls, alpha: float = 0.025, sigma_steps: float = 2.0, v_switch: float = 10.0):
        return cls(MarkovModel.gaussian(alpha, sigma_steps, "low"),
                   MarkovModel.gaussian(alpha, sigma_steps, "high"), v_switch)

    def active(self, v: float) -> MarkovModel:
        return self.low if v < self.v_switch else self.high

    def copy(self) -> "DualSpeedModel":
        return DualSpeedModel(self.low.copy(), self.high.copy(), self.v_switch)

    def save(self, path: str | Path) -> None:
        models = []
        for m in (self.low, self.high):
            d = m.to_dict()
            d["v_switch"] = self.v_switch
            models.append(d)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"models": models}, fh)

    @classmethod
    def load(cls, path: str | Path) -> "DualSpeedModel":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        entries = data["models"] if "models" in data else [data]
        found = {e.get("which", "low"): e for e in entries}
        if len(found) == 1:
            only = next(iter(found.values()))
            found = {"low": only, "high": only}
        v_switch = float(found["low"].get("v_switch", 10.0))
        return cls(MarkovModel.from_dict(found["low"]), MarkovModel.from_dict(found["high"]),
                   v_switch)


def learn_from_demands(model: DualSpeedModel, w: np.ndarray, v: np.ndarray) -> DualSpeedModel:
    """Feed a 1 Hz sequence of demands; the chain active at the origin speed learns."""
    prev = None
    for wk, vk in zip(w, v):
        i = quantize(float(wk), model.low.grid)
        if prev is not None:
            learn_step(model.active(prev[1]), prev[0], i)
        prev = (i, float(vk))
    return model
