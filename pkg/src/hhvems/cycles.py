"""Drive-cycle traces, reference interpolation and the virtual driver."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAX_GAP_S = 2.0
_DATA = Path(__file__).parent / "data"


class CycleError(ValueError):
    pass


@dataclass(frozen=True)
class CycleTrace:
    """Time-indexed reference speed with optional elevation."""

    t: np.ndarray
    v_ref: np.ndarray
    elev: np.ndarray | None = None
    name: str = "cycle"

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.v_ref, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise CycleError("t and v_ref must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(t) <= 0):
            raise CycleError("time must be strictly increasing")
        if np.any(v < 0):
            raise CycleError("negative reference speed")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v_ref", v)
        if self.elev is not None:
            e = np.asarray(self.elev, dtype=float)
            if e.shape != t.shape:
                raise CycleError("elevation length mismatch")
            object.__setattr__(self, "elev", e)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def distance(self) -> np.ndarray:
        """Reference distance travelled at each sample (trapezoidal)."""
        seg = 0.5 * (self.v_ref[1:] + self.v_ref[:-1]) * np.diff(self.t)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def truncate(self, t_end: float) -> "CycleTrace":
        keep = self.t <= t_end + 1e-12
        elev = None if self.elev is None else self.elev[keep]
        return CycleTrace(self.t[keep], self.v_ref[keep], elev, self.name)


def load_cycle(path: str | Path) -> CycleTrace:
    """Parse a `t_s,v_ref_mps[,elev_m]` CSV file."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    header = [h.strip() for h in lines[0].split(",")]
    if header[:2] != ["t_s", "v_ref_mps"] or len(header) > 3 or (
        len(header) == 3 and header[2] != "elev_m"
    ):
        raise CycleError(f"{path}:1: bad header {lines[0]!r}")
    has_elev = len(header) == 3
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise CycleError(f"{path}:{lineno}: expected {len(header)} fields")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise CycleError(f"{path}:{lineno}: {exc}") from None
    if len(rows) < 2:
        raise CycleError(f"{path}: fewer than two samples")
    arr = np.array(rows)
    for k in range(1, len(arr)):
        dt = arr[k, 0] - arr[k - 1, 0]
        if dt <= 0:
            raise CycleError(f"{path}:{k + 2}: non-monotone time")
        if dt > MAX_GAP_S:
            raise CycleError(f"{path}:{k + 2}: gap of {dt:g} s exceeds {MAX_GAP_S:g} s")
    bad = np.nonzero(arr[:, 1] < 0)[0]
    if bad.size:
        raise CycleError(f"{path}:{bad[0] + 2}: negative speed")
    return CycleTrace(arr[:, 0], arr[:, 1], arr[:, 2] if has_elev else None, path.stem)


def save_cycle(trace: CycleTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if trace.elev is None:
            fh.write("t_s,v_ref_mps\n")
            for t, v in zip(trace.t, trace.v_ref):
                fh.write(f"{float(t)!r},{float(v)!r}\n")
        else:
            fh.write("t_s,v_ref_mps,elev_m\n")
            for t, v, e in zip(trace.t, trace.v_ref, trace.elev):
                fh.write(f"{float(t)!r},{float(v)!r},{float(e)!r}\n")


def builtin_cycle(name: str) -> CycleTrace:
    """Bundled public EPA traces: 'udds' or 'us06'."""
    path = _DATA / f"{name.lower()}.csv"
    if not path.exists():
        raise CycleError(f"no bundled cycle named {name!r}")
    return load_cycle(path)


def resolve_cycle(source: str) -> CycleTrace:
    """Accept a file path, a bundled cycle name or 'synth[:seed]'."""
    if source.startswith("synth"):
        seed = int(source.split(":", 1)[1]) if ":" in source else 1
        return synth_gps_like_cycle(seed)
    if Path(source).exists():
        return load_cycle(source)
    return builtin_cycle(source)


def reference_at(trace: CycleTrace, t: float) -> tuple[float, float]:
    """Linear interpolation of (v_ref, elevation); elevation 0 when absent."""
    if not (trace.t[0] <= t <= trace.t[-1]):
        raise CycleError(f"t={t} outside [{trace.t[0]}, {trace.t[-1]}]")
    k = int(np.searchsorted(trace.t, t, side="right")) - 1
    k = min(k, trace.t.size - 2)
    t0, t1 = trace.t[k], trace.t[k + 1]
    s = (t - t0) / (t1 - t0)
    v = trace.v_ref[k] + s * (trace.v_ref[k + 1] - trace.v_ref[k])
    if s == 0.0:
        v = trace.v_ref[k]
    elif s == 1.0:
        v = trace.v_ref[k + 1]
    if trace.elev is None:
        return float(v), 0.0
    e = trace.elev[k] + s * (trace.elev[k + 1] - trace.elev[k])
    if s == 0.0:
        e = trace.elev[k]
    elif s == 1.0:
        e = trace.elev[k + 1]
    return float(v), float(e)


@dataclass
class VirtualDriverState:
    kp: float = 8000.0
    ki: float = 3000.0
    integral: float = 0.0
    limit: float = 6500.0

    def __post_init__(self):
        if not self.kp > 0 and not (self.kp == 0 and self.ki == 0):
            raise ValueError("kp must be positive")
        if self.ki < 0:
            raise ValueError("ki must be non-negative")


def driver_force(d: VirtualDriverState, v_ref: float, v: float, dt: float) -> float:
    """PI speed tracker; returns the propulsion force command in N."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    err = v_ref - v
    d.integral = min(max(d.integral + d.ki * err * dt, -d.limit), d.limit)
    return d.kp * err + d.integral


def synth_gps_like_cycle(seed: int = 1, duration: float = 900.0) -> CycleTrace:
    """Synthetic stand-in for a recorded road cycle with elevation.

    Stop-and-go micro-trips for the first half, then a cruise phase. The
    elevation is a sum of long-wavelength sinusoids of distance, so the
    grade stays within a few percent and the profile stays within +-10 m.
    """
    rng = np.random.default_rng(seed)
    dt = 1.0
    t = np.arange(0.0, duration + dt / 2, dt)
    v = np.zeros_like(t)
    split = 0.5 * duration
    k = 0
    # stop-and-go: accelerate, hold, brake, dwell
    while t[k] < split:
        v_top = rng.uniform(6.0, 14.0)
        a_up = rng.uniform(0.8, 1.6)
        a_dn = rng.uniform(0.8, 1.8)
        hold = rng.uniform(5.0, 25.0)
        dwell = rng.uniform(5.0, 15.0)
        prof = list(np.arange(a_up, v_top, a_up)) + [v_top] * int(hold)
        prof += list(np.arange(v_top - a_dn, 0.0, -a_dn)) + [0.0] * int(dwell)
        for val in prof:
            if k >= t.size or t[k] >= split:
                break
            v[k] = val
            k += 1
    # cruise with gentle undulation, capped at 20 m/s
    v_cruise = rng.uniform(15.0, 18.0)
    phase = rng.uniform(0, 2 * math.pi)
    start_v = v[k - 1] if k else 0.0
    ramp_end = None
    for idx in range(k, t.size):
        tau = t[idx] - split
        target = v_cruise + 1.5 * math.sin(2 * math.pi * tau / 90.0 + phase)
        ramp = start_v + 1.0 * tau
        v[idx] = min(ramp, target)
        if ramp_end is None and ramp >= target:
            ramp_end = idx
    # final stop
    n_stop = int(math.ceil(v[-1] / 1.2)) + 5
    for j in range(n_stop):
        idx = t.size - n_stop + j
        v[idx] = min(v[idx], max(0.0, 1.2 * (n_stop - 5 - j)))
    v = np.clip(v, 0.0, 20.0)
    dist = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)])
    a1, a2 = rng.uniform(4.0, 6.0), rng.uniform(2.5, 4.0)
    l1, l2 = rng.uniform(1400, 1800), rng.uniform(1000, 1300)
    p1, p2 = rng.uniform(0, 2 * math.pi, size=2)
    elev = a1 * np.sin(2 * math.pi * dist / l1 + p1) + a2 * np.sin(2 * math.pi * dist / l2 + p2)
    return CycleTrace(t, v, elev, f"synthetic-road-{seed}")
