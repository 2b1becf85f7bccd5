"""Multiquadric radial-basis fit of the road ahead and the grade it implies."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SAMPLE_OFFSETS = np.arange(-20.0, 300.0 + 1e-9, 20.0)
KNOT_OFFSETS = np.arange(-20.0, 300.0 + 1e-9, 40.0)
ZETA = 7.5e-5
RIDGE = 1e-10


@dataclass(frozen=True)
class GradeModel:
    """y(l) = a0 + sum_i a_i sqrt(1 + zeta (l - c_i)^2) on the span [lo, hi]."""

    a0: float
    a: np.ndarray
    c: np.ndarray
    zeta: float = ZETA
    lo: float = -math.inf
    hi: float = math.inf
    rss: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.size > 1 and np.any(np.diff(c) <= 0):
            raise ValueError("knots must be strictly increasing")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))

    @classmethod
    def flat(cls) -> "GradeModel":
        return cls(0.0, np.zeros(1), np.zeros(1))

    @property
    def is_flat(self) -> bool:
        return not np.any(self.a)

    def _clamp(self, ell):
        return np.clip(ell, self.lo, self.hi)

    def elevation(self, ell):
        d = self._clamp(np.asarray(ell, dtype=float))[..., None] - self.c
        return self.a0 + np.sqrt(1.0 + self.zeta * d * d) @ self.a

    def slope(self, ell):
        """dy/dl, frozen at the span ends."""
        d = self._clamp(np.asarray(ell, dtype=float))[..., None] - self.c
        return (self.zeta * d / np.sqrt(1.0 + self.zeta * d * d)) @ self.a

    def curvature(self, ell):
        """d2y/dl2 inside the span, zero outside (clamped region)."""
        ell = np.asarray(ell, dtype=float)
        d = ell[..., None] - self.c
        val = (self.zeta / (1.0 + self.zeta * d * d) ** 1.5) @ self.a
        return np.where((ell < self.lo) | (ell > self.hi), 0.0, val)

    def shifted(self, offset: float) -> "GradeModel":
        return GradeModel(self.a0, self.a, self.c + offset, self.zeta,
                          self.lo + offset, self.hi + offset, self.rss)

    def arrays(self) -> np.ndarray:
        """Flat array consumed by the compiled kernels: [nk, zeta, lo, hi, a..., c...]."""
        nk = self.a.size
        return np.concatenate([[nk, self.zeta, self.lo, self.hi], self.a, self.c])


def fit_elevation(r, y, knots=KNOT_OFFSETS, zeta: float = ZETA) -> GradeModel:
    """Least-squares multiquadric fit of elevation samples y at positions r."""
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    knots = np.asarray(knots, dtype=float)
    if r.size < knots.size + 1:
        raise ValueError("need at least one more sample than knots")
    if knots.size > 1 and np.any(np.diff(knots) <= 0):
        raise ValueError("knots must be strictly increasing (duplicate or unsorted knots)")
    if knots.min() < r.min() - 1e-9 or knots.max() > r.max() + 1e-9:
        raise ValueError("knots must lie within the sampled span")
    d = r[:, None] - knots[None, :]
    Phi = np.hstack([np.ones((r.size, 1)), np.sqrt(1.0 + zeta * d * d)])
    # Column scaling keeps the normal equations well conditioned.
    scale = np.linalg.norm(Phi, axis=0)
    Phs = Phi / scale
    sv = np.linalg.svd(Phs, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise ValueError("rank-deficient design matrix")
    G = Phs.T @ Phs + RIDGE * np.eye(Phs.shape[1])
    coef = np.linalg.solve(G, Phs.T @ y)
    # one step of iterative refinement on the residual
    coef += np.linalg.solve(G, Phs.T @ (y - Phs @ coef))
    coef /= scale
    resid = y - Phi @ coef
    return GradeModel(float(coef[0]), coef[1:], knots, zeta, float(r.min()), float(r.max()),
                      float(resid @ resid))


def grade_at(gm: GradeModel, ell) -> np.ndarray | float:
    s = gm.slope(ell)
    if np.any(np.abs(s) > 1.0):
        raise ValueError("fitted slope magnitude exceeds 1")
    out = np.arcsin(s)
    return float(out) if np.ndim(out) == 0 else out


def horizon_grades(gm: GradeModel, ell0: float, positions) -> np.ndarray:
    """Grade along predicted positions (absolute, same frame as the model)."""
    del ell0  # positions already absolute; kept for call-site symmetry
    return np.atleast_1d(grade_at(gm, np.asarray(positions, dtype=float)))


class ElevationProfile:
    """Elevation as a function of distance, built from a cycle trace."""

    def __init__(self, dist: np.ndarray, elev: np.ndarray):
        keep = np.concatenate([[True], np.diff(dist) > 1e-9])
        self.dist = np.asarray(dist, dtype=float)[keep]
        self.elev = np.asarray(elev, dtype=float)[keep]

    @classmethod
    def from_trace(cls, trace) -> "ElevationProfile | None":
        if trace.elev is None:
            return None
        return cls(trace.distance(), trace.elev)

    def at(self, ell):
        return np.interp(ell, self.dist, self.elev)

    def grade(self, ell: float) -> float:
        """Road angle from the piecewise-linear profile, centred difference over 1 m."""
        h = 0.5
        s = (self.at(ell + h) - self.at(ell - h)) / (2 * h)
        return math.asin(max(-1.0, min(1.0, float(s))))

    def fit_ahead(self, ell: float) -> GradeModel:
        r = SAMPLE_OFFSETS
        gm = fit_elevation(r, self.at(ell + r), KNOT_OFFSETS, ZETA)
        return gm.shifted(ell)
