"""Openness diagnostics: planar winding numbers, essential-openness probes of
composed-flow maps, and bracket-generation rank probes.

Degree computations are planar only (m = 2); ``bracket_span_rank`` is the
any-dimension diagnostic.  All verdicts are empirical, never certificates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import ChartBox, VectorFieldStructure, stable_seed
from . import flow as _flow

__all__ = [
    "DegreeReport",
    "winding_number",
    "essential_openness_probe",
    "OpennessProbe",
    "bracket_span_rank",
    "bracket_vectors",
    "openness_constants",
]


@dataclass(frozen=True)
class DegreeReport:
    """Accumulated-angle winding count with coarse-sampling safeguards."""

    winding: int
    samples: int
    min_gap: float        # min |f(x) - f(center)| over boundary samples
    reliable: bool

    def to_json_dict(self) -> dict:
        return {"winding": self.winding, "samples": self.samples,
                "min_gap": self.min_gap, "reliable": self.reliable}


def winding_number(map_fn: Callable[[np.ndarray], np.ndarray], center,
                   radius: float, samples: int = 64) -> DegreeReport:
    """Winding of ``map_fn`` around its value at ``center`` on a circle.

    The degree is the rounded total accumulated angle of
    ``f(center + r e(theta)) - f(center)``.  The report is flagged
    unreliable when consecutive image samples step more than pi/2 in angle
    or when the boundary gap is smaller than 3x the largest consecutive
    image jump (either failure means the sampling could hide a crossing).
    """
    if samples < 16:
        raise ValueError("need at least 16 boundary samples")
    center = np.asarray(center, dtype=float)
    if center.shape != (2,):
        raise ValueError("winding numbers are planar: center must be in R^2")
    fc = np.asarray(map_fn(center), dtype=float)
    thetas = 2.0 * np.pi * np.arange(samples + 1) / samples
    vals = np.empty((samples + 1, 2))
    for i, th in enumerate(thetas[:-1]):
        x = center + radius * np.array([math.cos(th), math.sin(th)])
        vals[i] = np.asarray(map_fn(x), dtype=float) - fc
    vals[-1] = vals[0]
    if not np.all(np.isfinite(vals)):
        raise ValueError("map produced non-finite values on the circle")

    gaps = np.linalg.norm(vals, axis=1)
    min_gap = float(np.min(gaps[:-1]))
    jumps = np.linalg.norm(np.diff(vals, axis=0), axis=1)
    max_jump = float(np.max(jumps))

    if min_gap <= 1e-14:
        return DegreeReport(0, samples, min_gap, False)

    ang = np.arctan2(vals[:, 1], vals[:, 0])
    steps = np.diff(ang)
    steps = (steps + np.pi) % (2.0 * np.pi) - np.pi
    winding = int(round(float(np.sum(steps)) / (2.0 * np.pi)))
    reliable = bool(np.max(np.abs(steps)) <= np.pi / 2 and min_gap > 3.0 * max_jump)
    return DegreeReport(winding, samples, min_gap, reliable)


@dataclass(frozen=True)
class OpennessProbe:
    """Outcome of a composed-flow openness probe at one configuration."""

    open_at_scale: bool
    winding: int
    margin: float          # empirical inradius surrogate (min boundary gap)
    reliable: bool


def essential_openness_probe(o, f: VectorFieldStructure, sigma: Sequence[int],
                             t_center, radius: float, resolution: int = 64,
                             box: ChartBox | None = None) -> OpennessProbe:
    """Probe openness of phi(t) = composed flows at a circle of time values.

    Planar only: the verdict is ``winding != 0`` for the map
    t -> phi(t) around phi(t_center); the margin is the smallest boundary
    gap, an empirical stand-in for the radius delta of a contained ball.
    """
    if f.dim_m != 2:
        raise ValueError("essential openness probes are implemented for m = 2 only")
    o = np.asarray(o, dtype=float)
    t_center = np.asarray(t_center, dtype=float)

    def phi(t):
        return _flow.flow_composition(o, f, sigma, t, box=box)

    report = winding_number(phi, t_center, radius, resolution)
    verdict = bool(report.winding != 0 and report.reliable)
    return OpennessProbe(verdict, report.winding, report.min_gap, report.reliable)


# ---------------------------------------------------------------------------
# bracket probes
# ---------------------------------------------------------------------------

def _jacobian(field: Callable, p: np.ndarray, h: float) -> np.ndarray:
    m = p.shape[0]
    J = np.empty((m, m))
    for i in range(m):
        dp = np.zeros(m)
        dp[i] = h
        J[:, i] = (field(p + dp) - field(p - dp)) / (2.0 * h)
    return J


def _lie_bracket(X: Callable, Y: Callable, h: float) -> Callable:
    def bracket(p):
        return _jacobian(Y, p, h) @ X(p) - _jacobian(X, p, h) @ Y(p)
    return bracket


def bracket_vectors(f: VectorFieldStructure, p, depth: int, h: float = 1e-4):
    """Frame fields and iterated brackets [X_i, W] up to ``depth``, at p."""
    if not f.smooth:
        raise ValueError("bracket probes require a structure marked smooth")
    if not 1e-6 < h < 1e-2:
        raise ValueError("finite-difference step h must lie in (1e-6, 1e-2)")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    p = np.asarray(p, dtype=float)
    frame = [f.field(i) for i in range(1, f.dim_k + 1)]
    levels = [frame]
    for _ in range(depth - 1):
        new = [_lie_bracket(X, W, h) for X in frame for W in levels[-1]]
        levels.append(new)
    vectors = [fld(p) for level in levels for fld in level]
    return np.array(vectors)


def bracket_span_rank(f: VectorFieldStructure, p, depth: int, h: float = 1e-4) -> int:
    """Numerical rank at p of the span of the frame and its iterated brackets.

    Depth 1 is the frame alone; deeper levels append central-difference
    brackets [X_i, W].  Singular values below 1e-6 of the largest are
    treated as zero.
    """
    V = bracket_vectors(f, p, depth, h)
    sv = np.linalg.svd(V, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > 1e-6 * sv[0]))


def openness_constants(ell: float, L: float) -> tuple[float, float]:
    """Quantitative open-mapping constants (C1, C2) = (1/(2 ell), 1/(2 ell L)).

    For a C^2 map with invertible differential at x0, |Df_{x0}^{-1}| <= ell
    and |D^2 f| <= L near x0, the image of B(x0, rho) contains
    B(f(x0), C1 rho) whenever rho < min(r, C2).
    """
    if ell <= 0 or L <= 0:
        raise ValueError("bounds must be positive")
    return 1.0 / (2.0 * ell), 1.0 / (2.0 * ell * L)
