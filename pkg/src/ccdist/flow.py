"""Integration of the control system gamma' = A(gamma) u(t) and
concatenation-of-flows controls."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _engine
from .core import (BoxExitError, ChartBox, EvaluationError,
                   PiecewiseConstantControl, Trajectory, VectorFieldStructure)

__all__ = [
    "FlowWord",
    "endpoint",
    "endpoint_final",
    "concat_control",
    "flow_composition",
    "gronwall_bound",
]

DEFAULT_STEPS = 16
DEFAULT_INFLATION = 0.1


@dataclass(frozen=True)
class FlowWord:
    """Word of signed single-field flows: pairs (field index 1..k, time)."""

    letters: tuple

    def __post_init__(self):
        letters = tuple((int(i), float(t)) for i, t in self.letters)
        if not letters:
            raise ValueError("flow word must be nonempty")
        for i, t in letters:
            if i < 1:
                raise ValueError(f"field indices are 1-based, got {i}")
            if not math.isfinite(t):
                raise ValueError("flow times must be finite")
        object.__setattr__(self, "letters", letters)

    @property
    def total_variation(self) -> float:
        return float(sum(abs(t) for _, t in self.letters))

    def scaled(self, factor: float) -> "FlowWord":
        return FlowWord(tuple((i, t * factor) for i, t in self.letters))


def concat_control(word: FlowWord, dim_k: int | None = None) -> PiecewiseConstantControl:
    """Control whose endpoint reproduces the composition of the word's flows.

    Uses one uniform slot per letter: slot j carries ``K * t_j e_{i_j}``, so
    integrating slot j for time 1/K is exactly the flow of field i_j for
    time t_j.  A word with zero total variation yields the zero control.
    """
    K = len(word.letters)
    k = dim_k if dim_k is not None else max(i for i, _ in word.letters)
    if k < max(i for i, _ in word.letters):
        raise ValueError("word uses field indices beyond dim_k")
    seg = np.zeros((K, k))
    if word.total_variation == 0.0:
        return PiecewiseConstantControl(seg)
    for j, (i, t) in enumerate(word.letters):
        seg[j, i - 1] = K * t
    return PiecewiseConstantControl(seg)


def endpoint(o, f: VectorFieldStructure, u: PiecewiseConstantControl,
             steps_per_segment: int = DEFAULT_STEPS, box: ChartBox | None = None,
             inflation: float = DEFAULT_INFLATION) -> Trajectory:
    """Integrate the Cauchy system from ``o`` with control ``u``.

    Classical fixed-step 4th-order integration within each control slot (the
    field is autonomous there).  The trajectory is sampled at every sub-step.
    Raises :class:`BoxExitError` as soon as the curve leaves the inflated
    box instead of extrapolating outside the chart.
    """
    if steps_per_segment < 1:
        raise ValueError("steps_per_segment must be >= 1")
    o = np.asarray(o, dtype=float)
    if o.shape != (f.dim_m,):
        raise ValueError(f"start point has shape {o.shape}, expected ({f.dim_m},)")
    if u.dim_k != f.dim_k:
        raise ValueError("control dimension disagrees with structure rank")
    if box is None:
        lo = np.full(f.dim_m, -np.inf)
        hi = np.full(f.dim_m, np.inf)
    else:
        box.require_inside(o, "start point")
        big = box.inflated(inflation)
        lo, hi = big.lower, big.upper

    if f.spec is not None:
        path, exit_index = _engine.rk4_path_spec(f.spec, o, u.segments,
                                                 steps_per_segment, lo, hi)
    else:
        path, exit_index = _engine.rk4_path_callable(f.matrix, o, u.segments,
                                                     steps_per_segment, lo, hi)
    n = u.num_segments * steps_per_segment
    times = np.linspace(0.0, 1.0, n + 1)
    if exit_index >= 0:
        pt = path[exit_index]
        t = times[exit_index]
        if not np.all(np.isfinite(pt)):
            raise EvaluationError(f"non-finite state at t={t:.6f}: {pt}")
        raise BoxExitError(
            f"integral curve left the inflated chart box at t={t:.6f}, point {pt}",
            point=pt, time=float(t))
    return Trajectory(times, path, u)


def endpoint_final(o, f: VectorFieldStructure, u: PiecewiseConstantControl,
                   steps_per_segment: int = DEFAULT_STEPS,
                   box: ChartBox | None = None,
                   inflation: float = DEFAULT_INFLATION):
    """Endpoint only, with a cheaper once-per-slot box check.

    Returns ``(point, inside_box)``; used by optimizers that probe many
    controls and handle exits themselves.
    """
    o = np.asarray(o, dtype=float)
    if box is None:
        lo = np.full(f.dim_m, -np.inf)
        hi = np.full(f.dim_m, np.inf)
    else:
        big = box.inflated(inflation)
        lo, hi = big.lower, big.upper
    if f.spec is not None:
        x, ok = _engine.rk4_final_spec(f.spec, o, u.segments, steps_per_segment, lo, hi)
        return x, bool(ok)
    path, exit_index = _engine.rk4_path_callable(f.matrix, o, u.segments,
                                                 steps_per_segment, lo, hi)
    return path[-1], exit_index < 0


def flow_composition(o, f: VectorFieldStructure, sigma: Sequence[int], t,
                     steps_per_segment: int = DEFAULT_STEPS,
                     box: ChartBox | None = None,
                     inflation: float = DEFAULT_INFLATION) -> np.ndarray:
    """Evaluate phi(t_1, ..., t_m) = Phi^{t_m}_{X_sigma_m} o ... o Phi^{t_1}_{X_sigma_1}(o).

    Exposed separately because openness probes evaluate it on spheres of
    time values.
    """
    t = np.asarray(t, dtype=float)
    if len(sigma) != f.dim_m:
        raise ValueError(f"need exactly m={f.dim_m} flow letters, got {len(sigma)}")
    if t.shape != (len(sigma),):
        raise ValueError("one time per flow letter required")
    word = FlowWord(tuple(zip(sigma, t)))
    traj = endpoint(np.asarray(o, dtype=float), f, concat_control(word, f.dim_k),
                    steps_per_segment, box, inflation)
    return traj.final


def gronwall_bound(E: float, K: float, t: float) -> float:
    """Deviation envelope E (e^{Kt} - 1) / K, with the limit E t as K -> 0."""
    if E < 0 or K < 0 or t < 0:
        raise ValueError("gronwall_bound expects nonnegative arguments")
    if K < 1e-12:
        return E * t
    return E * math.expm1(K * t) / K
