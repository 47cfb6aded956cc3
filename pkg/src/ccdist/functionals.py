"""Energy and length of controls, constant-speed reparametrization, and the
pointwise sub-Finsler fiber metric."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.optimize

_trapz = getattr(np, "trapezoid", None) or np.trapz

from .core import (ChartBox, PiecewiseConstantControl, Trajectory, VaryingNorm,
                   VectorFieldStructure, stable_seed)
from . import flow as _flow

__all__ = [
    "FiberSolveResult",
    "energy",
    "length",
    "speed_profile",
    "ReparamResult",
    "reparametrize_constant_speed",
    "fiber_metric",
    "fiber_length",
]


def _segment_speeds(traj: Trajectory, N: VaryingNorm) -> np.ndarray:
    """Speeds N(gamma(t), u_j) per control slot, shape (K, n_per + 1).

    Boundary samples appear in both neighboring rows, each paired with its
    own slot's control value, so slot-wise sup and trapezoid integrals never
    mix values across a control jump.
    """
    if N.dim_k != traj.control.dim_k:
        raise ValueError("norm dimension disagrees with control")
    K = traj.control.num_segments
    n_per = (len(traj.times) - 1) // K
    if n_per * K != len(traj.times) - 1:
        raise ValueError("trajectory sampling is not aligned with the control grid")
    idx = (np.arange(K)[:, None] * n_per + np.arange(n_per + 1)[None, :]).reshape(-1)
    pts = traj.points[idx]
    U = np.repeat(traj.control.segments, n_per + 1, axis=0)
    return N.values(pts, U).reshape(K, n_per + 1)


def energy(traj: Trajectory, N: VaryingNorm) -> float:
    """esssup of t -> N(gamma(t), u(t)): max over trajectory sub-samples.

    Exact when the integrand is piecewise constant (concatenation controls
    with point-independent norms); a lower approximation otherwise.
    """
    return float(np.max(_segment_speeds(traj, N)))


def length(traj: Trajectory, N: VaryingNorm) -> float:
    """Integral of t -> N(gamma(t), u(t)) by slot-wise trapezoid rule."""
    s = _segment_speeds(traj, N)
    K = traj.control.num_segments
    n_per = s.shape[1] - 1
    h = 1.0 / (K * n_per)
    return float(np.sum((0.5 * (s[:, 0] + s[:, -1]) + np.sum(s[:, 1:-1], axis=1)) * h))


def speed_profile(traj: Trajectory, N: VaryingNorm) -> np.ndarray:
    """Slot-wise speeds N(gamma(t_i), u_j), shape (K, samples per slot + 1)."""
    return _segment_speeds(traj, N)


# ---------------------------------------------------------------------------
# constant-speed reparametrization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReparamResult:
    control: PiecewiseConstantControl
    trajectory: Trajectory
    length: float
    degenerate: bool          # input had (numerically) zero length
    speed_deviation: float    # max relative slot-speed deviation from length


def _apportion(shares: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder apportionment with at least one slot per positive share."""
    pos = shares > 0
    n_pos = int(np.sum(pos))
    if total < n_pos:
        total = n_pos
    raw = shares * total
    counts = np.floor(raw).astype(int)
    counts[pos] = np.maximum(counts[pos], 1)
    while counts.sum() > total:
        # withdraw from the most over-allocated slot that stays >= 1
        excess = counts - raw
        order = np.argsort(-excess)
        for idx in order:
            if counts[idx] > 1 or (counts[idx] == 1 and not pos[idx]):
                counts[idx] -= 1
                break
    if counts.sum() < total:
        rema = raw - counts
        rema[~pos] = -np.inf
        order = np.argsort(-rema)
        i = 0
        while counts.sum() < total:
            counts[order[i % len(order)]] += 1
            i += 1
    return counts


def reparametrize_constant_speed(o, f: VectorFieldStructure,
                                 u: PiecewiseConstantControl, N: VaryingNorm,
                                 out_segments: Optional[int] = None,
                                 steps_per_segment: int = _flow.DEFAULT_STEPS,
                                 box: ChartBox | None = None) -> ReparamResult:
    """Constant-speed reparametrization v of u along the same geometric curve.

    Builds the arc-length time change psi(t) = (1/ell) int_0^t N(eta, u) and
    discretizes v = u / psi' on a uniform grid.  Slot boundaries are aligned
    with the input slots (each output slot rescales a single autonomous
    sub-flow), so the endpoint is preserved up to integrator error for any
    norm; the output speed is constant up to slot-count rounding.
    """
    traj = _flow.endpoint(np.asarray(o, dtype=float), f, u, steps_per_segment, box)
    s = _segment_speeds(traj, N)           # (K, n_per + 1)
    t = traj.times
    K = u.num_segments
    n_per = s.shape[1] - 1
    h = 1.0 / (K * n_per)

    seg_arc = (0.5 * (s[:, 0] + s[:, -1]) + np.sum(s[:, 1:-1], axis=1)) * h
    ell = float(seg_arc.sum())
    if ell < 1e-12:
        return ReparamResult(u, traj, ell, True, 0.0)

    shares = seg_arc / ell
    if out_segments is None:
        min_share = np.min(shares[shares > 0]) if np.any(shares > 0) else 1.0
        out_segments = int(min(max(64, math.ceil(64.0 / min_share)), 16384))
    counts = _apportion(shares, int(out_segments))

    slots = []
    for j in range(K):
        mj = counts[j]
        if mj == 0:
            continue
        tj = t[j * n_per:(j + 1) * n_per + 1]
        # cumulative arc within slot j, strictly increasing since N > 0 on u_j != 0
        arc = np.concatenate(([0.0], np.cumsum(0.5 * (s[j, 1:] + s[j, :-1]) * h)))
        targets = np.linspace(0.0, arc[-1], mj + 1)
        taus = np.interp(targets, arc, tj)
        taus[0], taus[-1] = tj[0], tj[-1]
        dtau = np.diff(taus)
        slots.append(u.segments[j][None, :] * dtau[:, None])
    K_out = int(counts.sum())
    v = PiecewiseConstantControl(np.vstack(slots) * K_out)

    traj_v = _flow.endpoint(np.asarray(o, dtype=float), f, v,
                            max(2, steps_per_segment // 2), box)
    sv = _segment_speeds(traj_v, N)
    dev = float(np.max(np.abs(sv - ell)) / ell)
    return ReparamResult(v, traj_v, ell, False, dev)


# ---------------------------------------------------------------------------
# fiber metric
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiberSolveResult:
    """Minimal norm of a control realizing a tangent vector.

    ``minimizer`` is absent exactly when the vector is outside the frame's
    range; ``value`` then carries ``math.inf`` purely as a tag (callers must
    branch on ``finite`` before doing arithmetic).
    """

    value: float
    minimizer: Optional[np.ndarray]
    residual: float
    ill_conditioned: bool = False

    @property
    def finite(self) -> bool:
        return self.minimizer is not None


def fiber_metric(p, v, f: VectorFieldStructure, N: VaryingNorm,
                 tol: float = 1e-9) -> FiberSolveResult:
    """|v|_(f,N) = inf { N(p, u) : A(p) u = v }.

    A rank-revealing least-squares solve produces a particular solution; if
    the residual exceeds ``tol`` the vector is not in the range and the
    infinite sentinel is returned.  On the solution's affine fiber the norm
    is minimized in closed form for Euclidean-type kinds and by seeded
    multi-start simplex descent otherwise (the restriction is convex).
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    A = f.matrix(p)
    if v.shape != (f.dim_m,):
        raise ValueError("tangent vector dimension disagrees with structure")

    U_, sv, Vt = np.linalg.svd(A)
    cutoff = max(A.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > cutoff))
    ill = bool(sv.size and rank > 0 and sv[0] / max(sv[rank - 1], 1e-300) > 1e12)

    if rank == 0:
        if np.linalg.norm(v) <= tol:
            return FiberSolveResult(0.0, np.zeros(f.dim_k), float(np.linalg.norm(v)), ill)
        return FiberSolveResult(math.inf, None, float(np.linalg.norm(v)), ill)

    u0 = Vt[:rank].T @ ((U_[:, :rank].T @ v) / sv[:rank])   # min-2-norm particular solution
    residual = float(np.linalg.norm(A @ u0 - v))
    if residual > tol:
        return FiberSolveResult(math.inf, None, residual, ill)

    Z = Vt[rank:].T    # orthonormal null-space basis, shape (k, k - rank)
    if Z.shape[1] == 0:
        return FiberSolveResult(float(N(p, u0)), u0, residual, ill)

    if N.kind == "euclidean":
        u_best = u0    # minimum 2-norm solution is orthogonal to the null space
    elif N.kind in ("weighted-lp", "ellipsoid") and N.p_exponent == 2.0:
        M = np.diag(N.weights_vec) if N.kind == "weighted-lp" else N.matrix
        w, *_ = np.linalg.lstsq(M @ Z, -(M @ u0), rcond=None)
        u_best = u0 + Z @ w
    else:
        u_best = _fiber_descent(p, u0, Z, N)
    return FiberSolveResult(float(N(p, u_best)), u_best, residual, ill)


def _fiber_descent(p, u0, Z, N: VaryingNorm, starts: int = 8) -> np.ndarray:
    """Multi-start simplex descent of w -> N(p, u0 + Z w); convex restriction."""
    d = Z.shape[1]
    scale = max(1.0, float(np.linalg.norm(u0)))
    rng = np.random.default_rng(stable_seed("fiber", p, u0))
    x0s = [np.zeros(d)] + [rng.standard_normal(d) * scale for _ in range(starts - 1)]

    def obj(w):
        return float(N(p, u0 + Z @ w))

    best_w, best_val = None, math.inf
    for x0 in x0s:
        res = scipy.optimize.minimize(obj, x0, method="Nelder-Mead",
                                      options={"xatol": 1e-10, "fatol": 1e-12,
                                               "maxfev": 400 * (d + 1)})
        if res.fun < best_val:
            best_val, best_w = res.fun, res.x
    return u0 + Z @ best_w


def fiber_length(traj: Trajectory, f: VectorFieldStructure, N: VaryingNorm,
                 samples: int = 128, tol: float = 1e-7) -> float:
    """Length int_0^1 |gamma'(t)|_(f,N) dt from finite-difference velocities.

    Independent of the trajectory's control: velocities come from central
    differences of the sampled curve and are lifted through the fiber
    metric.  Sub-sample times where the velocity leaves the range (within
    ``tol``) make the result infinite.
    """
    t = traj.times
    n = len(t)
    stride = max(1, n // samples)
    idx = np.arange(stride, n - stride, stride)
    total = 0.0
    prev_t = 0.0
    vals = []
    for i in idx:
        vel = (traj.points[i + stride] - traj.points[i - stride]) / (t[i + stride] - t[i - stride])
        res = fiber_metric(traj.points[i], vel, f, N, tol=tol * max(1.0, float(np.linalg.norm(vel))))
        if not res.finite:
            return math.inf
        vals.append(res.value)
    vals = np.array(vals)
    ts = t[idx]
    # extend to the full interval assuming the boundary values persist
    return float(_trapz(vals, ts) + vals[0] * (ts[0] - t[0]) + vals[-1] * (t[-1] - ts[-1]))
