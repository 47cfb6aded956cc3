"""Shared domain types: chart boxes, frame structures, varying norms,
piecewise-constant controls, trajectories, and parameterized families."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _engine
from ._engine import PolySpec

__all__ = [
    "CCError",
    "EvaluationError",
    "BoxExitError",
    "ChartBox",
    "VectorFieldStructure",
    "VaryingNorm",
    "PiecewiseConstantControl",
    "Trajectory",
    "StructureFamily",
    "StructureReport",
    "validate_structure",
    "check_norm_axioms",
    "stable_seed",
]


class CCError(Exception):
    """Base class for toolkit errors."""


class EvaluationError(CCError):
    """A structure or norm produced a non-finite value; names the point."""


class BoxExitError(CCError):
    """An integral curve left the (inflated) chart box.

    Signals that, at this discretization, the control is outside the safe
    region where the endpoint map is defined.
    """

    def __init__(self, message, point=None, time=None):
        super().__init__(message)
        self.point = point
        self.time = time


def stable_seed(*parts) -> int:
    """Deterministic 63-bit seed derived from the reprs of ``parts``."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(np.ascontiguousarray(part, dtype=float).tobytes())
        else:
            h.update(repr(part).encode())
        h.update(b"|")
    return int.from_bytes(h.digest()[:8], "little") >> 1


# ---------------------------------------------------------------------------
# chart box
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChartBox:
    """Axis-aligned compact box in chart coordinates (the single global chart)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower/upper must be 1-d vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("degenerate box: need lower[i] < upper[i] for all i")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim_m(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def inflated(self, factor: float) -> "ChartBox":
        """Box grown by ``factor`` times the width on each side."""
        pad = factor * self.widths
        return ChartBox(self.lower - pad, self.upper + pad)

    def contains(self, p, inflate: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        box = self.inflated(inflate) if inflate else self
        return bool(np.all(p >= box.lower) and np.all(p <= box.upper))

    def require_inside(self, p, name: str = "point", inflate: float = 0.0):
        if not self.contains(p, inflate):
            raise ValueError(f"{name} {np.asarray(p)} outside chart box "
                             f"[{self.lower}, {self.upper}] (inflate={inflate})")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim_m))


# ---------------------------------------------------------------------------
# vector-field structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VectorFieldStructure:
    """Lipschitz assignment of linear maps R^k -> T_p R^m.

    ``matrix(p)`` returns the (m, k) frame matrix at ``p``; its columns are
    the frame fields.  Built-in scenarios carry a polynomial table (``spec``)
    that enables the compiled integration kernels; arbitrary callables are
    supported through ``matrix_fn``.
    """

    dim_m: int
    dim_k: int
    spec: Optional[PolySpec] = None
    matrix_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lipschitz_hint: Optional[float] = None
    smooth: bool = False
    name: str = "custom"

    def __post_init__(self):
        if self.spec is None and self.matrix_fn is None:
            raise ValueError("need either a polynomial spec or a matrix callable")
        if self.spec is not None:
            if (self.spec.dim_m, self.spec.dim_k) != (self.dim_m, self.dim_k):
                raise ValueError("polynomial table shape disagrees with declared dims")

    @staticmethod
    def from_poly(spec: PolySpec, *, lipschitz_hint=None, smooth=True,
                  name="poly") -> "VectorFieldStructure":
        return VectorFieldStructure(spec.dim_m, spec.dim_k, spec=spec,
                                    lipschitz_hint=lipschitz_hint, smooth=smooth,
                                    name=name)

    @staticmethod
    def from_callable(m: int, k: int, fn, *, lipschitz_hint=None, smooth=False,
                      name="custom") -> "VectorFieldStructure":
        return VectorFieldStructure(m, k, matrix_fn=fn,
                                    lipschitz_hint=lipschitz_hint, smooth=smooth,
                                    name=name)

    def matrix(self, p) -> np.ndarray:
        """Frame matrix A(p), shape (m, k)."""
        p = np.asarray(p, dtype=float)
        if self.spec is not None:
            A = _engine.poly_matrix_np(self.spec, p)
        else:
            A = np.asarray(self.matrix_fn(p), dtype=float)
        if A.shape != (self.dim_m, self.dim_k):
            raise EvaluationError(f"structure '{self.name}' returned shape {A.shape}, "
                                  f"expected {(self.dim_m, self.dim_k)} at p={p}")
        return A

    def matrix_batch(self, P) -> np.ndarray:
        """Frame matrices on a batch of points, (n, m) -> (n, m, k)."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if self.spec is not None:
            return _engine.poly_matrix_batch_np(self.spec, P)
        return np.stack([self.matrix(p) for p in P])

    def field(self, index: int) -> Callable[[np.ndarray], np.ndarray]:
        """The ``index``-th frame field as a point -> vector callable (1-based)."""
        if not 1 <= index <= self.dim_k:
            raise ValueError(f"field index {index} out of range 1..{self.dim_k}")
        j = index - 1
        return lambda p: self.matrix(p)[:, j]


# ---------------------------------------------------------------------------
# continuously varying norm
# ---------------------------------------------------------------------------

def _lp_norm(U: np.ndarray, p: float) -> np.ndarray:
    if p == 2.0:
        return np.sqrt(np.sum(U * U, axis=-1))
    if np.isinf(p):
        return np.max(np.abs(U), axis=-1)
    if p == 1.0:
        return np.sum(np.abs(U), axis=-1)
    return np.sum(np.abs(U) ** p, axis=-1) ** (1.0 / p)


@dataclass(frozen=True)
class VaryingNorm:
    """Continuous family of norms on the control space R^k, indexed by p.

    Kinds: ``euclidean``, ``weighted-lp`` (diagonal weights), ``ellipsoid``
    (|M u|_2 for an injective matrix M), ``custom`` (arbitrary callable),
    and the point-dependent ``strip`` / ``dilated`` variants used by the
    built-in scenarios.
    """

    dim_k: int
    kind: str = "euclidean"
    p_exponent: float = 2.0
    matrix: Optional[np.ndarray] = None          # (r, k) for ellipsoid kinds
    weights_vec: Optional[np.ndarray] = None     # (k,) for weighted-lp
    fn: Optional[Callable] = None                # (p, u) -> float for custom
    strip_n: Optional[float] = None              # strip scenario parameter
    base: Optional["VaryingNorm"] = None         # for dilated wrapper
    dilation: Optional[tuple] = None             # (eps, weights, origin)

    # -- constructors --------------------------------------------------

    @staticmethod
    def euclidean(k: int) -> "VaryingNorm":
        return VaryingNorm(k, kind="euclidean")

    @staticmethod
    def weighted_lp(weights, p: float) -> "VaryingNorm":
        w = np.asarray(weights, dtype=float)
        if np.any(w <= 0):
            raise ValueError("weighted-lp weights must be positive")
        return VaryingNorm(w.shape[0], kind="weighted-lp", p_exponent=float(p),
                           weights_vec=w)

    @staticmethod
    def ellipsoid(M, p: float = 2.0) -> "VaryingNorm":
        M = np.asarray(M, dtype=float)
        if np.linalg.matrix_rank(M) < M.shape[1]:
            raise ValueError("ellipsoid matrix must be injective")
        return VaryingNorm(M.shape[1], kind="ellipsoid", p_exponent=float(p), matrix=M)

    @staticmethod
    def custom(k: int, fn) -> "VaryingNorm":
        return VaryingNorm(k, kind="custom", fn=fn)

    @staticmethod
    def strip(n: float) -> "VaryingNorm":
        return VaryingNorm(2, kind="strip", strip_n=float(n))

    def dilated(self, eps: float, weights, origin) -> "VaryingNorm":
        """The pulled-back norm (p, u) -> N(delta_eps p, u)."""
        if self.constant_in_p:
            return self
        return VaryingNorm(self.dim_k, kind="dilated", base=self,
                           dilation=(float(eps), np.asarray(weights, dtype=float),
                                     np.asarray(origin, dtype=float)))

    # -- evaluation ----------------------------------------------------

    @property
    def constant_in_p(self) -> bool:
        return self.kind in ("euclidean", "weighted-lp", "ellipsoid")

    def __call__(self, p, u) -> float:
        return float(self.values(np.asarray(p, dtype=float)[None, :],
                                 np.asarray(u, dtype=float)[None, :])[0])

    def values(self, P, U) -> np.ndarray:
        """Vectorized evaluation: P (n, m), U (n, k) -> (n,)."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if self.kind == "euclidean":
            return _lp_norm(U, 2.0)
        if self.kind == "weighted-lp":
            return _lp_norm(U * self.weights_vec, self.p_exponent)
        if self.kind == "ellipsoid":
            return _lp_norm(U @ self.matrix.T, self.p_exponent)
        if self.kind == "strip":
            g = _engine.strip_conformal_factor(P, self.strip_n)
            return np.sqrt(g) * _lp_norm(U, 2.0)
        if self.kind == "dilated":
            eps, w, o = self.dilation
            Q = o[None, :] + (eps ** w)[None, :] * (P - o[None, :])
            return self.base.values(Q, U)
        if self.kind == "custom":
            if P.shape[0] == 1 and U.shape[0] > 1:
                P = np.broadcast_to(P, (U.shape[0], P.shape[1]))
            return np.array([float(self.fn(p, u)) for p, u in zip(P, U)])
        raise ValueError(f"unknown norm kind {self.kind!r}")

    def values_at(self, p, U) -> np.ndarray:
        """Norms of many control vectors at a fixed base point."""
        P = np.asarray(p, dtype=float)[None, :]
        return self.values(P, np.atleast_2d(U))


def check_norm_axioms(norm: VaryingNorm, box: ChartBox, samples: int = 1000,
                      seed: int = 0, tol: float = 1e-10) -> dict:
    """Sampled check of homogeneity, triangle inequality, and positivity.

    Returns the worst observed defect for each axiom; raises nothing.
    """
    rng = np.random.default_rng(stable_seed("norm-axioms", seed))
    P = box.sample(rng, samples)
    U = rng.standard_normal((samples, norm.dim_k))
    W = rng.standard_normal((samples, norm.dim_k))
    lam = rng.uniform(-3.0, 3.0, size=samples)

    n_u = norm.values(P, U)
    homo = np.max(np.abs(norm.values(P, U * lam[:, None]) - np.abs(lam) * n_u))
    tri = np.max(norm.values(P, U + W) - n_u - norm.values(P, W))
    unit = U / np.linalg.norm(U, axis=1, keepdims=True)
    pos = np.min(norm.values(P, unit))
    return {
        "homogeneity_defect": float(homo),
        "triangle_defect": float(max(tri, 0.0)),
        "min_unit_norm": float(pos),
        "ok": bool(homo <= tol and tri <= tol and pos > 0.0),
        "samples": samples,
        "seed": seed,
    }


# ---------------------------------------------------------------------------
# controls and trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PiecewiseConstantControl:
    """Control u in L^inf([0,1]; R^k), constant on a uniform grid of K slots.

    Slot ``j`` holds on [j/K, (j+1)/K); the final slot is closed at t = 1.
    """

    segments: np.ndarray    # (K, k)

    def __post_init__(self):
        seg = np.atleast_2d(np.asarray(self.segments, dtype=float))
        if seg.ndim != 2 or seg.shape[0] < 1:
            raise ValueError("need at least one control segment")
        if not np.all(np.isfinite(seg)):
            raise ValueError("control segments must be finite")
        object.__setattr__(self, "segments", seg)

    @staticmethod
    def zero(K: int, k: int) -> "PiecewiseConstantControl":
        return PiecewiseConstantControl(np.zeros((K, k)))

    @property
    def num_segments(self) -> int:
        return self.segments.shape[0]

    @property
    def dim_k(self) -> int:
        return self.segments.shape[1]

    def segment_index(self, t: float) -> int:
        return min(int(t * self.num_segments), self.num_segments - 1)

    def value_at(self, t: float) -> np.ndarray:
        return self.segments[self.segment_index(t)]

    def sup_norm(self) -> float:
        """Max over slots of the Euclidean reference norm."""
        return float(np.max(np.linalg.norm(self.segments, axis=1)))

    def resampled(self, K: int) -> "PiecewiseConstantControl":
        """Slot-midpoint resampling onto a K-slot uniform grid."""
        mids = (np.arange(K) + 0.5) / K
        idx = np.minimum((mids * self.num_segments).astype(int), self.num_segments - 1)
        return PiecewiseConstantControl(self.segments[idx])

    def restricted(self, s: float, t: float, K: int) -> "PiecewiseConstantControl":
        """Control steering along the sub-arc [s, t], rescaled to [0, 1]."""
        if not 0.0 <= s < t <= 1.0 + 1e-12:
            raise ValueError("need 0 <= s < t <= 1")
        mids = s + (np.arange(K) + 0.5) / K * (t - s)
        idx = np.minimum((mids * self.num_segments).astype(int), self.num_segments - 1)
        return PiecewiseConstantControl(self.segments[idx] * (t - s))


@dataclass(frozen=True)
class Trajectory:
    """Sampled integral curve t -> End(o, f, t u) with its generating control."""

    times: np.ndarray        # (n,) increasing, t0 = 0, t_last = 1
    points: np.ndarray       # (n, m)
    control: PiecewiseConstantControl

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.points, dtype=float)
        if t.ndim != 1 or p.ndim != 2 or t.shape[0] != p.shape[0]:
            raise ValueError("inconsistent trajectory arrays")
        if abs(t[0]) > 1e-15 or abs(t[-1] - 1.0) > 1e-12 or np.any(np.diff(t) <= 0):
            raise ValueError("times must increase strictly from 0 to 1")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def final(self) -> np.ndarray:
        return self.points[-1]

    @property
    def dim_m(self) -> int:
        return self.points.shape[1]

    def state_at(self, t: float) -> np.ndarray:
        """Linear interpolation of the sampled curve."""
        out = np.empty(self.dim_m)
        for i in range(self.dim_m):
            out[i] = np.interp(t, self.times, self.points[:, i])
        return out

    def control_values(self) -> np.ndarray:
        """Control value at each sample time, (n, k)."""
        K = self.control.num_segments
        idx = np.minimum((self.times * K).astype(int), K - 1)
        return self.control.segments[idx]


# ---------------------------------------------------------------------------
# structure families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructureFamily:
    """Parameterized family of (structure, norm) pairs with a designated limit.

    ``control_adapter(lam_from, lam_to, control)``, when present, converts a
    good control for one member into an admissible warm start for another;
    distance sweeps use it to make cross-parameter comparisons like-for-like.
    """

    params: tuple
    member_fn: Callable[[object], tuple]
    limit_param: object
    limit_boundedly_compact: bool
    name: str = "family"
    box: Optional[ChartBox] = None
    dilation_map: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    control_adapter: Optional[Callable] = None

    def __post_init__(self):
        params = tuple(self.params)
        if not params:
            raise ValueError("family needs at least one parameter")
        if not any(self._same(self.limit_param, lam) for lam in params):
            raise ValueError(f"limit parameter {self.limit_param!r} not in family parameters")
        object.__setattr__(self, "params", params)
        dims = {self.member_fn(lam)[0].dim_m for lam in params}
        ranks = {self.member_fn(lam)[0].dim_k for lam in params}
        if len(dims) != 1 or len(ranks) != 1:
            raise ValueError("family members disagree in dimensions")

    @staticmethod
    def _same(a, b) -> bool:
        try:
            return bool(a == b) or (np.isinf(a) and np.isinf(b))
        except TypeError:
            return a is b

    def member(self, lam) -> tuple[VectorFieldStructure, VaryingNorm]:
        if not any(self._same(lam, p) for p in self.params):
            raise KeyError(f"parameter {lam!r} is not a member of family '{self.name}' "
                           f"(params: {self.params})")
        return self.member_fn(lam)

    @property
    def limit_member(self) -> tuple[VectorFieldStructure, VaryingNorm]:
        return self.member(self.limit_param)

    @property
    def dim_m(self) -> int:
        return self.member_fn(self.params[0])[0].dim_m

    @property
    def dim_k(self) -> int:
        return self.member_fn(self.params[0])[0].dim_k

    def approach_order(self) -> list:
        """Non-limit parameters ordered toward the limit (farthest first)."""
        others = [p for p in self.params if not self._same(p, self.limit_param)]
        try:
            key = lambda lam: -abs(float(lam) - float(self.limit_param))
            return sorted(others, key=key)
        except (TypeError, OverflowError, ValueError):
            return others


# ---------------------------------------------------------------------------
# structure validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructureReport:
    """Sampled bounds for a structure on a box (never a certificate)."""

    sup_operator_norm: float     # H: max sampled operator norm of A(p)
    lipschitz_constant: float    # L: max sampled difference quotient
    samples: int
    seed: int
    hint_consistent: Optional[bool]


def validate_structure(f: VectorFieldStructure, box: ChartBox, samples: int = 256,
                       seed: int = 0, hint_tol: float = 0.05) -> StructureReport:
    """Estimate the frame bounds H and L by seeded sampling on ``box``.

    H bounds |A(p)|_op on the box and L the Lipschitz quotient
    |A(p) - A(q)|_op / |p - q|; both are max over the sample, deterministic
    for a given seed.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples")
    if box.dim_m != f.dim_m:
        raise ValueError("box dimension disagrees with structure")
    rng = np.random.default_rng(stable_seed("validate", seed, samples))
    P = box.sample(rng, samples)
    Q = box.sample(rng, samples)
    A_P = f.matrix_batch(P)
    A_Q = f.matrix_batch(Q)
    for tag, pts, mats in (("P", P, A_P), ("Q", Q, A_Q)):
        bad = ~np.all(np.isfinite(mats), axis=(1, 2))
        if np.any(bad):
            i = int(np.argmax(bad))
            raise EvaluationError(f"non-finite frame matrix at sample {tag}[{i}] = {pts[i]}")
    H = float(max(np.max(np.linalg.norm(A_P, ord=2, axis=(1, 2))),
                  np.max(np.linalg.norm(A_Q, ord=2, axis=(1, 2)))))
    gaps = np.linalg.norm(P - Q, axis=1)
    keep = gaps > 1e-12
    quot = np.linalg.norm(A_P[keep] - A_Q[keep], ord=2, axis=(1, 2)) / gaps[keep]
    L = float(np.max(quot)) if np.any(keep) else 0.0
    hint_ok = None
    if f.lipschitz_hint is not None:
        hint_ok = bool(L <= f.lipschitz_hint * (1.0 + hint_tol))
    return StructureReport(H, L, samples, seed, hint_ok)
