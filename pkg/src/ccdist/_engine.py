"""Low-level evaluation kernels for frames, norms, and the control ODE.

Built-in frames are stored as sparse multivariate polynomial tables
(``exps``/``coefs``) so a single pair of compiled kernels covers every
shipped scenario.  Structures wrapping arbitrary Python callables fall back
to a plain numpy integrator with identical semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

__all__ = [
    "PolySpec",
    "poly_matrix_np",
    "poly_matrix_batch_np",
    "rk4_path_spec",
    "rk4_final_spec",
    "rk4_final_spec_batch",
    "rk4_path_spec_batch",
    "rk4_path_callable",
    "identity_poly_spec",
    "constant_poly_spec",
    "strip_conformal_factor",
]


# ---------------------------------------------------------------------------
# polynomial frame tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolySpec:
    """Sparse polynomial table for a frame matrix A(p), shape (m, k).

    ``A(p)[i, j] = sum_t coefs[t, i, j] * prod_l p[l] ** exps[t, l]``.

    A dilated spec evaluates the base table at ``o + diag(eps**w) (p - o)``
    and rescales row ``i`` by ``eps**(1 - w[i])``; ``eps == 1`` bypasses the
    transform entirely so the base table is reproduced bit for bit.
    """

    exps: np.ndarray          # (T, m) int64, monomial exponents
    coefs: np.ndarray         # (T, m, k) float64
    eps: float = 1.0
    weights: np.ndarray = field(default=None)   # (m,) float64, dilation weights
    origin: np.ndarray = field(default=None)    # (m,) float64, dilation center

    def __post_init__(self):
        exps = np.ascontiguousarray(np.asarray(self.exps, dtype=np.int64))
        coefs = np.ascontiguousarray(np.asarray(self.coefs, dtype=np.float64))
        if exps.ndim != 2 or coefs.ndim != 3 or exps.shape[0] != coefs.shape[0]:
            raise ValueError("inconsistent polynomial table shapes")
        object.__setattr__(self, "exps", exps)
        object.__setattr__(self, "coefs", coefs)
        m = coefs.shape[1]
        w = self.weights if self.weights is not None else np.ones(m)
        o = self.origin if self.origin is not None else np.zeros(m)
        object.__setattr__(self, "weights", np.ascontiguousarray(np.asarray(w, dtype=np.float64)))
        object.__setattr__(self, "origin", np.ascontiguousarray(np.asarray(o, dtype=np.float64)))

    @property
    def dim_m(self) -> int:
        return self.coefs.shape[1]

    @property
    def dim_k(self) -> int:
        return self.coefs.shape[2]

    def with_dilation(self, eps: float, weights, origin=None) -> "PolySpec":
        m = self.dim_m
        if self.eps != 1.0:
            raise ValueError("cannot re-dilate an already dilated spec")
        origin = np.zeros(m) if origin is None else np.asarray(origin, dtype=float)
        return PolySpec(self.exps, self.coefs, eps=float(eps),
                        weights=np.asarray(weights, dtype=float), origin=origin)


def identity_poly_spec(m: int) -> PolySpec:
    """Constant identity frame on R^m (k = m)."""
    exps = np.zeros((1, m), dtype=np.int64)
    coefs = np.eye(m)[None, :, :].copy()
    return PolySpec(exps, coefs)


def constant_poly_spec(matrix: np.ndarray) -> PolySpec:
    """Constant frame with the given (m, k) matrix."""
    matrix = np.asarray(matrix, dtype=float)
    m = matrix.shape[0]
    exps = np.zeros((1, m), dtype=np.int64)
    return PolySpec(exps, matrix[None, :, :].copy())


# ---------------------------------------------------------------------------
# numpy reference evaluators
# ---------------------------------------------------------------------------

def poly_matrix_np(spec: PolySpec, p: np.ndarray) -> np.ndarray:
    """Evaluate the frame matrix at a single point (numpy reference path)."""
    x = np.asarray(p, dtype=float)
    if spec.eps != 1.0:
        x = spec.origin + (spec.eps ** spec.weights) * (x - spec.origin)
    monos = np.prod(x[None, :] ** spec.exps, axis=1)          # (T,)
    A = np.einsum("t,tij->ij", monos, spec.coefs)
    if spec.eps != 1.0:
        A = (spec.eps ** (1.0 - spec.weights))[:, None] * A
    return A


def poly_matrix_batch_np(spec: PolySpec, P: np.ndarray) -> np.ndarray:
    """Evaluate the frame matrix on a batch of points, shape (n, m) -> (n, m, k)."""
    X = np.asarray(P, dtype=float)
    if spec.eps != 1.0:
        X = spec.origin[None, :] + (spec.eps ** spec.weights)[None, :] * (X - spec.origin[None, :])
    monos = np.prod(X[:, None, :] ** spec.exps[None, :, :], axis=2)   # (n, T)
    A = np.einsum("nt,tij->nij", monos, spec.coefs)
    if spec.eps != 1.0:
        A = (spec.eps ** (1.0 - spec.weights))[None, :, None] * A
    return A


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True, inline="always")
def _poly_apply(x, u, exps, coefs, eps, weights, origin, out):
    # out <- A(x) u for the (possibly dilated) polynomial table
    m = coefs.shape[1]
    k = coefs.shape[2]
    y = np.empty(m)
    if eps == 1.0:
        for i in range(m):
            y[i] = x[i]
    else:
        for i in range(m):
            y[i] = origin[i] + (eps ** weights[i]) * (x[i] - origin[i])
    for i in range(m):
        out[i] = 0.0
    for t in range(exps.shape[0]):
        mono = 1.0
        for l in range(m):
            e = exps[t, l]
            for _ in range(e):
                mono *= y[l]
        for i in range(m):
            acc = 0.0
            for j in range(k):
                acc += coefs[t, i, j] * u[j]
            out[i] += acc * mono
    if eps != 1.0:
        for i in range(m):
            out[i] *= eps ** (1.0 - weights[i])


@njit(cache=True, nogil=True)
def _rk4_path_kernel(exps, coefs, eps, weights, origin, o, segs, steps, lo, hi):
    """RK4 over piecewise-constant control; returns (path, exit_index).

    ``exit_index`` is the first sample index outside [lo, hi] (per axis), or
    -1 if the whole path stays inside.  Integration always runs to t = 1 so
    callers can inspect the offending state.
    """
    K = segs.shape[0]
    m = o.shape[0]
    n = K * steps
    path = np.empty((n + 1, m))
    x = o.copy()
    for i in range(m):
        path[0, i] = x[i]
    xt = np.empty(m)
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    h = 1.0 / n
    exit_index = -1
    idx = 1
    for j in range(K):
        u = segs[j]
        for _ in range(steps):
            _poly_apply(x, u, exps, coefs, eps, weights, origin, k1)
            for i in range(m):
                xt[i] = x[i] + 0.5 * h * k1[i]
            _poly_apply(xt, u, exps, coefs, eps, weights, origin, k2)
            for i in range(m):
                xt[i] = x[i] + 0.5 * h * k2[i]
            _poly_apply(xt, u, exps, coefs, eps, weights, origin, k3)
            for i in range(m):
                xt[i] = x[i] + h * k3[i]
            _poly_apply(xt, u, exps, coefs, eps, weights, origin, k4)
            for i in range(m):
                x[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                path[idx, i] = x[i]
            if exit_index < 0:
                for i in range(m):
                    if x[i] < lo[i] or x[i] > hi[i] or x[i] != x[i]:
                        exit_index = idx
                        break
            idx += 1
    return path, exit_index


@njit(cache=True, nogil=True)
def _rk4_final_kernel(exps, coefs, eps, weights, origin, o, segs, steps, lo, hi):
    """Endpoint-only RK4; box checked once per control segment (fast path)."""
    K = segs.shape[0]
    m = o.shape[0]
    x = o.copy()
    xt = np.empty(m)
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    h = 1.0 / (K * steps)
    ok = True
    for j in range(K):
        u = segs[j]
        for _ in range(steps):
            _poly_apply(x, u, exps, coefs, eps, weights, origin, k1)
            for i in range(m):
                xt[i] = x[i] + 0.5 * h * k1[i]
            _poly_apply(xt, u, exps, coefs, eps, weights, origin, k2)
            for i in range(m):
                xt[i] = x[i] + 0.5 * h * k2[i]
            _poly_apply(xt, u, exps, coefs, eps, weights, origin, k3)
            for i in range(m):
                xt[i] = x[i] + h * k3[i]
            _poly_apply(xt, u, exps, coefs, eps, weights, origin, k4)
            for i in range(m):
                x[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if ok:
            for i in range(m):
                if x[i] < lo[i] or x[i] > hi[i] or x[i] != x[i]:
                    ok = False
                    break
    return x, ok


@njit(cache=True, nogil=True)
def _rk4_final_batch_kernel(exps, coefs, eps, weights, origin, O, segs, steps, lo, hi):
    """Batched endpoint map: O is (B, m), segs is (B, K, k) -> (B, m) + ok mask."""
    B = O.shape[0]
    m = O.shape[1]
    K = segs.shape[1]
    out = np.empty((B, m))
    ok = np.ones(B, dtype=np.bool_)
    xt = np.empty(m)
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    h = 1.0 / (K * steps)
    for b in range(B):
        x = O[b].copy()
        for j in range(K):
            u = segs[b, j]
            for _ in range(steps):
                _poly_apply(x, u, exps, coefs, eps, weights, origin, k1)
                for i in range(m):
                    xt[i] = x[i] + 0.5 * h * k1[i]
                _poly_apply(xt, u, exps, coefs, eps, weights, origin, k2)
                for i in range(m):
                    xt[i] = x[i] + 0.5 * h * k2[i]
                _poly_apply(xt, u, exps, coefs, eps, weights, origin, k3)
                for i in range(m):
                    xt[i] = x[i] + h * k3[i]
                _poly_apply(xt, u, exps, coefs, eps, weights, origin, k4)
                for i in range(m):
                    x[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if ok[b]:
                for i in range(m):
                    if x[i] < lo[i] or x[i] > hi[i] or x[i] != x[i]:
                        ok[b] = False
                        break
        out[b] = x
    return out, ok


@njit(cache=True, nogil=True)
def _rk4_path_batch_kernel(exps, coefs, eps, weights, origin, O, segs, steps):
    """Batched full paths for a shared control: O (B, m), segs (K, k) -> (B, n+1, m)."""
    B = O.shape[0]
    m = O.shape[1]
    K = segs.shape[0]
    n = K * steps
    paths = np.empty((B, n + 1, m))
    xt = np.empty(m)
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    h = 1.0 / n
    for b in range(B):
        x = O[b].copy()
        for i in range(m):
            paths[b, 0, i] = x[i]
        idx = 1
        for j in range(K):
            u = segs[j]
            for _ in range(steps):
                _poly_apply(x, u, exps, coefs, eps, weights, origin, k1)
                for i in range(m):
                    xt[i] = x[i] + 0.5 * h * k1[i]
                _poly_apply(xt, u, exps, coefs, eps, weights, origin, k2)
                for i in range(m):
                    xt[i] = x[i] + 0.5 * h * k2[i]
                _poly_apply(xt, u, exps, coefs, eps, weights, origin, k3)
                for i in range(m):
                    xt[i] = x[i] + h * k3[i]
                _poly_apply(xt, u, exps, coefs, eps, weights, origin, k4)
                for i in range(m):
                    x[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                    paths[b, idx, i] = x[i]
                idx += 1
    return paths


# ---------------------------------------------------------------------------
# dispatch wrappers
# ---------------------------------------------------------------------------

def rk4_path_spec(spec: PolySpec, o, segs, steps, lo, hi):
    return _rk4_path_kernel(spec.exps, spec.coefs, spec.eps, spec.weights,
                            spec.origin, o, segs, steps, lo, hi)


def rk4_final_spec(spec: PolySpec, o, segs, steps, lo, hi):
    return _rk4_final_kernel(spec.exps, spec.coefs, spec.eps, spec.weights,
                             spec.origin, o, segs, steps, lo, hi)


def rk4_final_spec_batch(spec: PolySpec, O, segs, steps, lo, hi):
    return _rk4_final_batch_kernel(spec.exps, spec.coefs, spec.eps, spec.weights,
                                   spec.origin, O, segs, steps, lo, hi)


def rk4_path_spec_batch(spec: PolySpec, O, segs, steps):
    return _rk4_path_batch_kernel(spec.exps, spec.coefs, spec.eps, spec.weights,
                                  spec.origin, O, segs, steps)


def rk4_path_callable(matrix_fn, o, segs, steps, lo, hi):
    """Numpy RK4 mirror of `_rk4_path_kernel` for arbitrary matrix callables."""
    o = np.asarray(o, dtype=float)
    segs = np.asarray(segs, dtype=float)
    K = segs.shape[0]
    m = o.shape[0]
    n = K * steps
    path = np.empty((n + 1, m))
    x = o.copy()
    path[0] = x
    h = 1.0 / n
    exit_index = -1
    idx = 1
    for j in range(K):
        u = segs[j]
        for _ in range(steps):
            k1 = matrix_fn(x) @ u
            k2 = matrix_fn(x + 0.5 * h * k1) @ u
            k3 = matrix_fn(x + 0.5 * h * k2) @ u
            k4 = matrix_fn(x + h * k3) @ u
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            path[idx] = x
            if exit_index < 0 and (np.any(x < lo) or np.any(x > hi) or not np.all(np.isfinite(x))):
                exit_index = idx
            idx += 1
    return path, exit_index


# ---------------------------------------------------------------------------
# strip scenario conformal factor
# ---------------------------------------------------------------------------

def _smootherstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def strip_conformal_factor(P, n: float) -> np.ndarray:
    """Conformal factor g_n on the strip R x (-1, 1).

    Plateau values are 1 outside [-2, 2] x (-1 + 1/(4n), 1 - 1/(4n)) and 10
    inside [-1, 1] x (-1 + 1/(2n), 1 - 1/(2n)), joined by quintic smoothstep
    profiles.  ``n = inf`` gives the limit factor (the y profile saturates).
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    ax = np.abs(P[..., 0])
    sx = _smootherstep(2.0 - ax)
    if np.isinf(n):
        sy = np.ones_like(ax)
    else:
        outer = 1.0 - 1.0 / (4.0 * n)
        width = 1.0 / (4.0 * n)
        sy = _smootherstep((outer - np.abs(P[..., 1])) / width)
    return 1.0 + 9.0 * sx * sy
