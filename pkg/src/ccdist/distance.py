"""CC distance estimation: direct control optimization and a reachability
graph shortest path, plus geodesics, balls, and polygonal lengths.

Both estimators produce upper bounds; no lower-bound certification is
attempted.  Tests compare them against analytic oracles and against each
other.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.optimize

_trapz = getattr(np, "trapezoid", None) or np.trapz

from . import _engine, flow as _flow, functionals as _functionals
from .core import (CCError, ChartBox, PiecewiseConstantControl, Trajectory,
                   VaryingNorm, VectorFieldStructure, stable_seed)
from .flow import FlowWord, concat_control

__all__ = [
    "DistanceEstimate",
    "OptOptions",
    "GridGraphSpec",
    "cc_distance_opt",
    "cc_distance_graph",
    "geodesic",
    "polygonal_length",
    "metric_ball",
    "BallResult",
    "homothety_residual",
]

MU_LADDER = (1e1, 1e2, 1e3, 1e4, 1e5, 1e6)


@dataclass(frozen=True)
class DistanceEstimate:
    """Upper-bound distance estimate with solver provenance."""

    value: float
    method: str                                   # 'control-opt' | 'grid-graph'
    best_control: Optional[PiecewiseConstantControl]
    endpoint_residual: float
    evaluations: int
    converged: bool
    trajectory: Optional[Trajectory] = None

    def to_json_dict(self) -> dict:
        return {
            "value": self.value if math.isfinite(self.value) else None,
            "method": self.method,
            "endpoint_residual": self.endpoint_residual,
            "evaluations": self.evaluations,
            "converged": self.converged,
            "control_segments": (None if self.best_control is None
                                 else self.best_control.segments.tolist()),
        }


@dataclass(frozen=True)
class OptOptions:
    """Knobs for :func:`cc_distance_opt`."""

    segments: int = 16
    restarts: int = 8
    endpoint_tol: float = 1e-6
    steps_per_segment: int = 6
    eval_budget: Optional[int] = None     # default 2000 * K * k
    refine: int = 0                       # extra rounds with doubled K
    seed: int = 0
    seed_controls: tuple = ()
    polish: bool = True
    inflation: float = 0.25
    mu_ladder: tuple = MU_LADDER

    def with_seeds(self, controls) -> "OptOptions":
        return replace(self, seed_controls=tuple(controls))


# ---------------------------------------------------------------------------
# penalty objective
# ---------------------------------------------------------------------------

class _PenaltyObjective:
    """Quadratic-mean energy + mu * |End(u) - q|^2 over stacked segment values.

    The smooth surrogate sqrt(mean_t N(gamma, u)^2) replaces the esssup
    inside the optimizer: it dominates the length, agrees with the energy
    exactly on constant-speed controls (what minimizers look like, by the
    constant-speed reparametrization lemma), and avoids the flat plateaus
    that a max-type objective hands a simplex search.
    """

    def __init__(self, o, q, f, N, box, steps, inflation):
        self.o = np.asarray(o, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.f = f
        self.N = N
        self.steps = steps
        big = box.inflated(inflation)
        self.lo, self.hi = big.lower, big.upper
        self.norm_const = N.constant_in_p
        self.evals = 0
        self.barrier = 10.0 * (1.0 + float(np.linalg.norm(self.q - self.o)))
        # prefetched kernel arguments: the hot loop calls the jitted kernel
        # directly to skip per-eval attribute plumbing
        self._spec_args = None
        if f.spec is not None:
            s = f.spec
            self._spec_args = (s.exps, s.coefs, s.eps, s.weights, s.origin)
        self._euclid = N.kind == "euclidean"

    def components(self, segs: np.ndarray):
        """Returns (quadratic-mean energy, endpoint residual, inside box)."""
        self.evals += 1
        if self._spec_args is not None and self.norm_const:
            x, ok = _engine._rk4_final_kernel(*self._spec_args, self.o, segs,
                                              self.steps, self.lo, self.hi)
            if self._euclid:
                speeds = np.sqrt(np.einsum("ij,ij->i", segs, segs))
            else:
                speeds = self.N.values_at(self.o, segs)
        else:
            if self.f.spec is not None:
                path, exit_index = _engine.rk4_path_spec(self.f.spec, self.o, segs,
                                                         self.steps, self.lo, self.hi)
            else:
                path, exit_index = _engine.rk4_path_callable(self.f.matrix, self.o,
                                                             segs, self.steps,
                                                             self.lo, self.hi)
            ok = exit_index < 0
            x = path[-1]
            K = segs.shape[0]
            u_idx = np.minimum(np.arange(path.shape[0] - 1) // self.steps, K - 1)
            speeds = self.N.values(path[:-1], segs[u_idx])
        en = float(np.sqrt(np.mean(speeds * speeds)))
        if not (np.all(np.isfinite(x)) and math.isfinite(en)):
            return 1e12, 1e6, False
        r = float(np.linalg.norm(x - self.q))
        return en, r, bool(ok)

    def penalized(self, mu: float):
        def fun(xflat):
            segs = xflat.reshape(self.K, self.k)
            en, r, ok = self.components(segs)
            val = en + mu * r * r
            if not ok:
                val += self.barrier
            return val

        return fun

    def bind(self, K: int, k: int):
        self.K, self.k = K, k
        return self


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

def _chord_lift_seed(o, q, f, N, K, tol):
    chord = q - o
    if np.linalg.norm(chord) == 0.0:
        return None
    rows = []
    for j in range(K):
        x = o + (j + 0.5) / K * chord
        res = _functionals.fiber_metric(x, chord, f, N,
                                        tol=max(tol, 1e-7 * (1 + np.linalg.norm(chord))))
        if not res.finite:
            return None
        rows.append(res.minimizer)
    return np.array(rows)


def _lsq_chord_seed(o, q, f, K):
    chord = q - o
    rows = []
    for j in range(K):
        x = o + (j + 0.5) / K * chord
        u, *_ = np.linalg.lstsq(f.matrix(x), chord, rcond=None)
        rows.append(u)
    return np.array(rows)


def _loop_word_seeds(o, q, f, K, scales=(0.3, 0.6)):
    """Commutator-loop controls: reach bracket directions from near-closed loops."""
    seeds = []
    base = _lsq_chord_seed(o, q, f, K)
    for i, j in itertools.combinations(range(1, f.dim_k + 1), 2):
        for s in scales:
            for sign in (1.0, -1.0):
                word = FlowWord(((i, sign * s), (j, s), (i, -sign * s), (j, -s)))
                loop = concat_control(word, f.dim_k).resampled(K).segments
                seeds.append(loop + base)
    return seeds


def _random_word_seeds(o, q, f, K, count, rng):
    seeds = []
    scale = float(np.linalg.norm(q - o)) + 0.2
    for _ in range(count):
        n_letters = int(rng.integers(2, 2 * f.dim_m + 1))
        letters = tuple((int(rng.integers(1, f.dim_k + 1)),
                         float(rng.normal(0.0, scale / max(1, n_letters))))
                        for _ in range(n_letters))
        seeds.append(concat_control(FlowWord(letters), f.dim_k).resampled(K).segments)
    return seeds


def _build_seeds(o, q, f, N, K, opts: OptOptions):
    rng = np.random.default_rng(stable_seed("cc-opt", opts.seed, o, q, K))
    seeds = [np.zeros((K, f.dim_k))]
    chord = _chord_lift_seed(o, q, f, N, K, opts.endpoint_tol)
    if chord is not None:
        seeds.append(chord)
    else:
        seeds.append(_lsq_chord_seed(o, q, f, K))
    seeds.extend(_loop_word_seeds(o, q, f, K))
    seeds.extend(_random_word_seeds(o, q, f, K, opts.restarts, rng))
    for ctrl in opts.seed_controls:
        seeds.insert(0, ctrl.resampled(K).segments)
    return seeds


# ---------------------------------------------------------------------------
# main optimizer
# ---------------------------------------------------------------------------

def _minimize_stage(fun, x, fev: int, smooth: bool) -> np.ndarray:
    """One penalty stage: quasi-Newton for smooth frames, simplex otherwise."""
    if smooth:
        res = scipy.optimize.minimize(fun, x, method="L-BFGS-B",
                                      options={"maxfun": fev, "ftol": 1e-14,
                                               "gtol": 1e-10})
    else:
        res = scipy.optimize.minimize(fun, x, method="Nelder-Mead",
                                      options={"maxfev": fev, "xatol": 1e-9,
                                               "fatol": 1e-12, "adaptive": True})
    return res.x


def _run_ladder(obj: _PenaltyObjective, x0: np.ndarray, opts: OptOptions,
                stage_fev: int, budget_left) -> np.ndarray:
    """Escalate the penalty weight along the ladder, warm-starting each stage.

    Rungs whose penalty term would be dominated by the energy at the seed
    are skipped: on low rungs every candidate slides into the zero-control
    basin (the endpoint moves only quadratically along bracket directions,
    so the zero control is a strict local minimum of energy + mu r^2).
    """
    x = x0.reshape(-1).copy()
    en, r, _ = obj.components(x.reshape(obj.K, obj.k))
    floor = 0.5 * max(en, 1e-3) / max(r, 1e-9) ** 2
    rungs = [mu for mu in opts.mu_ladder if mu >= floor] or [opts.mu_ladder[-1]]
    if len(rungs) > 3:
        rungs = [rungs[0], rungs[len(rungs) // 2], rungs[-1]]
    smooth = obj.f.smooth
    for mu in rungs:
        fev = min(stage_fev, max(0, budget_left - obj.evals))
        if fev <= 0:
            break
        x = _minimize_stage(obj.penalized(mu), x, fev, smooth)
    return x


def _newton_polish(obj: _PenaltyObjective, segs: np.ndarray, opts: OptOptions):
    """Drive the endpoint residual to ~0 by Gauss-Newton on the tail slots."""
    K, k = segs.shape
    m = obj.q.shape[0]
    r_slots = min(K, int(math.ceil(m / k)) + 1)
    idx = np.arange(K - r_slots, K)
    en0, r0, ok0 = obj.components(segs)
    best = segs.copy()
    best_r = r0
    step = 1e-6 * (1.0 + float(np.max(np.abs(segs))))
    for _ in range(8):
        if best_r <= 1e-10:
            break
        z = best[idx].reshape(-1)
        J = np.empty((m, z.size))
        _, _, _ = obj.components(best)
        base_end = None
        # central differences of the endpoint wrt tail-slot coordinates
        for c in range(z.size):
            zp = z.copy(); zp[c] += step
            zm = z.copy(); zm[c] -= step
            sp = best.copy(); sp[idx] = zp.reshape(r_slots, k)
            sm = best.copy(); sm[idx] = zm.reshape(r_slots, k)
            ep = _endpoint_of(obj, sp)
            em = _endpoint_of(obj, sm)
            J[:, c] = (ep - em) / (2 * step)
        g = _endpoint_of(obj, best) - obj.q
        try:
            delta = -np.linalg.pinv(J, rcond=1e-10) @ g
        except np.linalg.LinAlgError:
            break
        improved = False
        for alpha in (1.0, 0.5, 0.25):
            cand = best.copy()
            cand[idx] = (z + alpha * delta).reshape(r_slots, k)
            en_c, r_c, ok_c = obj.components(cand)
            if ok_c and r_c < best_r and en_c <= en0 * 1.005 + 1e-12:
                best, best_r, improved = cand, r_c, True
                break
        if not improved:
            break
    return best, best_r


def _endpoint_of(obj: _PenaltyObjective, segs: np.ndarray) -> np.ndarray:
    obj.evals += 1
    if obj.f.spec is not None:
        x, _ = _engine.rk4_final_spec(obj.f.spec, obj.o, segs, obj.steps, obj.lo, obj.hi)
        return x
    path, _ = _engine.rk4_path_callable(obj.f.matrix, obj.o, segs, obj.steps,
                                        obj.lo, obj.hi)
    return path[-1]


def cc_distance_opt(p, q, f: VectorFieldStructure, N: VaryingNorm,
                    box: ChartBox, opts: OptOptions = OptOptions()) -> DistanceEstimate:
    """Estimate d(p, q) by penalized energy minimization over controls.

    Multi-start seeds: straight-line fiber lifts, concatenation words
    (including commutator loops), the zero control, and any warm starts in
    ``opts.seed_controls``.  The penalty weight escalates along
    ``opts.mu_ladder``; the best feasible candidate is polished by a
    Gauss-Newton endpoint correction and constant-speed reparametrization
    (which never increases the energy).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    box.require_inside(p, "p")
    box.require_inside(q, "q")
    k = f.dim_k
    if np.array_equal(p, q):
        ctrl = PiecewiseConstantControl.zero(1, k)
        traj = _flow.endpoint(p, f, ctrl, 2, box, opts.inflation)
        return DistanceEstimate(0.0, "control-opt", ctrl, 0.0, 0, True, traj)

    K = opts.segments
    budget = opts.eval_budget if opts.eval_budget is not None else 2000 * K * k
    obj = _PenaltyObjective(p, q, f, N, box, opts.steps_per_segment, opts.inflation).bind(K, k)

    seeds = _build_seeds(p, q, f, N, K, opts)
    dim = K * k

    # screening pass: one short mid-penalty descent per seed
    mu_mid = opts.mu_ladder[len(opts.mu_ladder) // 2]
    screened = []
    for s in seeds:
        x = _minimize_stage(obj.penalized(mu_mid), s.reshape(-1), 8 * dim, f.smooth)
        en, r, ok = obj.components(x.reshape(K, k))
        score = en + mu_mid * r * r + (obj.barrier if not ok else 0.0)
        screened.append((score, x))
    screened.sort(key=lambda rec: rec[0])

    # deep pass on the best few candidates; prefer feasibility, then energy
    best_x, best_en, best_r = None, math.inf, math.inf

    def consider(x):
        nonlocal best_x, best_en, best_r
        en, r, ok = obj.components(x.reshape(K, k))
        if not ok:
            return
        was_feasible = best_r <= opts.endpoint_tol
        now_feasible = r <= opts.endpoint_tol
        if (now_feasible and (not was_feasible or en < best_en)) or \
                (not was_feasible and not now_feasible and r < best_r):
            best_x, best_en, best_r = x, en, r

    deep = 2 if opts.seed_controls else max(3, opts.restarts // 3)
    stage_fev = 200 * dim if f.smooth else 400 * dim
    for _, x0 in screened[:deep]:
        x = _run_ladder(obj, x0, opts, stage_fev=stage_fev, budget_left=budget)
        consider(x)
        if obj.evals >= budget:
            break

    if best_x is None:
        return DistanceEstimate(math.inf, "control-opt", None, math.inf,
                                obj.evals, False, None)
    segs = best_x.reshape(K, k)

    # optional refinement rounds with doubled slot count
    for _ in range(opts.refine):
        K *= 2
        dim = K * k
        obj.bind(K, k)
        segs = PiecewiseConstantControl(segs).resampled(K).segments
        x = _run_ladder(obj, segs, opts, stage_fev=200 * dim,
                        budget_left=obj.evals + 800 * dim)
        en, r, ok = obj.components(x.reshape(K, k))
        if ok and (r <= max(best_r, opts.endpoint_tol) and en <= best_en + 1e-12):
            segs, best_en, best_r = x.reshape(K, k), en, r

    if opts.polish:
        segs, best_r = _newton_polish(obj, segs, opts)

    ctrl = PiecewiseConstantControl(segs)
    rep = _functionals.reparametrize_constant_speed(
        p, f, ctrl, N, steps_per_segment=max(4, opts.steps_per_segment), box=box)
    final_ctrl, final_traj = rep.control, rep.trajectory
    residual = float(np.linalg.norm(final_traj.final - q))
    if residual > best_r * (1 + 1e-6) + opts.endpoint_tol:
        # reparametrization drift exceeded the solver residual; keep the raw control
        traj = _flow.endpoint(p, f, ctrl, opts.steps_per_segment, box, opts.inflation)
        final_ctrl, final_traj = ctrl, traj
        residual = float(np.linalg.norm(traj.final - q))
    value = _functionals.length(final_traj, N)
    converged = residual <= opts.endpoint_tol
    return DistanceEstimate(float(value), "control-opt", final_ctrl, residual,
                            obj.evals, bool(converged), final_traj)


# ---------------------------------------------------------------------------
# grid-graph estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridGraphSpec:
    """Lattice discretization: per-axis resolution, move budget, and snapping."""

    resolution: tuple
    tau: float
    move_words: Optional[tuple] = None   # FlowWords of length <= 2; default singles
    snap_tol: Optional[float] = None
    steps: int = 8

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        if any(r < 2 for r in res):
            raise ValueError("need resolution >= 2 per axis")
        if not self.tau > 0:
            raise ValueError("move budget tau must be positive")
        if self.move_words is not None:
            words = tuple(self.move_words)
            if any(len(w.letters) > 2 for w in words):
                raise ValueError("move words must have length <= 2")
            object.__setattr__(self, "move_words", words)
        object.__setattr__(self, "resolution", res)

    def moves_for(self, k: int) -> tuple:
        if self.move_words is not None:
            return self.move_words
        singles = []
        for i in range(1, k + 1):
            singles.append(FlowWord(((i, self.tau),)))
            singles.append(FlowWord(((i, -self.tau),)))
        return tuple(singles)


class _Lattice:
    def __init__(self, box: ChartBox, resolution):
        self.box = box
        self.res = tuple(resolution)
        self.axes = [np.linspace(box.lower[i], box.upper[i], self.res[i])
                     for i in range(box.dim_m)]
        self.cell = np.array([(box.upper[i] - box.lower[i]) / (self.res[i] - 1)
                              for i in range(box.dim_m)])
        grids = np.meshgrid(*self.axes, indexing="ij")
        self.points = np.stack([g.reshape(-1) for g in grids], axis=1)
        self.strides = np.array([int(np.prod(self.res[i + 1:])) for i in range(len(self.res))])

    @property
    def n_nodes(self) -> int:
        return self.points.shape[0]

    def snap(self, pts: np.ndarray):
        """Nearest node indices and Euclidean snap displacements for (n, m) pts."""
        pts = np.atleast_2d(pts)
        frac = (pts - self.box.lower) / self.cell
        ij = np.clip(np.round(frac).astype(int), 0, np.array(self.res) - 1)
        snapped = self.box.lower + ij * self.cell
        disp = np.linalg.norm(pts - snapped, axis=1)
        flat = ij @ self.strides
        return flat, disp


def _edge_table(f, N, spec: GridGraphSpec, lat: _Lattice):
    """All lattice edges for every move, built by batched integration."""
    moves = spec.moves_for(f.dim_k)
    snap_tol = spec.snap_tol if spec.snap_tol is not None else 0.5 * float(np.max(lat.cell))
    edges_src, edges_dst, edges_w, edges_move = [], [], [], []
    for move_id, word in enumerate(moves):
        ctrl = concat_control(word, f.dim_k)
        if f.spec is not None:
            paths = _engine.rk4_path_spec_batch(f.spec, lat.points, ctrl.segments,
                                                spec.steps)
        else:
            paths = np.stack([
                _engine.rk4_path_callable(f.matrix, o, ctrl.segments, spec.steps,
                                          np.full(f.dim_m, -np.inf),
                                          np.full(f.dim_m, np.inf))[0]
                for o in lat.points])
        arrivals = paths[:, -1, :]
        dst, disp = lat.snap(arrivals)
        inside = np.all((arrivals >= lat.box.lower - 1e-12) &
                        (arrivals <= lat.box.upper + 1e-12), axis=1)
        valid = inside & (disp <= snap_tol) & (dst != np.arange(lat.n_nodes))
        # integrated move cost under N along the exact (pre-snap) path
        n_samp = paths.shape[1]
        K = ctrl.num_segments
        u_idx = np.minimum(np.arange(n_samp) * K // (n_samp - 1), K - 1)
        U = ctrl.segments[u_idx]
        flatP = paths.reshape(-1, f.dim_m)
        flatU = np.broadcast_to(U, (paths.shape[0], n_samp, f.dim_k)).reshape(-1, f.dim_k)
        speeds = N.values(flatP, flatU).reshape(paths.shape[0], n_samp)
        w = _trapz(speeds, dx=1.0 / (n_samp - 1), axis=1)
        src = np.nonzero(valid)[0]
        edges_src.append(src)
        edges_dst.append(dst[src])
        edges_w.append(w[src])
        edges_move.append(np.full(src.shape, move_id))
    src = np.concatenate(edges_src)
    order = np.argsort(src, kind="stable")
    return (src[order], np.concatenate(edges_dst)[order],
            np.concatenate(edges_w)[order], np.concatenate(edges_move)[order], moves)


def _adjacency(lat, src, dst, w, move):
    starts = np.searchsorted(src, np.arange(lat.n_nodes + 1))
    return starts, dst, w, move


def _dijkstra(lat: _Lattice, starts, dst, w, move, source: int,
              target: Optional[int] = None, cutoff: float = math.inf):
    dist = np.full(lat.n_nodes, math.inf)
    pred = np.full(lat.n_nodes, -1, dtype=int)
    pred_move = np.full(lat.n_nodes, -1, dtype=int)
    dist[source] = 0.0
    heap = [(0.0, source)]
    visited = np.zeros(lat.n_nodes, dtype=bool)
    relaxed = 0
    while heap:
        d, node = heapq.heappop(heap)
        if visited[node]:
            continue
        visited[node] = True
        if node == target:
            break
        if d > cutoff:
            continue
        for e in range(starts[node], starts[node + 1]):
            relaxed += 1
            nd = d + w[e]
            if nd < dist[dst[e]] - 1e-15:
                dist[dst[e]] = nd
                pred[dst[e]] = node
                pred_move[dst[e]] = move[e]
                heapq.heappush(heap, (nd, int(dst[e])))
    return dist, pred, pred_move, relaxed


def cc_distance_graph(p, q, f: VectorFieldStructure, N: VaryingNorm,
                      spec: GridGraphSpec, box: ChartBox) -> DistanceEstimate:
    """Shortest-path distance estimate over a lattice reachability graph.

    Nodes are lattice points of the box; each move word is integrated from
    every node and the arrival snapped to the nearest node (edges whose snap
    displacement exceeds the tolerance are rejected).  Edge weight is the
    move control's length under N.  Independent of :func:`cc_distance_opt`.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    lat = _Lattice(box, spec.resolution)
    snap_tol = spec.snap_tol if spec.snap_tol is not None else 0.5 * float(np.max(lat.cell))
    (i_p, d_p), (i_q, d_q) = (lat.snap(p[None, :]), lat.snap(q[None, :]))
    if d_p[0] > snap_tol or d_q[0] > snap_tol:
        raise ValueError("p or q does not snap to a lattice node within tolerance")
    source, target = int(i_p[0]), int(i_q[0])
    if source == target:
        return DistanceEstimate(0.0, "grid-graph", None, float(d_p[0] + d_q[0]), 0, True)

    src, dst, w, move, moves = _edge_table(f, N, spec, lat)
    starts, dst, w, move = _adjacency(lat, src, dst, w, move)
    dist, pred, pred_move, relaxed = _dijkstra(lat, starts, dst, w, move, source, target)

    if not math.isfinite(dist[target]):
        return DistanceEstimate(math.inf, "grid-graph", None, math.inf, relaxed, False)

    # reconstruct the move word along the shortest path
    letters = []
    node = target
    while node != source:
        word = moves[pred_move[node]]
        letters = list(word.letters) + letters
        node = pred[node]
    ctrl = concat_control(FlowWord(tuple(letters)), f.dim_k)
    traj = _flow.endpoint(p, f, ctrl, 4, box, inflation=0.5)
    residual = float(np.linalg.norm(traj.final - q))
    return DistanceEstimate(float(dist[target]), "grid-graph", ctrl, residual,
                            relaxed, True, traj)


@dataclass(frozen=True)
class BallResult:
    """Lattice nodes within a metric ball, with their distance values."""

    points: np.ndarray
    values: np.ndarray
    center_index: int

    def contains_point(self, p, atol=1e-9) -> bool:
        return bool(np.any(np.all(np.abs(self.points - np.asarray(p)) <= atol, axis=1)))


def metric_ball(p, r: float, f: VectorFieldStructure, N: VaryingNorm,
                spec: GridGraphSpec, box: ChartBox) -> BallResult:
    """Single-source sweep: lattice nodes with graph distance <= r from p."""
    if not r > 0:
        raise ValueError("radius must be positive")
    p = np.asarray(p, dtype=float)
    lat = _Lattice(box, spec.resolution)
    i_p, d_p = lat.snap(p[None, :])
    snap_tol = spec.snap_tol if spec.snap_tol is not None else 0.5 * float(np.max(lat.cell))
    if d_p[0] > snap_tol:
        raise ValueError("center does not snap to a lattice node within tolerance")
    src, dst, w, move, _ = _edge_table(f, N, spec, lat)
    starts, dst, w, move = _adjacency(lat, src, dst, w, move)
    dist, *_ = _dijkstra(lat, starts, dst, w, move, int(i_p[0]), cutoff=r)
    mask = dist <= r
    return BallResult(lat.points[mask], dist[mask], int(i_p[0]))


# ---------------------------------------------------------------------------
# geodesics and lengths
# ---------------------------------------------------------------------------

def geodesic(p, q, f: VectorFieldStructure, N: VaryingNorm, box: ChartBox,
             opts: OptOptions = OptOptions()) -> tuple[Trajectory, DistanceEstimate]:
    """Constant-speed (approximate) minimizer steering p to q."""
    est = cc_distance_opt(p, q, f, N, box, opts)
    if not est.converged or est.trajectory is None:
        raise CCError(f"no feasible control found for {p} -> {q} "
                      f"(residual {est.endpoint_residual:.3g})")
    return est.trajectory, est


def polygonal_length(traj: Trajectory, f: VectorFieldStructure, N: VaryingNorm,
                     partition: Sequence[float], box: ChartBox,
                     opts: OptOptions = OptOptions()) -> float:
    """Sum of pairwise distance estimates along a partition of the curve.

    Each gap is warm-started from the restriction of the trajectory's own
    control, so refinements of a geodesic stay tight.
    """
    ts = np.asarray(partition, dtype=float)
    if ts.ndim != 1 or len(ts) < 2 or np.any(np.diff(ts) <= 0):
        raise ValueError("partition must be strictly increasing with >= 2 entries")
    if ts[0] < traj.times[0] - 1e-12 or ts[-1] > traj.times[-1] + 1e-12:
        raise ValueError("partition outside trajectory time range")
    total = 0.0
    for a, b in zip(ts[:-1], ts[1:]):
        pa, pb = traj.state_at(a), traj.state_at(b)
        warm = traj.control.restricted(max(a, 0.0), min(b, 1.0), opts.segments)
        est = cc_distance_opt(pa, pb, f, N, box, opts.with_seeds((warm,)))
        if not est.converged:
            raise CCError(f"gap {a:.3f}->{b:.3f} did not converge")
        total += est.value
    return float(total)


def homothety_residual(traj: Trajectory, value: float, f: VectorFieldStructure,
                       N: VaryingNorm, box: ChartBox, pairs: Sequence[tuple],
                       opts: OptOptions = OptOptions()) -> float:
    """Max relative defect of d(gamma(s), gamma(t)) = |t - s| d(p, q)."""
    worst = 0.0
    for s, t in pairs:
        ps, pt = traj.state_at(s), traj.state_at(t)
        warm = traj.control.restricted(s, t, opts.segments)
        est = cc_distance_opt(ps, pt, f, N, box, opts.with_seeds((warm,)))
        if not est.converged:
            raise CCError(f"homothety pair ({s}, {t}) did not converge")
        worst = max(worst, abs(est.value - abs(t - s) * value) / max(value, 1e-12))
    return float(worst)
