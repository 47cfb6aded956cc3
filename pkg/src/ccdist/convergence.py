"""Distance tables over structure families and empirical convergence checks:
local/compact-uniform surrogates, rescaling identities, relaxation probes,
and Gromov-Hausdorff upper bounds on shared samples."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import (CCError, ChartBox, PiecewiseConstantControl, StructureFamily,
                   VaryingNorm, VectorFieldStructure, stable_seed)
from .distance import (DistanceEstimate, GridGraphSpec, OptOptions,
                       cc_distance_graph, cc_distance_opt)

__all__ = [
    "DistanceTable",
    "ConvergenceReport",
    "TableOptions",
    "family_distance_table",
    "uniform_convergence_report",
    "rescaling_identity_check",
    "relaxation_probe",
    "RelaxationProbe",
    "gh_upper_bound",
    "gh_upper_bound_bijections",
]


@dataclass(frozen=True)
class TableOptions:
    """How family tables are computed: estimator, solver options, threading."""

    method: str = "control-opt"          # or 'grid-graph'
    opt: OptOptions = OptOptions()
    graph_spec: Optional[GridGraphSpec] = None
    threads: int = 1
    cascade: bool = True                 # warm-start members from one another


@dataclass(frozen=True)
class DistanceTable:
    """All-pairs distance estimates for one family member on a point set."""

    points: np.ndarray               # (n, m)
    values: np.ndarray               # (n, n) symmetric, diag 0; inf = not found
    param: object
    method: str
    converged: np.ndarray            # (n, n) bool
    evaluations: int
    controls: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def pair_values(self):
        n = self.n_points
        for i in range(n):
            for j in range(i + 1, n):
                yield i, j, self.values[i, j]

    def max_abs_deviation(self, other: "DistanceTable") -> float:
        self._check_same_points(other)
        return float(np.max(np.abs(self.values - other.values)))

    def _check_same_points(self, other: "DistanceTable"):
        if self.points.shape != other.points.shape or \
                not np.allclose(self.points, other.points, atol=0.0):
            raise ValueError("tables computed on different point sets")


def _pairs(n: int):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def family_distance_table(fam: StructureFamily, lam, points,
                          topts: TableOptions = TableOptions(),
                          warm_controls: Optional[dict] = None) -> DistanceTable:
    """All-pairs distances for member ``lam`` with shared solver settings.

    ``warm_controls`` optionally maps pair indices (i, j) to controls from
    another member; they are adapted through the family's control adapter so
    cross-parameter comparisons are like-for-like.  Pairs that fail to
    converge are tagged (value kept, ``converged`` false) rather than
    silently zeroed.
    """
    f, N = fam.member(lam)
    box = fam.box
    if box is None:
        raise ValueError("family carries no chart box; supply one via the scenario")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    for pt in points:
        box.require_inside(pt, "table point")
    n = points.shape[0]
    values = np.zeros((n, n))
    conv = np.ones((n, n), dtype=bool)
    controls = {}
    evals = 0

    def solve(pair):
        i, j = pair
        if topts.method == "grid-graph":
            if topts.graph_spec is None:
                raise ValueError("grid-graph tables need a graph spec")
            return cc_distance_graph(points[i], points[j], f, N,
                                     topts.graph_spec, box)
        opt = topts.opt
        if warm_controls and (i, j) in warm_controls and warm_controls[(i, j)] is not None:
            opt = opt.with_seeds(tuple(opt.seed_controls) + (warm_controls[(i, j)],))
        opt = replace(opt, seed=stable_seed(opt.seed, lam, i, j))
        return cc_distance_opt(points[i], points[j], f, N, box, opt)

    pair_list = _pairs(n)
    if topts.threads > 1:
        with ThreadPoolExecutor(max_workers=topts.threads) as pool:
            results = list(pool.map(solve, pair_list))
    else:
        results = [solve(pair) for pair in pair_list]

    for (i, j), est in zip(pair_list, results):
        values[i, j] = values[j, i] = est.value
        conv[i, j] = conv[j, i] = est.converged
        controls[(i, j)] = est.best_control
        evals += est.evaluations
    return DistanceTable(points, values, lam, topts.method, conv, evals, controls)


def _adapt_controls(fam: StructureFamily, lam_from, lam_to, controls: dict):
    if fam.control_adapter is None:
        return None
    out = {}
    for pair, ctrl in controls.items():
        out[pair] = None if ctrl is None else fam.control_adapter(lam_from, lam_to, ctrl)
    return out


@dataclass(frozen=True)
class ConvergenceReport:
    """Empirical compact-uniform convergence check on a finite point set.

    The verdict is ``consistent-with-uniform-convergence`` iff the sup
    deviation s(lambda) is nonincreasing toward the limit within the slack
    and the final member lands below the threshold; it is an empirical
    check, never a proof.
    """

    params_ordered: tuple            # approach order, limit excluded
    limit_param: object
    sup_deviation: dict              # lambda -> s(lambda)
    worst_pair: dict                 # lambda -> (i, j)
    tables: dict                     # lambda -> DistanceTable (incl. limit)
    monotone: bool
    final_below_threshold: bool
    threshold: float
    slack: float
    verdict: str
    points: np.ndarray

    def rows(self):
        """Flat (lambda, i, j, d_lambda, d_limit, abs_dev) records."""
        limit_tab = self.tables[self.limit_param]
        for lam in self.params_ordered:
            tab = self.tables[lam]
            for i, j, val in tab.pair_values():
                yield (lam, i, j, val, limit_tab.values[i, j],
                       abs(val - limit_tab.values[i, j]))

    def to_json_dict(self) -> dict:
        return {
            "limit_param": _plain(self.limit_param),
            "params_ordered": [_plain(p) for p in self.params_ordered],
            "sup_deviation": {str(_plain(k)): v for k, v in self.sup_deviation.items()},
            "worst_pair": {str(_plain(k)): list(map(int, v))
                           for k, v in self.worst_pair.items()},
            "monotone": self.monotone,
            "final_below_threshold": self.final_below_threshold,
            "threshold": self.threshold,
            "slack": self.slack,
            "verdict": self.verdict,
        }


def _plain(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def uniform_convergence_report(fam: StructureFamily, points,
                               topts: TableOptions = TableOptions(),
                               threshold: float = 0.05,
                               slack: float = 0.10) -> ConvergenceReport:
    """Sup-deviation profile s(lambda) = max_pairs |d_lambda - d_limit|.

    The limit table is computed first; members are then solved nearest the
    limit first so each can warm-start from its neighbor (the family's
    control adapter makes transfers admissible).  Not-found pairs fail
    loudly.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    order = fam.approach_order()                  # farthest -> nearest
    limit_tab = family_distance_table(fam, fam.limit_param, points, topts)
    _require_converged(limit_tab)
    tables = {fam.limit_param: limit_tab}

    warm = limit_tab.controls if topts.cascade else None
    prev = fam.limit_param
    for lam in reversed(order):                   # nearest the limit first
        warm_adapted = (_adapt_controls(fam, prev, lam, warm)
                        if (topts.cascade and warm is not None) else None)
        tab = family_distance_table(fam, lam, points, topts, warm_adapted)
        _require_converged(tab)
        tables[lam] = tab
        warm = tab.controls if topts.cascade else None
        prev = lam

    sup_dev, worst = {}, {}
    for lam in order:
        diffs = np.abs(tables[lam].values - limit_tab.values)
        sup_dev[lam] = float(np.max(diffs))
        ij = np.unravel_index(int(np.argmax(diffs)), diffs.shape)
        worst[lam] = (int(min(ij)), int(max(ij)))

    seq = [sup_dev[lam] for lam in order]
    monotone = all(seq[i + 1] <= seq[i] * (1.0 + slack) + 1e-12
                   for i in range(len(seq) - 1))
    final_ok = bool(seq and seq[-1] <= threshold)
    verdict = ("consistent-with-uniform-convergence" if (monotone and final_ok)
               else "non-convergence-flagged")
    return ConvergenceReport(tuple(order), fam.limit_param, sup_dev, worst,
                             tables, monotone, final_ok, threshold, slack,
                             verdict, points)


def _require_converged(tab: DistanceTable):
    if not np.all(tab.converged):
        bad = np.argwhere(~tab.converged)
        i, j = bad[0]
        raise CCError(f"distance table for {tab.param!r} has not-found pairs, "
                      f"e.g. ({i}, {j}); refusing to report convergence")


# ---------------------------------------------------------------------------
# rescaling identity
# ---------------------------------------------------------------------------

def rescaling_identity_check(f: VectorFieldStructure, N: VaryingNorm,
                             weights, eps_list: Sequence[float],
                             pairs: Sequence[tuple], limit: tuple,
                             origin=None, box: ChartBox | None = None,
                             opt: OptOptions = OptOptions()) -> dict:
    """Check d_(f_eps,N_eps)(p, q) = eps^{-1} d_(f_1,N_1)(delta_eps p, delta_eps q).

    Both sides are estimated independently; the base side's optimal control
    transfers exactly (u -> u / eps) and seeds the rescaled side, so the
    residual isolates solver noise rather than seeding luck.
    Returns per-case rows and the max relative residual.
    """
    from .scenarios import dilation_family
    fam = dilation_family(f, N, weights, list(eps_list), limit, origin=origin, box=box)
    delta = fam.dilation_map
    f1, n1 = fam.member(1.0) if any(e == 1.0 for e in fam.params) else (f, N)
    rows = []
    worst = 0.0
    for eps in eps_list:
        fe, ne = fam.member(float(eps))
        for (p, q) in pairs:
            p = np.asarray(p, dtype=float)
            q = np.asarray(q, dtype=float)
            dp, dq = delta(eps, p), delta(eps, q)
            base = cc_distance_opt(dp, dq, f1, n1, fam.box,
                                   replace(opt, seed=stable_seed(opt.seed, "base", eps, p, q)))
            if not base.converged:
                raise CCError(f"base-side estimate failed for eps={eps}, pair {p}->{q}")
            rhs = base.value / eps
            seeds = ()
            if base.best_control is not None:
                seeds = (PiecewiseConstantControl(base.best_control.segments / eps),)
            lhs_est = cc_distance_opt(p, q, fe, ne, fam.box,
                                      replace(opt, seed=stable_seed(opt.seed, "resc", eps, p, q),
                                              seed_controls=seeds))
            if not lhs_est.converged:
                raise CCError(f"rescaled-side estimate failed for eps={eps}, pair {p}->{q}")
            resid = abs(lhs_est.value - rhs) / max(rhs, 1e-12)
            worst = max(worst, resid)
            rows.append({"eps": float(eps), "p": p.tolist(), "q": q.tolist(),
                         "lhs": lhs_est.value, "rhs": rhs, "residual": resid})
    return {"max_residual": worst, "rows": rows}


# ---------------------------------------------------------------------------
# relaxation probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelaxationProbe:
    limit_value: float
    min_over_neighbors: float
    witness: dict
    consistent: bool
    noise: float


def relaxation_probe(fam: StructureFamily, p, q, radius: float, samples: int,
                     topts: TableOptions = TableOptions(), noise: float = 0.08,
                     seed: int = 0) -> RelaxationProbe:
    """Empirical check of d_limit(p,q) >= inf over approaching samples.

    Samples neighbor pairs (p_n, q_n) in balls of the given radius around
    (p, q), evaluates every non-limit member on them (plus the center pair),
    and reports the min against the limit value.  For boundedly compact
    scenarios the two should agree within noise; the strip counterexample
    shows a strict gap.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    box = fam.box
    rng = np.random.default_rng(stable_seed("relax", seed, p, q))
    others = [lam for lam in fam.params
              if not StructureFamily._same(lam, fam.limit_param)]
    if not others:
        raise ValueError("relaxation probe needs at least one non-limit member")

    lattice = None
    if topts.method == "grid-graph":
        from .distance import _Lattice
        lattice = _Lattice(box, topts.graph_spec.resolution)

    def snap(pt):
        # graph estimates are only defined on lattice nodes
        if lattice is None:
            return pt
        idx, _ = lattice.snap(pt[None, :])
        return lattice.points[int(idx[0])]

    def est(lam, a, b):
        f, N = fam.member(lam)
        if topts.method == "grid-graph":
            return cc_distance_graph(a, b, f, N, topts.graph_spec, box)
        return cc_distance_opt(a, b, f, N, box,
                               replace(topts.opt, seed=stable_seed(seed, lam, a, b)))

    p, q = snap(p), snap(q)

    f_lim, n_lim = fam.limit_member
    if topts.method == "grid-graph":
        limit_est = cc_distance_graph(p, q, f_lim, n_lim, topts.graph_spec, box)
    else:
        limit_est = cc_distance_opt(p, q, f_lim, n_lim, box,
                                    replace(topts.opt, seed=stable_seed(seed, "lim", p, q)))
    if not limit_est.converged:
        raise CCError("limit estimate did not converge")

    best = math.inf
    witness = {}
    for s in range(samples):
        if s == 0:
            pn, qn = p, q
        else:
            pn = snap(_ball_sample(rng, p, radius, box))
            qn = snap(_ball_sample(rng, q, radius, box))
        lam = others[s % len(others)]
        e = est(lam, pn, qn)
        if e.converged and e.value < best:
            best = e.value
            witness = {"param": _plain(lam), "p": pn.tolist(), "q": qn.tolist(),
                       "value": e.value}
    consistent = best <= limit_est.value * (1.0 + noise) + 1e-12
    if fam.limit_boundedly_compact:
        consistent = consistent and best >= limit_est.value * (1.0 - noise) - 1e-12
    return RelaxationProbe(limit_est.value, best, witness, bool(consistent), noise)


def _ball_sample(rng, center, radius, box: ChartBox):
    for _ in range(64):
        offset = rng.uniform(-radius, radius, size=center.shape)
        cand = center + offset
        if box.contains(cand):
            return cand
    raise ValueError("neighbor radius leaves the chart box; shrink it")


# ---------------------------------------------------------------------------
# Gromov-Hausdorff surrogates
# ---------------------------------------------------------------------------

def gh_upper_bound(table_a: DistanceTable, table_b: DistanceTable) -> float:
    """Half the sup distance discrepancy under the identity correspondence.

    An upper bound for the GH distance of the two finite samples; equals
    half the convergence report's sup deviation by construction.
    """
    table_a._check_same_points(table_b)
    return 0.5 * table_a.max_abs_deviation(table_b)


def gh_upper_bound_bijections(table_a: DistanceTable, table_b: DistanceTable) -> float:
    """Brute-force refinement over relabelings (<= 6 points).

    Minimizes the identity bound over bijections of the sample; still an
    upper bound for the GH distance.
    """
    import itertools
    n = table_a.n_points
    if n > 6:
        raise ValueError("bijection search is limited to 6 points")
    if table_b.n_points != n:
        raise ValueError("tables must have equally many points")
    best = math.inf
    A, B = table_a.values, table_b.values
    for perm in itertools.permutations(range(n)):
        perm = list(perm)
        best = min(best, 0.5 * float(np.max(np.abs(A - B[np.ix_(perm, perm)]))))
    return best
