"""Built-in worked examples as ready-made structure families.

Each constructor returns a :class:`~ccdist.core.StructureFamily` carrying a
default chart box and, where it exists, the dilation map and a
control-transfer adapter used by distance sweeps for warm starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._engine import PolySpec, identity_poly_spec, strip_conformal_factor
from .core import (ChartBox, PiecewiseConstantControl, StructureFamily,
                   VaryingNorm, VectorFieldStructure)

__all__ = [
    "ScenarioSpec",
    "SCENARIO_NAMES",
    "heisenberg_structure",
    "heisenberg_family",
    "dilation_family",
    "left_invariant_family",
    "strip_counterexample_family",
    "euclidean_family",
    "generic_family",
    "build_scenario",
    "scenario_summaries",
    "equi_lipschitz_report",
    "method_agreement_cases",
]

SCENARIO_NAMES = ("euclidean", "heisenberg-eps", "dilation", "lie-left-invariant",
                  "generic-family", "strip-counterexample")


@dataclass(frozen=True)
class ScenarioSpec:
    """Validated (name, parameter-table) pair for config-driven construction."""

    name: str
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in SCENARIO_NAMES:
            raise ValueError(f"unknown scenario '{self.name}'; known: {SCENARIO_NAMES}")


# ---------------------------------------------------------------------------
# Heisenberg
# ---------------------------------------------------------------------------

def _heisenberg_spec(eps: float) -> PolySpec:
    # frame columns X = dx - (y/2) dz, Y = dy + (x/2) dz, eps * Z = eps dz
    # monomials: 1, x, y
    exps = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=np.int64)
    coefs = np.zeros((3, 3, 3))
    coefs[0, 0, 0] = 1.0
    coefs[0, 1, 1] = 1.0
    coefs[0, 2, 2] = eps
    coefs[1, 2, 1] = 0.5
    coefs[2, 2, 0] = -0.5
    return PolySpec(exps, coefs)


def heisenberg_structure(eps: float) -> VectorFieldStructure:
    """Frame (X, Y, eps Z) of the first Heisenberg group in R^3 coordinates."""
    return VectorFieldStructure.from_poly(
        _heisenberg_spec(float(eps)), smooth=True, name=f"heisenberg-eps={eps:g}")


def _heisenberg_box() -> ChartBox:
    return ChartBox(np.array([-2.5, -2.5, -2.0]), np.array([2.5, 2.5, 2.0]))


def heisenberg_dilation(eps: float, P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    scale = np.array([eps, eps, eps * eps])
    return P * scale


def heisenberg_family(eps: Sequence[float]) -> StructureFamily:
    """Family f_eps(v) = v1 X + v2 Y + eps v3 Z with Euclidean norm.

    The limit member eps = 0 (appended when missing) is the sub-Riemannian
    structure; eps = 1 is the Riemannian one.  An f_eps control transfers to
    f_eps' by rescaling its third component, which distance sweeps use to
    warm-start members from one another.
    """
    eps = [float(e) for e in eps]
    if not eps:
        raise ValueError("need at least one epsilon")
    if any(e < 0 for e in eps):
        raise ValueError("epsilon must be >= 0")
    if 0.0 not in eps:
        eps = eps + [0.0]
    norm = VaryingNorm.euclidean(3)

    def member(lam):
        return heisenberg_structure(lam), norm

    def adapter(lam_from, lam_to, ctrl: PiecewiseConstantControl):
        seg = ctrl.segments.copy()
        if lam_to == 0.0:
            seg[:, 2] = 0.0
        else:
            seg[:, 2] *= lam_from / lam_to
        return PiecewiseConstantControl(seg)

    return StructureFamily(tuple(sorted(set(eps))), member, 0.0, True,
                           name="heisenberg-eps", box=_heisenberg_box(),
                           dilation_map=heisenberg_dilation,
                           control_adapter=adapter)


# ---------------------------------------------------------------------------
# dilation (tangent-cone rescaling) family
# ---------------------------------------------------------------------------

def dilation_family(f: VectorFieldStructure, N: VaryingNorm, weights: Sequence[int],
                    eps: Sequence[float], limit: tuple, origin=None,
                    box: ChartBox | None = None) -> StructureFamily:
    """Rescaled structures f_eps = eps (D delta_eps)^{-1} f o delta_eps.

    ``delta_eps`` is the weighted dilation around ``origin``; the limit
    member (nilpotent approximation and frozen norm) is supplied by the
    caller, since constructing privileged coordinates is out of scope.
    ``f`` must carry a polynomial table.
    """
    if f.spec is None:
        raise ValueError("dilation families require a polynomial structure")
    if f.spec.eps != 1.0:
        raise ValueError("base structure is already dilated")
    w = np.asarray(weights, dtype=float)
    if w.shape != (f.dim_m,) or np.any(w < 1):
        raise ValueError("need one weight >= 1 per coordinate")
    origin = np.zeros(f.dim_m) if origin is None else np.asarray(origin, dtype=float)
    eps = [float(e) for e in eps]
    if any(e <= 0 for e in eps):
        raise ValueError("dilation parameters must be positive (limit is separate)")
    f_limit, n_limit = limit
    params = tuple(sorted(set(eps))) + ((0.0,) if 0.0 not in eps else ())

    def delta(e: float, P: np.ndarray) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        return origin + (e ** w) * (P - origin)

    def member(lam):
        if lam == 0.0:
            return f_limit, n_limit
        if lam == 1.0:
            return f, N
        spec = f.spec.with_dilation(lam, w, origin)
        fe = VectorFieldStructure.from_poly(spec, smooth=f.smooth,
                                            name=f"{f.name}-dilated-{lam:g}")
        return fe, N.dilated(lam, w, origin)

    def adapter(lam_from, lam_to, ctrl: PiecewiseConstantControl):
        # exact transfer:  u under f_a  <->  (a/b) u under f_b
        if lam_from == 0.0 or lam_to == 0.0:
            return ctrl
        return PiecewiseConstantControl(ctrl.segments * (lam_from / lam_to))

    if box is None:
        box = ChartBox(np.full(f.dim_m, -2.5), np.full(f.dim_m, 2.5))
    return StructureFamily(params, member, 0.0, True, name="dilation",
                           box=box, dilation_map=delta, control_adapter=adapter)


def heisenberg_xy_structure(perturbation: float = 0.0) -> VectorFieldStructure:
    """Rank-2 bracket-generating frame {X + c x^2 dz, Y} on R^3.

    This is the frame the weighted dilations (1, 1, 2) act on: the
    unperturbed columns are degree-homogeneous, the c x^2 dz term rescales
    by eps.  (The full Riemannian frame is not dilation-homogeneous: its Z
    column would blow up like 1/eps.)
    """
    c = float(perturbation)
    exps = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], dtype=np.int64)
    coefs = np.zeros((4, 3, 2))
    coefs[0, 0, 0] = 1.0
    coefs[0, 1, 1] = 1.0
    coefs[1, 2, 1] = 0.5
    coefs[2, 2, 0] = -0.5
    coefs[3, 2, 0] = c
    name = "heisenberg-xy" if c == 0.0 else f"heisenberg-xy-perturbed-{c:g}"
    return VectorFieldStructure.from_poly(PolySpec(exps, coefs), smooth=True,
                                          name=name)


def perturbed_heisenberg_structure(c: float = 1.0) -> VectorFieldStructure:
    return heisenberg_xy_structure(c)


# ---------------------------------------------------------------------------
# left-invariant families on the Heisenberg group model
# ---------------------------------------------------------------------------

def _left_invariant_spec(basis: np.ndarray) -> PolySpec:
    """Frame of left-invariant extensions of Lie-algebra vectors in H^1.

    In exponential coordinates the extension of v = (a, b, c) is
    ``(a, b, c + (x b - y a) / 2)``, linear in p.
    """
    k = basis.shape[0]
    exps = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=np.int64)
    coefs = np.zeros((3, 3, k))
    for j, v in enumerate(basis):
        a, b, c = v
        coefs[0, 0, j] = a
        coefs[0, 1, j] = b
        coefs[0, 2, j] = c
        coefs[1, 2, j] = b / 2.0
        coefs[2, 2, j] = -a / 2.0
    return PolySpec(exps, coefs)


def left_invariant_family(basis_seqs: dict, norms: Optional[dict] = None,
                          limit_param=None) -> StructureFamily:
    """CC structures from subspace bases of the Heisenberg Lie algebra.

    ``basis_seqs`` maps each parameter to a list of k independent vectors in
    R^3 (the Lie algebra model); the frame is their left-invariant
    extensions.  ``norms`` optionally maps parameters to control-space
    norms (default Euclidean on the coefficients).
    """
    if not basis_seqs:
        raise ValueError("need at least one basis")
    bases = {}
    ks = set()
    for lam, vecs in basis_seqs.items():
        B = np.asarray(vecs, dtype=float)
        if B.ndim != 2 or B.shape[1] != 3:
            raise ValueError(f"basis for {lam!r} must be a list of vectors in R^3")
        if np.linalg.matrix_rank(B) < B.shape[0]:
            raise ValueError(f"basis for {lam!r} is degenerate (dependent vectors)")
        bases[lam] = B
        ks.add(B.shape[0])
    if len(ks) != 1:
        raise ValueError("all bases must have the same number of vectors")
    k = ks.pop()
    if limit_param is None:
        limit_param = max(bases, key=lambda lam: _param_magnitude(lam))
    norms = norms or {}

    def member(lam):
        f = VectorFieldStructure.from_poly(_left_invariant_spec(bases[lam]),
                                           smooth=True, name=f"left-invariant-{lam!r}")
        return f, norms.get(lam, VaryingNorm.euclidean(k))

    def adapter(lam_from, lam_to, ctrl):
        return ctrl

    return StructureFamily(tuple(bases.keys()), member, limit_param, True,
                           name="lie-left-invariant", box=_heisenberg_box(),
                           control_adapter=adapter)


def _param_magnitude(lam):
    try:
        return float(lam)
    except (TypeError, ValueError):
        return -math.inf


def subspace_sequence_family(n_values: Sequence[int]) -> StructureFamily:
    """The worked sequence H_n = span{e1, e2 + (1/n) e3} with limit {e1, e2}."""
    seqs = {float(n): [[1.0, 0.0, 0.0], [0.0, 1.0, 1.0 / n]] for n in n_values}
    seqs[math.inf] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
    return left_invariant_family(seqs, limit_param=math.inf)


# ---------------------------------------------------------------------------
# strip counterexample (non-boundedly-compact limit)
# ---------------------------------------------------------------------------

def _strip_box() -> ChartBox:
    return ChartBox(np.array([-2.6, -0.9875]), np.array([2.6, 0.9875]))


def strip_counterexample_family(n_values: Sequence[int]) -> StructureFamily:
    """Conformal factors g_n on the strip R x (-1, 1), identity frame.

    The norm is N_n(p, u) = sqrt(g_n(p)) |u|, so control lengths match
    Riemannian lengths for the tensor g_n (dx^2 + dy^2).  The limit member
    (g_inf = 10 across the whole central band) is not boundedly compact on
    the strip, which is the point of the example.
    """
    ns = [int(n) for n in n_values]
    if any(n < 1 for n in ns):
        raise ValueError("strip parameters must be >= 1")
    params = tuple(sorted(set(float(n) for n in ns))) + (math.inf,)
    frame = VectorFieldStructure.from_poly(identity_poly_spec(2), smooth=True,
                                           name="strip-identity")

    def member(lam):
        return frame, VaryingNorm.strip(lam)

    return StructureFamily(params, member, math.inf, False,
                           name="strip-counterexample", box=_strip_box())


# ---------------------------------------------------------------------------
# euclidean and generic families
# ---------------------------------------------------------------------------

def euclidean_family(dim: int = 2) -> StructureFamily:
    """Identity frame with the Euclidean norm (single-member family)."""
    frame = VectorFieldStructure.from_poly(identity_poly_spec(dim), smooth=True,
                                           name=f"euclidean-{dim}d")
    norm = VaryingNorm.euclidean(dim)
    box = ChartBox(np.full(dim, -2.0), np.full(dim, 2.0))

    def member(lam):
        return frame, norm

    return StructureFamily((0.0,), member, 0.0, True, name="euclidean", box=box,
                           control_adapter=lambda a, b, c: c)


def structure_from_table(table: dict) -> VectorFieldStructure:
    """Polynomial structure from a declarative coefficient table.

    ``table`` needs ``dim_m``, ``dim_k``, and ``terms``: a list of
    ``{"exponents": [..m ints..], "coefficients": [[m x k floats]]}``.
    """
    m, k = int(table["dim_m"]), int(table["dim_k"])
    terms = table["terms"]
    exps = np.array([t["exponents"] for t in terms], dtype=np.int64)
    coefs = np.array([t["coefficients"] for t in terms], dtype=float)
    if exps.shape != (len(terms), m) or coefs.shape != (len(terms), m, k):
        raise ValueError("inconsistent polynomial table shapes")
    return VectorFieldStructure.from_poly(PolySpec(exps, coefs), smooth=True,
                                          name=table.get("name", "table"))


def generic_family(members: dict, limit_param, box: ChartBox | None = None,
                   norms: Optional[dict] = None) -> StructureFamily:
    """Family assembled from per-parameter polynomial tables."""
    structs = {lam: structure_from_table(tab) for lam, tab in members.items()}
    ks = {s.dim_k for s in structs.values()}
    ms = {s.dim_m for s in structs.values()}
    if len(ks) != 1 or len(ms) != 1:
        raise ValueError("member tables disagree in dimensions")
    norms = norms or {}
    k, m = ks.pop(), ms.pop()

    def member(lam):
        return structs[lam], norms.get(lam, VaryingNorm.euclidean(k))

    if box is None:
        box = ChartBox(np.full(m, -2.0), np.full(m, 2.0))
    return StructureFamily(tuple(structs.keys()), member, limit_param, True,
                           name="generic-family", box=box)


def equi_lipschitz_report(fam: StructureFamily, box: ChartBox | None = None,
                          samples: int = 128, seed: int = 0) -> dict:
    """Sampled Lipschitz constants per member (the equi-Lipschitz hypothesis
    is a user assumption; this only surfaces the sampled constants)."""
    from .core import validate_structure
    box = box or fam.box
    out = {}
    for lam in fam.params:
        f, _ = fam.member(lam)
        rep = validate_structure(f, box, samples=samples, seed=seed)
        out[lam] = {"H": rep.sup_operator_norm, "L": rep.lipschitz_constant}
    return out


# ---------------------------------------------------------------------------
# config-driven construction
# ---------------------------------------------------------------------------

def build_scenario(spec: ScenarioSpec) -> StructureFamily:
    """Construct the named scenario from its parameter table."""
    p = dict(spec.parameters)
    name = spec.name
    try:
        if name == "euclidean":
            return euclidean_family(int(p.pop("dim", 2)))
        if name == "heisenberg-eps":
            fam = heisenberg_family(p.pop("eps", [1.0, 0.5, 0.25, 0.1]))
        elif name == "dilation":
            c = float(p.pop("perturbation", 1.0))
            base = heisenberg_xy_structure(c)
            limit = (heisenberg_xy_structure(0.0), VaryingNorm.euclidean(2))
            fam = dilation_family(base, VaryingNorm.euclidean(2),
                                  p.pop("weights", [1, 1, 2]),
                                  p.pop("eps", [1.0, 0.5, 0.25]), limit,
                                  box=_heisenberg_box())
        elif name == "lie-left-invariant":
            fam = subspace_sequence_family(p.pop("n", [2, 4, 8, 16]))
        elif name == "strip-counterexample":
            fam = strip_counterexample_family(p.pop("n", [8, 16]))
        elif name == "generic-family":
            fam = generic_family({float(lam): tab for lam, tab in p.pop("members").items()},
                                 float(p.pop("limit_param")))
        else:  # pragma: no cover
            raise ValueError(name)
    except KeyError as exc:
        raise ValueError(f"scenario '{name}' missing parameter {exc}") from exc
    if p:
        raise ValueError(f"unknown scenario parameter(s) for '{name}': {sorted(p)}")
    return fam


def scenario_summaries() -> list[dict]:
    """One-line descriptions of the built-in scenarios (for the CLI)."""
    return [
        {"name": "euclidean", "parameters": {"dim": 2},
         "about": "identity frame, Euclidean norm"},
        {"name": "heisenberg-eps", "parameters": {"eps": [1.0, 0.5, 0.25, 0.1]},
         "about": "Riemannian-to-subRiemannian Heisenberg interpolation"},
        {"name": "dilation", "parameters": {"eps": [1.0, 0.5, 0.25],
                                            "weights": [1, 1, 2], "perturbation": 1.0},
         "about": "weighted-dilation rescalings of a perturbed Heisenberg frame"},
        {"name": "lie-left-invariant", "parameters": {"n": [2, 4, 8, 16]},
         "about": "subspace sequences H_n on the Heisenberg group"},
        {"name": "strip-counterexample", "parameters": {"n": [8, 16]},
         "about": "conformal strip metrics with a non-boundedly-compact limit"},
        {"name": "generic-family", "parameters": {"members": "...", "limit_param": "..."},
         "about": "user polynomial tables"},
    ]


# ---------------------------------------------------------------------------
# cross-method agreement registry
# ---------------------------------------------------------------------------

def method_agreement_cases() -> list[dict]:
    """Shipped (scenario, pair, graph spec) cases where the control optimizer
    and the lattice estimator must agree.

    The lattice move set walks single frame flows, so its metric matches the
    control infimum only along frame-aligned geodesics; these pairs are
    chosen accordingly and the 8% budget covers both solvers' slack.
    """
    from .distance import GridGraphSpec
    eu = euclidean_family(2)
    eu_box = ChartBox(np.array([-0.25, -0.25]), np.array([1.25, 1.25]))
    eu_spec = GridGraphSpec(resolution=(31, 31), tau=0.05)
    he = heisenberg_family([1.0])
    he_box = ChartBox(np.array([-1.2, -1.2, -0.6]), np.array([1.2, 1.2, 0.6]))
    he_spec = GridGraphSpec(resolution=(25, 25, 25), tau=0.1)
    f0, n0 = he.member(0.0)
    f1, n1 = he.member(1.0)
    feu, neu = eu.member(0.0)
    cases = [
        {"name": "euclidean-x", "f": feu, "N": neu, "box": eu_box, "spec": eu_spec,
         "p": np.array([0.0, 0.0]), "q": np.array([1.0, 0.0])},
        {"name": "euclidean-y", "f": feu, "N": neu, "box": eu_box, "spec": eu_spec,
         "p": np.array([0.25, 0.25]), "q": np.array([0.25, 1.0])},
        {"name": "heisenberg-sub-x", "f": f0, "N": n0, "box": he_box, "spec": he_spec,
         "p": np.zeros(3), "q": np.array([1.0, 0.0, 0.0])},
        {"name": "heisenberg-sub-y", "f": f0, "N": n0, "box": he_box, "spec": he_spec,
         "p": np.zeros(3), "q": np.array([0.0, 0.8, 0.0])},
        {"name": "heisenberg-riem-x", "f": f1, "N": n1, "box": he_box, "spec": he_spec,
         "p": np.array([-0.5, 0.0, 0.0]), "q": np.array([0.5, 0.0, 0.0])},
    ]
    return cases
