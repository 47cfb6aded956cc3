import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccdist import scenarios as sc
from ccdist.core import (ChartBox, EvaluationError, PiecewiseConstantControl,
                         StructureFamily, VaryingNorm, VectorFieldStructure,
                         check_norm_axioms, validate_structure)
from ccdist._engine import PolySpec, constant_poly_spec, identity_poly_spec


def test_chart_box_rejects_degenerate():
    with pytest.raises(ValueError):
        ChartBox(np.array([0.0, 1.0]), np.array([1.0, 1.0]))


def test_chart_box_containment_and_inflation():
    box = ChartBox(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
    assert box.contains([0.5, 1.0])
    assert not box.contains([1.05, 1.0])
    assert box.contains([1.05, 1.0], inflate=0.1)
    with pytest.raises(ValueError):
        box.require_inside([3.0, 0.0])


def test_validate_structure_constant_identity():
    f = VectorFieldStructure.from_poly(identity_poly_spec(2), name="id2")
    box = ChartBox(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    rep = validate_structure(f, box, samples=64, seed=3)
    assert rep.sup_operator_norm == pytest.approx(1.0)
    assert rep.lipschitz_constant == pytest.approx(0.0, abs=1e-14)


def test_validate_structure_heisenberg_dense_grid_oracle():
    # dense 50^3-grid oracle computed up front: sup ||A(p)||_2 on [-1,1]^3
    # equals sqrt(2), attained at the (x, y) corners
    f = sc.heisenberg_structure(1.0)
    box = ChartBox(-np.ones(3), np.ones(3))
    rep = validate_structure(f, box, samples=4000, seed=0)
    assert rep.sup_operator_norm <= math.sqrt(2) + 1e-12
    assert rep.sup_operator_norm >= math.sqrt(2) * 0.97


def test_validate_structure_linear_field_lipschitz_oracle():
    # X(p) = A p has Lipschitz constant exactly ||A||_2
    rng = np.random.default_rng(7)
    A = rng.standard_normal((3, 3))
    exps = np.eye(3, dtype=np.int64)
    coefs = A.T[:, :, None].copy()         # term l contributes column A[:, l] * p_l
    f = VectorFieldStructure.from_poly(PolySpec(exps, coefs), name="linear")
    box = ChartBox(-np.ones(3), np.ones(3))
    rep = validate_structure(f, box, samples=3000, seed=1)
    want = np.linalg.norm(A, 2)
    assert rep.lipschitz_constant <= want + 1e-9
    assert rep.lipschitz_constant >= want * 0.95


def test_validate_structure_flags_nonfinite():
    def bad(p):
        return np.full((2, 2), np.nan)

    f = VectorFieldStructure.from_callable(2, 2, bad)
    box = ChartBox(np.zeros(2), np.ones(2))
    with pytest.raises(EvaluationError):
        validate_structure(f, box, samples=8, seed=0)


def test_validate_structure_respects_hint():
    f = sc.heisenberg_structure(1.0)
    hinted = VectorFieldStructure(f.dim_m, f.dim_k, spec=f.spec,
                                  lipschitz_hint=0.71, smooth=True)
    box = ChartBox(-np.ones(3), np.ones(3))
    rep = validate_structure(hinted, box, samples=500, seed=2)
    assert rep.hint_consistent is True


def test_structure_evaluation_reproducible():
    f = sc.heisenberg_structure(0.5)
    p = np.array([0.3, -0.7, 0.2])
    a = f.matrix(p)
    b = f.matrix(p.copy())
    assert np.array_equal(a, b)


@pytest.mark.parametrize("norm", [
    VaryingNorm.euclidean(3),
    VaryingNorm.weighted_lp(np.array([1.0, 2.0, 0.5]), 1.0),
    VaryingNorm.weighted_lp(np.array([1.0, 1.0, 3.0]), math.inf),
    VaryingNorm.ellipsoid(np.array([[2.0, 1.0, 0.0], [0.0, 1.0, 0.0],
                                    [0.0, 0.0, 0.5]])),
    VaryingNorm.strip(8.0),
])
def test_norm_axioms_sampled(norm):
    k = norm.dim_k
    box = ChartBox(-np.ones(k) * 0.9, np.ones(k) * 0.9) if k == 2 else \
        ChartBox(-np.ones(3), np.ones(3))
    report = check_norm_axioms(norm, box, samples=1000, seed=11)
    assert report["ok"], report


@given(lam=st.floats(-5, 5, allow_nan=False),
       u=st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3)))
@settings(max_examples=200, deadline=None)
def test_norm_homogeneity_property(lam, u):
    norm = VaryingNorm.weighted_lp(np.array([1.0, 2.0, 0.5]), 1.0)
    p = np.zeros(3)
    u = np.array(u)
    assert norm(p, lam * u) == pytest.approx(abs(lam) * norm(p, u), abs=1e-10)


def test_control_grid_semantics():
    u = PiecewiseConstantControl(np.array([[1.0, 0.0], [0.0, 2.0]]))
    assert u.num_segments == 2
    assert np.allclose(u.value_at(0.0), [1.0, 0.0])
    assert np.allclose(u.value_at(0.49), [1.0, 0.0])
    assert np.allclose(u.value_at(0.5), [0.0, 2.0])
    assert np.allclose(u.value_at(1.0), [0.0, 2.0])
    assert u.sup_norm() == pytest.approx(2.0)


def test_control_rejects_nonfinite():
    with pytest.raises(ValueError):
        PiecewiseConstantControl(np.array([[np.inf]]))


def test_control_resample_and_restrict():
    u = PiecewiseConstantControl(np.array([[1.0], [3.0]]))
    up = u.resampled(4)
    assert np.allclose(up.segments.ravel(), [1, 1, 3, 3])
    sub = u.restricted(0.5, 1.0, 2)
    assert np.allclose(sub.segments.ravel(), [1.5, 1.5])


def test_family_membership_is_strict(heis_family):
    with pytest.raises(KeyError):
        heis_family.member(0.3)


def test_family_dimension_agreement():
    f2 = VectorFieldStructure.from_poly(identity_poly_spec(2))
    f3 = VectorFieldStructure.from_poly(identity_poly_spec(3))

    def member(lam):
        return (f2 if lam == 0 else f3), VaryingNorm.euclidean(2)

    with pytest.raises(ValueError):
        StructureFamily((0, 1), member, 0, True)


def test_family_approach_order(heis_family):
    assert heis_family.approach_order() == [1.0, 0.5, 0.25, 0.1]
