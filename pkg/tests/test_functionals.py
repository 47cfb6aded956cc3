import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccdist.core import (ChartBox, PiecewiseConstantControl, VaryingNorm,
                         VectorFieldStructure, stable_seed)
from ccdist.flow import endpoint
from ccdist.functionals import (energy, fiber_length, fiber_metric, length,
                                reparametrize_constant_speed, speed_profile)
from ccdist._engine import PolySpec, constant_poly_spec


@pytest.fixture()
def profile_31(line1d):
    # u = 3 on [0, 1/2), 1 on [1/2, 1]
    f, N, box = line1d
    u = PiecewiseConstantControl(np.array([[3.0], [1.0]]))
    traj = endpoint(np.array([0.0]), f, u, 16, box)
    return f, N, box, u, traj


def test_energy_zero_control(line1d):
    f, N, box = line1d
    traj = endpoint(np.array([0.0]), f, PiecewiseConstantControl.zero(4, 1), 4, box)
    assert energy(traj, N) == 0.0
    assert length(traj, N) == 0.0


def test_energy_and_length_hand_values(profile_31):
    f, N, box, u, traj = profile_31
    assert energy(traj, N) == pytest.approx(3.0, abs=1e-12)
    assert length(traj, N) == pytest.approx(2.0, abs=1e-12)


def test_length_never_exceeds_energy(heis_riem):
    f, N, box = heis_riem
    rng = np.random.default_rng(stable_seed("len-le-en"))
    for _ in range(25):
        u = PiecewiseConstantControl(rng.normal(0.0, 0.5, size=(6, 3)))
        traj = endpoint(np.zeros(3), f, u, 8, box)
        assert length(traj, N) <= energy(traj, N) + 1e-12


def test_heisenberg_unit_control_length(heis_sub):
    f, N, box = heis_sub
    u = PiecewiseConstantControl(np.tile([1.0, 0.0, 0.0], (4, 1)))
    traj = endpoint(np.zeros(3), f, u, 8, box)
    assert length(traj, N) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# reparametrization
# ---------------------------------------------------------------------------

def test_reparam_hand_profile(profile_31):
    f, N, box, u, traj = profile_31
    rep = reparametrize_constant_speed(np.array([0.0]), f, u, N,
                                       out_segments=8, box=box)
    assert not rep.degenerate
    assert np.allclose(rep.control.segments, 2.0, atol=1e-9)
    assert rep.length == pytest.approx(2.0, abs=1e-12)
    assert energy(rep.trajectory, N) == pytest.approx(2.0, abs=1e-9)


def test_reparam_constant_speed_input_is_fixed_point(line1d):
    f, N, box = line1d
    u = PiecewiseConstantControl(np.full((4, 1), 1.5))
    rep = reparametrize_constant_speed(np.array([0.0]), f, u, N,
                                       out_segments=4, box=box)
    assert np.allclose(rep.control.segments, u.segments, atol=1e-6)


def test_reparam_zero_length_flagged(line1d):
    f, N, box = line1d
    u = PiecewiseConstantControl.zero(3, 1)
    rep = reparametrize_constant_speed(np.array([0.0]), f, u, N, box=box)
    assert rep.degenerate
    assert rep.control is u


def test_reparam_heisenberg_speed_profile(heis_sub):
    # speed 2 on the first quarter, 2/3 after: length 1, constant output speed
    f, N, box = heis_sub
    segs = np.array([[2.0, 0, 0], [2 / 3, 0, 0], [0, 2 / 3, 0], [2 / 3, 0, 0]])
    u = PiecewiseConstantControl(segs)
    rep = reparametrize_constant_speed(np.zeros(3), f, u, N, box=box)
    assert rep.length == pytest.approx(1.0, rel=1e-10)
    assert rep.speed_deviation <= 0.02
    ref = endpoint(np.zeros(3), f, u, 16, box)
    assert np.linalg.norm(rep.trajectory.final - ref.final) < 1e-9


def test_reparam_suite_seeded_controls(heis_riem):
    """Endpoint preserved, length preserved, energy down, speed constant."""
    f, N, box = heis_riem
    rng = np.random.default_rng(stable_seed("reparam-suite"))
    for trial in range(20):
        K = int(rng.integers(4, 10))
        dirs = rng.normal(size=(K, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        mags = rng.uniform(0.4, 2.2, size=(K, 1))
        u = PiecewiseConstantControl(dirs * mags)
        ref = endpoint(np.zeros(3), f, u, 16, box)
        rep = reparametrize_constant_speed(np.zeros(3), f, u, N, box=box)
        assert np.linalg.norm(rep.trajectory.final - ref.final) < 1e-6
        assert rep.length == pytest.approx(length(ref, N), rel=1e-6)
        assert rep.speed_deviation <= 0.02
        assert energy(rep.trajectory, N) <= energy(ref, N) + 0.02 * rep.length


# ---------------------------------------------------------------------------
# fiber metric
# ---------------------------------------------------------------------------

def test_fiber_metric_square_identity():
    f = VectorFieldStructure.from_poly(constant_poly_spec(np.eye(2)))
    N = VaryingNorm.euclidean(2)
    v = np.array([0.3, -0.4])
    res = fiber_metric(np.zeros(2), v, f, N)
    assert res.finite
    assert res.value == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(res.minimizer, v)


def test_fiber_metric_least_norm_oracle():
    # A = [1 1], v = 2: least-norm solution (1, 1), value sqrt(2); matches a
    # brute-force grid over the fiber line
    f = VectorFieldStructure.from_poly(constant_poly_spec(np.array([[1.0, 1.0]])))
    N = VaryingNorm.euclidean(2)
    res = fiber_metric(np.zeros(1), np.array([2.0]), f, N)
    assert res.value == pytest.approx(math.sqrt(2.0), abs=1e-10)
    assert np.allclose(res.minimizer, [1.0, 1.0], atol=1e-9)
    ts = np.linspace(-3, 3, 20001)
    grid_best = np.min(np.hypot(1 + ts, 1 - ts))
    assert res.value == pytest.approx(grid_best, abs=1e-6)


def test_fiber_metric_out_of_range_sentinel():
    f = VectorFieldStructure.from_poly(constant_poly_spec(np.array([[1.0], [0.0]])))
    N = VaryingNorm.euclidean(1)
    res = fiber_metric(np.zeros(2), np.array([0.0, 1.0]), f, N)
    assert not res.finite
    assert math.isinf(res.value)
    assert res.residual == pytest.approx(1.0, abs=1e-12)


def test_fiber_metric_heisenberg_vertical_sentinel(heis_sub):
    f, N, box = heis_sub
    res = fiber_metric(np.zeros(3), np.array([0.0, 0.0, 1.0]), f, N)
    assert not res.finite


@given(lam=st.floats(-4, 4, allow_nan=False))
@settings(max_examples=60, deadline=None)
def test_fiber_metric_homogeneous(lam):
    f = VectorFieldStructure.from_poly(
        constant_poly_spec(np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 1.0]])))
    N = VaryingNorm.euclidean(3)
    v = np.array([0.7, -0.3])
    base = fiber_metric(np.zeros(2), v, f, N).value
    scaled = fiber_metric(np.zeros(2), lam * v, f, N).value
    assert scaled == pytest.approx(abs(lam) * base, abs=1e-8)


def test_fiber_metric_full_rank_pullback_exact():
    rng = np.random.default_rng(stable_seed("fiber-pullback"))
    A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    f = VectorFieldStructure.from_poly(constant_poly_spec(A))
    N = VaryingNorm.euclidean(3)
    u = rng.standard_normal(3)
    res = fiber_metric(np.zeros(3), A @ u, f, N)
    assert res.value == pytest.approx(np.linalg.norm(u), rel=1e-10)


def test_fiber_metric_l1_linf_brute_force():
    rng = np.random.default_rng(stable_seed("fiber-lp"))
    for trial in range(20):
        m, k = 2, 3
        A = rng.standard_normal((m, k))
        v = A @ rng.standard_normal(k)
        p_exp = 1.0 if trial % 2 == 0 else math.inf
        N = VaryingNorm.weighted_lp(np.ones(k), p_exp)
        f = VectorFieldStructure.from_poly(constant_poly_spec(A))
        res = fiber_metric(np.zeros(m), v, f, N)
        # brute-force oracle: iteratively refined grid on the 1-d fiber
        u0, *_ = np.linalg.lstsq(A, v, rcond=None)
        import scipy.linalg
        Z = scipy.linalg.null_space(A)
        lo, hi = -6.0, 6.0
        for _ in range(8):
            ts = np.linspace(lo, hi, 101)
            cand = u0[None, :] + ts[:, None] * Z.T[0][None, :] * 1.0
            vals = N.values_at(np.zeros(m), cand)
            i = int(np.argmin(vals))
            lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, 100)]
        oracle = float(np.min(vals))
        assert res.value == pytest.approx(oracle, abs=1e-3)


def test_fiber_restriction_midpoint_convex():
    rng = np.random.default_rng(stable_seed("fiber-convex"))
    A = rng.standard_normal((2, 4))
    f = VectorFieldStructure.from_poly(constant_poly_spec(A))
    N = VaryingNorm.weighted_lp(rng.uniform(0.5, 2.0, size=4), 1.0)
    v = A @ rng.standard_normal(4)
    u0, *_ = np.linalg.lstsq(A, v, rcond=None)
    import scipy.linalg
    Z = scipy.linalg.null_space(A)
    p = np.zeros(2)
    for _ in range(20):
        w1 = rng.standard_normal(Z.shape[1])
        w2 = rng.standard_normal(Z.shape[1])
        g = lambda w: N(p, u0 + Z @ w)
        assert g((w1 + w2) / 2) <= (g(w1) + g(w2)) / 2 + 1e-9


def test_fiber_length_matches_control_length(heis_sub):
    f, N, box = heis_sub
    u = PiecewiseConstantControl(np.tile([0.8, 0.3, 0.0], (8, 1)))
    traj = endpoint(np.zeros(3), f, u, 16, box)
    l_ctrl = length(traj, N)
    l_fiber = fiber_length(traj, f, N, samples=160)
    assert l_fiber == pytest.approx(l_ctrl, rel=0.02)
