import math

import numpy as np
import pytest

from ccdist import scenarios as sc
from ccdist.core import ChartBox, PiecewiseConstantControl, VaryingNorm, \
    VectorFieldStructure, stable_seed
from ccdist.distance import (GridGraphSpec, OptOptions, cc_distance_graph,
                             cc_distance_opt, geodesic, homothety_residual,
                             metric_ball, polygonal_length)
from ccdist.functionals import energy, length
from ccdist._engine import PolySpec, constant_poly_spec

SQRT_PI = math.sqrt(math.pi)


@pytest.fixture(scope="module")
def vertical_estimate(heis_sub):
    f, N, box = heis_sub
    return cc_distance_opt(np.zeros(3), np.array([0.0, 0.0, 0.25]), f, N, box,
                           OptOptions(segments=16))


def test_opt_euclidean_chord(euclid2):
    f, N, box = euclid2
    est = cc_distance_opt(np.array([0.0, 0.0]), np.array([1.0, 0.0]), f, N, box)
    assert est.converged
    assert est.value == pytest.approx(1.0, rel=0.01)
    assert est.endpoint_residual <= 1e-6


def test_opt_same_point_short_circuit(euclid2):
    f, N, box = euclid2
    est = cc_distance_opt(np.array([0.3, 0.3]), np.array([0.3, 0.3]), f, N, box)
    assert est.value == 0.0 and est.converged
    assert est.evaluations == 0


def test_opt_heisenberg_horizontal(heis_sub):
    f, N, box = heis_sub
    est = cc_distance_opt(np.zeros(3), np.array([1.0, 0.0, 0.0]), f, N, box)
    assert est.converged
    # the planar projection is 1-Lipschitz, so 1 is a true lower bound
    assert est.value == pytest.approx(1.0, rel=0.02)


def test_opt_heisenberg_vertical_dido(vertical_estimate):
    est = vertical_estimate
    assert est.converged
    assert est.value == pytest.approx(SQRT_PI, rel=0.05)
    assert est.value >= SQRT_PI * (1.0 - 1e-9)   # upper-bound estimator


def test_estimate_energy_length_consistency(vertical_estimate, heis_sub):
    f, N, box = heis_sub
    est = vertical_estimate
    traj = est.trajectory
    assert est.value == pytest.approx(length(traj, N), rel=1e-6)
    assert est.value == pytest.approx(energy(traj, N), rel=0.01)


def test_opt_symmetry(heis_sub):
    f, N, box = heis_sub
    p, q = np.zeros(3), np.array([0.5, 0.3, 0.1])
    a = cc_distance_opt(p, q, f, N, box, OptOptions(segments=12))
    b = cc_distance_opt(q, p, f, N, box, OptOptions(segments=12))
    assert abs(a.value - b.value) <= 0.02 * max(a.value, b.value)


def test_opt_triangle_inequality(heis_sub):
    f, N, box = heis_sub
    opts = OptOptions(segments=12)
    p, m, q = np.zeros(3), np.array([0.4, 0.2, 0.05]), np.array([0.6, 0.7, 0.1])
    d_pq = cc_distance_opt(p, q, f, N, box, opts).value
    d_pm = cc_distance_opt(p, m, f, N, box, opts).value
    d_mq = cc_distance_opt(m, q, f, N, box, opts).value
    assert d_pq <= (d_pm + d_mq) * 1.03


def test_opt_monotone_refinement(heis_sub):
    f, N, box = heis_sub
    q = np.array([0.0, 0.0, 0.25])
    coarse = cc_distance_opt(np.zeros(3), q, f, N, box, OptOptions(segments=8))
    fine = cc_distance_opt(np.zeros(3), q, f, N, box,
                           OptOptions(segments=16,
                                      seed_controls=(coarse.best_control,)))
    assert fine.value <= coarse.value * (1.0 + 5e-3)


def test_opt_not_found_reported():
    # single horizontal field on R^2: (0, 1) is unreachable
    coefs = np.zeros((1, 2, 1))
    coefs[0, 0, 0] = 1.0
    f = VectorFieldStructure.from_poly(PolySpec(np.zeros((1, 2), dtype=np.int64),
                                                coefs), smooth=True)
    N = VaryingNorm.euclidean(1)
    box = ChartBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    est = cc_distance_opt(np.zeros(2), np.array([0.0, 0.5]), f, N, box,
                          OptOptions(segments=4, restarts=2))
    assert not est.converged


# ---------------------------------------------------------------------------
# grid graph
# ---------------------------------------------------------------------------

def test_graph_euclidean_axis_pair(euclid2):
    f, N, _ = euclid2
    box = ChartBox(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    spec = GridGraphSpec(resolution=(41, 41), tau=0.025)
    est = cc_distance_graph(np.array([0.0, 0.0]), np.array([1.0, 0.0]), f, N,
                            spec, box)
    assert est.converged
    assert est.value == pytest.approx(1.0, rel=0.03)


def test_graph_same_node(euclid2):
    f, N, _ = euclid2
    box = ChartBox(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    spec = GridGraphSpec(resolution=(11, 11), tau=0.1)
    est = cc_distance_graph(np.array([0.5, 0.5]), np.array([0.5, 0.5]), f, N,
                            spec, box)
    assert est.value == 0.0


def test_graph_heisenberg_vertical_band(heis_sub):
    f, N, _ = heis_sub
    box = ChartBox(np.array([-1.0, -1.0, -0.5]), np.array([1.0, 1.0, 0.5]))
    spec = GridGraphSpec(resolution=(21, 21, 21), tau=0.1)
    est = cc_distance_graph(np.zeros(3), np.array([0.0, 0.0, 0.25]), f, N,
                            spec, box)
    # lattice overshoot expected; band fixed after the calibration run
    assert 0.95 * SQRT_PI <= est.value <= 1.25 * SQRT_PI


def test_graph_unreachable_reported():
    coefs = np.zeros((1, 2, 1))
    coefs[0, 0, 0] = 1.0
    f = VectorFieldStructure.from_poly(PolySpec(np.zeros((1, 2), dtype=np.int64),
                                                coefs), smooth=True)
    N = VaryingNorm.euclidean(1)
    box = ChartBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    spec = GridGraphSpec(resolution=(5, 5), tau=0.5)
    est = cc_distance_graph(np.zeros(2), np.array([0.0, 0.5]), f, N, spec, box)
    assert not est.converged
    assert math.isinf(est.value)


def test_graph_snap_precondition(euclid2):
    f, N, _ = euclid2
    box = ChartBox(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    spec = GridGraphSpec(resolution=(11, 11), tau=0.1, snap_tol=1e-6)
    with pytest.raises(ValueError):
        cc_distance_graph(np.array([0.033, 0.0]), np.array([1.0, 0.0]), f, N,
                          spec, box)


def test_graph_refinement_monotone(euclid2):
    f, N, _ = euclid2
    box = ChartBox(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    coarse = cc_distance_graph(np.array([0.0, 0.0]), np.array([1.0, 0.0]), f, N,
                               GridGraphSpec(resolution=(11, 11), tau=0.1), box)
    fine = cc_distance_graph(np.array([0.0, 0.0]), np.array([1.0, 0.0]), f, N,
                             GridGraphSpec(resolution=(21, 21), tau=0.05), box)
    assert fine.value <= coarse.value * (1.0 + 1e-9)


def test_metric_ball_tiny_radius(euclid2):
    f, N, _ = euclid2
    box = ChartBox(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    spec = GridGraphSpec(resolution=(11, 11), tau=0.1)
    ball = metric_ball(np.array([0.5, 0.5]), 0.05, f, N, spec, box)
    assert len(ball.values) == 1
    assert ball.contains_point([0.5, 0.5])


def test_metric_ball_euclidean_disc(euclid2):
    f, N, _ = euclid2
    box = ChartBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    spec = GridGraphSpec(resolution=(21, 21), tau=0.1)
    r = 0.55
    ball = metric_ball(np.zeros(2), r, f, N, spec, box)
    # Hausdorff deviation from the true disc at most 2 lattice cells
    # (graph metric is the Manhattan one, so compare against its unit ball)
    cell = 0.1
    dists = np.abs(ball.points).sum(axis=1)
    assert np.max(dists) <= r + 2 * cell
    ax = np.arange(-1.0, 1.05, cell)
    G = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    inside = G[np.abs(G).sum(axis=1) <= r - 2 * cell]
    got = {tuple(np.round(pt, 6)) for pt in ball.points}
    assert all(tuple(np.round(pt, 6)) in got for pt in inside)


def test_metric_ball_heisenberg_membership(heis_sub):
    f, N, _ = heis_sub
    box = ChartBox(np.array([-1.0, -1.0, -0.5]), np.array([1.0, 1.0, 0.5]))
    spec = GridGraphSpec(resolution=(21, 21, 21), tau=0.1)
    ball = metric_ball(np.zeros(3), 1.0, f, N, spec, box)
    assert ball.contains_point([0.9, 0.0, 0.0])
    assert not ball.contains_point([0.0, 0.0, 0.25])   # sqrt(pi) > 1


# ---------------------------------------------------------------------------
# geodesics and polygonal lengths
# ---------------------------------------------------------------------------

def test_geodesic_euclidean_homothety(euclid2):
    f, N, box = euclid2
    traj, est = geodesic(np.array([0.0, 0.0]), np.array([1.0, 0.0]), f, N, box)
    res = homothety_residual(traj, est.value, f, N, box,
                             pairs=[(0.0, 0.5), (0.25, 0.75), (0.5, 1.0)],
                             opts=OptOptions(segments=8, restarts=4))
    assert res < 1e-3
    line_dev = np.max(np.abs(traj.points[:, 1]))
    assert line_dev < 1e-6


def test_geodesic_heisenberg_horizontal_axis(heis_sub):
    f, N, box = heis_sub
    traj, est = geodesic(np.zeros(3), np.array([1.0, 0.0, 0.0]), f, N, box)
    # unique minimizer is the x-axis line (projection argument)
    dev = np.max(np.linalg.norm(traj.points[:, 1:], axis=1))
    assert dev <= 0.02


def test_geodesic_heisenberg_vertical_circle(vertical_estimate, heis_sub):
    """Planar projection of the vertical geodesic is a circle through 0 of
    radius sqrt(z/pi) (Dido); check via least-squares circle fit."""
    traj = vertical_estimate.trajectory
    P = traj.points[:, :2]
    A = np.hstack([2 * P, np.ones((len(P), 1))])
    b = (P ** 2).sum(axis=1)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy, c0 = sol
    radius = math.sqrt(c0 + cx * cx + cy * cy)
    want = math.sqrt(0.25 / math.pi)
    assert radius == pytest.approx(want, rel=0.08)
    fit_residual = np.max(np.abs(np.hypot(P[:, 0] - cx, P[:, 1] - cy) - radius))
    assert fit_residual <= 0.08 * want


def test_polygonal_length_straight_segment(euclid2):
    f, N, box = euclid2
    traj, est = geodesic(np.array([0.0, 0.0]), np.array([1.0, 0.0]), f, N, box,
                         OptOptions(segments=8))
    val = polygonal_length(traj, f, N, [0.0, 0.25, 0.5, 1.0], box,
                           OptOptions(segments=8, restarts=4))
    assert val == pytest.approx(1.0, rel=0.01)


def test_polygonal_refinement_monotone(euclid2):
    f, N, box = euclid2
    traj, est = geodesic(np.array([0.0, 0.0]), np.array([1.0, 0.5]), f, N, box,
                         OptOptions(segments=8))
    opts = OptOptions(segments=8, restarts=4)
    coarse = polygonal_length(traj, f, N, np.linspace(0, 1, 3), box, opts)
    fine = polygonal_length(traj, f, N, np.linspace(0, 1, 5), box, opts)
    assert fine >= coarse * (1.0 - 5e-3)


def test_polygonal_length_heisenberg_vertical(vertical_estimate, heis_sub):
    f, N, box = heis_sub
    traj = vertical_estimate.trajectory
    val = polygonal_length(traj, f, N, np.linspace(0, 1, 9), box,
                           OptOptions(segments=8, restarts=4))
    assert val == pytest.approx(SQRT_PI, rel=0.06)
