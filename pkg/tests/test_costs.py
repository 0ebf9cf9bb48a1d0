import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paretoplan.costs import (CostError, CostModel, Threat, WeightedGraph, assign_costs,
                              distance_cost, edge_threat_cost, edge_threat_costs, threat_level,
                              threat_level_vis)
from paretoplan.geometry import OccupancyGrid
from paretoplan.roadmap import build_prm


def inverse_square_integral(a, b, p, s):
    """Exact ∫ s / |x(t) - p|^2 ds along segment a-b (arc length), R = inf, r below the path."""
    a, b, p = (np.asarray(v, dtype=float) for v in (a, b, p))
    L = np.linalg.norm(b - a)
    u = (b - a) / L
    x0 = float(np.dot(a - p, u))  # signed along-track coordinate of a
    d = a - p
    h = abs(float(u[0] * d[1] - u[1] * d[0]))  # perpendicular distance
    x1 = x0 + L
    if h == 0:
        return s * (1.0 / x0 - 1.0 / x1) if x0 > 0 else s * (1.0 / -x1 - 1.0 / -x0)
    return s / h * (math.atan(x1 / h) - math.atan(x0 / h))


def test_distance_examples():
    assert distance_cost((0, 0), (3, 4)) == 5.0
    assert distance_cost((1, 1), (1, 2)) == 1.0
    with pytest.raises(CostError):
        distance_cost((2, 2), (2, 2))


def test_distance_matches_exact_arithmetic():
    rng = np.random.default_rng(0)
    for a, b in rng.uniform(-100, 100, (50, 2, 2)):
        sq = sum((Fraction(float(b[k])) - Fraction(float(a[k]))) ** 2 for k in range(2))
        exact = math.sqrt(sq)  # correctly rounded from an exact square
        assert math.isclose(distance_cost(a, b), exact, rel_tol=1e-15)


def test_threat_level_branches():
    t = Threat((0.0, 0.0), s=20.0, r=5.0)
    assert threat_level([t], (0.0, 0.0)) == pytest.approx(0.8)
    assert threat_level([t], (10.0, 0.0)) == pytest.approx(0.2)
    far = Threat((0.0, 0.0), s=20.0, r=5.0, R=20.0)
    assert threat_level([far], (100.0, 0.0)) == pytest.approx(0.05)


def test_threat_level_continuous_at_branch_boundaries():
    t = Threat((0.0, 0.0), s=3.0, r=2.0, R=7.0)
    for d in (2.0, 7.0):
        lo = threat_level([t], (d - 1e-9, 0.0))
        hi = threat_level([t], (d + 1e-9, 0.0))
        assert lo == pytest.approx(hi, rel=1e-7)
    assert threat_level([t], (2.0, 0.0)) == pytest.approx(3.0 / 4.0)
    assert threat_level([t], (7.0, 0.0)) == pytest.approx(3.0 / 49.0)


@given(st.floats(0, 50), st.floats(0, 50))
def test_threat_level_non_increasing_in_distance(d1, d2):
    t = Threat((1.0, 1.0), s=2.0, r=0.5, R=30.0)
    near, far = sorted((d1, d2))
    assert threat_level([t], (1.0 + near, 1.0)) >= threat_level([t], (1.0 + far, 1.0))


def test_threat_at_evaluation_point_with_zero_radius_rejected():
    with pytest.raises(CostError):
        threat_level([Threat((1.0, 1.0), s=1.0, r=0.0)], (1.0, 1.0))


@pytest.mark.parametrize("kw", [dict(s=0.0), dict(s=1.0, r=-1.0), dict(s=1.0, r=3.0, R=3.0)])
def test_threat_validation(kw):
    with pytest.raises(CostError):
        Threat((0.0, 0.0), **kw)


def test_threat_dict_round_trip_with_infinite_radius():
    t = Threat.from_dict({"p": [225, 292.5], "s": 20, "r": 5})
    assert t.R == math.inf
    assert "R" not in t.to_dict()
    assert Threat.from_dict(t.to_dict()) == t


def test_visibility_occluded_and_open():
    cells = np.zeros((10, 10), dtype=bool)
    cells[:, 5] = True
    g = OccupancyGrid(cells)
    threats = [Threat((8.0, 2.0), s=1.0, r=0.5), Threat((8.0, 8.0), s=2.0, r=0.5)]
    eps = 1e-3
    assert threat_level_vis(threats, g, (2.0, 5.0), eps) == pytest.approx(2 * eps)
    open_grid = OccupancyGrid(np.zeros((10, 10), dtype=bool))
    pts = np.random.default_rng(1).uniform(0, 10, (40, 2))
    assert np.allclose(threat_level_vis(threats, open_grid, pts, eps), threat_level(threats, pts))


def test_default_epsilon_is_inverse_area():
    g = OccupancyGrid(np.zeros((450, 450), dtype=bool))
    assert CostModel(visibility=True).resolved_epsilon(g) == pytest.approx(1 / 202500)
    assert 1 / 202500 == pytest.approx(4.938e-6, rel=1e-3)


def test_vis_never_exceeds_plain_plus_epsilon():
    rng = np.random.default_rng(4)
    g = OccupancyGrid(rng.random((20, 20)) < 0.2)
    threats = [Threat(tuple(rng.uniform(0, 20, 2)), s=1.0, r=1.0) for _ in range(3)]
    pts = rng.uniform(0, 20, (200, 2))
    eps = 0.01
    assert np.all(threat_level_vis(threats, g, pts, eps) <= threat_level(threats, pts) + 3 * eps + 1e-15)


def test_constant_integrand_cases():
    far = Threat((0.0, 0.0), s=20.0, r=5.0, R=20.0)
    model = CostModel([far])
    assert edge_threat_cost((100.0, 0.0), (100.0, 7.0), model) == pytest.approx(20.0 / 400.0 * 7.0)
    inner = Threat((0.0, 0.0), s=0.2 * 100.0, r=10.0)  # tau = 0.2 inside r = 10
    assert edge_threat_cost((0.0, 0.5), (1.0, 0.5), CostModel([inner])) == pytest.approx(0.2)


def test_quadrature_converges_to_closed_form_radial():
    t = Threat((0.0, 0.0), s=1.0, r=0.0)
    a, b = (1.0, 0.0), (4.0, 0.0)
    exact = inverse_square_integral(a, b, t.p, t.s)
    assert exact == pytest.approx(1.0 - 0.25)
    errs = [abs(edge_threat_cost(a, b, CostModel([t], quadrature_samples=Q)) - exact) for Q in (8, 16, 32, 64, 128)]
    assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
    for e1, e2 in zip(errs, errs[1:]):
        assert e1 / e2 == pytest.approx(4.0, rel=0.15)  # second-order rule


def test_quadrature_oblique_matches_closed_form():
    t = Threat((2.0, 3.0), s=5.0, r=0.1)
    a, b = (-4.0, 0.0), (7.0, 1.0)
    exact = inverse_square_integral(a, b, t.p, t.s)
    assert edge_threat_cost(a, b, CostModel([t], quadrature_samples=512)) == pytest.approx(exact, rel=1e-5)


def test_doubling_samples_within_midpoint_error_bound():
    t = Threat((0.0, 0.0), s=2.0, r=0.0)
    a, b = np.array([-3.0, 1.5]), np.array([4.0, 2.5])
    L = float(np.linalg.norm(b - a))
    # |f''| along the segment, sampled densely and padded
    ts = np.linspace(0, 1, 20001)
    pts = a + (b - a) * ts[:, None]
    f = threat_level([t], pts)
    h = L / (len(ts) - 1)
    f2 = np.abs(np.diff(f, 2)) / h ** 2
    M = 1.1 * f2.max()
    for Q in (8, 16, 32, 64):
        bound = L * (L / Q) ** 2 / 24 * M
        bound2 = L * (L / (2 * Q)) ** 2 / 24 * M
        c1 = edge_threat_cost(a, b, CostModel([t], quadrature_samples=Q))
        c2 = edge_threat_cost(a, b, CostModel([t], quadrature_samples=2 * Q))
        assert abs(c1 - c2) <= bound + bound2


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=4, max_size=4))
def test_edge_cost_reversal_invariant_and_additive(c):
    a, b = (c[0], c[1]), (c[2], c[3])
    if math.hypot(c[2] - c[0], c[3] - c[1]) < 1e-6:
        return
    t1, t2 = Threat((1.0, 2.0), s=3.0, r=0.5), Threat((-5.0, 4.0), s=1.0, r=1.0, R=10.0)
    both = edge_threat_cost(a, b, CostModel([t1, t2]))
    assert both == pytest.approx(edge_threat_cost(b, a, CostModel([t1, t2])), rel=1e-12)
    assert both == pytest.approx(edge_threat_cost(a, b, CostModel([t1])) + edge_threat_cost(a, b, CostModel([t2])),
                                 rel=1e-12)


def test_vectorised_edge_costs_chunking():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(0, 50, (500, 2)), rng.uniform(0, 50, (500, 2))
    model = CostModel([Threat((25.0, 25.0), s=1.0, r=1.0)])
    assert np.allclose(edge_threat_costs(a, b, model), edge_threat_costs(a, b, model, chunk=100), rtol=0, atol=0)


def small_world(swap=False, visibility=False):
    cells = np.zeros((40, 40), dtype=bool)
    cells[5:30, 20] = True
    grid = OccupancyGrid(cells)
    rm = build_prm(grid, 120, 9.0, 1.0, 11, (3.0, 3.0), (37.0, 37.0))
    model = CostModel([Threat((30.0, 10.0), s=4.0, r=2.0)], visibility=visibility, swap=swap)
    return rm, grid, model


def test_assign_costs_roles_and_reversal():
    rm, grid, model = small_world()
    g = assign_costs(rm, model, grid)
    assert np.allclose(g.primary, rm.lengths)
    T = edge_threat_costs(rm.nodes[g.src], rm.nodes[g.dst], model)
    assert np.allclose(g.secondary, T, rtol=1e-12)
    rev = {(i, j): k for k, (i, j) in enumerate(zip(g.src.tolist(), g.dst.tolist()))}
    for (i, j), k in rev.items():
        assert g.secondary[k] == g.secondary[rev[(j, i)]]
    gs = assign_costs(rm, CostModel(model.threats, swap=True), grid)
    assert np.array_equal(gs.primary, g.secondary) and np.array_equal(gs.secondary, g.primary)


def test_positivity_with_visibility():
    rm, grid, model = small_world(visibility=True)
    g = assign_costs(rm, model, grid)
    eps = model.resolved_epsilon(grid)
    assert g.secondary.min() >= eps * rm.lengths.min() * (1 - 1e-12)
    assert g.primary.min() > 0


def test_weighted_graph_rejects_nonpositive_costs():
    with pytest.raises(CostError):
        WeightedGraph.from_edges(2, [(0, 1, 1.0, 0.0)], 0, 1)
    with pytest.raises(CostError):
        WeightedGraph.from_edges(2, [(0, 1, -1.0, 1.0)], 0, 1)
    with pytest.raises(CostError):
        WeightedGraph.from_edges(2, [(0, 0, 1.0, 1.0)], 0, 1)


def test_weighted_graph_json_round_trip():
    g = WeightedGraph.from_edges(3, [(2, 1, 1.0, 2.0), (0, 1, 3.0, 4.0), (1, 2, 5.0, 6.0)], 0, 2,
                                 positions=[[0, 0], [1, 0], [2, 0]])
    back = WeightedGraph.from_json(g.to_json())
    assert back.digest() == g.digest()
    assert np.array_equal(back.primary, g.primary)
    assert list(back.dst) == sorted(back.dst)
