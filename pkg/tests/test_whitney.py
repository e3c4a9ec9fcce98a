import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urapprox.geometry import AmbientBox, flat_plane, point_set, sphere
from urapprox.whitney import WhitneyError, corkscrew_point, whitney_decompose
from urapprox.grid import build_dyadic_grid


def _line_box_distance(lo, hi):
    """Distance from boxes (inside the x-range of E) to the x-axis."""
    return np.maximum(0.0, np.maximum(lo[:, 1], -hi[:, 1]))


@pytest.fixture(scope="module")
def line_whitney():
    E = flat_plane(-2, 2, 2, 2.0 ** -10)
    return whitney_decompose(E, AmbientBox((-0.5, -0.5), 1.0), 9)


def test_whitney_inequalities_against_exact_distance(line_whitney):
    W = line_whitney
    d = _line_box_distance(W.lo, W.hi)
    lo4 = W.lo - 1.5 * W.side[:, None]
    d4 = _line_box_distance(lo4, lo4 + 4 * W.side[:, None])
    assert np.all(4 * W.diam <= d4)
    assert np.all(d4 <= d)
    assert np.all(d <= 40 * W.diam)
    assert np.allclose(d, W.dist, atol=0)


def test_cover_volume_and_disjointness(line_whitney):
    W = line_whitney
    assert W.covered_volume + W.guard_volume == pytest.approx(W.box.volume, rel=1e-12)
    assert np.sum(W.side ** 2) == pytest.approx(W.covered_volume, rel=1e-12)
    rng = np.random.default_rng(3)
    X = rng.uniform(-0.5, 0.5, (4000, 2))
    ids = W.locate(X)
    hit = ids >= 0
    inside = np.all((X[hit] >= W.lo[ids[hit]]) & (X[hit] < W.hi[ids[hit]]), axis=1)
    assert inside.all()
    # points away from the guard band are covered
    far = np.abs(X[:, 1]) > 4 * math.sqrt(2) * 2.0 ** -9 * 6
    assert np.all(ids[far] >= 0)


def test_neighbours_and_fattening(line_whitney):
    assert line_whitney.neighbor_ratio() <= 2.0
    assert len(line_whitney.fattened_overlaps(0.125)) == 0
    assert line_whitney.bound_violations() == {"lower": 0, "monotone": 0, "upper": 0}


@settings(max_examples=15, deadline=None)
@given(st.lists(st.tuples(st.floats(0.05, 0.95), st.floats(0.05, 0.95)), min_size=1, max_size=6))
def test_whitney_property_on_point_sets(pts):
    E = point_set(pts, spacing=2.0 ** -8)
    W = whitney_decompose(E, AmbientBox((0.0, 0.0), 1.0), 7)
    assert sum(W.bound_violations().values()) == 0
    assert W.covered_volume + W.guard_volume == pytest.approx(1.0, rel=1e-12)
    assert W.neighbor_ratio() <= 2.0


def test_depth_budget_too_shallow():
    with pytest.raises(WhitneyError):
        whitney_decompose(flat_plane(-1, 1, 2, 2.0 ** -8), AmbientBox((0.0, 0.0), 4.0), -5)


def test_corkscrew_points_exist_for_circle_cubes():
    E = sphere((0.5, 0.5), 0.25, 2.0 ** -11)
    g = build_dyadic_grid(E, 3, 5)
    W = whitney_decompose(E, AmbientBox((-0.5, -0.5), 2.0), 11)
    for q in g.cubes_at(5)[::7]:
        cs = corkscrew_point(g.cube(q), W)
        X = np.atleast_2d(cs.point)
        assert cs.eps0 >= 0.1
        assert E.distance(X)[0] == pytest.approx(cs.delta)
        assert np.linalg.norm(X[0] - g.center[q]) <= 0.5 * g.length[q] + 1e-12
