import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urapprox.geometry import (AmbientBox, GeometryError, build_boundary_set, cantor_four_corners,
                               flat_plane, polyline, sawtooth_graph, sphere)
from urapprox.grid import verify_adr

import oracles

coord = st.floats(-2, 2, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(coord, coord), min_size=3, max_size=20))
def test_polyline_distance_matches_brute_force(pts):
    V = np.array([[-1.0, 0.0], [-0.2, 0.7], [0.4, -0.3], [1.1, 0.2]])
    E = polyline(V, spacing=2.0 ** -6)
    P = np.array(pts)
    ref = np.min([oracles.segment_point_distance(P, a, b) for a, b in zip(V[:-1], V[1:])], axis=0)
    assert np.allclose(E.distance(P), ref, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(0.01, 0.5))
def test_flat_ball_mass_is_exact(x, r):
    E = flat_plane(-2, 2, 2, 2.0 ** -8)
    assert E.ball_mass(np.array([x, 0.0]), r) == pytest.approx(2 * r, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0.01, 0.6))
def test_arc_ball_mass_matches_sample_count(theta, r):
    E = sphere((0.0, 0.0), 0.25, 2.0 ** -12)
    x = 0.25 * np.array([math.cos(theta), math.sin(theta)])
    d = np.linalg.norm(E.samples - x, axis=1)
    brute = float(E.weights[d < r].sum())
    assert abs(E.ball_mass(x, r) - brute) <= 2 * E.weights[0] + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.tuples(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5)), st.floats(0.01, 0.3))
def test_sphere_box_distance_is_a_lower_bound_attained(lo, side):
    E = sphere((0.1, -0.05), 0.25, 2.0 ** -8)
    lo = np.array(lo)
    t = np.linspace(0, 1, 41)
    P = lo + side * np.array(np.meshgrid(t, t, indexing="ij")).reshape(2, -1).T
    sampled = float(np.min(np.abs(np.linalg.norm(P - E.center, axis=1) - E.radius)))
    d = float(E.box_distance(lo[None], (lo + side)[None])[0])
    assert d <= sampled + 1e-12
    assert d >= sampled - side * math.sqrt(2) / 40 - 1e-12


def test_masses_match_closed_forms():
    assert flat_plane(-2, 2, 2, 2.0 ** -8).total_mass == pytest.approx(4.0)
    assert sphere((0, 0), 0.25, 2.0 ** -10).total_mass == pytest.approx(math.pi / 2)
    saw = sawtooth_graph(0.05, 0.25, -2, 2, 2.0 ** -10)
    assert saw.total_mass == pytest.approx(4 * math.sqrt(1 + 0.05 ** 2), rel=1e-12)
    for g in (1, 2, 4):
        assert cantor_four_corners(g, 2.0 ** -12).total_mass == pytest.approx(2.0)


def test_sawtooth_is_lipschitz_with_the_requested_slope():
    E = sawtooth_graph(0.05, 0.25, -1, 1, 2.0 ** -10)
    seg = E.pieces
    d = seg[:, 1] - seg[:, 0]
    assert np.max(np.abs(d[:, 1] / d[:, 0])) == pytest.approx(0.05, rel=1e-9)


def test_unknown_kind_is_rejected():
    with pytest.raises(GeometryError):
        build_boundary_set("torus")


def test_ambient_box_basics():
    B = AmbientBox((0.0, 1.0), 0.5)
    assert B.volume == pytest.approx(0.25)
    assert B.diam == pytest.approx(0.5 * math.sqrt(2))
    assert B.contains(np.array([[0.25, 1.25]]))[0]


def test_adr_on_segment_between_one_and_two():
    # centre x on [-2, 2], r <= 1: the ball meets E in at least half of [x - r, x + r]
    rep = verify_adr(flat_plane(-2, 2, 2, 2.0 ** -10), 100, seed=1, r_max=1.0)
    assert rep.min_ratio >= 1.0 - 1e-9
    assert rep.max_ratio == pytest.approx(2.0, rel=1e-9)
    assert rep.passed


@pytest.mark.parametrize("E", [
    sphere((0.5, 0.5), 0.25, 2.0 ** -11),
    sawtooth_graph(0.05, 0.25, -2, 2, 2.0 ** -11),
    cantor_four_corners(4, 2.0 ** -12),
], ids=["circle", "sawtooth", "cantor4"])
def test_adr_constants_finite_and_stable(E):
    rep = verify_adr(E, 120, seed=0)
    assert rep.passed
    assert rep.constant_ratio < 20
