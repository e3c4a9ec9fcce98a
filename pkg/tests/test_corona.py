import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urapprox.corona import (StoppingRegime, bwgl_classify, build_corona, check_coherency,
                             graph_deficiency, packing_constant, rotate_points)
from urapprox.geometry import flat_plane, polyline, sawtooth_graph, sphere
from urapprox.grid import build_dyadic_grid

ETA, K = 2.0 ** -4, 2.0 ** 6


@pytest.fixture(scope="module")
def flat_corona():
    g = build_dyadic_grid(flat_plane(-2, 2, 2, 2.0 ** -11), 4, 7)
    return build_corona(g, ETA, K)


@pytest.fixture(scope="module")
def saw_corona():
    g = build_dyadic_grid(sawtooth_graph(0.05, 0.25, -2, 2, 2.0 ** -11), 4, 8)
    return build_corona(g, ETA, K)


def test_flat_line_has_no_bad_cubes(flat_corona):
    C = flat_corona
    assert not len(C.bad)
    assert len(C.regimes) == len(C.grid.roots())
    assert packing_constant(C.marked(), C.grid) == pytest.approx(1.0)
    for S in C.regimes:
        assert all(check_coherency(S, C.grid))
        assert S.graph.lipschitz <= ETA


def test_partition_and_bilateral_bound(saw_corona):
    C = saw_corona
    g = C.grid
    in_regime = C.regime_of >= 0
    assert np.array_equal(in_regime, C.good)
    for S in C.regimes:
        assert all(check_coherency(S, g))
        assert S.graph.lipschitz <= ETA
        for q in S.members:
            d1, d2 = graph_deficiency(g, q, S.graph, ETA, K)
            assert d1 + d2 < ETA * g.length[q]


def test_circle_is_all_bad_and_packing_counts_levels():
    g = build_dyadic_grid(sphere((0.5, 0.5), 0.25, 2.0 ** -11), 3, 7)
    C = build_corona(g, ETA, K)
    assert len(C.bad) == g.n_cubes
    assert packing_constant(C.marked(), g) == pytest.approx(5.0)


def test_incoherent_regime_is_detected(flat_corona):
    g = flat_corona.grid
    S = flat_corona.regimes[0]
    top = S.top
    kid = g.children[top][0]
    grandkids = g.children[kid]
    gap = StoppingRegime(99, top, sorted([top] + list(grandkids)), S.graph, S.graph_kind)
    a, b, c = check_coherency(gap, g)
    assert a and not b and c
    half = StoppingRegime(98, top, [top, kid], S.graph, S.graph_kind)
    a, b, c = check_coherency(half, g)
    assert a and b and not c


@settings(max_examples=12, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_deficiency_is_invariant_under_rigid_motions(angle, dx, dy):
    V = np.array([[-1.0, 0.0], [-0.1, 0.02], [0.05, -0.01], [1.0, 0.03]])
    E = polyline(V, spacing=2.0 ** -9)
    x = np.array([0.0, 0.006])
    base = bwgl_classify(SimpleNamespace(E=E, length=[0.125], center=[x]), 0, ETA, 4.0)
    shift = np.array([dx, dy])
    E2 = polyline(rotate_points(V, angle) + shift, spacing=2.0 ** -9)
    x2 = rotate_points(x[None], angle)[0] + shift
    moved = bwgl_classify(SimpleNamespace(E=E2, length=[0.125], center=[x2]), 0, ETA, 4.0)
    assert moved.d1 == pytest.approx(base.d1, rel=1e-6, abs=1e-12)
    assert moved.d2 == pytest.approx(base.d2, rel=1e-3, abs=1e-9)
    assert moved.good == base.good
