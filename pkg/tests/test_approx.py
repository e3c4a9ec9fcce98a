import math

import numpy as np
import pytest

from urapprox import approx as ap
from urapprox.harmonic import BoundaryData, solve_harmonic

import oracles


def _build(core, u, eps, ns=None):
    ns = ns or ap.NodeSets(u, core.regions)
    cls = ap.classify_components(u, core.regions, eps, core.q0, nodesets=ns)
    forest = ap.build_generations(core.corona, core.regions, u, eps, core.q0)
    return cls, forest, ap.build_epsilon_approximant(u, core.regions, cls, forest, eps, core.q0)


@pytest.fixture(scope="module")
def nodesets(small_core, gentle_field):
    return ap.NodeSets(gentle_field, small_core.regions)


@pytest.mark.parametrize("eps", [0.5, 0.25, 0.02, 0.005])
def test_sup_error_below_eps_at_every_tent_node(small_core, gentle_field, nodesets, eps):
    cls, forest, A = _build(small_core, gentle_field, eps, nodesets)
    T = nodesets.tent(small_core.q0)
    assert np.array_equal(np.sort(A.nodes), np.sort(T))
    err = np.abs(gentle_field.u.ravel()[A.nodes] - A.phi)
    assert np.all(err < eps)
    assert A.sup_error == pytest.approx(float(err.max()))
    assert len(A.pieces) <= A.meta["piece_bound"]


def test_red_components_appear_as_eps_shrinks(small_core, gentle_field, nodesets):
    big, _, A_big = _build(small_core, gentle_field, 0.5, nodesets)
    small, _, A_small = _build(small_core, gentle_field, 0.005, nodesets)
    assert len(big.red) == 0
    assert all(p.kind == "constant" for p in A_big.pieces)
    assert len(small.red) > 0
    assert any(p.kind == "trace" for p in A_small.pieces)
    # red rule: oscillation above eps / 10
    for o in small.components:
        assert (o.osc > 0.005 / 10) == (o.color == "red")


def test_generation_stops_have_bounded_drift(small_core, gentle_field):
    eps = 0.02
    forest = ap.build_generations(small_core.corona, small_core.regions, gentle_field, eps,
                                  small_core.q0)
    for sub in forest.subregimes:
        for q in sub.members:
            a = ap.anchor_values(gentle_field, small_core.regions, q)
            assert abs(a[0] - sub.anchors[0]) <= eps / 10 + 1e-12
            assert abs(a[1] - sub.anchors[1]) <= eps / 10 + 1e-12


def test_constant_datum_gives_zero_variation(small_core):
    cfg = small_core.cfg
    lo = np.array(cfg.box[:2])
    u = solve_harmonic(small_core.E, lo, lo + cfg.box[-1], BoundaryData("constant", {"c": 0.4}),
                       cfg.solver_h)
    cls, forest, A = _build(small_core, u, 0.25)
    assert len(cls.red) == 0
    assert np.allclose(A.phi, 0.4)
    bv, _ = ap.bv_carleson_sup(A, small_core.regions)
    assert bv == pytest.approx(0.0, abs=1e-12)


def test_unit_jump_variation_is_interface_length():
    n, h = 40, 2.0 ** -5
    shape = (n, n)
    nodes = np.arange(n * n)
    ix = nodes // n
    piece = (ix >= n // 2).astype(np.int64)
    phi = piece.astype(float)
    trace = np.zeros(n * n, bool)
    tv = ap.total_variation(shape, h, nodes, piece, phi, trace, np.zeros(shape))
    A = n * h
    assert tv == pytest.approx(A, rel=1e-12)
    sigma = 0.75
    assert tv / sigma == pytest.approx(A / sigma, rel=1e-12)


def test_trace_pieces_contribute_gradient_mass():
    n, h = 16, 0.1
    shape = (n, n)
    nodes = np.arange(n * n)
    g = np.full(shape, 2.0)
    tv = ap.total_variation(shape, h, nodes, np.zeros(n * n, np.int64), np.zeros(n * n),
                            np.ones(n * n, bool), g)
    assert tv == pytest.approx(2.0 * n * n * h * h)


def test_loglog_slope_recovers_power():
    eps = [0.5, 0.25, 0.125]
    assert ap.loglog_slope(eps, [e ** -2 for e in eps]) == pytest.approx(-2.0)


def test_far_annuli_match_closed_form():
    data = BoundaryData("halfplane_indicator", {"x0": 0.0})
    rows = ap.far_annuli(data, (0.0, 0.0), 1.0, 16.0)
    for r in rows:
        assert r["tv"] == pytest.approx(oracles.annulus_tv_halfplane(r["r_in"], r["r_out"]), rel=1e-3)
        assert r["tv"] <= r["bound"] * (1 + 1e-12)


@pytest.fixture(scope="module")
def small_global():
    from conftest import small_flat_config
    from urapprox.pipeline import build_core, solve_core
    cfg = small_flat_config(boundary="sphere", boundary_params="center=0.5, 0.5; radius=0.25",
                            k_min=3, k_max=5, box="-1, -1, 4", q0=None,
                            data="arc_indicator",
                            data_params="center=0.5, 0.5; radius=0.25; theta0=0.3; alpha=1.0",
                            h="2^-6", name="small_global")
    core = build_core(cfg)
    u = solve_core(core, cfg.solver_h, core.grid.roots())
    return core, u


def test_global_assembly_small_circle(small_global):
    core, u = small_global
    G = ap.assemble_global(u, core.regions, 0.25, core.E.samples[0])
    assert G.radius == pytest.approx(200 * core.E.diameter)
    assert G.sup_error < 0.25
    assert G.tv_mismatch < 0.05
    assert all(a["tv"] <= a["bound"] * (1 + 1e-12) for a in G.annuli)
    assert math.isfinite(G.C_eps) and G.C_eps > 0
    # stitched phi equals u on trace nodes and within eps everywhere it is defined
    own = G.owner >= 0
    assert np.max(np.abs(G.phi[own] - u.u.ravel()[own])) < 0.25
