import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urapprox.carleson import (CarlesonError, DiscreteCarlesonMeasure, corona_coefficients,
                               energy_coefficients, extract_stopping_family, packing_norm,
                               restricted_mass, restricted_norm, verify_extrapolation)
from urapprox.corona import build_corona
from urapprox.geometry import flat_plane, sphere
from urapprox.grid import build_dyadic_grid
from urapprox.harmonic import BoundaryData, solve_harmonic
from urapprox.regions import FamilyError, random_family

import oracles
from exhaustive import stopping_family_sweep


@pytest.fixture(scope="module")
def seg_M(segment_grid):
    return oracles.containment_matrix(segment_grid)


def _measure(grid, coef):
    return DiscreteCarlesonMeasure(grid, np.asarray(coef, float))


@pytest.mark.parametrize("d", range(0, 7))
def test_sigma_proportional_measure_telescopes(d):
    g = build_dyadic_grid(flat_plane(0.0, 1.0, 2, 2.0 ** -9), 0, d)
    m = _measure(g, g.mass)
    assert packing_norm(m) == pytest.approx(d + 1, rel=1e-12)
    # one more generation adds exactly one
    g2 = build_dyadic_grid(flat_plane(0.0, 1.0, 2, 2.0 ** -9), 0, d + 1)
    assert packing_norm(_measure(g2, g2.mass)) - packing_norm(m) == pytest.approx(1.0, rel=1e-12)


def test_zero_measure(segment_grid):
    m = _measure(segment_grid, np.zeros(segment_grid.n_cubes))
    assert packing_norm(m) == 0.0
    sf = extract_stopping_family(m, 0, 1.0, 1.0)
    assert sf.family == [] and sf.passed
    rep = verify_extrapolation(_measure(segment_grid, segment_grid.mass), m, 2.0, 10)
    assert rep.M1 == 0.0 and rep.M2 == 0.0


coefs = st.lists(st.floats(0, 5, allow_nan=False), min_size=127, max_size=127)


@settings(max_examples=25, deadline=None)
@given(coefs, st.integers(0, 2 ** 31 - 1))
def test_norms_match_brute_force(segment_grid, seg_M, c, seed):
    g = segment_grid
    coef = np.array(c) * g.mass
    m = _measure(g, coef)
    assert packing_norm(m) == pytest.approx(oracles.packing_norm(g, coef, seg_M), rel=1e-12)
    rng = np.random.default_rng(seed)
    q = int(rng.integers(g.n_cubes))
    F = random_family(g, q, rng)
    ref = oracles.restricted_norm(g, coef, F, q, seg_M)
    assert restricted_norm(m, F, q) == pytest.approx(ref, rel=1e-12, abs=1e-300)


@settings(max_examples=25, deadline=None)
@given(coefs, st.integers(0, 2 ** 31 - 1))
def test_monotonicity(segment_grid, c, seed):
    g = segment_grid
    rng = np.random.default_rng(seed)
    coef = np.array(c) * g.mass
    bigger = coef + rng.uniform(0, 1, g.n_cubes) * g.mass
    assert packing_norm(_measure(g, coef)) <= packing_norm(_measure(g, bigger)) + 1e-12
    q = 0
    F = random_family(g, q, rng)
    # refine F by adding maximal cubes disjoint from it: F' contains F
    covered = set()
    for f in F:
        covered.update(g.descendants(f))
    extra = [p for p in g.descendants(q) if p not in covered and p != q
             and not any(oracles.contains(g, p, f) for f in F)]
    F2 = sorted(F + extra[-1:]) if extra else F
    m = _measure(g, coef)
    assert restricted_norm(m, F2, q) <= restricted_norm(m, F, q) + 1e-12


def test_restriction_special_families(segment_grid):
    g = segment_grid
    m = _measure(g, g.mass)
    assert restricted_norm(m, [5], 5) == 0.0
    assert restricted_norm(m, [], 5) == pytest.approx(g.k_max - g.level[5] + 1)
    with pytest.raises(FamilyError):
        restricted_norm(m, [1, 3], 0)
    with pytest.raises(FamilyError):
        restricted_norm(m, [2], 1)


@pytest.mark.parametrize("d", range(1, 7))
def test_stopping_family_exhaustive(d):
    """Every cube, several (a, b), four measure shapes; both conclusions by brute force."""
    checked, failures = stopping_family_sweep(d)
    assert failures == []
    assert checked == 4 * (2 ** (d + 1) - 1) * 6


def test_greedy_tent_rule_breaks_the_bad_mass_bound(segment_grid):
    g = segment_grid
    coef = g.mass.copy()
    coef[0] = 0.0
    m = _measure(g, coef)
    b = 1.0
    a = m.tents()[0] / g.mass[0] - b
    greedy = extract_stopping_family(m, 0, a, b, criterion="tent")
    assert greedy.family == [0] and not greedy.passed
    assert extract_stopping_family(m, 0, a, b).passed


def test_precondition_is_enforced(segment_grid):
    m = _measure(segment_grid, segment_grid.mass)
    with pytest.raises(CarlesonError):
        extract_stopping_family(m, 0, 1.0, 1.0)


def test_invalid_coefficients(segment_grid):
    with pytest.raises(CarlesonError):
        _measure(segment_grid, -segment_grid.mass)
    with pytest.raises(CarlesonError):
        _measure(segment_grid, np.ones(3))


def test_corona_coefficients_support():
    g = build_dyadic_grid(flat_plane(-2, 2, 2, 2.0 ** -10), 4, 6)
    C = build_corona(g, 2.0 ** -4, 2.0 ** 6)
    alpha = corona_coefficients(C)
    assert set(np.nonzero(alpha.coef)[0]) == set(C.tops)
    gc = build_dyadic_grid(sphere((0.5, 0.5), 0.25, 2.0 ** -10), 3, 5)
    alpha = corona_coefficients(build_corona(gc, 2.0 ** -4, 2.0 ** 6))
    assert np.array_equal(alpha.coef, gc.mass)


def test_extrapolation_report_sigma_proportional(segment_grid):
    g = segment_grid
    m = _measure(g, np.where(g.level == 0, g.mass, 0.0))
    mt = _measure(g, g.mass)
    rep = verify_extrapolation(m, mt, 2.0, 20, seed=1)
    assert rep.M0 == pytest.approx(1.0)
    assert rep.M2 == pytest.approx(g.k_max + 1)
    assert rep.accepted > 0
    assert rep.M1 <= rep.M2 + 1e-12


def test_energy_coefficients_double_count(small_core, gentle_field):
    R, g = small_core.regions, small_core.grid
    D = g.descendants(small_core.q0)
    beta = energy_coefficients(gentle_field, R, D)
    assert not beta.report["skipped"]
    # independent multiplicity count: node membership in each fattened union, by hand
    u = gentle_field
    X = u.nodes()
    dens = u.energy_density().ravel()
    mult = np.zeros(len(X), dtype=np.int64)
    for q in D:
        lo, hi = R.fattened(R.region(q).cubes)
        inside = np.zeros(len(X), bool)
        for a, b in zip(lo, hi):
            inside |= np.all((X >= a - 1e-12) & (X <= b + 1e-12), axis=1)
        mult += inside
    total = float(beta.coef.sum())
    assert total <= beta.report["overlap"] * beta.report["union_energy"] * (1 + 1e-12)
    assert total == pytest.approx(float((mult * dens).sum() * u.h ** 2), rel=0.05)


def test_constant_field_gives_zero_energy(small_core):
    cfg = small_core.cfg
    lo = np.array(cfg.box[:2]) + 0.0
    u = solve_harmonic(small_core.E, lo, lo + cfg.box[-1], BoundaryData("constant", {"c": 0.7}),
                       cfg.solver_h)
    beta = energy_coefficients(u, small_core.regions, small_core.grid.descendants(small_core.q0))
    assert np.all(beta.coef < 1e-20)
