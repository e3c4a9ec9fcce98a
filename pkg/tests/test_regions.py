import math

import numpy as np
import pytest

from urapprox.regions import (FamilyError, RegionUnion, boundary_containment_check, check_disjoint,
                              discrete_sawtooth, maximal_nonmembers, random_family, verify_nta,
                              verify_sawtooth_adr)

import oracles


def test_good_regions_have_two_labelled_sides(small_core):
    R, g = small_core.regions, small_core.grid
    for q in g.descendants(small_core.q0):
        reg = R.region(q)
        assert reg.good
        assert sorted(l for l in reg.labels if l) == ["+", "-"]
        for side, lab in ((1, "+"), (-1, "-")):
            comp = reg.component(lab)
            lo, hi = R.W.lo[comp], R.W.hi[comp]
            for P in (reg.X[side], reg.Y[side]):
                assert np.any(np.all((P >= lo) & (P <= hi), axis=1))
            # flat set: the sign of t tells the side
            assert np.sign(reg.X[side][1]) == side
            assert abs(reg.Y[side][1]) >= 0.25 * math.sqrt(R.eta) * g.length[q]


def test_whitney_size_constants_and_claim(small_core):
    R, g = small_core.regions, small_core.grid
    D = g.descendants(small_core.q0)
    c, C = R.whitney2_constants(D)
    assert 0 < c and C < math.inf
    assert min(R.claim31(q) for q in D) > 0


def test_family_helpers_match_brute_force(small_core):
    g, q0 = small_core.grid, small_core.q0
    M = oracles.containment_matrix(g)
    rng = np.random.default_rng(5)
    for _ in range(20):
        F = random_family(g, q0, rng)
        assert oracles.disjoint(g, F, M)
        kept = discrete_sawtooth(g, F, q0)
        ref = [c for c in range(g.n_cubes) if M[q0, c] and not any(M[f, c] for f in F)]
        assert kept == ref
        assert maximal_nonmembers(g, kept, q0) == sorted(F)


def test_overlapping_family_is_rejected(small_core):
    g, q0 = small_core.grid, small_core.q0
    kid = g.children[q0][0]
    with pytest.raises(FamilyError):
        check_disjoint(g, [kid, g.children[kid][0]])


def test_sawtooth_domains_are_nta_and_adr(small_core):
    R, g, q0 = small_core.regions, small_core.grid, small_core.q0
    rng = np.random.default_rng(11)
    for j in range(3):
        F = random_family(g, q0, rng)
        U = R.geometric_sawtooth(F, q0)
        rep = verify_nta(U, 15, seed=j)
        assert rep.passed, rep
        assert rep.chain_max[2] <= rep.chain_max[8]
        adr = verify_sawtooth_adr(U, 15, seed=j)
        assert adr.constant_ratio < 50
        ok, info = boundary_containment_check(R, F, q0)
        assert ok, info


def test_region_union_geometry():
    U = RegionUnion(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 1.0], [2.0, 1.0]]))
    assert U.volume == pytest.approx(2.0)
    assert U.boundary_measure == pytest.approx(6.0)
    assert U.contains(np.array([[0.5, 0.5], [1.0, 0.5], [2.5, 0.5]])).tolist() == [True, True, False]
    assert len(U.components()) == 1
