"""Exhaustive sweep of extract_stopping_family against brute-force oracles."""

import numpy as np

from urapprox.carleson import DiscreteCarlesonMeasure, extract_stopping_family
from urapprox.geometry import flat_plane
from urapprox.grid import build_dyadic_grid

import oracles


def _bad_oracle(g, coef, F, a, M):
    return [f for f in F if float(coef[M[f]].sum()) - coef[f] > a * g.mass[f]]


def _measures(g, rng):
    yield "uniform", g.mass.copy()
    yield "random", rng.uniform(0, 3, g.n_cubes) * g.mass
    yield "sparse", np.where(rng.random(g.n_cubes) < 0.3, g.mass, 0.0)
    deep = np.zeros(g.n_cubes)
    leaves = np.nonzero(g.level == g.k_max)[0]
    leaf = int(leaves[len(leaves) // 3])
    deep[leaf] = 40 * g.mass[leaf]
    p = g.parent[leaf]
    while p >= 0:
        deep[p] = 0.5 * g.mass[p]
        p = g.parent[p]
    yield "deep", deep


def stopping_family_sweep(d):
    """Segment grid of depth d; every cube, b in {1/4, 1, 3}, a at and above the threshold.

    Returns (cases checked, list of failing cases).
    """
    g = build_dyadic_grid(flat_plane(0.0, 1.0, 2, 2.0 ** -9), 0, d)
    M = oracles.containment_matrix(g)
    rng = np.random.default_rng(d)
    checked, failures = 0, []
    for name, coef in _measures(g, rng):
        m = DiscreteCarlesonMeasure(g, np.asarray(coef, float))
        for q in range(g.n_cubes):
            tent = float(coef[M[q]].sum()) / g.mass[q]
            for b in (0.25, 1.0, 3.0):
                for extra in (0.0, 0.5):
                    a = max(tent - b, 0.0) + extra
                    sf = extract_stopping_family(m, q, a, b)
                    F = sf.family
                    bad = _bad_oracle(g, coef, F, a, M)
                    ok = (all(M[q, f] for f in F) and oracles.disjoint(g, F, M)
                          and oracles.restricted_norm(g, coef, F, q, M) <= 2 * b * (1 + 1e-12)
                          and sorted(bad) == sorted(sf.bad)
                          and float(g.mass[bad].sum())
                          <= (a + b) / (a + 2 * b) * g.mass[q] * (1 + 1e-12)
                          and sf.passed)
                    if not ok:
                        failures.append((name, q, a, b))
                    checked += 1
    return checked, failures
