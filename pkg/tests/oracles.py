"""Independent brute-force references used by the tests.

Nothing here calls the tent-sum or descendant machinery of the package; containment
of dyadic cubes is decided from the integer indices alone.
"""

import math

import numpy as np


def contains(grid, a, b):
    """Q_b is a subcube of Q_a, from the (k, index) keys only."""
    ka, kb = int(grid.level[a]), int(grid.level[b])
    if kb < ka:
        return False
    return bool(np.all((grid.index[b] >> (kb - ka)) == grid.index[a]))


def containment_matrix(grid):
    """M[a, b] = Q_b is a subcube of Q_a; O(N^2) row by row."""
    n = grid.n_cubes
    lev = grid.level.astype(np.int64)
    M = np.zeros((n, n), bool)
    for a in range(n):
        shift = np.maximum(lev - lev[a], 0)
        same = np.all((grid.index >> shift[:, None]) == grid.index[a], axis=1)
        M[a] = same & (lev >= lev[a])
    return M


def packing_norm(grid, coef, M=None):
    M = containment_matrix(grid) if M is None else M
    return max(float(np.sum(coef[M[a]])) / grid.mass[a] for a in range(grid.n_cubes))


def restricted_norm(grid, coef, F, q, M=None):
    M = containment_matrix(grid) if M is None else M
    keep = np.ones(grid.n_cubes, bool)
    for f in F:
        keep &= ~M[f]
    best = 0.0
    for a in range(grid.n_cubes):
        if M[q, a]:
            best = max(best, float(coef[M[a] & keep].sum()) / grid.mass[a])
    return best


def disjoint(grid, F, M=None):
    M = containment_matrix(grid) if M is None else M
    return all(not M[a, b] for a in F for b in F if a != b)


def segment_point_distance(P, a, b):
    """Euclidean distance from points P to the segment [a, b]."""
    P = np.atleast_2d(P)
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = b - a
    t = np.clip(((P - a) @ d) / (d @ d), 0.0, 1.0)
    return np.linalg.norm(P - (a + t[:, None] * d), axis=1)


def halfplane_carleson(r):
    """r^-1 times the integral of |grad u|^2 t over the upper half disc, u the indicator extension.

    |grad u| = 1/(pi rho), so the integral is
    int_0^r int_0^pi rho sin(theta) (pi rho)^-2 rho dtheta drho = 2 r / pi^2.
    """
    return 2.0 / math.pi ** 2


def annulus_tv_halfplane(r_in, r_out):
    """Integral of |grad u| = 1/(pi rho) over the full annulus around the jump point."""
    return 2.0 * (r_out - r_in)
