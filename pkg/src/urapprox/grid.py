"""Dyadic cubes D(E) obtained by restricting the ambient dyadic lattice to E."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, as_points


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class SurfaceCube:
    id: int
    k: int
    index: tuple
    length: float
    center: tuple
    mass: float
    parent: int
    children: tuple
    inner_radius: float
    outer_radius: float

    @property
    def key(self):
        return (self.k, self.index)


class SurfaceGrid:
    """Cubes of generations k_min..k_max, ordered by (k, lexicographic index).

    Samples of E are reordered so that every cube owns a contiguous slice
    [start, end) of grid.samples at every generation.
    """

    def __init__(self, E, k_min, k_max):
        if k_min > k_max:
            raise GridError("k_min must not exceed k_max")
        self.E = E
        self.k_min = int(k_min)
        self.k_max = int(k_max)
        self.dim = E.dim
        X = E.samples
        deep = np.floor(X * 2.0 ** self.k_max).astype(np.int64)
        keys = []
        for k in range(self.k_max, self.k_min - 1, -1):
            lk = deep >> (self.k_max - k)
            for a in range(self.dim - 1, -1, -1):
                keys.append(lk[:, a])
        order = np.lexsort(keys)
        self.order = order
        self.samples = X[order]
        self.weights = E.weights[order]
        self.pieces = None if E.pieces is None else E.pieces[order]
        self.deep_index = deep[order]
        csum = np.concatenate([[0.0], np.cumsum(self.weights)])

        levels, indices, starts, ends = [], [], [], []
        for k in range(self.k_min, self.k_max + 1):
            lk = self.deep_index >> (self.k_max - k)
            change = np.any(lk[1:] != lk[:-1], axis=1)
            st = np.concatenate([[0], np.nonzero(change)[0] + 1])
            en = np.concatenate([st[1:], [len(lk)]])
            idx = lk[st]
            lex = np.lexsort(idx.T[::-1])
            levels.append(np.full(len(st), k))
            indices.append(idx[lex])
            starts.append(st[lex])
            ends.append(en[lex])
        self.level = np.concatenate(levels)
        self.index = np.concatenate(indices)
        self.start = np.concatenate(starts)
        self.end = np.concatenate(ends)
        if len(self.level) == 0:
            raise GridError("E has no samples in the requested generations")
        n = len(self.level)
        self.n_cubes = n
        self.length = 2.0 ** (-self.level.astype(float))
        self.mass = csum[self.end] - csum[self.start]
        self.lookup = {(int(k), tuple(int(v) for v in i)): c
                       for c, (k, i) in enumerate(zip(self.level, self.index))}
        self.level_ranges = {}
        for k in range(self.k_min, self.k_max + 1):
            ids = np.nonzero(self.level == k)[0]
            self.level_ranges[k] = (int(ids[0]), int(ids[-1]) + 1)

        self.parent = np.full(n, -1, dtype=np.int64)
        kids = [[] for _ in range(n)]
        for c in range(n):
            k = int(self.level[c])
            if k > self.k_min:
                p = self.lookup[(k - 1, tuple(int(v) for v in (self.index[c] >> 1)))]
                self.parent[c] = p
                kids[p].append(c)
        self.children = [tuple(v) for v in kids]
        self._centers()

    # ------------------------------------------------------------ centers
    def _centers(self):
        """Pick x_Q among two candidate samples, keeping the larger inner radius."""
        E = self.E
        n = self.n_cubes
        tree = E.sample_tree
        rank = np.empty(len(self.order), dtype=np.int64)
        rank[self.order] = np.arange(len(self.order))
        half = 0.0
        if self.pieces is not None:
            half = 0.5 * float(np.max(np.linalg.norm(
                self.pieces[:, 1] - self.pieces[:, 0], axis=1)))
        self.center = np.zeros((n, self.dim))
        self.inner_radius = np.zeros(n)
        self.outer_radius = np.zeros(n)
        self.bbox_diam = np.zeros(n)
        for c in range(n):
            s, e = int(self.start[c]), int(self.end[c])
            P = self.samples[s:e]
            w = self.weights[s:e]
            ell = self.length[c]
            lo = self.index[c] * ell
            cand = []
            mu = (w[:, None] * P).sum(0) / max(w.sum(), 1e-300)
            cand.append(int(np.argmin(np.sum((P - mu) ** 2, axis=1))))
            spread = (P.max(0) - P.min(0)) > 1e-12 * ell
            gap = np.minimum(P - lo, lo + ell - P)
            face = gap[:, spread].min(axis=1) if spread.any() else gap.min(axis=1)
            cand.append(int(np.argmax(face)))
            best = None
            for j in dict.fromkeys(cand):
                x = P[j]
                nb = np.asarray(tree.query_ball_point(x, ell), dtype=np.int64)
                r = ell
                if len(nb):
                    outside = (rank[nb] < s) | (rank[nb] >= e)
                    if outside.any():
                        r = float(np.min(np.linalg.norm(
                            E.samples[nb[outside]] - x, axis=1)))
                r = max(r - half, 0.0)
                if best is None or r > best[0]:
                    best = (r, j)
            r, j = best
            x = P[j]
            self.center[c] = x
            self.inner_radius[c] = r
            self.outer_radius[c] = float(np.max(np.linalg.norm(P - x, axis=1))) + half
            self.bbox_diam[c] = float(np.linalg.norm(P.max(0) - P.min(0))) + 2 * half

    # ------------------------------------------------------------ queries
    def cube(self, c):
        return SurfaceCube(int(c), int(self.level[c]),
                           tuple(int(v) for v in self.index[c]),
                           float(self.length[c]), tuple(self.center[c]),
                           float(self.mass[c]), int(self.parent[c]),
                           self.children[c], float(self.inner_radius[c]),
                           float(self.outer_radius[c]))

    def cubes_at(self, k):
        a, b = self.level_ranges[k]
        return range(a, b)

    def find(self, k, index):
        return self.lookup.get((int(k), tuple(int(v) for v in index)))

    def cube_samples(self, c):
        return self.samples[self.start[c]:self.end[c]]

    def cube_weights(self, c):
        return self.weights[self.start[c]:self.end[c]]

    def contains(self, a, b):
        """True iff cube b is a subset of cube a."""
        return (self.level[b] >= self.level[a] and self.start[b] >= self.start[a]
                and self.end[b] <= self.end[a])

    def ancestor(self, c, k):
        while self.level[c] > k:
            c = int(self.parent[c])
        return c

    def descendants(self, c, include_self=True):
        out = [c] if include_self else []
        stack = list(self.children[c])
        while stack:
            q = stack.pop()
            out.append(q)
            stack.extend(self.children[q])
        return sorted(out)

    def descendant_mask(self, c):
        """Boolean mask over all cubes of D_Q."""
        m = ((self.level >= self.level[c]) & (self.start >= self.start[c])
             & (self.end <= self.end[c]))
        return m

    def roots(self):
        return list(self.cubes_at(self.k_min))

    def dilated_ball_indices(self, c, radius):
        """Sample indices (in E's original order) within radius of x_Q."""
        return self.E.sample_tree.query_ball_point(self.center[c], radius)

    def diameter_ratio(self):
        return float(np.max(self.bbox_diam / self.length))

    def a0(self):
        return float(np.min(self.inner_radius / self.length))

    def dump(self):
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(["k", "index"] + [f"x{a}" for a in range(self.dim)] + ["length", "mass"])
        for c in range(self.n_cubes):
            w.writerow([int(self.level[c]), ",".join(str(int(v)) for v in self.index[c])]
                       + [repr(float(v)) for v in self.center[c]]
                       + [repr(float(self.length[c])), repr(float(self.mass[c]))])
        return buf.getvalue()


def build_dyadic_grid(E, k_min, k_max):
    return SurfaceGrid(E, k_min, k_max)


def surface_ball_mass(E, x, r):
    """sigma(Delta(x, r)) for x on E."""
    x = as_points(x, E.dim)
    if not r > 0:
        raise GeometryError("radius must be positive")
    if E.distance(x)[0] > E.spacing:
        raise GeometryError("centre is not on E")
    return E.ball_mass(x[0], r)


@dataclass
class ADRReport:
    min_ratio: float
    max_ratio: float
    per_scale: list
    refined_min_ratio: float
    refined_max_ratio: float
    passed: bool

    @property
    def constant_ratio(self):
        return self.max_ratio / self.min_ratio if self.min_ratio > 0 else math.inf

    @property
    def drift(self):
        return max(abs(self.refined_min_ratio / self.min_ratio - 1),
                   abs(self.refined_max_ratio / self.max_ratio - 1))


def _adr_ratios(E, xs, rs):
    n = E.dim - 1
    return np.array([E.ball_mass(x, r) / r ** n for x, r in zip(xs, rs)])


def verify_adr(E, trial_count=200, seed=0, r_min=None, r_max=None, tol=0.10):
    """Empirical ADR constants of sigma on E, and their stability under refinement.

    Centres are drawn from the samples, radii log-uniformly in (r_min, r_max).
    The refined set is sampled at half spacing; the same trials are repeated.
    """
    rng = np.random.default_rng(seed)
    diam = E.diameter if math.isfinite(E.diameter) else E.extent_diameter
    r_min = 4 * E.spacing if r_min is None else r_min
    r_max = diam if r_max is None else r_max
    if not r_min < r_max:
        return ADRReport(0.0, math.inf, [], 0.0, math.inf, False)
    xs = E.samples[rng.integers(0, len(E.samples), trial_count)]
    rs = np.exp(rng.uniform(math.log(r_min), math.log(r_max), trial_count))
    ratios = _adr_ratios(E, xs, rs)
    R = E.refined()
    ratios2 = _adr_ratios(R, xs, rs)
    scales = np.floor(np.log2(rs)).astype(int)
    per = []
    for s in sorted(set(scales.tolist())):
        m = scales == s
        per.append({"log2_r": s, "min": float(ratios[m].min()),
                    "max": float(ratios[m].max()), "trials": int(m.sum())})
    lo, hi = float(ratios.min()), float(ratios.max())
    lo2, hi2 = float(ratios2.min()), float(ratios2.max())
    ok = (lo > 0 and math.isfinite(hi) and lo2 > 0
          and abs(lo2 / lo - 1) < tol and abs(hi2 / hi - 1) < tol)
    return ADRReport(lo, hi, per, lo2, hi2, bool(ok))
