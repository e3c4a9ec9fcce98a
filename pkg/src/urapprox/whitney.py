"""Whitney decomposition of a working box minus E, fattened cubes, W_Q^0 and corkscrews."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.spatial import cKDTree

from .geometry import AmbientBox, box_box_distance, point_box_distance

TAU0 = 0.125


class WhitneyError(ValueError):
    pass


class PartialCoverError(WhitneyError):
    def __init__(self, msg, uncovered_volume):
        super().__init__(f"{msg}; uncovered volume {uncovered_volume:.6g}")
        self.uncovered_volume = uncovered_volume


@dataclass(frozen=True)
class WhitneyCube:
    id: int
    k: int
    box: AmbientBox
    dist_to_E: float
    neighbors: tuple

    @property
    def side(self):
        return self.box.side

    @property
    def diam(self):
        return self.box.diam


@dataclass(frozen=True)
class FattenedCube:
    parent: WhitneyCube
    tau: float
    box: AmbientBox


def _starting_cubes(box):
    """Largest dyadic cubes tiling the working box exactly."""
    d = box.dim
    s = 2.0 ** math.floor(math.log2(box.side))
    while True:
        m = box.side / s
        c = np.array(box.min_corner) / s
        if abs(m - round(m)) < 1e-12 and np.all(np.abs(c - np.round(c)) < 1e-12):
            break
        s /= 2
        if s < box.side * 2.0 ** -30:
            raise WhitneyError("working box is not a union of dyadic cubes")
    k = -int(round(math.log2(s)))
    m = int(round(box.side / s))
    base = np.round(np.array(box.min_corner) / s).astype(np.int64)
    idx = np.array(list(product(range(m), repeat=d)), dtype=np.int64) + base
    return k, idx


def _probe_offsets(d):
    vals = [-0.125] + [(j + 0.5) / 4 for j in range(4)] + [1.125]
    out = [p for p in product(vals, repeat=d) if any(v < 0 or v > 1 for v in p)]
    return np.array(out)


class WhitneyDecomposition:
    """Dyadic Whitney cubes covering working_box minus a guard band around E.

    A cube I is accepted when 4 diam(I) <= dist(4I, E); the companion bound
    dist(I, E) <= 40 diam(I) is checked on every emitted cube.  Touching cubes
    are balanced to side ratio at most 2 by splitting.
    """

    def __init__(self, E, working_box, k_deepest, balance=True):
        self.E = E
        self.box = working_box
        self.dim = working_box.dim
        self.k_deepest = int(k_deepest)
        d = self.dim
        k0, idx = _starting_cubes(working_box)
        if k0 > self.k_deepest:
            raise WhitneyError("depth budget shallower than the working box")
        rt = math.sqrt(d)
        acc_k, acc_idx = [], []
        k = k0
        while len(idx):
            s = 2.0 ** -k
            lo = idx * s
            lo4 = lo - 1.5 * s
            d4 = self.E.box_distance(lo4, lo4 + 4 * s)
            ok = d4 >= 4 * rt * s
            acc_k.append(np.full(int(ok.sum()), k))
            acc_idx.append(idx[ok])
            rest = idx[~ok]
            if k == self.k_deepest:
                self.guard_index = rest
                break
            kids = np.array(list(product((0, 1), repeat=d)), dtype=np.int64)
            idx = (2 * rest[:, None, :] + kids[None]).reshape(-1, d)
            k += 1
        else:
            self.guard_index = np.zeros((0, d), dtype=np.int64)
        self.guard_k = self.k_deepest
        level = np.concatenate(acc_k).astype(np.int64)
        index = np.concatenate(acc_idx).reshape(-1, d)
        self._set_cubes(level, index)
        self.splits = 0
        if balance:
            self._balance()
        self._check_bounds()

    # ------------------------------------------------------------ storage
    def _set_cubes(self, level, index):
        order = np.lexsort(tuple(index.T[::-1]) + (level,))
        self.level = level[order]
        self.index = index[order]
        self.side = 2.0 ** (-self.level.astype(float))
        self.lo = self.index * self.side[:, None]
        self.hi = self.lo + self.side[:, None]
        self.center = self.lo + 0.5 * self.side[:, None]
        self.diam = self.side * math.sqrt(self.dim)
        self.n_cubes = len(self.level)
        self.levels = sorted(set(self.level.tolist()))
        self._keys = {}
        for k in self.levels:
            ids = np.nonzero(self.level == k)[0]
            key = self._encode(self.index[ids])
            o = np.argsort(key)
            self._keys[k] = (key[o], ids[o])
        self._neighbors()

    @staticmethod
    def _encode(idx):
        off = idx + (1 << 20)
        key = np.zeros(len(idx), dtype=np.int64)
        for a in range(idx.shape[1]):
            key = key * (1 << 21) + off[:, a]
        return key

    def locate(self, X):
        """Id of the cube containing each point (half-open lattice cells), else -1."""
        X = np.asarray(X, float).reshape(-1, self.dim)
        out = np.full(len(X), -1, dtype=np.int64)
        inside = np.all((X >= self.box.lo) & (X < self.box.hi), axis=1)
        for k in self.levels:
            todo = np.nonzero((out < 0) & inside)[0]
            if not len(todo):
                break
            keys, ids = self._keys[k]
            q = self._encode(np.floor(X[todo] * 2.0 ** k).astype(np.int64))
            pos = np.searchsorted(keys, q)
            pos = np.minimum(pos, len(keys) - 1)
            hit = keys[pos] == q
            out[todo[hit]] = ids[pos[hit]]
        return out

    def _neighbors(self):
        offs = _probe_offsets(self.dim)
        P = self.lo[:, None, :] + offs[None] * self.side[:, None, None]
        hit = self.locate(P.reshape(-1, self.dim)).reshape(len(self.lo), len(offs))
        src = np.repeat(np.arange(self.n_cubes), len(offs))
        dst = hit.ravel()
        m = dst >= 0
        a = np.concatenate([src[m], dst[m]])
        b = np.concatenate([dst[m], src[m]])
        n = np.int64(self.n_cubes)
        key = np.unique(a.astype(np.int64) * n + b)
        pairs = np.stack([key // n, key % n], axis=1)
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        g = box_box_distance(self.lo[pairs[:, 0]], self.hi[pairs[:, 0]],
                             self.lo[pairs[:, 1]], self.hi[pairs[:, 1]])
        pairs = pairs[g == 0]
        self.pairs = pairs
        # pairs are sorted by first id, so each cube's neighbours are one slice
        cuts = np.searchsorted(pairs[:, 0], np.arange(1, self.n_cubes))
        self.neighbors = [tuple(v.tolist()) for v in np.split(pairs[:, 1], cuts)]

    def _balance(self):
        d = self.dim
        kids = np.array(list(product((0, 1), repeat=d)), dtype=np.int64)
        while True:
            i, j = self.pairs[:, 0], self.pairs[:, 1]
            big = np.unique(i[self.level[j] > self.level[i] + 1])
            if not len(big):
                break
            keep = np.ones(self.n_cubes, bool)
            keep[big] = False
            new_idx = (2 * self.index[big][:, None, :] + kids[None]).reshape(-1, d)
            new_lvl = np.repeat(self.level[big] + 1, len(kids))
            self.splits += len(big)
            self._set_cubes(np.concatenate([self.level[keep], new_lvl]),
                            np.concatenate([self.index[keep], new_idx]))

    def _check_bounds(self):
        self.dist = self.E.box_distance(self.lo, self.hi)
        lo4 = self.lo - 1.5 * self.side[:, None]
        self.dist4 = self.E.box_distance(lo4, lo4 + 4 * self.side[:, None])
        far = self.dist > 40 * self.diam
        if far.any():
            raise PartialCoverError(
                f"{int(far.sum())} cubes farther than 40 diam from E (working box too large "
                f"for the starting scale)", 0.0)
        self.violations = int(np.sum(4 * self.diam > self.dist4))

    # ------------------------------------------------------------ reports
    @property
    def guard_volume(self):
        return len(self.guard_index) * 2.0 ** (-self.guard_k * self.dim)

    @property
    def covered_volume(self):
        return float(np.sum(self.side ** self.dim))

    @property
    def guard_width(self):
        if not len(self.guard_index):
            return 0.0
        s = 2.0 ** -self.guard_k
        lo = self.guard_index * s
        return float(np.max(self.E.box_distance(lo, lo + s)) + s * math.sqrt(self.dim))

    def cube(self, i):
        return WhitneyCube(int(i), int(self.level[i]),
                           AmbientBox(tuple(self.lo[i]), float(self.side[i])),
                           float(self.dist[i]), self.neighbors[i])

    def bound_violations(self):
        lower = int(np.sum(4 * self.diam > self.dist4))
        mono = int(np.sum(self.dist4 > self.dist))
        upper = int(np.sum(self.dist > 40 * self.diam))
        return {"lower": lower, "monotone": mono, "upper": upper}

    def neighbor_ratio(self):
        if not len(self.pairs):
            return 1.0
        r = self.side[self.pairs[:, 0]] / self.side[self.pairs[:, 1]]
        return float(r.max())

    def fattened_overlaps(self, tau):
        """Touching pairs (I, J) with I*(tau) meeting the interior of (3/4)J."""
        i, j = self.pairs[:, 0], self.pairs[:, 1]
        si, sj = self.side[i][:, None], self.side[j][:, None]
        flo, fhi = self.lo[i] - tau * si / 2, self.hi[i] + tau * si / 2
        jlo, jhi = self.lo[j] + sj / 8, self.hi[j] - sj / 8
        overlap = np.all((flo < jhi) & (jlo < fhi), axis=1)
        return self.pairs[overlap]

    def center_tree(self, k):
        if not hasattr(self, "_ctrees"):
            self._ctrees = {}
        if k not in self._ctrees:
            ids = np.nonzero(self.level == k)[0]
            self._ctrees[k] = (cKDTree(self.center[ids]) if len(ids) else None, ids)
        return self._ctrees[k]

    def dump(self):
        rows = ["k\tlo\tside\tdist"]
        for i in range(self.n_cubes):
            rows.append(f"{int(self.level[i])}\t" + ",".join(repr(float(v)) for v in self.lo[i])
                        + f"\t{float(self.side[i])!r}\t{float(self.dist[i])!r}")
        return "\n".join(rows) + "\n"


def whitney_decompose(E, working_box, k_deepest, balance=True):
    return WhitneyDecomposition(E, working_box, k_deepest, balance=balance)


def fatten(I, tau, tau0=TAU0):
    """I*(tau) = (1 + tau) I about the centre of I."""
    if not (0 < tau <= tau0):
        raise WhitneyError(f"tau must lie in (0, {tau0}]")
    return FattenedCube(I, tau, I.box.dilate(1 + tau))


def fattened_boxes(W, ids, tau):
    ids = np.asarray(ids, dtype=np.int64)
    s = W.side[ids][:, None]
    return W.lo[ids] - tau * s / 2, W.hi[ids] + tau * s / 2


def w0_members(W, grid, q, eta, K):
    """Ids of Whitney cubes with eta^(1/4) l <= l(I) <= K^(1/2) l and dist(I, Q) <= K^(1/2) l."""
    ell = grid.length[q]
    lo_side, hi_side = eta ** 0.25 * ell, K ** 0.5 * ell
    reach = K ** 0.5 * ell
    P = grid.cube_samples(q)
    x = grid.center[q]
    R = grid.outer_radius[q]
    found = []
    for k in W.levels:
        s = 2.0 ** -k
        if not (lo_side <= s <= hi_side):
            continue
        tree, ids = W.center_tree(k)
        if tree is None:
            continue
        cand = tree.query_ball_point(x, R + reach + s * math.sqrt(W.dim) / 2 + 1e-12)
        if not cand:
            continue
        cand = ids[np.asarray(cand)]
        dist = _box_sample_distance(W.lo[cand], W.hi[cand], P)
        found.append(cand[dist <= reach])
    if not found:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(found))


def _box_sample_distance(lo, hi, P, chunk=200000):
    out = np.empty(len(lo))
    step = max(1, chunk // max(len(P), 1))
    for a in range(0, len(lo), step):
        b = min(a + step, len(lo))
        d = point_box_distance(P[None, :, :], lo[a:b, None, :], hi[a:b, None, :])
        out[a:b] = d.min(axis=1)
    return out


def w0_of_cube(Q, W, grid, eta, K):
    return [W.cube(i) for i in w0_members(W, grid, Q.id, eta, K)]


@dataclass(frozen=True)
class Corkscrew:
    point: tuple
    delta: float
    eps0: float


def corkscrew_point(Q, W, lattice=5):
    """Point of (1/2)B_Q maximizing delta among Whitney-cube lattice points.

    B_Q has radius l(Q).  Lattice points outside (1/2)B_Q are pulled radially
    onto its boundary before evaluation.
    """
    x = np.asarray(Q.center)
    rad = 0.5 * Q.length
    d = point_box_distance(x[None], W.lo, W.hi)
    ids = np.nonzero(d <= rad)[0]
    if not len(ids):
        raise WhitneyError(f"no Whitney cube meets (1/2)B_Q for cube {Q.key}")
    t = (np.arange(lattice) + 0.5) / lattice
    offs = np.array(list(product(t, repeat=W.dim)))
    P = (W.lo[ids][:, None, :] + offs[None] * W.side[ids][:, None, None]).reshape(-1, W.dim)
    v = P - x
    n = np.linalg.norm(v, axis=1)
    pull = n > rad
    P[pull] = x + v[pull] * (rad / n[pull])[:, None]
    delta = W.E.distance(P)
    j = int(np.argmax(delta))
    return Corkscrew(tuple(P[j]), float(delta[j]), float(delta[j] / Q.length))
