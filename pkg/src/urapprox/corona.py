"""Bilateral plane fits, the corona decomposition D(E) = G + B, and packing constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import as_points


class BilateralViolation(AssertionError):
    def __init__(self, cube, d1, d2, bound):
        super().__init__(f"cube {cube}: d1={d1:.4g} + d2={d2:.4g} >= {bound:.4g}")
        self.cube = cube
        self.d1 = d1
        self.d2 = d2
        self.bound = bound


@dataclass
class PlaneFit:
    point: np.ndarray
    normal: np.ndarray
    d1: float
    d2: float
    length: float
    good: bool
    indeterminate: bool
    n_samples: int

    @property
    def deficiency(self):
        return (self.d1 + self.d2) / self.length


def orient(normal):
    n = np.asarray(normal, float)
    n = n / np.linalg.norm(n)
    j = int(np.argmax(np.abs(n)))
    return -n if n[j] < 0 else n


def tangent_basis(normal):
    """Orthonormal basis of the hyperplane orthogonal to normal."""
    n = np.asarray(normal, float)
    if len(n) == 2:
        return np.array([[n[1], -n[0]]])
    a = np.eye(3)[int(np.argmin(np.abs(n)))]
    t1 = np.cross(n, a)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.array([t1, t2])


def pca_plane(P, w):
    mu = (w[:, None] * P).sum(0) / w.sum()
    X = P - mu
    C = (w[:, None] * X).T @ X
    vals, vecs = np.linalg.eigh(C)
    return mu, orient(vecs[:, 0])


def _ball_points(E, x, R):
    idx = np.asarray(E.sample_tree.query_ball_point(x, R), dtype=np.int64)
    idx.sort()
    return idx


def _extreme_points(E, idx):
    """Points on which sup of a convex function over the pieces is attained."""
    if E.pieces is not None and len(idx):
        return E.pieces[idx].reshape(-1, E.dim)
    return E.samples[idx]


def _in_window(E, Y):
    if E.window is None:
        return np.ones(len(Y), bool)
    lo, hi = E.window
    return np.all((Y >= lo) & (Y <= hi), axis=1)


def _sup_distance(E, Y):
    """max over Y of dist(y, E), exact up to round-off."""
    if not len(Y):
        return 0.0
    if E.kind in ("flat_plane", "sphere"):
        return float(np.max(E.distance(Y)))
    d, _ = E.sample_tree.query(Y)
    half = 0.5 * E.spacing
    cand = d >= d.max() - half - 1e-15
    return float(np.max(E.distance(Y[cand])))


def _lattice_on_plane(mu, normal, x, R, step, cap=None):
    """Lattice points of spacing step on the hyperplane (mu, normal) within B(x, R)."""
    T = tangent_basis(normal)
    c = mu + T.T @ (T @ (x - mu))
    h = abs(float((x - mu) @ normal))
    if h > R:
        return np.zeros((0, len(mu)))
    rho = math.sqrt(R * R - h * h)
    if cap is not None:
        step = max(step, 2 * rho / cap)
    m = int(math.floor(rho / step))
    t = np.arange(-m, m + 1) * step
    if len(T) == 1:
        Y = c + t[:, None] * T[0]
    else:
        a, b = np.meshgrid(t, t, indexing="ij")
        Y = c + a.ravel()[:, None] * T[0] + b.ravel()[:, None] * T[1]
        Y = Y[np.linalg.norm(Y - c, axis=1) <= rho]
    return Y


def bwgl_classify(grid, q, eta, K):
    """Principal-component plane of Delta_Q^* and its bilateral deficiency."""
    E = grid.E
    ell = float(grid.length[q])
    x = grid.center[q]
    R = K * ell
    idx = _ball_points(E, x, R)
    n_s = len(idx)
    if n_s < E.dim + 1:
        return PlaneFit(x.copy(), np.eye(E.dim)[-1], math.inf, math.inf, ell, False, True, n_s)
    mu, nrm = pca_plane(E.samples[idx], E.weights[idx])
    P = _extreme_points(E, idx)
    d1 = float(np.max(np.abs((P - mu) @ nrm)))
    cap = 512 if E.dim == 3 else None
    Y = _lattice_on_plane(mu, nrm, x, R, eta * ell / 4, cap)
    Y = Y[_in_window(E, Y)]
    d2 = _sup_distance(E, Y)
    good = d1 + d2 < eta * ell
    return PlaneFit(mu, nrm, d1, d2, ell, bool(good), False, n_s)


# ---------------------------------------------------------------- regimes
@dataclass
class LipschitzGraph:
    """Graph {mu + z T + phi(z) n} over the hyperplane (mu, n).

    phi is piecewise linear in one variable (knots zs, values ts), constant
    outside the knots; in 3D phi is identically zero.
    """

    mu: np.ndarray
    normal: np.ndarray
    zs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ts: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.T = tangent_basis(self.normal)

    @property
    def lipschitz(self):
        if len(self.zs) < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.ts) / np.diff(self.zs))))

    def frame(self, X):
        X = np.asarray(X, float) - self.mu
        return X @ self.T.T, X @ self.normal

    def phi(self, z):
        z = np.asarray(z, float)
        if z.ndim == 2:
            z = z[:, 0] if z.shape[1] == 1 else z
        if len(self.zs) == 0 or z.ndim == 2:
            return np.zeros(len(z))
        return np.interp(z, self.zs, self.ts)

    def signed_height(self, X):
        z, t = self.frame(X)
        return t - self.phi(z)

    def points(self, z):
        z = np.asarray(z, float).reshape(len(z), -1)
        return self.mu + z @ self.T + self.phi(z)[:, None] * self.normal

    def phi_max(self, zlo, zhi):
        """max of phi over the box [zlo, zhi] in the tangent frame."""
        if len(self.zs) == 0 or len(self.T) > 1:
            return 0.0
        inside = (self.zs > zlo[0]) & (self.zs < zhi[0])
        v = [float(self.phi(np.array([zlo[0]]))[0]), float(self.phi(np.array([zhi[0]]))[0])]
        v += self.ts[inside].tolist()
        return max(v)

    def phi_min(self, zlo, zhi):
        if len(self.zs) == 0 or len(self.T) > 1:
            return 0.0
        inside = (self.zs > zlo[0]) & (self.zs < zhi[0])
        v = [float(self.phi(np.array([zlo[0]]))[0]), float(self.phi(np.array([zhi[0]]))[0])]
        v += self.ts[inside].tolist()
        return min(v)


@dataclass
class StoppingRegime:
    id: int
    top: int
    members: list
    graph: LipschitzGraph
    graph_kind: str

    def __contains__(self, q):
        return q in self._set

    def __post_init__(self):
        self._set = set(self.members)


def graph_deficiency(grid, q, graph, eta, K):
    """(sup over Delta_Q^* of dist to Gamma, sup over Gamma in B_Q^* of dist to E).

    The first term uses the vertical distance |t - phi(z)|, an upper bound for
    the Euclidean distance to the graph.
    """
    E = grid.E
    ell = float(grid.length[q])
    x = grid.center[q]
    R = K * ell
    idx = _ball_points(E, x, R)
    if len(idx) == 0:
        return 0.0, 0.0
    P = _extreme_points(E, idx)
    d1 = float(np.max(np.abs(graph.signed_height(P))))
    cap = 512 if E.dim == 3 else None
    if len(graph.zs) == 0 or E.dim == 3:
        Y = _lattice_on_plane(graph.mu, graph.normal, x, R, eta * ell / 4, cap)
    else:
        z0, _ = graph.frame(x[None])
        step = eta * ell / 4
        m = int(math.ceil(R / step))
        z = z0[0, 0] + np.arange(-m, m + 1) * step
        Y = graph.points(z[:, None])
        Y = Y[np.linalg.norm(Y - x, axis=1) <= R]
    Y = Y[_in_window(E, Y)]
    d2 = _sup_distance(E, Y)
    return d1, d2


def verify_bilateral(regime, q, grid, eta, K):
    """Deficiency pair of Q against Gamma_S; raises BilateralViolation unless d1 + d2 < eta l(Q)."""
    if q not in regime:
        raise ValueError(f"cube {q} is not a member of regime {regime.id}")
    d1, d2 = graph_deficiency(grid, q, regime.graph, eta, K)
    bound = eta * float(grid.length[q])
    if not d1 + d2 < bound:
        raise BilateralViolation(grid.cube(q).key, d1, d2, bound)
    return d1, d2


def _binned_graph(grid, top, mu, normal, eta, K):
    E = grid.E
    idx = _ball_points(E, grid.center[top], K * grid.length[top])
    g = LipschitzGraph(mu, normal)
    if E.dim != 2 or not len(idx):
        return g
    z, t = g.frame(E.samples[idx])
    z = z[:, 0]
    w = E.weights[idx]
    p = E.spacing
    b = np.floor(z / p).astype(np.int64)
    ub, inv = np.unique(b, return_inverse=True)
    sw = np.bincount(inv, w)
    zs = np.bincount(inv, w * z) / sw
    ts = np.bincount(inv, w * t) / sw
    return LipschitzGraph(mu, normal, zs, ts)


@dataclass
class CoronaDecomposition:
    grid: object
    eta: float
    K: float
    fits: list
    good: np.ndarray
    regimes: list
    regime_of: np.ndarray
    resplits: int = 0

    @property
    def bad(self):
        return np.nonzero(~self.good)[0]

    @property
    def tops(self):
        return [S.top for S in self.regimes]

    def marked(self):
        m = ~self.good.copy()
        m[self.tops] = True
        return m

    def regime(self, q):
        r = self.regime_of[q]
        return None if r < 0 else self.regimes[r]

    def summary(self):
        return {"cubes": int(len(self.good)), "bad": int((~self.good).sum()),
                "regimes": len(self.regimes), "resplits": self.resplits,
                "max_lipschitz": max([S.graph.lipschitz for S in self.regimes], default=0.0),
                "packing": packing_constant(self.marked(), self.grid)}


def _angle_ok(n1, n2, eta):
    c = abs(float(n1 @ n2))
    return math.sqrt(max(0.0, 1 - c * c)) <= eta


def _collect(grid, top, good, assigned, fits, eta):
    nS = fits[top].normal
    members = [top]
    stack = [top]
    while stack:
        p = stack.pop()
        kids = grid.children[p]
        if kids and all(good[c] and not assigned[c] and _angle_ok(fits[c].normal, nS, eta)
                        for c in kids):
            members.extend(kids)
            stack.extend(kids)
    return sorted(members)


def _first_failure(grid, members, graph, eta, K):
    for q in members:
        d1, d2 = graph_deficiency(grid, q, graph, eta, K)
        if not d1 + d2 < eta * grid.length[q]:
            return q
    return None


def build_corona(grid, eta, K, fits=None):
    """Top-down stopping time over good cubes, with (2.2a)-driven re-splitting."""
    n = grid.n_cubes
    if fits is None:
        fits = [bwgl_classify(grid, q, eta, K) for q in range(n)]
    good = np.array([f.good for f in fits])
    assigned = np.zeros(n, bool)
    regime_of = np.full(n, -1, dtype=np.int64)
    regimes = []
    resplits = 0
    for q in range(n):
        if assigned[q] or not good[q]:
            continue
        members = _collect(grid, q, good, assigned, fits, eta)
        while True:
            graph, kind = None, None
            flat = LipschitzGraph(fits[q].point, fits[q].normal)
            bad_q = _first_failure(grid, members, flat, eta, K)
            if bad_q is None:
                graph, kind = flat, "plane"
            else:
                curved = _binned_graph(grid, q, fits[q].point, fits[q].normal, eta, K)
                if len(curved.zs) and curved.lipschitz <= eta:
                    bad_c = _first_failure(grid, members, curved, eta, K)
                    if bad_c is None:
                        graph, kind = curved, "binned"
                    else:
                        bad_q = min(bad_q, bad_c)
            if graph is not None:
                break
            resplits += 1
            if bad_q == q:
                members = [q]
                graph, kind = flat, "plane"
                break
            par = int(grid.parent[bad_q])
            drop = set(grid.descendants(par, include_self=False))
            members = [m for m in members if m not in drop]
        S = StoppingRegime(len(regimes), q, members, graph, kind)
        regimes.append(S)
        assigned[members] = True
        regime_of[members] = S.id
    return CoronaDecomposition(grid, eta, K, fits, good, regimes, regime_of, resplits)


# ---------------------------------------------------------------- checks
def packing_constant(marked, grid):
    """sup_Q sum over marked Q' in D_Q of sigma(Q') / sigma(Q)."""
    m = np.zeros(grid.n_cubes)
    marked = np.asarray(marked)
    if marked.dtype == bool:
        m[marked] = 1.0
    elif len(marked):
        m[marked.astype(np.int64)] = 1.0
    return accumulate_norm(m * grid.mass, grid)


def accumulate_norm(coef, grid):
    acc = tent_sums(coef, grid)
    return float(np.max(acc / grid.mass)) if grid.n_cubes else 0.0


def tent_sums(coef, grid):
    """m(D_Q) for every Q in one bottom-up pass."""
    acc = np.array(coef, dtype=float)
    for k in range(grid.k_max, grid.k_min, -1):
        a, b = grid.level_ranges[k]
        np.add.at(acc, grid.parent[a:b], acc[a:b])
    return acc


def check_coherency(regime, grid):
    """Return (a, b, c): unique maximal element, intermediate closure, children all-or-none."""
    mem = regime._set
    top = regime.top
    a = all(grid.contains(top, q) for q in mem)
    b = True
    for q in mem:
        p = q
        while p != top and b:
            p = int(grid.parent[p])
            if p < 0 or p not in mem:
                b = False
    c = True
    for q in mem:
        kids = grid.children[q]
        inside = [k in mem for k in kids]
        if any(inside) and not all(inside):
            c = False
    return a, b, c


def check_semicoherency(members, grid):
    mem = set(members)
    top = min(mem, key=lambda q: (grid.level[q], q))
    a = all(grid.contains(top, q) for q in mem)
    b = True
    for q in mem:
        p = q
        while p != top:
            p = int(grid.parent[p])
            if p < 0 or p not in mem:
                b = False
                break
    return a, b


def rotate_points(X, angle, center=None):
    """Rigid rotation in the first two coordinates, used for invariance checks."""
    X = as_points(X)
    c = np.zeros(X.shape[1]) if center is None else np.asarray(center, float)
    R = np.eye(X.shape[1])
    R[:2, :2] = [[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]]
    return (X - c) @ R.T + c
