"""Discrete harmonic functions on a node grid, gradients, Carleson functionals and N*."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import pyamg
import scipy.sparse as sp


class HarmonicError(RuntimeError):
    pass


class SolverError(HarmonicError):
    def __init__(self, msg, residuals):
        super().__init__(f"{msg}; residual history tail {list(residuals[-5:])}")
        self.residuals = list(residuals)


# ---------------------------------------------------------------- boundary data
@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet data, given as a function on the whole ambient space.

    Pinned nodes near E and nodes on the outer box both take value(X).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def value(self, X):
        X = np.asarray(X, float)
        p = self.params
        k = self.kind
        if k == "constant":
            return np.full(len(X), float(p.get("c", 0.0)))
        if k == "coordinate":
            return p.get("scale", 1.0) * X[:, p.get("axis", -1)] + p.get("offset", 0.0)
        if k == "halfplane_indicator":
            x = X[:, 0] - p.get("x0", 0.0)
            t = np.abs(X[:, -1])
            with np.errstate(divide="ignore", invalid="ignore"):
                v = 0.5 + np.arctan(x / t) / math.pi
            v = np.where(t == 0, np.where(x > 0, 1.0, np.where(x < 0, 0.0, 0.5)), v)
            return v
        if k == "ball_indicator":
            c = np.asarray(p["center"], float)
            return (np.linalg.norm(X - c, axis=1) < p["radius"]).astype(float)
        if k == "smooth_ball":
            c = np.asarray(p["center"], float)
            s = np.clip(np.linalg.norm(X - c, axis=1) / p["radius"], 0, 1)
            return np.cos(0.5 * math.pi * s) ** 2
        if k == "arc_indicator":
            return arc_harmonic(X, p["center"], p["radius"], p["theta0"], p["alpha"])
        raise HarmonicError(f"unknown boundary data kind {k!r}")

    def gradient(self, X):
        """Analytic gradient where the extension is harmonic in closed form."""
        X = np.asarray(X, float)
        if self.kind == "constant":
            return np.zeros_like(X)
        if self.kind == "coordinate":
            g = np.zeros_like(X)
            g[:, self.params.get("axis", -1)] = self.params.get("scale", 1.0)
            return g
        if self.kind == "halfplane_indicator":
            x = X[:, 0] - self.params.get("x0", 0.0)
            t = X[:, -1]
            r2 = x * x + t * t
            s = np.sign(t)
            return np.stack([s * t / (math.pi * r2), -s * x / (math.pi * r2)], axis=1)
        if self.kind == "arc_indicator":
            h = 1e-6
            g = np.zeros_like(X)
            for a in range(X.shape[1]):
                e = np.zeros(X.shape[1])
                e[a] = h
                g[:, a] = (self.value(X + e) - self.value(X - e)) / (2 * h)
            return g
        raise HarmonicError(f"no closed-form gradient for {self.kind!r}")


def arc_harmonic(X, center, R, theta0, alpha):
    """Bounded harmonic function in R^2 minus the circle with data 1 on the arc |theta-theta0|<alpha.

    Inside, the harmonic measure of an arc seen from z is (angle subtended)/pi
    minus (arc length)/(2 pi R); outside, use the inversion z -> R^2 / conj(z).
    """
    X = np.asarray(X, float)
    c = np.asarray(center, float)
    z = ((X[:, 0] - c[0]) + 1j * (X[:, 1] - c[1])) / R
    r = np.abs(z)
    out = r > 1
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(out, 1 / np.conj(z), z)
    a = np.exp(1j * (theta0 - alpha))
    b = np.exp(1j * (theta0 + alpha))
    with np.errstate(divide="ignore", invalid="ignore"):
        ang = np.mod(np.angle((b - z) / (a - z)), 2 * math.pi)
    v = ang / math.pi - alpha / math.pi
    th = np.angle(z * np.exp(-1j * theta0))
    on = np.isclose(r, 1.0, rtol=0, atol=1e-14)
    v = np.where(on, (np.abs(th) < alpha).astype(float), v)
    v = np.where(np.isfinite(v), v, alpha / math.pi)
    return np.clip(v, 0.0, 1.0)


# ---------------------------------------------------------------- field
class HarmonicField:
    """Nodal solution on the grid lo + h * i, i in [0, shape)."""

    def __init__(self, E, lo, shape, h, u, pinned, delta, data, residuals):
        self.E = E
        self.lo = np.asarray(lo, float)
        self.shape = tuple(shape)
        self.h = float(h)
        self.u = u
        self.pinned = pinned
        self.delta = delta
        self.data = data
        self.residuals = residuals
        self.dim = len(self.shape)
        self._grad = None

    @property
    def hi(self):
        return self.lo + self.h * (np.array(self.shape) - 1)

    @property
    def sup_norm(self):
        return float(np.max(np.abs(self.u)))

    def axes(self):
        return [self.lo[a] + self.h * np.arange(self.shape[a]) for a in range(self.dim)]

    def nodes(self):
        g = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([v.ravel() for v in g], axis=1)

    def node_gradient(self):
        """Central-difference gradient at every node (zero on the outer layer)."""
        if self._grad is None:
            g = np.zeros(self.shape + (self.dim,))
            sl = [slice(1, -1)] * self.dim
            for a in range(self.dim):
                fwd = list(sl)
                bwd = list(sl)
                fwd[a] = slice(2, None)
                bwd[a] = slice(None, -2)
                g[tuple(sl) + (a,)] = (self.u[tuple(fwd)] - self.u[tuple(bwd)]) / (2 * self.h)
            self._grad = g
        return self._grad

    def interpolate(self, X):
        """Multilinear interpolation of the nodal values."""
        X = np.atleast_2d(np.asarray(X, float))
        f = (X - self.lo) / self.h
        i0 = np.floor(f).astype(np.int64)
        i0 = np.clip(i0, 0, np.array(self.shape) - 2)
        w = f - i0
        if np.any(f < -1e-9) or np.any(f > np.array(self.shape) - 1 + 1e-9):
            raise HarmonicError("point outside the solution grid")
        out = np.zeros(len(X))
        for corner in np.ndindex(*([2] * self.dim)):
            c = np.array(corner)
            wt = np.prod(np.where(c == 1, w, 1 - w), axis=1)
            idx = tuple((i0 + c).T)
            out += wt * self.u[idx]
        return out

    def energy_density(self):
        """|grad u|^2 delta on nodes, zeroed where delta < 2h or on the outer layer."""
        g = self.node_gradient()
        dens = np.sum(g * g, axis=-1) * self.delta
        mask = self.delta >= 2 * self.h
        inner = np.zeros(self.shape, bool)
        inner[tuple([slice(1, -1)] * self.dim)] = True
        return np.where(mask & inner, dens, 0.0)

    def gradient_norm(self):
        g = self.node_gradient()
        nrm = np.sqrt(np.sum(g * g, axis=-1))
        mask = self.delta >= 2 * self.h
        inner = np.zeros(self.shape, bool)
        inner[tuple([slice(1, -1)] * self.dim)] = True
        return np.where(mask & inner, nrm, 0.0)

    def box_slices(self, lo, hi):
        """Index slices of nodes strictly inside the open box (lo, hi)."""
        a = np.floor((np.asarray(lo) - self.lo) / self.h).astype(np.int64) + 1
        b = np.ceil((np.asarray(hi) - self.lo) / self.h).astype(np.int64)
        a = np.clip(a, 0, self.shape)
        b = np.clip(b, 0, self.shape)
        return tuple(slice(int(x), int(y)) for x, y in zip(a, b))

    def union_mask(self, lo, hi):
        """(offset slices, mask) of nodes inside the open union of boxes."""
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        outer = self.box_slices(lo.min(0), hi.max(0))
        sub = np.zeros(tuple(s.stop - s.start for s in outer), bool)
        off = np.array([s.start for s in outer])
        for a, b in zip(lo, hi):
            sl = self.box_slices(a, b)
            sub[tuple(slice(s.start - o, s.stop - o) for s, o in zip(sl, off))] = True
        return outer, sub

    def covers(self, lo, hi):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        return bool(np.all(lo.min(0) >= self.lo - 1e-12) and np.all(hi.max(0) <= self.hi + 1e-12))

    def union_integral(self, values, lo, hi):
        """sum over nodes in the open union of values * h^d."""
        if not len(np.atleast_2d(lo)):
            return 0.0
        outer, m = self.union_mask(lo, hi)
        return float(values[outer][m].sum() * self.h ** self.dim)

    def dump(self):
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow([f"x{a}" for a in range(self.dim)] + ["u"])
        for X, v in zip(self.nodes(), self.u.ravel()):
            w.writerow([repr(float(c)) for c in X] + [repr(float(v))])
        return buf.getvalue()


def _laplacian(shape):
    d = len(shape)
    ops = []
    for a in range(d):
        n = shape[a]
        T = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
        parts = [sp.identity(shape[b]) if b != a else T for b in range(d)]
        M = parts[0]
        for P in parts[1:]:
            M = sp.kron(M, P)
        ops.append(M)
    return sum(ops[1:], ops[0]).tocsr()


def solve_harmonic(E, box_lo, box_hi, data, h, tol=1e-12, maxiter=400, check_resolution=True):
    """5-point (7-point in 3D) Dirichlet problem on box minus E.

    Nodes with delta <= h/2 and the outer layer are pinned to data.value.
    """
    lo = np.asarray(box_lo, float)
    hi = np.asarray(box_hi, float)
    if check_resolution and h > E.feature_size / 4:
        raise HarmonicError(f"h={h} does not resolve the finest feature {E.feature_size}")
    shape = tuple(int(round((hi[a] - lo[a]) / h)) + 1 for a in range(len(lo)))
    axes = [lo[a] + h * np.arange(shape[a]) for a in range(len(lo))]
    G = np.meshgrid(*axes, indexing="ij")
    X = np.stack([g.ravel() for g in G], axis=1)
    delta = E.distance(X).reshape(shape)
    pinned = delta <= h / 2
    edge = np.zeros(shape, bool)
    for a in range(len(shape)):
        sl = [slice(None)] * len(shape)
        sl[a] = 0
        edge[tuple(sl)] = True
        sl[a] = -1
        edge[tuple(sl)] = True
    pinned |= edge
    u = np.zeros(shape)
    pv = data.value(X[pinned.ravel()])
    if np.any(np.abs(pv) > 1 + 1e-12):
        raise HarmonicError("boundary data exceeds 1 in absolute value")
    u[pinned] = pv
    free = ~pinned.ravel()
    L = _laplacian(shape)
    A = L[free][:, free].tocsr()
    b = -L[free][:, ~free] @ u.ravel()[~free]
    residuals = []
    if A.shape[0]:
        # pyamg draws its spectral-radius start vectors from the global numpy RNG
        state = np.random.get_state()
        np.random.seed(0)
        try:
            ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric", max_coarse=500)
        finally:
            np.random.set_state(state)
        x = ml.solve(b, tol=tol, accel="cg", maxiter=maxiter, residuals=residuals)
        bn = float(np.linalg.norm(b)) or 1.0
        rel = float(np.linalg.norm(b - A @ x)) / bn
        if not rel <= tol * 10:
            raise SolverError(f"solver stopped at relative residual {rel:.3e}", residuals)
        uf = u.ravel().copy()
        uf[free] = x
        u = uf.reshape(shape)
    field_ = HarmonicField(E, lo, shape, h, u, pinned, delta, data, residuals)
    field_.max_principle_excess = max(0.0, float(u.max() - pv.max()), float(pv.min() - u.min()))
    return field_


# ---------------------------------------------------------------- functionals
def gradient(field_, X):
    """Central difference of the interpolated field at X (needs delta(X) >= 2h)."""
    X = np.atleast_2d(np.asarray(X, float))
    if np.any(field_.E.distance(X) < 2 * field_.h):
        raise HarmonicError("gradient requested closer than 2h to E")
    h = field_.h
    g = np.zeros_like(X)
    for a in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[a] = h
        g[:, a] = (field_.interpolate(X + e) - field_.interpolate(X - e)) / (2 * h)
    return g


@dataclass
class CarlesonSample:
    center: tuple
    radius: float
    value: float
    error_estimate: float
    excluded_volume: float


def _ball_sum(field_, dens, x, r, stride=1):
    sl = field_.box_slices(np.asarray(x) - r, np.asarray(x) + r)
    axes = [ax[s][::stride] for ax, s in zip(field_.axes(), sl)]
    G = np.meshgrid(*axes, indexing="ij")
    d2 = sum((g - c) ** 2 for g, c in zip(G, x))
    sub = dens[tuple(slice(s.start, s.stop, stride) for s in sl)]
    return float(sub[d2 < r * r].sum() * (stride * field_.h) ** field_.dim), d2 < r * r, sl


def carleson_functional(field_, x, r):
    """r^-n times the quadrature of |grad u|^2 delta over B(x, r), cells with delta >= 2h."""
    x = np.asarray(x, float)
    if r < 8 * field_.h:
        raise HarmonicError("ball under-resolved: r < 8h")
    if np.any(x - r < field_.lo - 1e-12) or np.any(x + r > field_.hi + 1e-12):
        if not _ball_in_halfgrid(field_, x, r):
            raise HarmonicError("ball leaves the solution grid")
    n = field_.dim - 1
    dens = field_.energy_density()
    v1, inside, sl = _ball_sum(field_, dens, x, r)
    v2, _, _ = _ball_sum(field_, dens, x, r, stride=2)
    near = field_.delta[sl][inside] < 2 * field_.h
    excl = float(near.sum() * field_.h ** field_.dim)
    return CarlesonSample(tuple(x), float(r), v1 / r ** n, abs(v1 - v2) / r ** n, excl)


def _ball_in_halfgrid(field_, x, r):
    # balls centred on E may stick out of a grid that only covers one side of E
    lo, hi = field_.lo, field_.hi
    out_lo = x - r < lo - 1e-12
    out_hi = x + r > hi + 1e-12
    bad = out_lo | out_hi
    return bool(np.all(~bad[:-1]) and (abs(x[-1] - lo[-1]) < 1e-12 or abs(x[-1] - hi[-1]) < 1e-12))


def dyadic_carleson_functional(field_, mass, T):
    """sigma(Q)^-1 times the quadrature of |grad u|^2 delta over the open union T."""
    if T.empty:
        return 0.0
    if not field_.covers(T.lo, T.hi):
        raise HarmonicError("Carleson box leaves the solution grid")
    return field_.union_integral(field_.energy_density(), T.lo, T.hi) / mass


class ConeEvaluator:
    """Nodes of an open union with their distances to its boundary."""

    def __init__(self, field_, U):
        outer, m = field_.union_mask(U.lo, U.hi)
        axes = [ax[s] for ax, s in zip(field_.axes(), outer)]
        G = np.meshgrid(*axes, indexing="ij")
        P = np.stack([g[m] for g in G], axis=1)
        self.points = P
        self.values = field_.u[outer][m]
        self.dist = U.distance_to_boundary(P) if len(P) else np.zeros(0)

    def nontangential_max(self, x, kappa):
        if kappa <= 0:
            raise HarmonicError("kappa must be positive")
        if not len(self.points):
            return 0.0, True
        inside = np.linalg.norm(self.points - x, axis=1) <= (1 + kappa) * self.dist
        if not inside.any():
            return 0.0, True
        return float(np.max(np.abs(self.values[inside]))), False


def nontangential_max(field_, U, x, kappa, evaluator=None):
    ev = evaluator or ConeEvaluator(field_, U)
    return ev.nontangential_max(np.asarray(x, float), kappa)


def caccioppoli_constant(field_, W, ids):
    """max over Whitney cubes I of l(I)^2 int_I |grad u|^2 / int_2I |u - avg|^2."""
    g = field_.node_gradient()
    e = np.sum(g * g, axis=-1)
    worst = 0.0
    for i in ids:
        lo, hi = W.lo[i], W.hi[i]
        s = W.side[i]
        lo2, hi2 = lo - s / 2, hi + s / 2
        if not field_.covers(lo2, hi2):
            continue
        num = field_.union_integral(e, lo[None], hi[None])
        outer, m = field_.union_mask(lo2[None], hi2[None])
        vals = field_.u[outer][m]
        den = float(np.sum((vals - vals.mean()) ** 2)) * field_.h ** field_.dim
        if den > 1e-300:
            worst = max(worst, s * s * num / den)
    return worst
