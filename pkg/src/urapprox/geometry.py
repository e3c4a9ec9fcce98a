"""Ambient points, axis-aligned cubes and discretized boundary sets E.

A boundary set carries two views of the same object: an exact distance
query (analytic formulas for planes and spheres, GEOS segment distances for
piecewise linear sets) and a weighted sample cloud standing in for the
surface measure sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import shapely
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    pass


def as_points(X, dim=None):
    P = np.asarray(X, dtype=float)
    if P.ndim == 1:
        P = P[None, :]
    if dim is not None and P.shape[1] != dim:
        raise GeometryError(f"expected {dim} coordinates, got {P.shape[1]}")
    if not np.all(np.isfinite(P)):
        raise GeometryError("non-finite point")
    return P


@dataclass(frozen=True)
class AmbientBox:
    """Closed axis-parallel cube [min_corner, min_corner + side]."""

    min_corner: tuple
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise GeometryError("box side must be positive")
        object.__setattr__(self, "min_corner", tuple(float(c) for c in self.min_corner))

    @classmethod
    def dyadic(cls, k, index):
        s = 2.0 ** (-k)
        return cls(tuple(i * s for i in index), s)

    @property
    def dim(self):
        return len(self.min_corner)

    @property
    def lo(self):
        return np.array(self.min_corner)

    @property
    def hi(self):
        return self.lo + self.side

    @property
    def center(self):
        return self.lo + 0.5 * self.side

    @property
    def diam(self):
        return self.side * math.sqrt(self.dim)

    @property
    def volume(self):
        return self.side ** self.dim

    def dilate(self, factor):
        s = self.side * factor
        return AmbientBox(tuple(self.center - 0.5 * s), s)

    def contains(self, X):
        P = as_points(X, self.dim)
        return np.all((P >= self.lo) & (P <= self.hi), axis=1)

    def distance_to_point(self, X):
        P = as_points(X, self.dim)
        return point_box_distance(P, self.lo[None], self.hi[None])


def point_box_distance(P, lo, hi):
    """Euclidean distance from points to closed boxes (broadcasting rows)."""
    g = np.maximum(np.maximum(lo - P, P - hi), 0.0)
    return np.sqrt(np.sum(g * g, axis=-1))


def box_box_distance(lo1, hi1, lo2, hi2):
    g = np.maximum(np.maximum(lo1 - hi2, lo2 - hi1), 0.0)
    return np.sqrt(np.sum(g * g, axis=-1))


def segment_disk_length(a, b, c, r):
    """Length of segments [a,b] inside the disk B(c, r); rows broadcast."""
    d = b - a
    L2 = np.sum(d * d, axis=-1)
    f = a - c
    B = np.sum(f * d, axis=-1)
    C = np.sum(f * f, axis=-1) - r * r
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = B * B - L2 * C
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-B - sq) / L2
        t1 = (-B + sq) / L2
    t0 = np.clip(t0, 0.0, 1.0)
    t1 = np.clip(t1, 0.0, 1.0)
    out = np.where((disc > 0) & (L2 > 0), np.maximum(t1 - t0, 0.0), 0.0)
    return out * np.sqrt(L2)


def _quadrant_area(X, Y, R):
    # area of {0<=x<=X, 0<=y<=Y} inside the disk of radius R at the origin
    X = np.minimum(X, R)
    Y = np.minimum(Y, R)
    xs = np.sqrt(np.maximum(R * R - Y * Y, 0.0))
    xa = np.minimum(X, xs)

    def F(x):
        return 0.5 * (x * np.sqrt(np.maximum(R * R - x * x, 0.0))
                      + R * R * np.arcsin(np.clip(x / np.where(R > 0, R, 1.0), -1, 1)))

    return Y * xa + np.maximum(F(X) - F(xa), 0.0)


def _signed_quadrant(X, Y, R):
    return np.sign(X) * np.sign(Y) * _quadrant_area(np.abs(X), np.abs(Y), R)


def rect_disk_area(x0, x1, y0, y1, R):
    """Exact area of [x0,x1]x[y0,y1] inside the disk of radius R at the origin."""
    R = np.maximum(R, 0.0)
    return (_signed_quadrant(x1, y1, R) - _signed_quadrant(x0, y1, R)
            - _signed_quadrant(x1, y0, R) + _signed_quadrant(x0, y0, R))


KINDS = ("flat_plane", "polyline", "lipschitz_graph", "cantor_four_corners",
         "sphere", "points")


class BoundarySet:
    """A closed set E with exact distance queries and a weighted sample cloud.

    samples/weights approximate sigma = H^n restricted to E. For piecewise
    linear kinds each sample is the midpoint of a piece of E and carries the
    piece length, so surface balls can be clipped exactly.
    """

    def __init__(self, kind, dim, samples, weights, spacing, *, params=None,
                 segments=None, center=None, radius=None, flat_lo=None,
                 flat_hi=None, pieces=None, arc_step=None, window=None,
                 diameter=math.inf, feature_size=math.inf, analytic_mass=None):
        if kind not in KINDS:
            raise GeometryError(f"unknown boundary kind {kind!r}")
        if dim not in (2, 3):
            raise GeometryError("ambient dimension must be 2 or 3")
        samples = np.asarray(samples, dtype=float).reshape(-1, dim)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if len(samples) == 0:
            raise GeometryError("empty boundary set")
        if np.any(weights < 0) or (kind != "points" and np.any(weights <= 0)):
            raise GeometryError("sample masses must be positive")
        self.kind = kind
        self.dim = dim
        self.n = dim - 1
        self.samples = samples
        self.weights = weights
        self.spacing = float(spacing)
        self.params = dict(params or {})
        self.segments = segments
        self.center = None if center is None else np.asarray(center, float)
        self.radius = radius
        self.flat_lo = None if flat_lo is None else np.asarray(flat_lo, float)
        self.flat_hi = None if flat_hi is None else np.asarray(flat_hi, float)
        self.pieces = pieces
        self.arc_step = arc_step
        self.window = window
        self.diameter = diameter
        self.feature_size = feature_size
        self.analytic_mass = analytic_mass
        self.bbox_lo = samples.min(axis=0)
        self.bbox_hi = samples.max(axis=0)
        self._tree = None
        self._strtree = None
        if kind in ("polyline", "lipschitz_graph", "cantor_four_corners", "points"):
            if segments is None:
                raise GeometryError("piecewise-linear kinds need segments")
            if kind == "points":
                geoms = shapely.points(segments[:, 0, :])
            else:
                geoms = shapely.linestrings(segments)
            self._strtree = shapely.STRtree(geoms)

    # ------------------------------------------------------------ basics
    @property
    def total_mass(self):
        return float(self.weights.sum())

    @property
    def extent_diameter(self):
        return float(np.linalg.norm(self.bbox_hi - self.bbox_lo))

    @property
    def sample_tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.samples)
        return self._tree

    def refined(self):
        """The same description sampled at half the spacing."""
        return build_boundary_set(self.kind, dim=self.dim,
                                  spacing=self.spacing / 2, **self.params)

    def describe(self):
        return {"kind": self.kind, "dim": self.dim, "spacing": self.spacing,
                "samples": int(len(self.samples)), "mass": self.total_mass,
                **{k: v for k, v in self.params.items() if np.isscalar(v)}}

    # ------------------------------------------------------------ distances
    def distance(self, X):
        """Exact distance from each row of X to E."""
        P = as_points(X, self.dim)
        if self.kind == "flat_plane":
            return point_box_distance(P, self.flat_lo[None], self.flat_hi[None])
        if self.kind == "sphere":
            return np.abs(np.linalg.norm(P - self.center, axis=1) - self.radius)
        return self._geos_distance(shapely.points(P))

    def box_distance(self, lo, hi):
        """Exact distance from closed boxes [lo, hi] (rows) to E."""
        lo = as_points(lo, self.dim)
        hi = as_points(hi, self.dim)
        if self.kind == "flat_plane":
            return box_box_distance(lo, hi, self.flat_lo[None], self.flat_hi[None])
        if self.kind == "sphere":
            c = self.center
            dmin = point_box_distance(c[None], lo, hi)
            far = np.maximum(np.abs(lo - c), np.abs(hi - c))
            dmax = np.sqrt(np.sum(far * far, axis=1))
            R = self.radius
            return np.where(R < dmin, dmin - R, np.where(R > dmax, R - dmax, 0.0))
        if self.dim != 2:
            raise GeometryError("piecewise-linear sets are planar")
        geoms = shapely.box(lo[:, 0], lo[:, 1], hi[:, 0], hi[:, 1])
        return self._geos_distance(geoms)

    def _geos_distance(self, geoms):
        out = np.full(len(geoms), np.inf)
        if len(geoms) == 0:
            return out
        idx, d = self._strtree.query_nearest(geoms, return_distance=True,
                                             all_matches=False)
        np.minimum.at(out, idx[0], d)
        return out

    def contains(self, X, tol=None):
        tol = self.spacing if tol is None else tol
        return self.distance(X) <= tol

    # ------------------------------------------------------------ measure
    def ball_mass(self, x, r):
        """sigma(B(x, r) cap E), exact piece clipping where pieces exist."""
        x = as_points(x, self.dim)[0]
        if self.pieces is not None:
            half = 0.5 * float(np.max(np.linalg.norm(
                self.pieces[:, 1] - self.pieces[:, 0], axis=1)))
            idx = self.sample_tree.query_ball_point(x, r + half + 1e-12)
            if not idx:
                return 0.0
            idx = np.asarray(idx)
            seg = self.pieces[idx]
            return float(segment_disk_length(seg[:, 0], seg[:, 1], x[None], r).sum())
        if self.kind == "sphere" and self.dim == 2:
            return self._arc_ball_mass(x, r)
        if self.kind == "flat_plane" and self.dim == 3:
            return self._flat_ball_mass(x, r)
        idx = self.sample_tree.query_ball_point(x, r)
        d = np.linalg.norm(self.samples[idx] - x, axis=1) if idx else np.zeros(0)
        return float(self.weights[idx][d < r].sum()) if idx else 0.0

    def _arc_ball_mass(self, x, r):
        c, R = self.center, self.radius
        v = x - c
        rho = float(np.linalg.norm(v))
        if rho + R <= r:
            return 2 * math.pi * R
        if rho < 1e-15:
            return 2 * math.pi * R if R < r else 0.0
        cosa = (R * R + rho * rho - r * r) / (2 * R * rho)
        if cosa >= 1:
            return 0.0
        if cosa <= -1:
            return 2 * math.pi * R
        alpha = math.acos(cosa)
        theta_x = math.atan2(v[1], v[0])
        th = np.arctan2(self.samples[:, 1] - c[1], self.samples[:, 0] - c[0])
        step = self.arc_step
        # angular offset of each piece centre from theta_x, wrapped to (-pi, pi]
        off = np.angle(np.exp(1j * (th - theta_x)))
        lo = np.maximum(off - step / 2, -alpha)
        hi = np.minimum(off + step / 2, alpha)
        return float(R * np.maximum(hi - lo, 0.0).sum())

    def _flat_ball_mass(self, x, r):
        z = abs(x[2])
        if z >= r:
            return 0.0
        rr = math.sqrt(r * r - z * z)
        lo = self.flat_lo[:2] - x[:2]
        hi = self.flat_hi[:2] - x[:2]
        return float(rect_disk_area(lo[0], hi[0], lo[1], hi[1], rr))


# ---------------------------------------------------------------- factories
def _subdivide(segments, spacing):
    """Split segments into equal pieces no longer than spacing."""
    a = segments[:, 0]
    b = segments[:, 1]
    L = np.linalg.norm(b - a, axis=1)
    m = np.maximum(np.ceil(L / spacing - 1e-12).astype(int), 1)
    rep = np.repeat(np.arange(len(segments)), m)
    j = np.concatenate([np.arange(k) for k in m])
    t0 = (j / m[rep])[:, None]
    t1 = ((j + 1) / m[rep])[:, None]
    p0 = a[rep] + t0 * (b - a)[rep]
    p1 = a[rep] + t1 * (b - a)[rep]
    pieces = np.stack([p0, p1], axis=1)
    mid = 0.5 * (p0 + p1)
    w = np.linalg.norm(p1 - p0, axis=1)
    return pieces, mid, w


def flat_plane(lo=-1.0, hi=1.0, dim=2, spacing=2.0 ** -10):
    """The hyperplane {x_dim = 0} truncated to [lo, hi] in the other axes."""
    if dim == 2:
        seg = np.array([[[lo, 0.0], [hi, 0.0]]])
        pieces, mid, w = _subdivide(seg, spacing)
        extra = dict(pieces=pieces)
        mass = hi - lo
    else:
        m = max(int(math.ceil((hi - lo) / spacing)), 1)
        t = lo + (np.arange(m) + 0.5) * (hi - lo) / m
        gx, gy = np.meshgrid(t, t, indexing="ij")
        mid = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
        w = np.full(len(mid), ((hi - lo) / m) ** 2)
        extra = {}
        mass = (hi - lo) ** 2
    flo = np.array([lo] * (dim - 1) + [0.0])
    fhi = np.array([hi] * (dim - 1) + [0.0])
    window = (np.array([lo] * (dim - 1) + [-np.inf]),
              np.array([hi] * (dim - 1) + [np.inf]))
    return BoundarySet("flat_plane", dim, mid, w, spacing,
                       params=dict(lo=lo, hi=hi), flat_lo=flo, flat_hi=fhi,
                       window=window, analytic_mass=mass, **extra)


def polyline(vertices, closed=False, spacing=2.0 ** -10):
    V = np.asarray(vertices, dtype=float)
    if closed:
        V = np.vstack([V, V[:1]])
    seg = np.stack([V[:-1], V[1:]], axis=1)
    pieces, mid, w = _subdivide(seg, spacing)
    lengths = np.linalg.norm(seg[:, 1] - seg[:, 0], axis=1)
    params = dict(vertices=np.asarray(vertices, float).tolist(), closed=closed)
    return BoundarySet("polyline", 2, mid, w, spacing, params=params,
                       segments=seg, pieces=pieces,
                       diameter=float(np.linalg.norm(V.max(0) - V.min(0))),
                       feature_size=float(lengths.min()),
                       analytic_mass=float(lengths.sum()))


def lipschitz_graph(x, phi, spacing=2.0 ** -10, params=None):
    """Graph of the piecewise linear interpolant of (x, phi), truncated to [x0, x1]."""
    x = np.asarray(x, float)
    phi = np.asarray(phi, float)
    V = np.stack([x, phi], axis=1)
    seg = np.stack([V[:-1], V[1:]], axis=1)
    pieces, mid, w = _subdivide(seg, spacing)
    lip = float(np.max(np.abs(np.diff(phi) / np.diff(x))))
    p = dict(params or {"x": x.tolist(), "phi": phi.tolist()})
    window = (np.array([x[0], -np.inf]), np.array([x[-1], np.inf]))
    lengths = np.linalg.norm(seg[:, 1] - seg[:, 0], axis=1)
    E = BoundarySet("lipschitz_graph", 2, mid, w, spacing, params=p,
                    segments=seg, pieces=pieces, window=window,
                    feature_size=float(np.min(np.diff(x))),
                    analytic_mass=float(lengths.sum()))
    E.lipschitz_constant = lip
    return E


def sawtooth_graph(slope=0.05, period=0.25, x0=-1.0, x1=1.0, spacing=2.0 ** -10):
    """Graph of a sawtooth with slopes +-slope and the given period."""
    n = int(round((x1 - x0) / (period / 2)))
    x = x0 + np.arange(n + 1) * (period / 2)
    phi = np.where(np.arange(n + 1) % 2 == 0, 0.0, slope * period / 2)
    params = dict(shape="sawtooth", slope=slope, period=period, x0=x0, x1=x1)
    E = lipschitz_graph(x, phi, spacing=spacing, params=params)
    E.params = params
    return E


def cantor_squares(generation):
    """Lower-left corners and side of the generation-g four-corners squares in [0,1]^2."""
    corners = np.zeros((1, 2))
    side = 1.0
    for _ in range(generation):
        side /= 4
        offs = np.array([[0, 0], [3, 0], [0, 3], [3, 3]], float) * side
        corners = (corners[:, None, :] + offs[None]).reshape(-1, 2)
    return corners, side


def cantor_four_corners(generation=4, spacing=2.0 ** -14):
    """Boundaries of squares of half side, concentric with the generation-g cells.

    Each of the 4^g squares has perimeter 2 * 4^-g, so every cell carries
    total_length / 4^g with total_length = 2.
    """
    corners, side = cantor_squares(generation)
    a = corners + side / 4
    s = side / 2
    c = [a, a + [s, 0], a + [s, s], a + [0, s]]
    seg = np.concatenate([np.stack([c[i], c[(i + 1) % 4]], axis=1) for i in range(4)])
    pieces, mid, w = _subdivide(seg, min(spacing, s / 4))
    params = dict(generation=generation)
    return BoundarySet("cantor_four_corners", 2, mid, w, min(spacing, s / 4),
                       params=params, segments=seg, pieces=pieces,
                       diameter=math.sqrt(2.0), feature_size=s,
                       analytic_mass=2.0)


def sphere(center=(0.0, 0.0), radius=1.0, spacing=2.0 ** -10):
    c = np.asarray(center, float)
    dim = len(c)
    if dim == 2:
        N = max(int(math.ceil(2 * math.pi * radius / spacing)), 8)
        step = 2 * math.pi / N
        th = (np.arange(N) + 0.5) * step
        pts = c + radius * np.stack([np.cos(th), np.sin(th)], axis=1)
        w = np.full(N, radius * step)
        mass = 2 * math.pi * radius
        extra = dict(arc_step=step)
    else:
        area = 4 * math.pi * radius ** 2
        N = max(int(math.ceil(area / spacing ** 2)), 32)
        i = np.arange(N) + 0.5
        phi = np.arccos(1 - 2 * i / N)
        th = math.pi * (1 + 5 ** 0.5) * i
        pts = c + radius * np.stack([np.cos(th) * np.sin(phi),
                                     np.sin(th) * np.sin(phi), np.cos(phi)], axis=1)
        w = np.full(N, area / N)
        mass = area
        extra = {}
    return BoundarySet("sphere", dim, pts, w, spacing,
                       params=dict(center=c.tolist(), radius=radius),
                       center=c, radius=radius, diameter=2 * radius,
                       feature_size=radius, analytic_mass=mass, **extra)


def point_set(points, spacing=1.0):
    P = np.asarray(points, float).reshape(-1, 2)
    seg = np.stack([P, P], axis=1)
    return BoundarySet("points", 2, P, np.zeros(len(P)), spacing,
                       params=dict(points=P.tolist()), segments=seg,
                       diameter=float(np.linalg.norm(P.max(0) - P.min(0))))


def build_boundary_set(kind, dim=2, spacing=2.0 ** -10, **params):
    """Construct a boundary set from a kind name and its parameters."""
    if kind == "flat_plane":
        return flat_plane(params.get("lo", -1.0), params.get("hi", 1.0), dim, spacing)
    if kind == "sphere":
        center = params.get("center", [0.0] * dim)
        return sphere(center, params.get("radius", 1.0), spacing)
    if kind == "polyline":
        return polyline(params["vertices"], params.get("closed", False), spacing)
    if kind == "lipschitz_graph":
        if params.get("shape") == "sawtooth":
            return sawtooth_graph(params["slope"], params["period"],
                                  params["x0"], params["x1"], spacing)
        return lipschitz_graph(params["x"], params["phi"], spacing)
    if kind == "cantor_four_corners":
        return cantor_four_corners(params.get("generation", 4), spacing)
    if kind == "points":
        return point_set(params["points"], spacing)
    raise GeometryError(f"unknown boundary kind {kind!r}")


def distance_to_set(X, E):
    """delta(X) = dist(X, E) for one point or an array of points."""
    d = E.distance(X)
    return float(d[0]) if np.ndim(X) == 1 else d


def box_distance(I, E):
    """dist(I, E) for an AmbientBox I."""
    return float(E.box_distance(I.lo[None], I.hi[None])[0])
