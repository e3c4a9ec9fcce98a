"""Whitney regions U_Q, Carleson boxes, sawtooths, regime domains and their NTA/ADR checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.spatial import cKDTree

from .geometry import point_box_distance, rect_disk_area, segment_disk_length
from .whitney import w0_members


class RegionError(RuntimeError):
    pass


class FamilyError(ValueError):
    pass


# ---------------------------------------------------------------- unions
def _interval_union(lo, hi):
    if not len(lo):
        return np.zeros(0), np.zeros(0)
    o = np.argsort(lo, kind="stable")
    lo, hi = lo[o], hi[o]
    out_lo, out_hi = [lo[0]], [hi[0]]
    for a, b in zip(lo[1:], hi[1:]):
        if a <= out_hi[-1]:
            out_hi[-1] = max(out_hi[-1], b)
        else:
            out_lo.append(a)
            out_hi.append(b)
    return np.array(out_lo), np.array(out_hi)


def _interval_subtract(lo, hi, clo, chi):
    """Pieces of the union of [lo, hi] not inside the union of open (clo, chi)."""
    ulo, uhi = _interval_union(lo, hi)
    clo, chi = _interval_union(clo, chi)
    out = []
    for a, b in zip(ulo, uhi):
        cur = a
        for c, d in zip(clo, chi):
            if d <= cur or c >= b:
                continue
            if c > cur:
                out.append((cur, c))
            cur = max(cur, d)
            if cur >= b:
                break
        if cur < b:
            out.append((cur, b))
    return out


def _rect_subtract(lo, hi, clo, chi):
    """Cells of the union of closed rectangles not inside any open covering rectangle."""
    xs = np.unique(np.concatenate([lo[:, 0], hi[:, 0], clo[:, 0], chi[:, 0]]))
    ys = np.unique(np.concatenate([lo[:, 1], hi[:, 1], clo[:, 1], chi[:, 1]]))
    cx = 0.5 * (xs[1:] + xs[:-1])
    cy = 0.5 * (ys[1:] + ys[:-1])
    X, Y = np.meshgrid(cx, cy, indexing="ij")
    face = np.zeros(X.shape, bool)
    for a, b in zip(lo, hi):
        face |= (X > a[0]) & (X < b[0]) & (Y > a[1]) & (Y < b[1])
    cov = np.zeros(X.shape, bool)
    for a, b in zip(clo, chi):
        cov |= (X > a[0]) & (X < b[0]) & (Y > a[1]) & (Y < b[1])
    keep = np.argwhere(face & ~cov)
    return [((xs[i], ys[j]), (xs[i + 1], ys[j + 1])) for i, j in keep]


class RegionUnion:
    """Interior of a finite union of closed axis-parallel boxes.

    The boundary is kept as axis-parallel face pieces: for axis a and
    outward sign, the face lies in {x_a = coord} and spans [flo, fhi] in the
    remaining axes.
    """

    def __init__(self, lo, hi, role="union", cubes=None, tau=None):
        self.lo = np.asarray(lo, float).reshape(-1, np.shape(lo)[-1])
        self.hi = np.asarray(hi, float).reshape(self.lo.shape)
        self.dim = self.lo.shape[1]
        self.role = role
        self.cubes = None if cubes is None else np.asarray(cubes, dtype=np.int64)
        self.tau = tau
        self._faces = None
        self._tree = None
        self._ftree = None

    @property
    def empty(self):
        return len(self.lo) == 0

    @property
    def bbox(self):
        return self.lo.min(0), self.hi.max(0)

    @property
    def diameter(self):
        a, b = self.bbox
        return float(np.linalg.norm(b - a))

    # ------------------------------------------------------------ faces
    def faces(self):
        if self._faces is None:
            self._faces = self._compute_faces()
        return self._faces

    def _compute_faces(self):
        d = self.dim
        recs = {"axis": [], "sign": [], "coord": [], "flo": [], "fhi": []}
        if self.empty:
            return {k: np.zeros((0, d - 1)) if k in ("flo", "fhi") else np.zeros(0)
                    for k in recs}
        for a in range(d):
            other = [b for b in range(d) if b != a]
            for sign in (-1, 1):
                coords = self.lo[:, a] if sign < 0 else self.hi[:, a]
                for c in np.unique(coords):
                    g = np.nonzero(coords == c)[0]
                    flo = self.lo[g][:, other]
                    fhi = self.hi[g][:, other]
                    gl, gh = flo.min(0), fhi.max(0)
                    opp = self.hi[:, a] if sign < 0 else self.lo[:, a]
                    cov = ((self.lo[:, a] < c) & (self.hi[:, a] > c)) | (opp == c)
                    cov &= np.all((self.lo[:, other] < gh) & (self.hi[:, other] > gl), axis=1)
                    clo = self.lo[cov][:, other]
                    chi = self.hi[cov][:, other]
                    if d == 2:
                        pieces = _interval_subtract(flo[:, 0], fhi[:, 0], clo[:, 0], chi[:, 0])
                        pieces = [((p,), (q,)) for p, q in pieces]
                    else:
                        pieces = _rect_subtract(flo, fhi, clo, chi)
                    for p, q in pieces:
                        recs["axis"].append(a)
                        recs["sign"].append(sign)
                        recs["coord"].append(c)
                        recs["flo"].append(p)
                        recs["fhi"].append(q)
        out = {k: np.asarray(v, float) for k, v in recs.items()}
        out["axis"] = out["axis"].astype(np.int64)
        out["flo"] = out["flo"].reshape(-1, d - 1)
        out["fhi"] = out["fhi"].reshape(-1, d - 1)
        return out

    def face_boxes(self):
        """Faces as degenerate boxes (lo, hi) in ambient coordinates."""
        F = self.faces()
        n = len(F["axis"])
        lo = np.zeros((n, self.dim))
        hi = np.zeros((n, self.dim))
        for i in range(n):
            a = F["axis"][i]
            other = [b for b in range(self.dim) if b != a]
            lo[i, a] = hi[i, a] = F["coord"][i]
            lo[i, other] = F["flo"][i]
            hi[i, other] = F["fhi"][i]
        return lo, hi

    def face_areas(self):
        F = self.faces()
        return np.prod(F["fhi"] - F["flo"], axis=1)

    @property
    def boundary_measure(self):
        return float(self.face_areas().sum())

    @property
    def volume(self):
        """Exact volume from the divergence theorem on the axis-0 faces."""
        F = self.faces()
        m = F["axis"] == 0
        return float(np.sum(F["sign"][m] * F["coord"][m] * self.face_areas()[m]))

    # ------------------------------------------------------------ queries
    def contains(self, X):
        X = np.asarray(X, float).reshape(-1, self.dim)
        if self.empty:
            return np.zeros(len(X), bool)
        if self._tree is None:
            self._tree = cKDTree(0.5 * (self.lo + self.hi))
            self._rmax = float(np.max(np.linalg.norm(self.hi - self.lo, axis=1))) / 2
        out = np.zeros(len(X), bool)
        seam = np.zeros(len(X), bool)
        for i, cand in enumerate(self._tree.query_ball_point(X, self._rmax + 1e-12)):
            if cand:
                c = np.asarray(cand)
                out[i] = bool(np.any(np.all((X[i] > self.lo[c]) & (X[i] < self.hi[c]), axis=1)))
                if not out[i]:
                    seam[i] = bool(np.any(np.all((X[i] >= self.lo[c]) & (X[i] <= self.hi[c]), axis=1)))
        # closed-box points off every boundary face sit on a shared internal face
        if seam.any():
            j = np.nonzero(seam)[0]
            out[j] = self.distance_to_boundary(X[j]) > 0
        return out

    def _face_index(self):
        if self._ftree is None:
            flo, fhi = self.face_boxes()
            self._flo, self._fhi = flo, fhi
            self._ftree = cKDTree(0.5 * (flo + fhi))
            self._fr = float(np.max(np.linalg.norm(fhi - flo, axis=1))) / 2 if len(flo) else 0.0
        return self._ftree

    def distance_to_boundary(self, X):
        X = np.asarray(X, float).reshape(-1, self.dim)
        tree = self._face_index()
        d0, _ = tree.query(X)
        out = np.empty(len(X))
        for i, cand in enumerate(tree.query_ball_point(X, d0 + self._fr + 1e-12)):
            c = np.asarray(cand)
            out[i] = float(np.min(point_box_distance(X[i][None], self._flo[c], self._fhi[c])))
        return out

    def ball_boundary_measure(self, x, r):
        """H^n(B(x, r) cap boundary), exact for axis-parallel faces."""
        tree = self._face_index()
        cand = tree.query_ball_point(x, r + self._fr + 1e-12)
        if not cand:
            return 0.0
        c = np.asarray(cand)
        flo, fhi = self._flo[c], self._fhi[c]
        if self.dim == 2:
            return float(segment_disk_length(flo, fhi, np.asarray(x)[None], r).sum())
        F = self.faces()
        tot = 0.0
        for j, i in enumerate(c):
            a = F["axis"][i]
            other = [b for b in range(3) if b != a]
            h = abs(x[a] - F["coord"][i])
            if h >= r:
                continue
            rr = math.sqrt(r * r - h * h)
            lo = flo[j, other] - x[other]
            hi = fhi[j, other] - x[other]
            tot += float(rect_disk_area(lo[0], hi[0], lo[1], hi[1], rr))
        return tot

    def sample_boundary(self, rng, n):
        flo, fhi = self.face_boxes()
        w = self.face_areas()
        idx = rng.choice(len(w), size=n, p=w / w.sum())
        u = rng.random((n, self.dim))
        return flo[idx] + u * (fhi[idx] - flo[idx])

    def components(self):
        """Connected components of the open union, as lists of box indices."""
        n = len(self.lo)
        if n == 0:
            return []
        pairs = overlapping_pairs(self.lo, self.hi)
        A = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) \
            if len(pairs) else coo_matrix((n, n))
        nc, lab = connected_components(A, directed=False)
        comps = [np.nonzero(lab == c)[0] for c in range(nc)]
        comps.sort(key=lambda m: tuple(self.lo[m].min(0)))
        return comps

    def adjacency(self):
        return overlapping_pairs(self.lo, self.hi)


def overlapping_pairs(lo, hi):
    """Pairs (i, j), i < j, joined through the interior of their union.

    Either the interiors meet, or the boxes share a face piece of positive
    (d-1)-measure.
    """
    n = len(lo)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    c = 0.5 * (lo + hi)
    r = float(np.max(np.linalg.norm(hi - lo, axis=1)))
    pairs = cKDTree(c).query_pairs(r, output_type="ndarray")
    if not len(pairs):
        return pairs.reshape(0, 2)
    i, j = pairs[:, 0], pairs[:, 1]
    closed = np.all((lo[i] <= hi[j]) & (lo[j] <= hi[i]), axis=1)
    strict = np.sum((lo[i] < hi[j]) & (lo[j] < hi[i]), axis=1)
    ok = closed & (strict >= lo.shape[1] - 1)
    return pairs[ok]


# ---------------------------------------------------------------- regions
@dataclass
class WhitneyRegion:
    q: int
    tau: float
    cubes: np.ndarray
    w0: np.ndarray
    components: list
    labels: list
    X: dict = field(default_factory=dict)
    I0: dict = field(default_factory=dict)
    Y: dict = field(default_factory=dict)
    good: bool = False

    def component(self, side):
        for c, lab in zip(self.components, self.labels):
            if lab == side:
                return c
        return np.zeros(0, dtype=np.int64)


def _components_of(W, ids):
    ids = np.asarray(ids, dtype=np.int64)
    n = len(ids)
    if n == 0:
        return []
    pos = {int(v): k for k, v in enumerate(ids)}
    P = W.pairs
    m = np.isin(P[:, 0], ids) & np.isin(P[:, 1], ids)
    sub = P[m]
    a = np.array([pos[int(v)] for v in sub[:, 0]], dtype=np.int64)
    b = np.array([pos[int(v)] for v in sub[:, 1]], dtype=np.int64)
    A = coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
    nc, lab = connected_components(A, directed=False)
    comps = [np.sort(ids[lab == c]) for c in range(nc)]
    comps.sort(key=lambda c: min(tuple(W.lo[i]) for i in c))
    return comps


def _frame_bounds(graph, lo, hi):
    """Per-box (z range, t range) in the graph frame, from the box corners."""
    d = lo.shape[1]
    corners = np.array(np.meshgrid(*[[0, 1]] * d, indexing="ij")).reshape(d, -1).T
    P = lo[:, None, :] + corners[None] * (hi - lo)[:, None, :]
    z, t = graph.frame(P.reshape(-1, d))
    z = z.reshape(len(lo), -1, d - 1)
    t = t.reshape(len(lo), -1)
    return z.min(1), z.max(1), t.min(1), t.max(1)


def side_clearance(graph, lo, hi):
    """(side, clearance lower bound) of boxes relative to Gamma; side 0 if not one-sided."""
    zlo, zhi, tlo, thi = _frame_bounds(graph, lo, hi)
    L = graph.lipschitz
    side = np.zeros(len(lo), dtype=np.int64)
    clr = np.zeros(len(lo))
    for i in range(len(lo)):
        pmax = graph.phi_max(zlo[i], zhi[i])
        pmin = graph.phi_min(zlo[i], zhi[i])
        if tlo[i] > pmax:
            side[i], clr[i] = 1, (tlo[i] - pmax) / math.sqrt(1 + L * L)
        elif thi[i] < pmin:
            side[i], clr[i] = -1, (pmin - thi[i]) / math.sqrt(1 + L * L)
    return side, clr


class Regions:
    """Whitney regions and derived unions for the cubes of a surface grid."""

    def __init__(self, grid, corona, W, eta, K, tau=0.125):
        if not 0 < tau <= 0.125:
            raise RegionError("tau must lie in (0, 1/8]")
        self.grid = grid
        self.corona = corona
        self.W = W
        self.eta = eta
        self.K = K
        self.tau = tau
        self._w0 = {}
        self._reg = {}
        self.path_checks = 0

    # ------------------------------------------------------------ W_Q^0
    def w0(self, q):
        if q not in self._w0:
            self._w0[q] = w0_members(self.W, self.grid, q, self.eta, self.K)
        return self._w0[q]

    def tilde(self, q):
        S = self.corona.regime(q)
        if S is None or q == S.top:
            return q
        return int(self.grid.parent[q])

    def _split(self, q, graph):
        ids = self.w0(q)
        if not len(ids):
            return {1: ids, -1: ids}
        z, t = graph.frame(self.W.center[ids])
        h = t - graph.phi(z)
        if np.any(h == 0):
            raise RegionError(f"Whitney cube centre on Gamma for cube {self.grid.cube(q).key}")
        return {1: ids[h > 0], -1: ids[h < 0]}

    def _designated(self, q, ids):
        if not len(ids):
            raise RegionError(f"empty side of W_Q^0 for cube {self.grid.cube(q).key}")
        W = self.W
        x = self.grid.center[q]
        dist = np.linalg.norm(W.center[ids] - x, axis=1)
        keys = [(-W.side[i], dist[k], tuple(W.lo[i])) for k, i in enumerate(ids)]
        k = min(range(len(ids)), key=lambda j: keys[j])
        return int(ids[k])

    def region(self, q):
        if q not in self._reg:
            self._reg[q] = self._build(q)
        return self._reg[q]

    def _build(self, q):
        W = self.W
        S = self.corona.regime(q)
        w0 = self.w0(q)
        if S is None:
            comps = _components_of(W, w0)
            return WhitneyRegion(q, self.tau, w0, w0, comps, [None] * len(comps))
        g = S.graph
        qt = self.tilde(q)
        own, par = self._split(q, g), self._split(qt, g)
        reg = WhitneyRegion(q, self.tau, None, w0, [], [], good=True)
        cubes = [w0, self.w0(qt)]
        for side in (1, -1):
            i0 = self._designated(q, own[side])
            it = self._designated(qt, par[side])
            reg.I0[side] = i0
            reg.X[side] = W.center[i0].copy()
            reg.Y[side] = W.center[it].copy()
            starts = np.concatenate([own[side], par[side]])
            cubes.append(self._harnack_cubes(q, g, side, W.center[starts], W.center[i0]))
        allc = np.unique(np.concatenate(cubes))
        comps = _components_of(W, allc)
        labels = []
        for c in comps:
            z, t = g.frame(W.center[c])
            s = np.sign(t - g.phi(z))
            labels.append("+" if np.all(s > 0) else "-" if np.all(s < 0) else None)
        reg.cubes = allc
        reg.components = comps
        reg.labels = labels
        return reg

    def _harnack_cubes(self, q, graph, side, starts, target):
        """Cubes met by the axis-aligned frame paths from each start to target."""
        ell = self.grid.length[q]
        floor = 0.5 * math.sqrt(self.eta) * ell
        pts = np.vstack([starts, target[None]])
        z, t = graph.frame(pts)
        z1 = z[:, 0] if z.shape[1] == 1 else z
        gap = side * (t - graph.phi(z1 if z.shape[1] == 1 else z))
        if np.any(gap < floor):
            raise RegionError(f"Harnack path endpoint clearance below {floor:.3g} "
                              f"for cube {self.grid.cube(q).key}")
        zlo, zhi = z.min(0), z.max(0)
        if side > 0:
            T = max(float(t.max()), graph.phi_max(zlo, zhi) + float(gap.min()))
        else:
            T = min(float(t.min()), graph.phi_min(zlo, zhi) - float(gap.min()))
        top = graph.mu + z @ graph.T + T * graph.normal
        segs = [np.stack([pts, top], axis=1)]
        if z.shape[1] == 1:
            order = np.argsort(z[:, 0])
            segs.append(np.array([[top[order[0]], top[order[-1]]]]))
        else:
            # two legs per start in the 2D tangent frame: along T1, then T2
            zt = z[-1]
            mid = graph.mu + np.stack([zt[0] * np.ones(len(z)), z[:, 1]], 1) @ graph.T \
                + T * graph.normal
            segs.append(np.stack([top, mid], axis=1))
            segs.append(np.stack([mid, np.repeat(top[-1:], len(z), 0)], axis=1))
        S = np.concatenate(segs)
        S = S[np.linalg.norm(S[:, 1] - S[:, 0], axis=1) > 0]
        met = segment_cubes(self.W, S)
        if met is None:
            raise RegionError(f"Harnack path leaves the Whitney cover for cube "
                              f"{self.grid.cube(q).key}")
        self.path_checks += len(S)
        return met

    # ------------------------------------------------------------ unions
    def fattened(self, ids, tau=None):
        tau = self.tau if tau is None else tau
        ids = np.asarray(ids, dtype=np.int64)
        s = self.W.side[ids][:, None]
        return self.W.lo[ids] - tau * s / 2, self.W.hi[ids] + tau * s / 2

    def union(self, ids, role, tau=None):
        ids = np.unique(np.asarray(ids, dtype=np.int64))
        lo, hi = self.fattened(ids, tau)
        return RegionUnion(lo, hi, role=role, cubes=ids, tau=self.tau if tau is None else tau)

    def cubes_of(self, qs):
        parts = [self.region(q).cubes for q in qs]
        return np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)

    def carleson_cubes(self, q):
        return self.cubes_of(self.grid.descendants(q))

    def carleson_box(self, q, tau=None):
        return self.union(self.carleson_cubes(q), "carleson_box", tau)

    def sawtooth_cubes(self, F, q):
        return self.cubes_of(discrete_sawtooth(self.grid, F, q))

    def geometric_sawtooth(self, F, q, tau=None):
        return self.union(self.sawtooth_cubes(F, q), "sawtooth", tau)

    def regime_domain(self, members, tau=None):
        """(Omega^+, Omega^-) of a semi-coherent subregime, checked for connectivity."""
        from .corona import check_semicoherency
        a, b = check_semicoherency(members, self.grid)
        if not (a and b):
            raise RegionError("subregime is not semi-coherent")
        out = []
        for side in ("+", "-"):
            ids = []
            for q in members:
                r = self.region(q)
                c = r.component(side)
                if not len(c):
                    raise RegionError(f"cube {self.grid.cube(q).key} has no {side} component")
                ids.append(c)
            ids = np.unique(np.concatenate(ids))
            if len(_components_of(self.W, ids)) != 1:
                raise RegionError(f"regime domain {side} is disconnected")
            out.append(self.union(ids, "regime_domain", tau))
        return tuple(out)

    def whitney2_constants(self, qs):
        """Measured (c, C) in c eta^(1/2) l(Q) <= l(I) <= C K^(1/2) l(Q) over W_Q."""
        lo, hi = math.inf, 0.0
        for q in qs:
            ids = self.region(q).cubes
            if not len(ids):
                continue
            ell = self.grid.length[q]
            s = self.W.side[ids]
            lo = min(lo, float(s.min() / (math.sqrt(self.eta) * ell)))
            hi = max(hi, float(s.max() / (math.sqrt(self.K) * ell)))
        return lo, hi

    def claim31(self, q):
        """Minimum clearance / (eta^(1/2) l(Q)) over W_Q^0; negative if some cube straddles Gamma."""
        S = self.corona.regime(q)
        ids = self.w0(q)
        if S is None or not len(ids):
            return math.inf
        lo, hi = self.W.lo[ids], self.W.hi[ids]
        side, clr = side_clearance(S.graph, lo, hi)
        if np.any(side == 0):
            return -1.0
        return float(clr.min() / (math.sqrt(self.eta) * self.grid.length[q]))

    def bounded_overlap(self, qs, probes):
        """max over probe points of the number of U_Q containing it."""
        count = np.zeros(len(probes), dtype=np.int64)
        for q in qs:
            ids = self.region(q).cubes
            if len(ids):
                lo, hi = self.fattened(ids)
                U = RegionUnion(lo, hi)
                count += U.contains(probes)
        return int(count.max()) if len(count) else 0


def segment_cubes(W, S):
    """Whitney cubes meeting the segments S (n, 2, d); None if coverage fails."""
    a, b = S[:, 0], S[:, 1]
    mid = 0.5 * (a + b)
    half = 0.5 * np.linalg.norm(b - a, axis=1)
    met = []
    covered = np.zeros(len(S))
    for k in W.levels:
        tree, ids = W.center_tree(k)
        if tree is None:
            continue
        s = 2.0 ** -k
        lists = tree.query_ball_point(mid, half + s * math.sqrt(W.dim) / 2 + 1e-12)
        seg = np.repeat(np.arange(len(S)), [len(v) for v in lists])
        if not len(seg):
            continue
        cub = ids[np.concatenate([np.asarray(v, dtype=np.int64) for v in lists])]
        t0, t1 = _liang_barsky(a[seg], b[seg], W.lo[cub], W.hi[cub])
        hit = t1 >= t0
        met.append(cub[hit])
        np.add.at(covered, seg[hit], (t1 - t0)[hit])
    ok = bool(np.all(covered >= 1 - 1e-9))
    if not ok:
        return None
    return np.unique(np.concatenate(met)) if met else np.zeros(0, dtype=np.int64)


def _liang_barsky(a, b, lo, hi):
    d = b - a
    t0 = np.zeros(len(a))
    t1 = np.ones(len(a))
    with np.errstate(divide="ignore", invalid="ignore"):
        for ax in range(a.shape[1]):
            p = d[:, ax]
            u = (lo[:, ax] - a[:, ax]) / p
            v = (hi[:, ax] - a[:, ax]) / p
            lo_t = np.where(p != 0, np.minimum(u, v), -np.inf)
            hi_t = np.where(p != 0, np.maximum(u, v), np.inf)
            outside = (p == 0) & ((a[:, ax] < lo[:, ax]) | (a[:, ax] > hi[:, ax]))
            t0 = np.maximum(t0, lo_t)
            t1 = np.minimum(t1, np.where(outside, -np.inf, hi_t))
    return t0, t1


# ---------------------------------------------------------------- sawtooth families
def check_disjoint(grid, F):
    F = sorted(set(int(f) for f in F))
    for i, a in enumerate(F):
        for b in F[i + 1:]:
            if grid.contains(a, b) or grid.contains(b, a):
                raise FamilyError(f"family members {grid.cube(a).key} and {grid.cube(b).key} overlap")
    return F


def discrete_sawtooth(grid, F, q):
    """D_{F,Q} = D_Q minus the union of D_{Q_j}, Q_j in F."""
    F = check_disjoint(grid, F)
    keep = grid.descendant_mask(q)
    for f in F:
        keep &= ~grid.descendant_mask(f)
    return np.nonzero(keep)[0].tolist()


def maximal_nonmembers(grid, members, q):
    """Maximal cubes of D_Q outside the member set (the F with D_{F,Q} = members)."""
    mem = set(members)
    F = []
    stack = [q]
    while stack:
        p = stack.pop()
        if p in mem:
            stack.extend(grid.children[p])
        else:
            F.append(p)
    return sorted(F)


def random_family(grid, q, rng, max_size=32, p_stop=0.35):
    """A random antichain in D_Q built by a seeded top-down walk."""
    F = []
    stack = list(grid.children[q])
    while stack and len(F) < max_size:
        p = stack.pop(0)
        if rng.random() < p_stop or not grid.children[p]:
            if rng.random() < 0.7:
                F.append(p)
        else:
            stack.extend(grid.children[p])
    return sorted(F)


# ---------------------------------------------------------------- NTA / ADR
@dataclass
class NTAReport:
    corkscrew_trials: int
    interior_ok: int
    exterior_ok: int
    worst_interior: float
    worst_exterior: float
    chain_trials: dict
    chain_max: dict
    chain_failures: int
    passed: bool
    components: int = 1


def _candidates(U, x, r, m=9):
    t = np.linspace(-1, 1, m)
    g = np.array(np.meshgrid(*[t] * U.dim, indexing="ij")).reshape(U.dim, -1).T
    P = x + r * g
    P = P[np.linalg.norm(P - x, axis=1) < r]
    c = 0.5 * (U.lo + U.hi)
    c = c[np.linalg.norm(c - x, axis=1) < r]
    return np.vstack([P, c])


def _chain_length(U, path, dist):
    """Greedy chain of balls B(P, dist(P)/2) along a polyline."""
    pts = [path[0]]
    for a, b in zip(path[:-1], path[1:]):
        L = float(np.linalg.norm(b - a))
        n = max(2, int(math.ceil(L / max(1e-12, 0.05 * min(dist(a[None])[0], dist(b[None])[0])))) + 1)
        for s in np.linspace(0, 1, n)[1:]:
            pts.append(a + s * (b - a))
    P = np.array(pts)
    r = 0.5 * dist(P)
    if np.any(r <= 0):
        return None
    count, ci = 1, 0
    for i in range(1, len(P)):
        if np.linalg.norm(P[i] - P[ci]) < r[ci]:
            continue
        if i - 1 == ci or np.linalg.norm(P[i] - P[i - 1]) >= r[i - 1]:
            return None
        ci = i - 1
        count += 1
    return count


def verify_nta(U, trials=50, seed=0, lambdas=(2, 8), c_min=1e-3):
    """Corkscrew and Harnack-chain checks on a bounded open union of boxes."""
    rng = np.random.default_rng(seed)
    diam = U.diameter
    smin = float(np.min(U.hi - U.lo))
    xs = U.sample_boundary(rng, trials)
    rs = np.exp(rng.uniform(math.log(smin), math.log(diam / 2), trials))
    worst_in, worst_out = math.inf, math.inf
    ok_in = ok_out = 0
    for x, r in zip(xs, rs):
        ci = co = 0.0
        # thin complements can slip between coarse lattice points; refine only when needed
        for m in (9, 33, 129):
            P = _candidates(U, x, r, m)
            inside = U.contains(P)
            d = U.distance_to_boundary(P)
            d = np.minimum(d, r - np.linalg.norm(P - x, axis=1))
            ci = max(ci, float(d[inside].max() / r) if inside.any() else 0.0)
            co = max(co, float(d[~inside].max() / r) if (~inside).any() else 0.0)
            if ci >= c_min and co >= c_min:
                break
        worst_in, worst_out = min(worst_in, ci), min(worst_out, co)
        ok_in += ci >= c_min
        ok_out += co >= c_min
    # Harnack chains along the box adjacency graph
    n = len(U.lo)
    pairs = U.adjacency()
    cen = 0.5 * (U.lo + U.hi)
    w = np.linalg.norm(cen[pairs[:, 0]] - cen[pairs[:, 1]], axis=1) if len(pairs) else []
    A = coo_matrix((w, (pairs[:, 0], pairs[:, 1])), shape=(n, n)).tocsr() if len(pairs) \
        else coo_matrix((n, n)).tocsr()
    dc = U.distance_to_boundary(cen)
    chain_trials = {lam: 0 for lam in lambdas}
    chain_max = {lam: 0 for lam in lambdas}
    failures = 0
    tree = cKDTree(cen)
    comp = np.zeros(n, dtype=np.int64)
    for c, m in enumerate(U.components()):
        comp[m] = c
    for lam in lambdas:
        for _ in range(trials):
            i = int(rng.integers(n))
            rho = dc[i]
            near = tree.query_ball_point(cen[i], lam * rho)
            near = [j for j in near if j != i and dc[j] >= rho and comp[j] == comp[i] and
                    np.linalg.norm(cen[j] - cen[i]) <= lam * min(dc[i], dc[j])]
            if not near:
                continue
            j = int(near[int(rng.integers(len(near)))])
            _, pred = shortest_path(A, directed=False, indices=i, return_predecessors=True)
            if pred[j] < 0:
                failures += 1
                continue
            path = [j]
            while path[-1] != i:
                path.append(int(pred[path[-1]]))
            path = path[::-1]
            pts = [cen[path[0]]]
            for a, b in zip(path[:-1], path[1:]):
                lo = np.maximum(U.lo[a], U.lo[b])
                hi = np.minimum(U.hi[a], U.hi[b])
                pts.append(0.5 * (lo + hi))
                pts.append(cen[b])
            N = _chain_length(U, np.array(pts), U.distance_to_boundary)
            chain_trials[lam] += 1
            if N is None:
                failures += 1
            else:
                chain_max[lam] = max(chain_max[lam], N)
    passed = ok_in == trials and ok_out == trials and failures == 0
    return NTAReport(trials, ok_in, ok_out, worst_in, worst_out, chain_trials, chain_max,
                     failures, bool(passed), int(comp.max()) + 1)


@dataclass
class BoundaryADRReport:
    min_ratio: float
    max_ratio: float
    trials: int

    @property
    def constant_ratio(self):
        return self.max_ratio / self.min_ratio if self.min_ratio > 0 else math.inf


def verify_sawtooth_adr(U, trials=50, seed=0):
    rng = np.random.default_rng(seed)
    smin = float(np.min(U.hi - U.lo))
    xs = U.sample_boundary(rng, trials)
    rs = np.exp(rng.uniform(math.log(smin / 2), math.log(U.diameter), trials))
    n = U.dim - 1
    ratios = np.array([U.ball_boundary_measure(x, r) / r ** n for x, r in zip(xs, rs)])
    return BoundaryADRReport(float(ratios.min()), float(ratios.max()), trials)


def boundary_containment_check(regions, F, q0, tol=None, slack=6.0):
    """Q0 minus the F cubes lies near the boundary of Omega_{F,Q0}, and E-points near it
    lie near cl(Q0) minus the interiors of the F cubes (resolution-scaled tolerance)."""
    grid = regions.grid
    F = check_disjoint(grid, F)
    if tol is None:
        tol = containment_tolerance(regions, q0)
    U = regions.geometric_sawtooth(F, q0)
    s0, e0 = grid.start[q0], grid.end[q0]
    inF = np.zeros(len(grid.samples), bool)
    for f in F:
        inF[grid.start[f]:grid.end[f]] = True
    idx_q0 = np.arange(s0, e0)
    left = idx_q0[~inF[s0:e0]]
    if U.empty:
        return bool(len(left) == 0), {"tol": tol, "left": int(len(left)), "middle": 0}
    d_left = U.distance_to_boundary(grid.samples[left]) if len(left) else np.zeros(0)
    left_ok = bool(np.all(d_left <= tol))
    ell0 = grid.length[q0]
    near = grid.E.sample_tree.query_ball_point(grid.center[q0], 2 * ell0 * grid.dim + 2 * tol)
    near = np.asarray(near, dtype=np.int64)
    rank = np.empty(len(grid.order), dtype=np.int64)
    rank[grid.order] = np.arange(len(grid.order))
    cand = np.sort(rank[near])
    dm = U.distance_to_boundary(grid.samples[cand]) if len(cand) else np.zeros(0)
    middle = cand[dm <= tol]
    allowed = grid.samples[left]
    edge = []
    for f in F:
        P = grid.cube_samples(f)
        lo = grid.index[f] * grid.length[f]
        g = np.minimum(P - lo, lo + grid.length[f] - P).min(axis=1)
        edge.append(P[g <= grid.E.spacing])
    ref = np.vstack([allowed] + edge) if (len(allowed) or edge) else np.zeros((0, grid.dim))
    if len(middle) and len(ref):
        dd, _ = cKDTree(ref).query(grid.samples[middle])
        right_ok = bool(np.all(dd <= slack * tol))
    else:
        right_ok = len(middle) == 0
    return left_ok and right_ok, {"tol": tol, "left": int(len(left)), "middle": int(len(middle))}


def containment_tolerance(regions, q0):
    """max over deepest cubes Q in D_Q0 and samples x in Q of dist(x, U_Q)."""
    grid = regions.grid
    tol = 0.0
    for q in grid.descendants(q0):
        if grid.level[q] != grid.k_max:
            continue
        ids = regions.region(q).cubes
        if not len(ids):
            continue
        lo, hi = regions.fattened(ids)
        P = grid.cube_samples(q)
        d = point_box_distance(P[:, None, :], lo[None], hi[None]).min(1)
        tol = max(tol, float(d.max()))
    return tol
