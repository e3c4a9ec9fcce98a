"""epsilon-approximants of bounded harmonic functions on Carleson boxes.

All sets are represented by the solution-grid nodes they contain. A node
stands for its dual cell, so piece interfaces are unions of dual-cell faces.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .corona import packing_constant


class ApproximationError(AssertionError):
    pass


class ResolutionError(ValueError):
    pass


# ---------------------------------------------------------------- node sets
def _slices(field_, lo, hi, closed):
    f = (np.asarray(lo) - field_.lo) / field_.h
    g = (np.asarray(hi) - field_.lo) / field_.h
    if closed:
        a, b = np.ceil(f).astype(np.int64), np.floor(g).astype(np.int64) + 1
    else:
        a, b = np.floor(f).astype(np.int64) + 1, np.ceil(g).astype(np.int64)
    a = np.clip(a, 0, field_.shape)
    b = np.clip(b, 0, field_.shape)
    return a, b


def box_nodes(field_, lo, hi, closed=False):
    """Sorted flat indices of nodes in the union of boxes (open or closed)."""
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    parts = []
    for l, u in zip(lo, hi):
        a, b = _slices(field_, l, u, closed)
        if np.any(b <= a):
            continue
        axes = [np.arange(x, y) for x, y in zip(a, b)]
        G = np.meshgrid(*axes, indexing="ij")
        parts.append(np.ravel_multi_index(tuple(g.ravel() for g in G), field_.shape))
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(parts))


class NodeSets:
    """Cached node sets of Whitney-region components."""

    def __init__(self, field_, regions):
        self.field = field_
        self.regions = regions
        self._open = {}
        self._closed = {}

    def component(self, q, i, closed=False):
        cache = self._closed if closed else self._open
        key = (int(q), int(i))
        if key not in cache:
            ids = self.regions.region(q).components[i]
            lo, hi = self.regions.fattened(ids)
            if not self.field.covers(lo, hi):
                raise ResolutionError(f"Whitney region of cube {self.regions.grid.cube(q).key} "
                                      "leaves the solution grid")
            cache[key] = box_nodes(self.field, lo, hi, closed)
        return cache[key]

    def region(self, q):
        n = len(self.regions.region(q).components)
        parts = [self.component(q, i) for i in range(n)]
        return np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)

    def tent(self, q):
        parts = [self.region(p) for p in self.regions.grid.descendants(q)]
        return np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)


def _order(grid, ids):
    return sorted(ids, key=lambda q: (-grid.length[q], tuple(int(v) for v in grid.index[q])))


# ---------------------------------------------------------------- red / blue
@dataclass(frozen=True)
class ComponentOscillation:
    q: int
    i: int
    osc: float
    color: str
    label: object
    nodes: int


@dataclass
class Classification:
    eps: float
    q0: int
    components: list
    red: list
    bstar: np.ndarray
    nodesets: NodeSets
    energy_floor: float = math.inf

    def color(self, q, i):
        return self._colors[(q, i)]

    def __post_init__(self):
        self._colors = {(c.q, c.i): c.color for c in self.components}

    def red_packing(self):
        return packing_constant(np.asarray(self.red, dtype=np.int64), self.nodesets.regions.grid)


def classify_components(field_, regions, eps, q0, min_nodes=8, nodesets=None):
    """Oscillation of u on every component of U_Q, Q in D_Q0; red iff osc > eps/10."""
    if not 0 < eps:
        raise ValueError("eps must be positive")
    grid = regions.grid
    ns = nodesets or NodeSets(field_, regions)
    u = field_.u.ravel()
    out, red = [], []
    bstar = ~regions.corona.good.copy()
    dens = field_.energy_density().ravel()
    floor = math.inf
    n = grid.dim - 1
    for q in grid.descendants(q0):
        reg = regions.region(q)
        is_red = False
        for i, lab in enumerate(reg.labels):
            idx = ns.component(q, i)
            if len(idx) < min_nodes:
                raise ResolutionError(f"component {i} of cube {grid.cube(q).key} has "
                                      f"{len(idx)} grid nodes (< {min_nodes})")
            vals = u[idx]
            osc = float(vals.max() - vals.min())
            color = "red" if osc > eps / 10 else "blue"
            out.append(ComponentOscillation(int(q), i, osc, color, lab, len(idx)))
            if color == "red":
                is_red = True
                ids = reg.components[i]
                lo, hi = regions.fattened(ids, 2 * regions.tau)
                if field_.covers(lo, hi):
                    e = float(dens[box_nodes(field_, lo, hi)].sum() * field_.h ** field_.dim)
                    floor = min(floor, e / grid.length[q] ** n / eps ** 2)
        if is_red:
            red.append(int(q))
            bstar[q] = True
    return Classification(eps, int(q0), out, red, bstar, ns, floor)


# ---------------------------------------------------------------- generations
@dataclass
class Subregime:
    start: int
    generation: int
    regime: int
    members: list
    anchors: tuple


@dataclass
class GenerationForest:
    eps: float
    q0: int
    subregimes: list
    generation: dict

    def cubes(self, k=None):
        return sorted(q for q, g in self.generation.items() if k is None or g == k)

    def of(self, q):
        for s in self.subregimes:
            if q in s._set:
                return s
        return None

    def packing(self, grid):
        return packing_constant(np.asarray(self.cubes(), dtype=np.int64), grid)


def anchor_values(field_, regions, q):
    """(u(Y_Q^+), u(Y_Q^-))."""
    reg = regions.region(q)
    if 1 not in reg.Y or -1 not in reg.Y:
        raise ApproximationError(f"cube {regions.grid.cube(q).key} has no modified centres")
    v = field_.interpolate(np.stack([reg.Y[1], reg.Y[-1]]))
    return float(v[0]), float(v[1])


def build_generations(corona, regions, field_, eps, q0):
    """Stop at Q outside S or where u(Y_Q^+-) moves more than eps/10 from the start."""
    grid = regions.grid
    inside = set(grid.descendants(q0))
    starts = [q for q in _order(grid, inside)
              if corona.good[q] and (q == q0 or q == corona.regime(q).top)]
    queue = [(q, 0) for q in starts]
    subs, generation = [], {}
    while queue:
        s, gen = queue.pop(0)
        S = corona.regime(s)
        a = anchor_values(field_, regions, s)
        generation[s] = gen
        members, stack = [s], [s]
        while stack:
            p = stack.pop()
            for c in grid.children[p]:
                if c not in S:
                    continue
                b = anchor_values(field_, regions, c)
                if abs(b[0] - a[0]) > eps / 10 or abs(b[1] - a[1]) > eps / 10:
                    queue.append((c, gen + 1))
                else:
                    members.append(c)
                    stack.append(c)
        sub = Subregime(int(s), gen, S.id, sorted(members), a)
        sub._set = set(sub.members)
        subs.append(sub)
    subs.sort(key=lambda t: (-grid.length[t.start], tuple(int(v) for v in grid.index[t.start])))
    forest = GenerationForest(eps, int(q0), subs, generation)
    for sub in subs:
        for q in sub.members:
            b = anchor_values(field_, regions, q)
            if max(abs(b[0] - sub.anchors[0]), abs(b[1] - sub.anchors[1])) > eps / 10:
                raise ApproximationError(f"anchor drift inside subregime at {grid.cube(q).key}")
    return forest


def generation_overlap(forest, regions, nodesets, q0):
    """max over Q in D_Q0 of #{Q' in G : l(Q') >= l(Q), Omega_S'(Q') meets T_Q}."""
    grid = regions.grid
    omega = {}
    for sub in forest.subregimes:
        parts = []
        for q in sub.members:
            reg = regions.region(q)
            parts += [nodesets.component(q, i) for i, lab in enumerate(reg.labels) if lab]
        omega[sub.start] = np.unique(np.concatenate(parts)) if parts else np.zeros(0, np.int64)
    worst = 0
    for q in grid.descendants(q0):
        T = nodesets.tent(q)
        n = sum(1 for s, nodes in omega.items()
                if grid.length[s] >= grid.length[q] and len(np.intersect1d(nodes, T, True)))
        worst = max(worst, n)
    return worst


# ---------------------------------------------------------------- approximant
@dataclass(frozen=True)
class Piece:
    kind: str
    value: float
    source: tuple
    cells: int


@dataclass
class Approximant:
    field: object
    eps: float
    q0: int
    nodes: np.ndarray
    piece_of: np.ndarray
    pieces: list
    phi: np.ndarray
    sup_error: float
    meta: dict = field(default_factory=dict)

    def dump(self):
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(["piece", "kind", "value", "source", "cells"])
        for k, p in enumerate(self.pieces):
            w.writerow([k, p.kind, repr(p.value) if p.kind == "constant" else "u",
                        ":".join(str(s) for s in p.source), p.cells])
        return buf.getvalue()


def _blue_value(field_, regions, q, i):
    ids = regions.region(q).components[i]
    W = regions.W
    first = min(ids, key=lambda j: tuple(W.lo[j]))
    return float(field_.interpolate(W.center[first][None])[0])


def build_epsilon_approximant(field_, regions, cls, forest, eps, q0):
    """phi = phi_1 on Omega_1 (cubes of B*), phi_0 on the rest of T_Q0."""
    grid = regions.grid
    ns = cls.nodesets
    D = grid.descendants(q0)
    T = ns.tent(q0)
    size = int(np.prod(field_.shape))
    owner = np.full(size, -1, dtype=np.int64)
    inT = np.zeros(size, bool)
    inT[T] = True
    u = field_.u.ravel()
    pieces, values, trace = [], [], []

    def claim(idx, kind, value, source):
        idx = idx[inT[idx] & (owner[idx] < 0)]
        if not len(idx):
            return
        owner[idx] = len(pieces)
        pieces.append([kind, value, source, len(idx)])

    vk = _order(grid, [q for q in D if cls.bstar[q]])
    vparts = []
    for k, q in enumerate(vk):
        for i in range(len(regions.region(q).components)):
            if cls.color(q, i) == "red":
                vparts.append((k, q, i, "trace", math.nan))
            else:
                vparts.append((k, q, i, "constant", _blue_value(field_, regions, q, i)))
    # good cubes keep their components without a side label in Omega_1 as well
    extra = [q for q in D if not cls.bstar[q]
             and any(lab is None for lab in regions.region(q).labels)]
    for q in _order(grid, extra):
        for i, lab in enumerate(regions.region(q).labels):
            if lab is None:
                kind = "trace" if cls.color(q, i) == "red" else "constant"
                val = math.nan if kind == "trace" else _blue_value(field_, regions, q, i)
                vparts.append((len(vk) + len(vparts), q, i, kind, val))
    for closed in (False, True):
        for k, q, i, kind, val in vparts:
            claim(ns.component(q, i, closed), kind, val, ("V", k, i))
    for k, sub in enumerate(forest.subregimes):
        for sign, lab in ((0, "+"), (1, "-")):
            parts = []
            for q in sub.members:
                reg = regions.region(q)
                parts += [ns.component(q, i) for i, l in enumerate(reg.labels) if l == lab]
            if parts:
                claim(np.unique(np.concatenate(parts)), "constant", sub.anchors[sign],
                      ("A", k, lab))
    missing = T[owner[T] < 0]
    if len(missing):
        raise ApproximationError(f"{len(missing)} nodes of T_Q0 belong to no piece")
    phi = np.empty(len(T))
    kinds = np.array([p[0] == "trace" for p in pieces])
    vals = np.array([p[1] for p in pieces])
    o = owner[T]
    phi = np.where(kinds[o], u[T], vals[o])
    err = np.abs(u[T] - phi)
    sup = float(err.max()) if len(err) else 0.0
    if not sup < eps:
        worst = int(o[int(np.argmax(err))])
        raise ApproximationError(f"|u - phi| = {sup:.4g} >= eps = {eps} on piece "
                                 f"{worst} {pieces[worst][2]}")
    plist = [Piece(p[0], float(p[1]), tuple(p[2]), int(p[3])) for p in pieces]
    bound = sum(len(regions.region(q).components) for q in vk) + 2 * len(forest.subregimes) \
        + sum(len(regions.region(q).components) for q in extra)
    return Approximant(field_, eps, int(q0), T, o, plist, phi, sup,
                       {"omega1_cubes": len(vk), "subregimes": len(forest.subregimes),
                        "piece_bound": bound})


# ---------------------------------------------------------------- total variation
def total_variation(shape, h, nodes, piece_of, phi, trace, grad_norm, mask=None):
    """TV of a node-wise piecewise field restricted to the nodes in mask.

    Jumps |phi_a - phi_b| h^(d-1) across dual-cell faces between different pieces
    (both ends inside), except between two trace pieces where phi is continuous;
    plus |grad u| h^d on trace nodes.
    """
    d = len(shape)
    size = int(np.prod(shape))
    P = np.full(size, -1, dtype=np.int64)
    V = np.zeros(size)
    Tr = np.zeros(size, bool)
    sel = np.ones(len(nodes), bool) if mask is None else mask
    P[nodes[sel]] = piece_of[sel]
    V[nodes[sel]] = phi[sel]
    Tr[nodes[sel]] = trace[sel]
    P = P.reshape(shape)
    V = V.reshape(shape)
    Tr = Tr.reshape(shape)
    tv = 0.0
    for a in range(d):
        s0 = [slice(None)] * d
        s1 = [slice(None)] * d
        s0[a] = slice(None, -1)
        s1[a] = slice(1, None)
        pa, pb = P[tuple(s0)], P[tuple(s1)]
        face = (pa >= 0) & (pb >= 0) & (pa != pb) & ~(Tr[tuple(s0)] & Tr[tuple(s1)])
        tv += float(np.abs(V[tuple(s0)] - V[tuple(s1)])[face].sum()) * h ** (d - 1)
    g = grad_norm.ravel()[nodes[sel]]
    tv += float(g[trace[sel]].sum()) * h ** d
    return tv


def _trace_flags(A):
    kinds = np.array([p.kind == "trace" for p in A.pieces])
    return kinds[A.piece_of]


def bv_carleson_norm(A, regions, q, nodesets=None):
    """sigma(Q)^-1 times the total variation of phi over T_Q."""
    ns = nodesets or NodeSets(A.field, regions)
    TQ = ns.tent(q)
    mask = np.isin(A.nodes, TQ, assume_unique=True)
    tv = total_variation(A.field.shape, A.field.h, A.nodes, A.piece_of, A.phi,
                         _trace_flags(A), A.field.gradient_norm(), mask)
    return tv / regions.grid.mass[q]


def bv_carleson_sup(A, regions, nodesets=None):
    """(sup over Q' in D_Q0 of bv_carleson_norm, argmax cube)."""
    ns = nodesets or NodeSets(A.field, regions)
    best, arg = 0.0, A.q0
    for q in regions.grid.descendants(A.q0):
        v = bv_carleson_norm(A, regions, q, ns)
        if v > best:
            best, arg = v, q
    return best, arg


def loglog_slope(eps, values):
    """Least-squares slope of log(values) against log(eps)."""
    x = np.log(np.asarray(eps, float))
    y = np.log(np.asarray(values, float))
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------- global assembly
@dataclass
class GlobalApproximant:
    eps: float
    x0: tuple
    radius: float
    roots: list
    approximants: list
    owner: np.ndarray
    phi: np.ndarray
    sup_error: float
    C_eps: float
    balls: list
    stitched_tv: float
    direct_tv: float
    annuli: list
    far_tv: float

    @property
    def tv_mismatch(self):
        return abs(self.stitched_tv - self.direct_tv) / max(self.direct_tv, 1e-300)

    def summary(self):
        return {"eps": self.eps, "x0": list(self.x0), "radius": self.radius,
                "roots": len(self.roots), "sup_error": self.sup_error, "C_eps": self.C_eps,
                "stitched_tv": self.stitched_tv, "direct_tv": self.direct_tv,
                "tv_mismatch": self.tv_mismatch, "far_tv": self.far_tv,
                "annuli": self.annuli}


def _faces_tv(P, V, Tr, h, pair=None):
    """Jump part of the TV; pair=(a, b) keeps only faces between owner labels a and b."""
    d = P.ndim
    tv = 0.0
    for ax in range(d):
        s0 = [slice(None)] * d
        s1 = [slice(None)] * d
        s0[ax] = slice(None, -1)
        s1[ax] = slice(1, None)
        pa, pb = P[tuple(s0)], P[tuple(s1)]
        face = (pa >= 0) & (pb >= 0) & (pa != pb) & ~(Tr[tuple(s0)] & Tr[tuple(s1)])
        if pair is not None:
            oa, ob = pair[0][tuple(s0)], pair[0][tuple(s1)]
            face &= ((oa == pair[1]) & (ob == pair[2])) | ((oa == pair[2]) & (ob == pair[1]))
        tv += float(np.abs(V[tuple(s0)] - V[tuple(s1)])[face].sum()) * h ** (d - 1)
    return tv


def _polar_gradient_integral(data, center, r_in, r_out, weight=None, n_r=256, n_t=512):
    """Integral of |grad u| (times an optional weight) over the annulus r_in < |X - c| < r_out."""
    c = np.asarray(center, float)
    s = np.linspace(math.log(r_in), math.log(r_out), n_r + 1)
    sm = 0.5 * (s[1:] + s[:-1])
    rho = np.exp(sm)
    dr = np.exp(s[1:]) - np.exp(s[:-1])
    th = (np.arange(n_t) + 0.5) * 2 * math.pi / n_t
    R, T = np.meshgrid(rho, th, indexing="ij")
    X = np.stack([c[0] + R.ravel() * np.cos(T.ravel()), c[1] + R.ravel() * np.sin(T.ravel())], 1)
    g = np.linalg.norm(data.gradient(X), axis=1)
    w = (R * dr[:, None] * (2 * math.pi / n_t)).ravel()
    if weight is not None:
        w = w * weight(X)
    return float(np.sum(g * w)), X, w


def far_annuli(data, x0, r_in, r_out, ratio=2.0, n_r=128, n_t=512):
    """Per annulus: TV, energy, Caccioppoli-measured bound on the TV."""
    rows = []
    r = r_in
    while r < r_out * (1 - 1e-12):
        r2 = min(r * ratio, r_out)
        tv, X, w = _polar_gradient_integral(data, x0, r, r2, n_r=n_r, n_t=n_t)
        g = np.linalg.norm(data.gradient(X), axis=1)
        energy = float(np.sum(g * g * w))
        area = math.pi * (r2 * r2 - r * r)
        # enlarged annulus for the L2 oscillation
        _, Y, wy = _polar_gradient_integral(data, x0, r / 1.5, min(r2 * 1.5, 1.5 * r_out),
                                            n_r=n_r, n_t=n_t)
        v = data.value(Y)
        mean = float(np.sum(v * wy) / np.sum(wy))
        osc = float(np.sum((v - mean) ** 2 * wy))
        cacc = energy * r * r / osc if osc > 0 else 0.0
        rows.append({"r_in": r, "r_out": r2, "tv": tv, "energy": energy, "area": area,
                     "l2_osc": osc, "caccioppoli": cacc})
        r = r2
    C = max([row["caccioppoli"] for row in rows], default=0.0)
    for row in rows:
        row["bound"] = math.sqrt(row["area"] * C * row["l2_osc"]) / row["r_in"]
    return rows


def assemble_global(field_, regions, eps, x0, radius=None, nodesets=None, balls=24, seed=0):
    """Stitch per-root approximants into phi on B(x0, radius) minus E, u elsewhere.

    Near field: S_k = T_Qk minus earlier S_j over the root cubes, on the solution
    grid. Far field (outside every S_k): phi = u, with the part beyond the grid
    integrated in polar coordinates from the closed-form gradient.
    """
    grid = regions.grid
    E = grid.E
    data = field_.data
    diam = E.diameter
    radius = 200 * diam if radius is None else radius
    ns = nodesets or NodeSets(field_, regions)
    roots = _order(grid, grid.roots())
    size = int(np.prod(field_.shape))
    owner = np.full(size, -1, dtype=np.int64)
    phi = field_.u.ravel().copy()
    trace = np.ones(size, bool)
    pid = np.full(size, -1, dtype=np.int64)
    approximants = []
    npieces = 0
    sup = 0.0
    for k, q in enumerate(roots):
        try:
            cls = classify_components(field_, regions, eps, q, nodesets=ns)
            forest = build_generations(regions.corona, regions, field_, eps, q)
            A = build_epsilon_approximant(field_, regions, cls, forest, eps, q)
        except ResolutionError as exc:
            raise ApproximationError(f"cover construction failed at root {grid.cube(q).key}: {exc}")
        approximants.append(A)
        free = owner[A.nodes] < 0
        idx = A.nodes[free]
        owner[idx] = k
        phi[idx] = A.phi[free]
        kinds = np.array([p.kind == "trace" for p in A.pieces])
        trace[idx] = kinds[A.piece_of[free]]
        pid[idx] = A.piece_of[free] + npieces
        npieces += len(A.pieces)
        sup = max(sup, A.sup_error)
    far = (owner < 0) & ~field_.pinned.ravel()
    pid[far] = npieces
    owner[far] = len(roots)
    u = field_.u.ravel()
    near = owner < len(roots)
    near &= owner >= 0
    sup = max(sup, float(np.max(np.abs(u - phi)[owner >= 0])))
    if not sup < eps:
        raise ApproximationError(f"stitched |u - phi| = {sup:.4g} >= eps")

    shape = field_.shape
    h = field_.h
    P, V, Tr, O = (a.reshape(shape) for a in (pid, phi, trace, owner))
    gn = field_.gradient_norm().ravel()
    # direct TV of the stitched field on the grid
    direct = _faces_tv(P, V, Tr, h) + float(gn[(owner >= 0) & trace].sum()) * h ** 2
    # stitched: each S_k alone, then each interface once, then the far field
    stitched = 0.0
    labels = list(range(len(roots) + 1))
    for k in labels:
        Pk = np.where(O == k, P, -1)
        stitched += _faces_tv(Pk, V, Tr, h)
        stitched += float(gn[(owner == k) & trace].sum()) * h ** 2
    for i in labels:
        for j in labels:
            if i < j:
                stitched += _faces_tv(P, V, Tr, h, pair=(O, i, j))

    # ball-normalized BV sup over sampled boundary balls
    rng = np.random.default_rng(seed)
    X = field_.nodes()
    centers = np.vstack([np.asarray(x0, float)[None],
                         E.samples[rng.integers(0, len(E.samples), balls - 1)]])
    c_box = 0.5 * (field_.lo + field_.hi)
    r_box = 0.5 * float(np.min(field_.hi - field_.lo))
    rows = []
    C_eps = 0.0
    radii = [2.0 ** j for j in range(int(math.ceil(math.log2(8 * h))),
                                     int(math.floor(math.log2(radius))) + 1)] + [radius]
    for x in centers:
        for r in radii:
            inb = (np.sum((X - x) ** 2, axis=1) < r * r)
            mask = inb & (owner >= 0)
            Pm = np.where(mask.reshape(shape), P, -1)
            tv = _faces_tv(Pm, V, Tr, h) + float(gn[mask & trace].sum()) * h ** 2
            if np.linalg.norm(x - c_box) + r > r_box:
                def outside(Y, x=x, r=r):
                    inside_box = np.all((Y > field_.lo) & (Y < field_.hi), axis=1)
                    return ((np.sum((Y - x) ** 2, axis=1) < r * r) & ~inside_box).astype(float)
                r_out = np.linalg.norm(x - c_box) + r
                tv += _polar_gradient_integral(data, c_box, r_box, r_out, weight=outside)[0]
            val = tv / r ** (E.dim - 1)
            rows.append({"center": [float(v) for v in x], "r": r, "tv": tv, "normalized": val})
            C_eps = max(C_eps, val)
    corner = float(np.max(np.linalg.norm(np.stack([field_.lo, field_.hi]) - np.asarray(x0), axis=1)))
    annuli = far_annuli(data, x0, max(corner, 2 * diam), radius)
    far_tv = sum(a["tv"] for a in annuli)
    return GlobalApproximant(eps, tuple(float(v) for v in x0), radius, roots, approximants,
                             owner, phi, sup, C_eps, rows, stitched, direct, annuli, far_tv)
