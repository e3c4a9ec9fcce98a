"""Discrete Carleson measures on D(E): coefficients, packing norms, stopping families."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .corona import tent_sums
from .regions import FamilyError, check_disjoint, random_family


class CarlesonError(ValueError):
    pass


@dataclass
class DiscreteCarlesonMeasure:
    """Nonnegative coefficients indexed by cube id; m(D') is their sum over D'."""

    grid: object
    coef: np.ndarray
    kind: str = "generic"
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=float)
        if self.coef.shape != (self.grid.n_cubes,):
            raise CarlesonError("one coefficient per cube is required")
        if np.any(~np.isfinite(self.coef)) or np.any(self.coef < 0):
            raise CarlesonError("coefficients must be finite and nonnegative")

    def mass_of(self, ids):
        return float(self.coef[np.asarray(list(ids), dtype=np.int64)].sum()) if len(ids) else 0.0

    def tents(self):
        """m(D_Q) for every cube."""
        return tent_sums(self.coef, self.grid)

    def dump(self):
        g = self.grid
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(["k", "index", "sigma", "coefficient", "tent"])
        tents = self.tents()
        for c in range(g.n_cubes):
            w.writerow([int(g.level[c]), ",".join(str(int(v)) for v in g.index[c]),
                        repr(float(g.mass[c])), repr(float(self.coef[c])), repr(float(tents[c]))])
        return buf.getvalue()


# ---------------------------------------------------------------- builders
def corona_coefficients(corona):
    """alpha_Q = sigma(Q) on bad cubes and regime tops."""
    g = corona.grid
    return DiscreteCarlesonMeasure(g, np.where(corona.marked(), g.mass, 0.0), "corona")


def _resolved(regions, field_, ids, cells):
    return bool(np.all(regions.W.side[ids] >= cells * field_.h))


def energy_coefficients(field_, regions, qs=None, cells=1):
    """beta_Q = quadrature of |grad u|^2 delta over U_Q.

    Cubes whose region leaves the solution grid or contains Whitney cubes of side
    below cells * h get beta_Q = 0 and are listed in report["skipped"].
    """
    g = regions.grid
    qs = range(g.n_cubes) if qs is None else qs
    dens = field_.energy_density()
    coef = np.zeros(g.n_cubes)
    count = np.zeros(field_.shape, dtype=np.int64)
    skipped = []
    used = []
    for q in qs:
        ids = regions.region(q).cubes
        if not len(ids):
            skipped.append((int(q), "empty region"))
            continue
        lo, hi = regions.fattened(ids)
        if not field_.covers(lo, hi):
            skipped.append((int(q), "outside solution grid"))
            continue
        if not _resolved(regions, field_, ids, cells):
            skipped.append((int(q), "under-resolved"))
            continue
        outer, m = field_.union_mask(lo, hi)
        coef[q] = float(dens[outer][m].sum() * field_.h ** field_.dim)
        count[outer] += m
        used.append(int(q))
    whole = float((dens * (count > 0)).sum() * field_.h ** field_.dim)
    ratio = coef / g.mass
    report = {"skipped": skipped, "used": len(used),
              "overlap": int(count.max()) if count.size else 0,
              "union_energy": whole,
              "M1": float(ratio.max()) if len(ratio) else 0.0}
    return DiscreteCarlesonMeasure(g, coef, "energy", report)


# ---------------------------------------------------------------- norms
def packing_norm(m):
    """||m||_C = sup_Q m(D_Q) / sigma(Q)."""
    g = m.grid
    if not g.n_cubes:
        return 0.0
    return float(np.max(m.tents() / g.mass))


def _restricted_tents(m, F, q):
    g = m.grid
    F = check_disjoint(g, F)
    inside = g.descendant_mask(q)
    for f in F:
        if not inside[f]:
            raise FamilyError(f"family member {g.cube(f).key} is not in D_Q")
    keep = inside.copy()
    for f in F:
        keep &= ~g.descendant_mask(f)
    return tent_sums(np.where(keep, m.coef, 0.0), g), inside


def restricted_norm(m, F, q):
    """sup over Q' in D_Q of m(D_Q' minus the union of D_Qj) / sigma(Q')."""
    acc, inside = _restricted_tents(m, F, q)
    return float(np.max(acc[inside] / m.grid.mass[inside]))


def restricted_mass(m, F, q):
    """m_F(D_Q) = m(D_Q minus the union of D_Qj)."""
    acc, _ = _restricted_tents(m, F, q)
    return float(acc[q])


# ---------------------------------------------------------------- stopping family
@dataclass
class StoppingFamily:
    q: int
    a: float
    b: float
    C: float
    family: list
    bad: list
    bad_mass: float
    sigma_q: float
    sawtooth_norm: float
    failures: list

    @property
    def passed(self):
        return not self.failures

    @property
    def measured_C(self):
        return self.sawtooth_norm / self.b if self.b > 0 else (0.0 if self.sawtooth_norm == 0 else math.inf)

    @property
    def bad_fraction(self):
        return self.bad_mass / self.sigma_q


def extract_stopping_family(m, q, a, b, C=2.0, criterion="chain", rtol=1e-12):
    """Disjoint F in D_Q with ||m_F||_C(Q) <= C b and sigma(bad) <= (a+b)/(a+2b) sigma(Q).

    criterion="chain" stops at maximal P whose chain sum over P <= Q' <= Q of
    alpha_Q'/sigma(Q') exceeds 2b; criterion="tent" stops at maximal P with
    m(D_P) > b sigma(P). Both conclusions are checked and failures reported.
    """
    g = m.grid
    if a < 0 or b < 0 or a + 2 * b <= 0:
        raise CarlesonError("need a, b >= 0 and a + 2b > 0")
    tents = m.tents()
    sq = float(g.mass[q])
    if tents[q] > (a + b) * sq * (1 + rtol):
        raise CarlesonError(f"precondition violated: m(D_Q) = {tents[q]:.6g} > (a+b) sigma(Q) = {(a + b) * sq:.6g}")
    ratio = m.coef / g.mass
    family = []
    stack = [(q, 0.0)]
    while stack:
        p, acc = stack.pop()
        acc = acc + ratio[p]
        if criterion == "chain":
            stop = acc > 2 * b
        elif criterion == "tent":
            stop = tents[p] > b * g.mass[p]
        else:
            raise CarlesonError(f"unknown criterion {criterion!r}")
        if stop:
            family.append(p)
        else:
            stack.extend((c, acc) for c in g.children[p])
    family.sort()
    bad = [p for p in family if tents[p] - m.coef[p] > a * g.mass[p]]
    bad_mass = float(g.mass[bad].sum()) if bad else 0.0
    norm = restricted_norm(m, family, q)
    failures = []
    if norm > C * b * (1 + rtol) + 1e-300:
        failures.append(f"sawtooth norm {norm:.6g} exceeds C b = {C * b:.6g}")
    bound = (a + b) / (a + 2 * b) * sq
    if bad_mass > bound * (1 + rtol):
        failures.append(f"bad mass {bad_mass:.6g} exceeds {bound:.6g}")
    return StoppingFamily(int(q), a, b, C, family, bad, bad_mass, sq, norm, failures)


# ---------------------------------------------------------------- extrapolation
@dataclass
class ExtrapolationReport:
    M0: float
    M1: float
    gamma: float
    M2: float
    accepted: int
    tried: int
    worst: tuple

    def as_dict(self):
        return {"M0": self.M0, "M1": self.M1, "gamma": self.gamma, "M2": self.M2,
                "accepted": self.accepted, "tried": self.tried, "worst": list(self.worst)}


def verify_extrapolation(m, mt, gamma, samples, seed=0, max_size=32):
    """Sample (Q, F) with ||m_F||_C(Q) <= gamma and record sup mt_F(D_Q) / sigma(Q).

    Each sample uses one random antichain and, when its precondition holds, the
    stopping family with b = gamma/2, which meets the restriction by construction.
    """
    g = m.grid
    rng = np.random.default_rng(seed)
    tents = m.tents()
    M1, accepted, tried, worst = 0.0, 0, 0, ()
    for _ in range(samples):
        q = int(rng.integers(0, g.n_cubes))
        cands = [random_family(g, q, rng, max_size)]
        b = gamma / 2
        a = max(tents[q] / g.mass[q] - b, 0.0)
        if gamma > 0:
            cands.append(extract_stopping_family(m, q, a, b, C=2.0).family)
        for F in cands:
            tried += 1
            if restricted_norm(m, F, q) > gamma * (1 + 1e-12):
                continue
            accepted += 1
            v = restricted_mass(mt, F, q) / g.mass[q]
            if v > M1 or not worst:
                M1 = max(M1, v)
                if v >= M1:
                    worst = (q, tuple(F))
    return ExtrapolationReport(packing_norm(m), float(M1), float(gamma), packing_norm(mt),
                               accepted, tried, worst)
