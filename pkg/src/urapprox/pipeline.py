"""Scenario pipeline: grid, Whitney, corona, sawtooths, solve, Carleson, approximants."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import approx as ap
from . import carleson as cm
from .config import ScenarioConfig
from .corona import build_corona, check_coherency, graph_deficiency, packing_constant
from .geometry import AmbientBox, build_boundary_set
from .grid import build_dyadic_grid, verify_adr
from .harmonic import BoundaryData, carleson_functional, solve_harmonic
from .regions import (Regions, boundary_containment_check, containment_tolerance,
                      random_family, verify_nta, verify_sawtooth_adr)
from .whitney import whitney_decompose

log = logging.getLogger("urapprox")

STAGES = ("geometry", "grid", "whitney", "corona", "sawtooth", "solve", "carleson",
          "approx", "global")
DRIFT_TOL = 0.20
STABILITY_TOL = 0.25


class StageError(RuntimeError):
    def __init__(self, stage, cause, report):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.report = report


@dataclass
class RunReport:
    config: dict
    stages: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    render: dict = field(default_factory=dict)
    failed_stage: str = ""

    @property
    def passed(self):
        return not self.failed_stage and all(self.checks.values())

    def as_dict(self):
        return {"config": self.config, "stages": self.stages, "checks": self.checks,
                "passed": self.passed, "failed_stage": self.failed_stage}


def _rng(cfg, stage):
    return np.random.default_rng([cfg.seed, STAGES.index(stage)])


def _clean(obj):
    """JSON-safe copy with floats rounded to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return float(f"{v:.12g}")
    return obj


# ---------------------------------------------------------------- core objects
@dataclass
class Core:
    cfg: ScenarioConfig
    E: object
    grid: object
    W: object
    corona: object
    regions: object
    q0: int


def build_set(cfg):
    return build_boundary_set(cfg.boundary, cfg.dim, cfg.spacing, **cfg.boundary_params)


def build_core(cfg, E=None):
    E = E or build_set(cfg)
    grid = build_dyadic_grid(E, cfg.k_min, cfg.k_max)
    box = AmbientBox(tuple(cfg.box[:-1]), cfg.box[-1])
    W = whitney_decompose(E, box, cfg.k_max + cfg.whitney_extra)
    C = build_corona(grid, cfg.eta, cfg.K)
    R = Regions(grid, C, W, cfg.eta, cfg.K, cfg.tau)
    if cfg.q0:
        q0 = grid.find(cfg.q0[0], cfg.q0[1])
        if q0 is None:
            raise ValueError(f"q0 {cfg.q0} is not a cube of the grid")
    else:
        q0 = grid.roots()[0]
    return Core(cfg, E, grid, W, C, R, int(q0))


def solve_box(core, roots, h):
    lo = np.full(core.E.dim, np.inf)
    hi = -lo
    for q in roots:
        T = core.regions.carleson_box(q)
        lo = np.minimum(lo, T.lo.min(0))
        hi = np.maximum(hi, T.hi.max(0))
    lo = np.floor(lo / h) * h - h
    hi = np.ceil(hi / h) * h + h
    return lo, hi


def solve_core(core, h, roots=None):
    cfg = core.cfg
    data = BoundaryData(cfg.data, dict(cfg.data_params))
    lo, hi = solve_box(core, roots or [core.q0], h)
    return solve_harmonic(core.E, lo, hi, data, h)


def energy_norm(core, field_):
    beta = cm.energy_coefficients(field_, core.regions, core.grid.descendants(core.q0))
    return beta, cm.packing_norm(beta)


# ---------------------------------------------------------------- stages
def stage_geometry(cfg, ctx):
    E = build_set(cfg)
    ctx["E"] = E
    adr = verify_adr(E, cfg.adr_trials, cfg.seed)
    return {"kind": E.kind, "samples": len(E.samples), "mass": E.total_mass,
            "adr": {"min": adr.min_ratio, "max": adr.max_ratio, "C_over_c": adr.constant_ratio,
                    "refined_min": adr.refined_min_ratio, "refined_max": adr.refined_max_ratio,
                    "drift": adr.drift, "passed": adr.passed, "per_scale": adr.per_scale}}


def stage_grid(cfg, ctx):
    g = build_dyadic_grid(ctx["E"], cfg.k_min, cfg.k_max)
    ctx["grid"] = g
    counts = {str(k): len(g.cubes_at(k)) for k in range(cfg.k_min, cfg.k_max + 1)}
    ctx["tables"]["cubes.tsv"] = g.dump()
    # sliver cubes (E clipping a lattice square) show up as small sigma(Q) / l(Q)^n
    thin = g.mass / g.length ** ctx["E"].n
    thin_min = {str(k): float(thin[g.cubes_at(k)].min()) for k in range(cfg.k_min, cfg.k_max + 1)}
    return {"cubes": g.n_cubes, "per_level": counts, "a0": g.a0(),
            "diameter_ratio": g.diameter_ratio(), "mass_ratio_min": thin_min}


def stage_whitney(cfg, ctx):
    box = AmbientBox(tuple(cfg.box[:-1]), cfg.box[-1])
    W = whitney_decompose(ctx["E"], box, cfg.k_max + cfg.whitney_extra)
    ctx["W"] = W
    v = W.bound_violations()
    vol = W.covered_volume + W.guard_volume
    return {"cubes": W.n_cubes, "deepest": cfg.k_max + cfg.whitney_extra, "violations": v,
            "neighbor_ratio": W.neighbor_ratio(),
            "fattened_overlaps": int(len(W.fattened_overlaps(cfg.tau))),
            "volume_defect": abs(vol - box.volume) / box.volume,
            "passed": bool(sum(v.values()) == 0)}


def _corona_summary(cfg, grid, C):
    coh, bil = [], 0
    for S in C.regimes:
        coh.append(all(check_coherency(S, grid)))
        for q in S.members:
            d1, d2 = graph_deficiency(grid, q, S.graph, cfg.eta, cfg.K)
            if not d1 + d2 < cfg.eta * grid.length[q]:
                bil += 1
    return coh, bil


def stage_corona(cfg, ctx):
    g = ctx["grid"]
    C = build_corona(g, cfg.eta, cfg.K)
    ctx["corona"] = C
    coh, bil = _corona_summary(cfg, g, C)
    P = packing_constant(C.marked(), g)
    # one added generation; grid and corona only, so this is cheap
    g2 = build_dyadic_grid(ctx["E"], cfg.k_min, cfg.k_max + 1)
    C2 = build_corona(g2, cfg.eta, cfg.K)
    P_next = packing_constant(C2.marked(), g2)
    drift = abs(P_next - P) / P
    s = C.summary()
    return {"regimes": s["regimes"], "bad": s["bad"], "cubes": s["cubes"],
            "resplits": s["resplits"], "max_lipschitz": s["max_lipschitz"],
            "coherent": int(sum(coh)), "bilateral_violations": bil,
            "packing": P, "packing_added_depth": P_next, "drift": drift,
            "passed": bool(all(coh) and bil == 0 and math.isfinite(P) and drift < DRIFT_TOL)}


def stage_sawtooth(cfg, ctx):
    g, C, W = ctx["grid"], ctx["corona"], ctx["W"]
    R = Regions(g, C, W, cfg.eta, cfg.K, cfg.tau)
    ctx["regions"] = R
    if cfg.q0:
        q0 = g.find(cfg.q0[0], cfg.q0[1])
        if q0 is None:
            raise ValueError(f"q0 {cfg.q0} is not a cube of the grid")
    else:
        q0 = g.roots()[0]
    ctx["q0"] = int(q0)
    rng = _rng(cfg, "sawtooth")
    D = g.descendants(q0)
    out = {"q0": list(g.cube(q0).key[1]), "q0_level": int(g.level[q0]), "cubes": len(D)}
    T = R.carleson_box(q0)
    ctx["render"]["T"] = {"lo": T.lo.tolist(), "hi": T.hi.tolist()}
    out["carleson_box"] = {"boxes": len(T.lo), "volume": T.volume,
                           "boundary_measure": T.boundary_measure}
    c_lo, c_hi = R.whitney2_constants(D)
    out["whitney_constants"] = {"c": c_lo, "C": c_hi}
    out["claim31_min"] = min(R.claim31(q) for q in D)
    domains = []
    S = C.regime(q0)
    if S is not None:
        members = [q for q in D if q in S]
        Op, Om = R.regime_domain(members)
        for name, U in (("omega_plus", Op), ("omega_minus", Om)):
            rep = verify_nta(U, cfg.nta_trials, cfg.seed)
            domains.append((name, rep, None))
    fams = [random_family(g, q0, rng) for _ in range(3)]
    for j, F in enumerate(fams):
        U = R.geometric_sawtooth(F, q0)
        rep = verify_nta(U, cfg.nta_trials, cfg.seed + j)
        adr = verify_sawtooth_adr(U, cfg.nta_trials, cfg.seed + j)
        domains.append((f"sawtooth_{j}", rep, adr))
    rows = []
    for name, rep, adr in domains:
        row = {"domain": name, "interior_ok": rep.interior_ok, "exterior_ok": rep.exterior_ok,
               "trials": rep.corkscrew_trials, "worst_interior": rep.worst_interior,
               "worst_exterior": rep.worst_exterior, "chain_max": rep.chain_max,
               "chain_failures": rep.chain_failures, "components": rep.components,
               "passed": rep.passed}
        if adr is not None:
            row["adr_C_over_c"] = adr.constant_ratio
        rows.append(row)
    out["nta"] = rows
    tol = containment_tolerance(R, q0)
    cont = []
    for _ in range(cfg.families):
        F = random_family(g, q0, rng)
        ok, info = boundary_containment_check(R, F, q0, tol=tol)
        cont.append({"family": len(F), "passed": ok, **info})
    out["containment"] = cont
    out["containment_tolerance"] = tol
    nta_ok = all(r["passed"] for r in rows)
    adr_ok = all(r.get("adr_C_over_c", 0) < 50 for r in rows)
    out["passed"] = bool(nta_ok and adr_ok and all(c["passed"] for c in cont))
    out["regime_domain_checked"] = S is not None
    return out


def stage_solve(cfg, ctx):
    core = Core(cfg, ctx["E"], ctx["grid"], ctx["W"], ctx["corona"], ctx["regions"], ctx["q0"])
    ctx["core"] = core
    roots = core.grid.roots() if cfg.global_ else [core.q0]
    u = solve_core(core, cfg.solver_h, roots)
    ctx["field"] = u
    g = core.grid
    samples = []
    for q in g.descendants(core.q0):
        x, r = g.center[q], 2 * g.length[q]
        if r >= 8 * u.h and np.all(x - r >= u.lo) and np.all(x + r <= u.hi):
            c = carleson_functional(u, x, r)
            samples.append({"k": int(g.level[q]), "index": list(g.cube(q).key[1]),
                            "r": r, "value": c.value, "error_estimate": c.error_estimate})
    return {"h": u.h, "shape": list(u.shape), "nodes": int(np.prod(u.shape)),
            "iterations": len(u.residuals), "sup_norm": u.sup_norm,
            "max_principle_excess": u.max_principle_excess, "ball_samples": samples}


def stage_carleson(cfg, ctx):
    core, u = ctx["core"], ctx["field"]
    alpha = cm.corona_coefficients(core.corona)
    beta, norm = energy_norm(core, u)
    ctx["beta"] = beta
    ctx["tables"]["energy_coefficients.tsv"] = beta.dump()
    ext = cm.verify_extrapolation(alpha, beta, 2.0, cfg.extrapolation_samples, seed=cfg.seed)
    out = {"alpha_norm": cm.packing_norm(alpha), "beta_norm": norm, "M1": beta.report["M1"],
           "overlap": beta.report["overlap"], "skipped": len(beta.report["skipped"]),
           "union_energy": beta.report["union_energy"],
           "beta_sum": float(beta.coef.sum()), "extrapolation": ext.as_dict()}
    ok = math.isfinite(norm) and not beta.report["skipped"]
    if cfg.stability:
        u2 = solve_core(core, cfg.solver_h / 2, [core.q0])
        _, n_fine = energy_norm(core, u2)
        deep = build_core(cfg.deeper(), ctx["E"])
        ctx["deep_core"] = deep
        u3 = solve_core(deep, deep.cfg.solver_h, [deep.q0])
        ctx["deep_field"] = u3
        b3, n_deep = energy_norm(deep, u3)
        out["stability"] = {"h_half": n_fine, "h_half_change": abs(n_fine - norm) / norm,
                            "deeper": n_deep, "deeper_change": abs(n_deep - norm) / norm,
                            "deeper_skipped": len(b3.report["skipped"])}
        ok = ok and out["stability"]["h_half_change"] < STABILITY_TOL \
            and out["stability"]["deeper_change"] < STABILITY_TOL and not b3.report["skipped"]
    out["passed"] = bool(ok)
    return out


def _sweep(core, u, eps_list, keep=None):
    R, g, q0 = core.regions, core.grid, core.q0
    ns = ap.NodeSets(u, R)
    rows = []
    for eps in eps_list:
        cls = ap.classify_components(u, R, eps, q0, nodesets=ns)
        forest = ap.build_generations(core.corona, R, u, eps, q0)
        A = ap.build_epsilon_approximant(u, R, cls, forest, eps, q0)
        bv, arg = ap.bv_carleson_sup(A, R, ns)
        rows.append({"eps": eps, "sup_error": A.sup_error, "pieces": len(A.pieces),
                     "piece_bound": A.meta["piece_bound"], "red_cubes": len(cls.red),
                     "red_C": cls.red_packing() * eps ** 2,
                     "generation_cubes": len(forest.cubes()),
                     "generation_C": forest.packing(g) * eps ** 2,
                     "subregimes": len(forest.subregimes), "bv_sup": bv,
                     "bv_argmax_level": int(g.level[arg]),
                     "red_energy_floor": cls.energy_floor,
                     "overlap_N0": ap.generation_overlap(forest, R, ns, q0)})
        if keep is not None:
            keep[eps] = A
    return rows


def stage_approx(cfg, ctx):
    core, u = ctx["core"], ctx["field"]
    keep = {}
    rows = _sweep(core, u, cfg.eps, keep)
    ctx["approximants"] = keep
    bv = [r["bv_sup"] for r in rows]
    slope = ap.loglog_slope(cfg.eps, bv) if len(rows) > 1 and min(bv) > 0 else 0.0
    lines = ["eps\tsup_error\tpieces\tred_cubes\tred_C\tgeneration_C\tbv_sup\tN0"]
    for r in rows:
        lines.append(f"{r['eps']!r}\t{r['sup_error']!r}\t{r['pieces']}\t{r['red_cubes']}\t"
                     f"{r['red_C']!r}\t{r['generation_C']!r}\t{r['bv_sup']!r}\t{r['overlap_N0']}")
    ctx["tables"]["eps_sweep.tsv"] = "\n".join(lines) + "\n"
    for eps, A in keep.items():
        ctx["tables"][f"pieces_eps{eps:g}.tsv"] = A.dump()
    ok = all(r["sup_error"] < r["eps"] for r in rows) and slope >= -2.5
    ok = ok and all(r["red_energy_floor"] >= 1e-3 for r in rows) \
        and all(r["overlap_N0"] <= 64 for r in rows)
    out = {"rows": rows, "bv_slope": slope}
    if cfg.stability and "deep_core" in ctx:
        deep_rows = _sweep(ctx["deep_core"], ctx["deep_field"], cfg.eps)
        changes = []
        for a, b in zip(rows, deep_rows):
            for key in ("red_C", "generation_C"):
                if a[key] > 0:
                    changes.append(abs(b[key] - a[key]) / a[key])
        out["deeper"] = [{"eps": r["eps"], "red_C": r["red_C"], "generation_C": r["generation_C"],
                          "sup_error": r["sup_error"]} for r in deep_rows]
        out["max_constant_change"] = max(changes, default=0.0)
        ok = ok and out["max_constant_change"] <= STABILITY_TOL \
            and all(r["sup_error"] < r["eps"] for r in deep_rows)
    out["passed"] = bool(ok)
    return out


def stage_global(cfg, ctx):
    core, u = ctx["core"], ctx["field"]
    E = core.E
    x0 = E.samples[0]
    rows = []
    ok = True
    for eps in cfg.eps[:1]:
        G = ap.assemble_global(u, core.regions, eps, x0, seed=cfg.seed)
        s = G.summary()
        s["annuli_within_bound"] = all(a["tv"] <= a["bound"] for a in G.annuli)
        rows.append(s)
        ok = ok and G.sup_error < eps and G.tv_mismatch < 0.05 and s["annuli_within_bound"] \
            and math.isfinite(G.C_eps)
    return {"rows": rows, "passed": bool(ok)}


RUNNERS = {"geometry": stage_geometry, "grid": stage_grid, "whitney": stage_whitney,
           "corona": stage_corona, "sawtooth": stage_sawtooth, "solve": stage_solve,
           "carleson": stage_carleson, "approx": stage_approx, "global": stage_global}

CHECKS = {"geometry": "adr_stability", "whitney": "whitney_exactness",
          "corona": "corona_correctness", "sawtooth": "nta_sawtooth",
          "carleson": "carleson_theorem", "approx": "approximability",
          "global": "global_assembly"}


def run_scenario(cfg, stop_after=None, sweep=None, output=True):
    """Run the stages in order; a failing stage raises StageError with the partial report."""
    sweep = cfg.sweep if sweep is None else sweep
    conf = cfg.as_dict()
    conf.pop("output")  # where the bundle goes is not part of the scenario
    report = RunReport(_clean(conf))
    ctx = {"tables": report.tables, "render": report.render}
    for stage in STAGES:
        if stage == "approx" and not sweep:
            continue
        if stage == "global" and not cfg.global_:
            continue
        log.info("stage %s", stage)
        t0 = time.perf_counter()
        try:
            res = RUNNERS[stage](cfg, ctx)
        except Exception as exc:
            report.failed_stage = stage
            report.stages[stage] = {"error": f"{type(exc).__name__}: {exc}"}
            if output:
                emit_outputs(report, cfg.output_dir, ctx)
            raise StageError(stage, exc, report) from exc
        log.info("stage %s done in %.1f s", stage, time.perf_counter() - t0)
        report.stages[stage] = _clean(res)
        if stage == "geometry":
            a = res["adr"]
            report.checks[CHECKS[stage]] = bool(a["passed"] and a["C_over_c"] < 20)
        elif stage in CHECKS:
            report.checks[CHECKS[stage]] = bool(res["passed"])
        if stage == stop_after:
            break
    report.ctx = ctx
    if output:
        emit_outputs(report, cfg.output_dir, ctx)
    return report


# ---------------------------------------------------------------- outputs
def summary_text(report):
    lines = [f"scenario: {report.config.get('name')}", f"passed: {report.passed}"]
    if report.failed_stage:
        lines.append(f"failed stage: {report.failed_stage}")
    for k in sorted(report.checks):
        lines.append(f"check {k}: {'PASS' if report.checks[k] else 'FAIL'}")
    for stage in STAGES:
        if stage not in report.stages:
            continue
        lines.append(f"[{stage}]")
        for k, v in report.stages[stage].items():
            if isinstance(v, (dict, list)):
                continue
            lines.append(f"  {k}: {v}")
    return "\n".join(lines) + "\n"


def emit_outputs(report, directory, ctx=None):
    """Write report.json, summary.txt, tables/*.tsv, render.json, plots/*.svg and a manifest."""
    from .render import render_bundle, render_payload
    os.makedirs(os.path.join(directory, "tables"), exist_ok=True)
    files = {}
    files["report.json"] = json.dumps(report.as_dict(), sort_keys=True, indent=1) + "\n"
    files["summary.txt"] = summary_text(report)
    for name, text in sorted(report.tables.items()):
        files[os.path.join("tables", name)] = text
    if ctx is not None:
        payload = render_payload(report, ctx)
        files["render.json"] = json.dumps(_clean(payload), sort_keys=True) + "\n"
    for rel, text in files.items():
        with open(os.path.join(directory, rel), "w", newline="\n") as fh:
            fh.write(text)
    if ctx is not None:
        render_bundle(directory)
    manifest = []
    for root, _, names in os.walk(directory):
        for n in sorted(names):
            if n == "MANIFEST.tsv":
                continue
            p = os.path.join(root, n)
            with open(p, "rb") as fh:
                digest = hashlib.sha256(fh.read()).hexdigest()
            manifest.append(f"{os.path.relpath(p, directory)}\t{digest}")
    with open(os.path.join(directory, "MANIFEST.tsv"), "w", newline="\n") as fh:
        fh.write("\n".join(sorted(manifest)) + "\n")
    return directory
