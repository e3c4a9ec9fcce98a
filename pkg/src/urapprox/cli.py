"""Command line interface: run, verify, sweep-epsilon, render."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _threads():
    n = os.environ.get("URAPPROX_THREADS")
    if n:
        for v in THREAD_VARS:
            os.environ[v] = n
    return int(n) if n and n.isdigit() else 1


def _print_checks(report):
    for k in sorted(report.checks):
        print(f"{k}: {'PASS' if report.checks[k] else 'FAIL'}")
    if report.failed_stage:
        print(f"failed stage: {report.failed_stage}")


def _run_one(path, out=None, sweep=None):
    from .config import load_config
    from .pipeline import StageError, run_scenario
    from dataclasses import replace
    cfg = load_config(path)
    if out:
        cfg = replace(cfg, output=out)
    try:
        rep = run_scenario(cfg, sweep=sweep)
    except StageError as exc:
        print(f"{cfg.name}: {exc}", file=sys.stderr)
        return cfg.name, False, exc.report.checks
    return cfg.name, rep.passed, rep.checks


def cmd_run(args):
    jobs = args.jobs or _threads()
    if len(args.config) > 1 and jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_one, args.config))
    else:
        results = [_run_one(c, args.out if len(args.config) == 1 else None,
                            False if args.no_sweep else None) for c in args.config]
    ok = True
    for name, passed, checks in results:
        print(f"{name}: {'PASS' if passed else 'FAIL'}")
        for k in sorted(checks):
            print(f"  {k}: {'PASS' if checks[k] else 'FAIL'}")
        ok = ok and passed
    return 0 if ok else 1


def cmd_verify(args):
    from .config import load_config
    from .pipeline import CHECKS, STAGES, StageError, run_scenario
    from dataclasses import replace
    if args.stage not in STAGES:
        print(f"unknown stage {args.stage!r}; choose from {', '.join(STAGES)}", file=sys.stderr)
        return 2
    cfg = load_config(args.config)
    if args.stage == "global":
        cfg = replace(cfg, global_=True)
    try:
        rep = run_scenario(cfg, stop_after=args.stage, sweep=args.stage == "approx",
                           output=False)
    except StageError as exc:
        print(f"{args.stage}: FAIL ({exc})")
        return 1
    print(json.dumps(rep.stages.get(args.stage, {}), indent=1, sort_keys=True))
    key = CHECKS.get(args.stage)
    ok = rep.checks.get(key, True) if key else True
    print(f"{args.stage}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_sweep(args):
    from .config import load_config, parse_list
    from .pipeline import StageError, run_scenario
    from dataclasses import replace
    cfg = load_config(args.config)
    eps = tuple(parse_list(args.eps))
    cfg = replace(cfg, eps=eps, stability=False, global_=False)
    if args.out:
        cfg = replace(cfg, output=args.out)
    try:
        rep = run_scenario(cfg, sweep=True)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    st = rep.stages["approx"]
    print("eps\tsup_error\tpieces\tred_C\tgeneration_C\tbv_sup")
    for r in st["rows"]:
        print(f"{r['eps']}\t{r['sup_error']:.4g}\t{r['pieces']}\t{r['red_C']:.4g}\t"
              f"{r['generation_C']:.4g}\t{r['bv_sup']:.4g}")
    print(f"log-log slope: {st['bv_slope']:.4g}")
    return 0 if rep.passed else 1


def cmd_render(args):
    from .render import render_bundle
    paths = render_bundle(args.report_dir)
    for p in paths:
        print(p)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="urapprox", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the full pipeline and write the report bundle")
    r.add_argument("config", nargs="+")
    r.add_argument("--out", help="output directory (single config only)")
    r.add_argument("--jobs", type=int, default=0, help="parallel scenarios")
    r.add_argument("--no-sweep", action="store_true", help="skip the epsilon sweep")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("verify", help="run up to one stage and report its check")
    v.add_argument("config")
    v.add_argument("--stage", required=True)
    v.set_defaults(func=cmd_verify)
    s = sub.add_parser("sweep-epsilon", help="approximant sweep over eps values")
    s.add_argument("config")
    s.add_argument("--eps", default="0.5,0.25,0.125")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)
    d = sub.add_parser("render", help="redraw plots from a report directory")
    d.add_argument("report_dir")
    d.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    _threads()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    from .config import ConfigError
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
