"""Command line: ``run`` scenarios, ``verify`` the acceptance suite, print Newton ``tables``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

from .charforms import newton_table, wp_str
from .lab import ExperimentReport
from .scenarios import BUILTIN, ConfigError, ParseError, build_scenario, load_config, run_target


def _num(x: float) -> str:
    """Decimal string with 15 significant digits."""
    x = float(x)
    if not math.isfinite(x):
        return str(x)
    return f"{x:.14e}"


def _cnum(z) -> dict:
    z = complex(z)
    return {"re": _num(z.real), "im": _num(z.imag)}


def report_record(r: ExperimentReport) -> dict:
    m = r.measured
    rec = {
        "scenario": r.scenario,
        "target": r.target,
        "epsilons": [_num(e) for e in m.epsilons],
        "pairings": [_cnum(p) for p in m.pairings],
        "limit": _cnum(m.limit),
        "error": _num(m.error),
        "alpha": None if m.alpha is None else _num(m.alpha),
        "reference": None if r.reference is None else _cnum(r.reference.value),
        "provenance": None if r.reference is None else r.reference.provenance,
        "pass": r.passed,
        "tolerance": _num(r.tolerance),
        "runtime_ms": None if r.runtime_ms is None else round(r.runtime_ms, 3),
    }
    if "error" in r.notes:
        rec["runtime_error"] = str(r.notes["error"])
    return rec


def reports_json(reports) -> str:
    return json.dumps([report_record(r) for r in reports], indent=2) + "\n"


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in text)


def write_outputs(reports, out: str, prefix_scenario: bool = False) -> None:
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "results.json"), "w") as fh:
        fh.write(reports_json(reports))
    for r in reports:
        name = f"{_slug(r.scenario)}__{_slug(r.target)}" if prefix_scenario else _slug(r.target)
        m = r.measured
        with open(os.path.join(out, name + ".csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epsilon", "re", "im", "cells", "depth"])
            for j, e in enumerate(m.epsilons):
                p = complex(m.pairings[j])
                cells = m.cells[j] if j < len(m.cells) else ""
                depth = m.depth[j] if j < len(m.depth) else ""
                w.writerow([_num(e), _num(p.real), _num(p.imag), cells, depth])


def _overrides(args) -> dict:
    ov: dict = {}
    sched = {k: v for k, v in (("eps_max", args.eps_max), ("eps_ratio", args.eps_ratio),
                                 ("eps_count", args.eps_count)) if v is not None}
    quad = {k: v for k, v in (("order", args.quad_order), ("max_depth", args.quad_depth),
                                ("tol", args.tol)) if v is not None}
    if sched:
        ov["schedule"] = sched
    if quad:
        ov["quadrature"] = quad
    return ov


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default="results", help="output directory (results.json and CSV tables)")
    p.add_argument("--eps-max", type=float)
    p.add_argument("--eps-ratio", type=float)
    p.add_argument("--eps-count", type=int)
    p.add_argument("--quad-order", type=int)
    p.add_argument("--quad-depth", type=int)
    p.add_argument("--tol", type=float, help="relative quadrature tolerance")
    p.add_argument("--chi", choices=("default", "alt"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timings", action="store_true", help="record runtime_ms (otherwise null)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rescurrents", description="Residue and Chern currents by regularization.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the targets of a scenario")
    run.add_argument("--scenario", required=True,
                     help=f"config file or built-in name ({', '.join(BUILTIN)}), e.g. 'p2-example k=3 l=1 m=1'")
    run.add_argument("--target", action="append", help="run only these targets")
    _common(run)
    ver = sub.add_parser("verify", help="run the acceptance suite")
    ver.add_argument("--suite", default="paper", choices=("paper",))
    ver.add_argument("--criteria", help="comma separated subset, e.g. 1,2,3")
    _common(ver)
    tab = sub.add_parser("tables", help="print Newton polynomial tables")
    tab.add_argument("--newton", type=int, required=True, metavar="L")
    return ap


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.scenario)
        for sec, kv in _overrides(args).items():
            cfg = cfg.with_overrides(sec, **kv)
        if args.chi:
            cfg = cfg.with_overrides("cutoff", chi=args.chi)
        cfg = cfg.with_overrides("quadrature", workers=args.workers)
        sc = build_scenario(cfg)
    except (ConfigError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    targets = args.target or list(cfg.targets)
    unknown = [t for t in targets if t not in cfg.targets]
    if unknown:
        print(f"error: unknown target(s) {', '.join(unknown)}", file=sys.stderr)
        return 2
    reports = []
    for t in targets:
        r = run_target(sc, t, timings=args.timings)
        reports.append(r)
        print(_summary(r), flush=True)
    write_outputs(reports, args.out)
    return 0 if all(r.passed is not False for r in reports) else 1


def _summary(r: ExperimentReport) -> str:
    from .acceptance import describe

    return f"{r.scenario} / {describe(r)}"


def cmd_verify(args) -> int:
    from .acceptance import Suite, SuiteOptions

    opts = SuiteOptions(_overrides(args), args.chi or "default", args.workers, args.timings)
    suite = Suite(opts)
    numbers = [int(k) for k in args.criteria.split(",")] if args.criteria else range(1, 9)
    results = suite.run(numbers, echo=lambda s: print(s, flush=True))
    write_outputs(suite.all_reports(), args.out, prefix_scenario=True)
    print()
    print(f"{'criterion':<10} {'result':<7} {'seconds':>9}")
    for r in results:
        print(f"{r.number:<10} {'PASS' if r.passed else 'FAIL':<7} {r.runtime_s:>9.1f}")
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return 0 if ok else 1


def cmd_tables(args) -> int:
    L = args.newton
    if not 1 <= L <= 12:
        print("error: L must be between 1 and 12", file=sys.stderr)
        return 2
    tab = newton_table(L)
    for title, polys in (("Q (power sums from elementary)", tab.Q),
                         ("Q~ (ch_l minus leading c_l term)", tab.Qt),
                         ("Q^ (c_l minus leading ch_l term)", tab.Qh)):
        print(title)
        for l in range(1, L + 1):
            print(f"  {l}: {wp_str(polys[l]) if polys[l] else '0'}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return {"run": cmd_run, "verify": cmd_verify, "tables": cmd_tables}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
