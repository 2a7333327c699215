"""Command-line front end.

Exit codes: 0 on success, 1 when an instance or metric fails validation
(or a run hits an error), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from typing import List, Optional

from .adversaries import (
    RandomParams,
    gen_random,
    gen_spatial,
    gen_star_deadlines,
    gen_star_rates,
    nonclairvoyant_adversary,
)
from .engine import format_reports, run
from .errors import OsdError
from .hst import Hst, Metric, frt_embed
from .instance import ClairvoyanceMode, Instance, instance_from_dict, parse_instance, serialize_instance
from .kosd import KServer
from .oracle import BallGrowing, OracleConfig, offline_opt
from .paging import (
    POLICIES,
    DemandLRU,
    ThresholdPaging,
    alternating_requests,
    paging_with_delay,
    random_page_instance,
    weighted_star_instance,
)
from .ps import PreemptiveService

FAMILIES = ("star-rates", "star-deadlines", "spatial", "random", "pages", "weighted")
ALGORITHMS = ("ps", "kosd", "ball", "paging", "lru", "threshold")
ADVERSARY_ALGORITHMS = ("ps", "lru", "threshold", "ball")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _frac(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="osdsim", description="Online service with delay: simulator and experiments.")
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser)

    g = sub.add_parser("generate", help="write a generated instance as JSON")
    g.add_argument("family", choices=FAMILIES)
    g.add_argument("--n", type=int, default=5)
    g.add_argument("--W", type=int, default=4)
    g.add_argument("--m", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-leaves", type=int, default=4)
    g.add_argument("--depth", type=int, default=2)
    g.add_argument("--n-requests", type=int, default=6)
    g.add_argument("--k", type=int, default=1)
    g.add_argument("--rounds", type=int, default=8)
    g.add_argument("-o", "--output")

    r = sub.add_parser("run", help="simulate one algorithm")
    r.add_argument("--instance", required=True)
    r.add_argument("--algorithm", required=True, choices=ALGORITHMS)
    r.add_argument("--k", type=int)
    r.add_argument("--mode", choices=("clairvoyant", "nonclairvoyant"), default="clairvoyant")
    r.add_argument("--horizon", type=_frac)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--format", choices=("json", "csv", "table"), default="table")
    r.add_argument("--policy", choices=POLICIES, default="marking_det")
    r.add_argument("--trace", help="write the event trace as JSON lines")

    c = sub.add_parser("compare", help="run several algorithms and the offline optimum")
    c.add_argument("--instance", required=True)
    c.add_argument("--algorithms", required=True, help="comma list from %s and opt" % ",".join(ALGORITHMS))
    c.add_argument("--mode", choices=("clairvoyant", "nonclairvoyant"), default="clairvoyant")
    c.add_argument("--horizon", type=_frac)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--format", choices=("json", "csv", "table"), default="table")

    e = sub.add_parser("embed", help="sample FRT trees and report distortion")
    e.add_argument("--metric", required=True)
    e.add_argument("--samples", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)

    v = sub.add_parser("validate", help="check an instance file")
    v.add_argument("--instance", required=True)

    a = sub.add_parser("adversary", help="adaptive lower-bound construction against a nonclairvoyant policy")
    a.add_argument("--W", type=int, required=True)
    a.add_argument("--phases", type=int, required=True)
    a.add_argument("--algorithm", choices=ADVERSARY_ALGORITHMS, default="ps")
    a.add_argument("--eps", type=_frac, default=Fraction(1, 4))
    return p


# ------------------------------------------------------------------ helpers

def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _mode(name: str) -> ClairvoyanceMode:
    return ClairvoyanceMode.CLAIRVOYANT if name == "clairvoyant" else ClairvoyanceMode.NONCLAIRVOYANT


def _algorithm(name: str):
    return {
        "ps": PreemptiveService,
        "kosd": KServer,
        "ball": BallGrowing,
        "lru": DemandLRU,
        "threshold": ThresholdPaging,
    }[name]()


def _with_k(inst: Instance, k: Optional[int]) -> Instance:
    if k is None or k == inst.k:
        return inst
    start = tuple(inst.start[:k]) + (inst.start[0],) * max(0, k - len(inst.start))
    return Instance(inst.space, inst.requests, k, start, inst.pages).validate()


def _invariant_line(inv) -> str:
    if not inv:
        return "invariants: none recorded"
    checks = inv.get("checks", 0)
    if isinstance(checks, dict):
        checks = sum(checks.values())
    viol = inv.get("violations", [])
    viol = sum(viol.values()) if isinstance(viol, dict) else len(viol)
    diag = inv.get("diagnostics", {})
    parts = []
    for name, d in sorted(diag.items()):
        parts.append(f"{name} {d['exceeded']}/{d['checked']}" if isinstance(d, dict) else f"{name} {d}")
    dtxt = ", ".join(parts) or "none"
    return f"invariants: checks={checks} violations={viol} diagnostics exceeded: {dtxt}"


def _emit_rows(rows: List[dict], fmt: str, out) -> None:
    out.write(format_reports(rows, fmt))
    if fmt != "json":
        for row in rows:
            out.write(f"{row['name']} {_invariant_line(row.get('invariants'))}\n")


def _paging_row(inst: Instance, policy: str, seed: int) -> dict:
    rep = paging_with_delay(inst, policy, seed)
    return {
        "name": f"paging:{policy}",
        "service_cost": str(rep.faults),
        "delay_penalty": str(rep.delay_penalty),
        "total": str(rep.alg_I),
        "phases": len(rep.stream.emissions),
        "served": len(rep.served_at),
        "alg_I_prime": rep.alg_I_prime,
        "invariants": {"checks": 1, "violations": [] if rep.alg_I <= 2 * rep.alg_I_prime
                       else ["alg_I exceeds twice alg_I'"], "diagnostics": {}},
    }


def _fmt(x) -> str:
    if isinstance(x, float):
        return "inf" if math.isinf(x) else repr(x)
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


# ------------------------------------------------------------------ subcommands

def cmd_generate(ns, out) -> int:
    if ns.family == "star-rates":
        inst = gen_star_rates(ns.n, ns.W)
    elif ns.family == "star-deadlines":
        inst = gen_star_deadlines(ns.n, ns.W)
    elif ns.family == "spatial":
        inst = gen_spatial(ns.m)
    elif ns.family == "random":
        inst = gen_random(ns.seed, RandomParams(n_leaves=ns.n_leaves, depth=ns.depth,
                                                n_requests=ns.n_requests, k=ns.k))
    elif ns.family == "pages":
        inst = random_page_instance(ns.seed, n_pages=ns.n, k=ns.k, n_requests=ns.n_requests)
    else:
        weights = {0: ns.W, 1: 1}
        inst = weighted_star_instance(weights, alternating_requests(0, 1, weights, ns.rounds), ns.k)
    text = serialize_instance(inst)
    if ns.output:
        with open(ns.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        out.write(text)
    return 0


def cmd_run(ns, out) -> int:
    inst = _with_k(parse_instance(_read(ns.instance)), ns.k)
    if ns.algorithm == "paging":
        _emit_rows([_paging_row(inst, ns.policy, ns.seed)], ns.format, out)
        return 0
    rep, tr = run(inst, _algorithm(ns.algorithm), _mode(ns.mode), ns.horizon, ns.seed,
                  trace=bool(ns.trace))
    if ns.trace:
        with open(ns.trace, "w", encoding="utf-8") as fh:
            fh.write(tr.to_jsonl())
    row = rep.to_dict()
    row["name"] = ns.algorithm
    _emit_rows([row], ns.format, out)
    return 0


def cmd_compare(ns, out) -> int:
    inst = parse_instance(_read(ns.instance))
    names = [x.strip() for x in ns.algorithms.split(",") if x.strip()]
    bad = [x for x in names if x not in ALGORITHMS + ("opt",)]
    if bad or not names:
        raise UsageError(f"osdsim compare: unknown algorithm(s) {', '.join(bad) or '(none)'}")
    rows, reports = [], []
    for name in names:
        if name == "opt":
            continue
        if name == "paging":
            rows.append(_paging_row(inst, "marking_det", ns.seed))
            continue
        rep, _ = run(inst, _algorithm(name), _mode(ns.mode), ns.horizon, ns.seed, trace=False)
        reports.append((name, rep))
        d = rep.to_dict()
        d["name"] = name
        rows.append(d)
    if "opt" in names:
        res = offline_opt(inst, OracleConfig())
        base = res.opt_cost
        rows.append({"name": "opt", "service_cost": _fmt(res.movement), "delay_penalty": _fmt(res.delay),
                     "total": _fmt(res.opt_cost), "served": len(inst.requests)})
    else:
        # without the oracle, ratios are taken against the first algorithm listed
        base = Fraction(rows[0]["total"]) if rows and rows[0]["total"] != "inf" else None
    for row in rows:
        tot = row["total"]
        if base is None or base == math.inf or tot == "inf":
            row["ratio"] = None
        elif base == 0:
            row["ratio"] = "1.0000" if Fraction(tot) == 0 else None
        else:
            row["ratio"] = f"{float(Fraction(tot) / base):.4f}"
    _emit_rows(rows, ns.format, out)
    return 0


def _load_metric(text: str) -> Metric:
    doc = json.loads(text)
    if isinstance(doc, dict) and "space" in doc:
        inst = instance_from_dict(doc)
        if isinstance(inst.space, Hst):
            raise OsdError("embed needs a metric, not an HST")
        return inst.space
    body = doc.get("metric", doc) if isinstance(doc, dict) else None
    if not isinstance(body, dict) or "points" not in body or "dist" not in body:
        raise OsdError("metric file needs 'points' and 'dist'")
    dist = tuple(tuple(Fraction(str(x)) for x in row) for row in body["dist"])
    return Metric(tuple(body["points"]), dist)


def cmd_embed(ns, out) -> int:
    m = _load_metric(_read(ns.metric))
    probs = m.violations()
    if probs:
        for p in probs:
            sys.stderr.write(p + "\n")
        return 1
    if ns.samples < 1:
        raise UsageError("osdsim embed: --samples must be at least 1")
    acc = {}
    dominated = 0
    depths = []
    for i in range(ns.samples):
        s = frt_embed(m, ns.seed * 1_000_003 + i)
        dominated += s.dominating
        depths.append(s.hst.depth)
        for pair, r in s.distortion.items():
            acc[pair] = acc.get(pair, Fraction(0)) + r
    means = {pair: v / ns.samples for pair, v in acc.items()}
    worst = max(means.items(), key=lambda kv: (kv[1], kv[0])) if means else None
    n = len(m.points)
    report = {
        "points": n,
        "samples": ns.samples,
        "seed": ns.seed,
        "dominating_fraction": f"{dominated / ns.samples:.6f}",
        "max_pair_mean_distortion": f"{float(worst[1]):.6f}" if worst else None,
        "worst_pair": list(worst[0]) if worst else None,
        "avg_pair_mean_distortion": f"{float(sum(means.values()) / len(means)):.6f}" if means else None,
        "bound_8_ln_n": f"{8 * math.log(n):.6f}" if n > 1 else None,
        "max_depth": max(depths),
    }
    out.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_validate(ns, out) -> int:
    inst = parse_instance(_read(ns.instance))
    kind = "hst" if isinstance(inst.space, Hst) else ("pages" if inst.pages else "metric")
    out.write(f"ok: {kind} space, k={inst.k}, {len(inst.requests)} requests\n")
    return 0


def cmd_adversary(ns, out) -> int:
    res = nonclairvoyant_adversary(ns.W, ns.phases, _algorithm(ns.algorithm), eps=ns.eps)
    out.write(json.dumps(res.to_dict(), sort_keys=True, indent=2) + "\n")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "compare": cmd_compare,
    "embed": cmd_embed,
    "validate": cmd_validate,
    "adversary": cmd_adversary,
}


def main(argv: Optional[List[str]] = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.cmd is None:
            raise UsageError("osdsim: a subcommand is required")
        return COMMANDS[ns.cmd](ns, out)
    except UsageError as exc:
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"{exc}\n")
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (OsdError, OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
