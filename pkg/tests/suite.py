"""Seeded instance families shared by the acceptance tests."""

import random
from fractions import Fraction

from osdsim.adversaries import RandomParams, gen_random
from osdsim.hst import Hst
from osdsim.instance import Instance, PenaltyFn, Request
from osdsim.engine import run
from osdsim.instance import ClairvoyanceMode
from osdsim.kosd import KServer
from osdsim.oracle import OracleConfig, offline_opt
from osdsim.ps import PreemptiveService


def comb_instance(seed: int):
    """Root, one edge of 16, two children of 8, each with 2-3 short leaves.

    Wide enough that time forwarding sees sibling subtrees over-saturate
    while other requests are still non-critical (6 leaves, depth 3).
    """
    rng = random.Random(20_000 + seed)
    parent = {1: 0, 2: 1, 3: 1}
    exps = {1: 4, 2: 3, 3: 3}
    nxt = 4
    for c in (2, 3):
        for _ in range(rng.randint(2, 3)):
            parent[nxt] = c
            exps[nxt] = rng.choice([1, 2, 2])
            nxt += 1
    tree = Hst(0, parent, exps)
    leaves = tree.leaf_nodes
    reqs = [Request(i, rng.choice(leaves), Fraction(rng.randint(0, 8), 4),
                    PenaltyFn.linear(Fraction(rng.randint(1, 16), 4)))
            for i in range(rng.randint(5, 8))]
    return Instance(tree, tuple(reqs), 1, (0,)).validate()


def suite_instance(seed: int):
    """The k=1 suite: every fourth seed is a comb, the rest are random HSTs."""
    return comb_instance(seed) if seed % 4 == 3 else small_instance(seed)


def small_instance(seed: int, k: int = 1, max_leaves: int = 6, max_depth: int = 3,
                   max_requests: int = 8):
    rng = random.Random(10_000 + seed)
    p = RandomParams(
        n_leaves=rng.randint(2, max_leaves),
        depth=rng.randint(1, max_depth),
        n_requests=rng.randint(1, max_requests),
        # bursts of near-simultaneous arrivals are what drive time forwarding
        max_arrival=rng.choice([0, 1, 2, 4, 8]),
        k=k,
    )
    return gen_random(seed, p)


def ps_record(seed: int):
    inst = suite_instance(seed)
    alg = PreemptiveService()
    rep, _ = run(inst, alg, ClairvoyanceMode.CLAIRVOYANT)
    opt = offline_opt(inst, OracleConfig(max_requests=10))
    return inst, alg, rep, opt


def kosd_record(seed: int):
    inst = small_instance(seed, k=2, max_leaves=6, max_depth=2, max_requests=6)
    alg = KServer()
    rep, _ = run(inst, alg, ClairvoyanceMode.CLAIRVOYANT)
    opt = offline_opt(inst, OracleConfig(max_requests=10, k=2))
    return inst, alg, rep, opt


def ratio(total, opt) -> Fraction:
    if opt == 0:
        return Fraction(1) if total == 0 else Fraction(10**9)
    return Fraction(total) / Fraction(opt)


# ------------------------------------------------------------------ criterion runners
# Each returns a JSON-able dict of exact results (no timings), so reruns can
# be compared byte for byte.

import hashlib
import json
import math


def _s(x):
    return str(x)


def crit_ps_suite(n: int = 500) -> dict:
    rows = []
    for seed in range(n):
        inst, alg, rep, opt = ps_record(seed)
        log = alg.log
        rows.append({
            "seed": seed,
            "h": inst.space.depth,
            "leaves": len(inst.space.leaf_nodes),
            "requests": len(inst.requests),
            "checks": dict(sorted(log.checks.items())),
            "violations": dict(sorted(log.failures.items())),
            "literal_h_exceeded": log.diag_failures["key_cut_fraction_of_critical_h"],
            "service": _s(rep.service_cost),
            "delay": _s(rep.delay_penalty),
            "total": _s(rep.total),
            "unserved": list(rep.unserved),
            "opt": _s(opt.opt_cost),
        })
    return {"rows": rows}


def subset_cases(n: int = 10_000, seed: int = 2024):
    rng = random.Random(seed)
    out = []
    while len(out) < n:
        size = rng.randint(1, 15)
        exps = [rng.randint(0, 12) for _ in range(size)]
        total = sum(2 ** e for e in exps)
        lo = max(exps) + 1
        hi = total.bit_length() - 1
        if hi < lo:
            continue
        out.append((exps, rng.randint(lo, hi)))
    return out


def reachable_sums(vals, cap):
    sums = {0}
    for v in vals:
        sums |= {s + v for s in sums if s + v <= cap}
    return sums


def crit_subset(n: int = 10_000) -> dict:
    from osdsim.ps import subset_exact

    fails = []
    for i, (exps, t) in enumerate(subset_cases(n)):
        vals = [2 ** e for e in exps]
        target = 2 ** t
        exists = target in reachable_sums(vals, target)
        try:
            idx = subset_exact(vals, target)
            ok = sum(vals[j] for j in idx) == target and len(set(idx)) == len(idx)
        except Exception as exc:  # any failure counts
            ok = False
            idx = repr(exc)
        if not ok or not exists:
            fails.append({"case": i, "exps": exps, "t": t, "exists": exists, "got": idx})
    return {"cases": n, "failures": fails}


def crit_star_gap() -> dict:
    from osdsim.adversaries import gen_star_rates
    from osdsim.oracle import BallGrowing

    inst = gen_star_rates(20, 16)
    ps, _ = run(inst, PreemptiveService(), trace=False)
    ball, _ = run(inst, BallGrowing(), trace=False)
    return {"ps": _s(ps.total), "ball": _s(ball.total), "ps_unserved": ps.unserved,
            "ratio": _s(Fraction(ball.total) / Fraction(ps.total))}


def crit_paging(n: int = 200) -> dict:
    from osdsim.paging import (
        classical_paging,
        page_metric_instance,
        paging_with_delay,
        random_page_instance,
        reduce_stream,
    )

    rows = []
    for seed in range(n):
        n_req = 4 + seed % 9
        inst = random_page_instance(seed, n_pages=6, k=2, n_requests=n_req)
        pol = {}
        for name in ("marking_det", "lru", "marking_rand", "belady"):
            rep = paging_with_delay(inst, name, seed=seed)
            pol[name] = [_s(rep.alg_I), rep.alg_I_prime]
        stream = reduce_stream(inst.requests).pages
        md = classical_paging(stream, "marking_det", 2).swaps
        bel = classical_paging(stream, "belady", 2).swaps
        row = {"seed": seed, "requests": n_req, "policies": pol, "marking_det": md, "belady": bel}
        if n_req <= 8:
            row["opt_I"] = _s(offline_opt(page_metric_instance(inst),
                                          OracleConfig(max_requests=10, k=2)).opt_cost)
        rows.append(row)
    return {"rows": rows}


def crit_adversary(phases: int = 10) -> dict:
    from osdsim.adversaries import nonclairvoyant_adversary
    from osdsim.paging import DemandLRU, ThresholdPaging

    out = []
    for W in (2, 4):
        for make in (PreemptiveService, DemandLRU, ThresholdPaging):
            res = nonclairvoyant_adversary(W, phases, make())
            d = res.to_dict()
            d["ratio_exact"] = _s(Fraction(res.alg_cost) / res.witness_cost)
            out.append(d)
    return {"runs": out}


def crit_embedding(n_metrics: int = 20, samples: int = 500) -> dict:
    from osdsim.hst import frt_embed, random_metric

    rows = []
    for mi in range(n_metrics):
        m = random_metric(16, seed=mi)
        acc = {}
        dom = 0
        for i in range(samples):
            e = frt_embed(m, mi * 1_000_003 + i)
            dom += e.dominating
            for pair, r in e.distortion.items():
                acc[pair] = acc.get(pair, Fraction(0)) + r
        worst = max(acc.items(), key=lambda kv: (kv[1], kv[0]))
        rows.append({"metric": mi, "dominating": dom, "samples": samples,
                     "worst_pair": list(worst[0]), "worst_mean": _s(worst[1] / samples)})
    return {"rows": rows, "bound": repr(8 * math.log(16))}


def crit_kosd(n: int = 200) -> dict:
    rows = []
    for seed in range(n):
        inst, alg, rep, opt = kosd_record(seed)
        log = alg.log
        rows.append({
            "seed": seed,
            "h": inst.space.depth,
            "phases": len(alg.phases),
            "noservers_checks": log.checks["no_servers_in_relevant_subtree"],
            "violations": dict(sorted(log.failures.items())),
            "service": _s(rep.service_cost),
            "delay": _s(rep.delay_penalty),
            "total": _s(rep.total),
            "unserved": list(rep.unserved),
            "opt": _s(opt.opt_cost),
        })
    return {"rows": rows}


CRITERIA = {
    "1+4": crit_ps_suite,
    "2": crit_subset,
    "3": crit_star_gap,
    "5": crit_paging,
    "6": crit_adversary,
    "7": crit_embedding,
    "8": crit_kosd,
}


def digest(result: dict) -> str:
    text = json.dumps(result, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


if __name__ == "__main__":
    # rerun every criterion and print their digests as JSON
    print(json.dumps({k: digest(f()) for k, f in CRITERIA.items()}, sort_keys=True))
