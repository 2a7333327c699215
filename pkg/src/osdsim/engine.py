"""Event-driven simulation clock and cost accounting.

The engine owns time.  Algorithms see requests through a
:class:`RequestView`, report when they next want to act, and return
:class:`Decision` objects that the engine checks and executes instantly.
"""

from __future__ import annotations

import heapq
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import AlgorithmContractViolation, PastTime
from .geometry import Point, at, common_edge, normalize, point_distance
from .hst import Hst, Metric, frt_embed
from .instance import (
    ClairvoyanceMode,
    Instance,
    Request,
    RequestView,
    penalty_at,
    service_penalty,
)

INF = math.inf
LOOP_GUARD = 100000


@dataclass
class Move:
    server: int
    src: Point
    dst: Point


@dataclass
class Decision:
    moves: List[Move]
    served: List[int]
    info: dict = field(default_factory=dict)


class Algorithm:
    """Base class for online algorithms driven by :func:`run`."""

    name = "algorithm"
    needs_tree = True

    def reset(self, tree, instance: Instance, view: RequestView, seed: int = 0):
        self.tree = tree
        self.instance = instance
        self.view = view
        self.seed = seed

    def on_arrival(self, request: Request, now: Fraction):
        pass

    def on_tick(self, now: Fraction):
        """Called at penalty breakpoints and deadlines, and after adversary updates."""

    def next_decision_time(self, now: Fraction) -> Optional[Fraction]:
        return None

    def on_decision(self, now: Fraction) -> Optional[Decision]:
        return None

    def invariant_summary(self) -> Optional[dict]:
        return None


class Adversary:
    """Adaptive request source; may append requests or tighten pending ones."""

    def initial(self) -> List[Request]:
        return []

    def next_time(self, now: Fraction) -> Optional[Fraction]:
        return None

    def act(self, now: Fraction, state: "EngineState") -> Tuple[List[Request], List[Request]]:
        return [], []


@dataclass
class CostReport:
    algorithm: str
    service_cost: Fraction = Fraction(0)
    delay_penalty: object = Fraction(0)
    phases: List[dict] = field(default_factory=list)
    unserved: List[int] = field(default_factory=list)
    served_at: Dict[int, Fraction] = field(default_factory=dict)
    server_distance: List[Fraction] = field(default_factory=list)
    physical_service_cost: Optional[Fraction] = None
    invariants: Optional[dict] = None
    end_time: Fraction = Fraction(0)

    @property
    def total(self):
        return self.service_cost + self.delay_penalty

    def to_dict(self) -> dict:
        d = {
            "algorithm": self.algorithm,
            "service_cost": _s(self.service_cost),
            "delay_penalty": _s(self.delay_penalty),
            "total": _s(self.total),
            "phases": len(self.phases),
            "served": len(self.served_at),
            "unserved": list(self.unserved),
            "end_time": _s(self.end_time),
        }
        if self.physical_service_cost is not None:
            d["physical_service_cost"] = _s(self.physical_service_cost)
        if self.invariants is not None:
            d["invariants"] = self.invariants
        return d


def _s(x) -> str:
    if isinstance(x, float):
        return "inf" if x == INF else repr(x)
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def _jsonable(x):
    if isinstance(x, Fraction):
        return _s(x)
    if isinstance(x, float):
        return _s(x)
    if isinstance(x, Point):
        return [x.node, _s(x.offset)]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, set, frozenset)):
        items = sorted(x) if isinstance(x, (set, frozenset)) else x
        return [_jsonable(v) for v in items]
    return x


class Trace:
    """Ordered event log with exact timestamps."""

    def __init__(self):
        self.events: List[dict] = []

    def add(self, t: Fraction, kind: str, **data):
        if self.events and t < self.events[-1]["t"]:
            raise PastTime(f"trace event at {t} after {self.events[-1]['t']}")
        self.events.append({"t": t, "kind": kind, **data})

    def kinds(self, kind: str) -> List[dict]:
        return [e for e in self.events if e["kind"] == kind]

    def to_jsonl(self) -> str:
        out = io.StringIO()
        for e in self.events:
            out.write(json.dumps(_jsonable(e), sort_keys=True))
            out.write("\n")
        return out.getvalue()


class EngineState:
    """Read-only view of the run handed to adversaries."""

    def __init__(self):
        self.arrived: Dict[int, Request] = {}
        self.pending: Dict[int, Request] = {}
        self.served_at: Dict[int, Fraction] = {}
        self.positions: List[Point] = []
        self.now = Fraction(0)


def _hst_view(instance: Instance, seed: int):
    """Return (tree, instance on the tree, embedding or None)."""
    if isinstance(instance.space, Hst):
        return instance.space, instance, None
    sample = frt_embed(instance.space, seed)
    leaves = sample.hst.leaves
    reqs = [Request(r.id, leaves[r.leaf], r.arrival, r.penalty) for r in instance.requests]
    inst = Instance(sample.hst, tuple(reqs), instance.k, tuple(leaves[s] for s in instance.start))
    return sample.hst, inst, sample


def _rep_leaf(tree, p: Point) -> int:
    return min(v for v in tree.subtree_nodes(p.node) if not tree.children.get(v))


def run(instance: Instance, algorithm: Algorithm,
        mode: ClairvoyanceMode = ClairvoyanceMode.CLAIRVOYANT,
        horizon=None, seed: int = 0, adversary: Optional[Adversary] = None,
        trace: bool = True) -> Tuple[CostReport, Trace]:
    """Simulate ``algorithm`` on ``instance``; returns the cost report and the event trace."""
    instance.validate()
    tree, inst, sample = _hst_view(instance, seed)
    horizon = None if horizon is None else Fraction(horizon)
    if horizon is not None and horizon < inst.horizon_hint:
        raise PastTime(f"horizon {horizon} precedes the last arrival {inst.horizon_hint}")
    view = RequestView(mode)
    algorithm.reset(tree, inst, view, seed)
    tr = Trace()
    rep = CostReport(algorithm.name, server_distance=[Fraction(0)] * inst.k)
    st = EngineState()
    st.positions = [at(s) for s in inst.start]
    phys = None
    if sample is not None:
        metric: Metric = instance.space
        leaf_point = sample.hst.point_of_leaf()
        phys_pos = [leaf_point[_rep_leaf(tree, p)] for p in st.positions]
        phys = Fraction(0)

    arrivals = list(inst.requests)
    if adversary is not None:
        arrivals += adversary.initial()
        arrivals.sort(key=lambda r: (r.arrival, r.id))
    ai = 0
    ticks: List[Fraction] = []
    now = Fraction(0)

    def admit(r: Request, update=False):
        if not update:
            if r.id in st.arrived:
                raise AlgorithmContractViolation(f"duplicate request id {r.id}")
            st.arrived[r.id] = r
            st.pending[r.id] = r
            view.admit(r)
            if trace:
                tr.add(now, "arrival", request=r.id, leaf=r.leaf)
            algorithm.on_arrival(r, now)
        else:
            st.arrived[r.id] = r
            if r.id in st.pending:
                st.pending[r.id] = r
            view.update(r)
            if trace:
                tr.add(now, "update", request=r.id)
        for x in r.tick_times():
            if x >= now:
                heapq.heappush(ticks, x)

    def execute(d: Decision):
        nonlocal phys
        visited = {p.node for p in st.positions if p.offset == 0}
        walk_leaves: Dict[int, List[int]] = {}
        moved = Fraction(0)
        traversed = []
        for m in d.moves:
            if not 0 <= m.server < inst.k:
                raise AlgorithmContractViolation(f"unknown server {m.server}")
            src = normalize(tree, m.src)
            dst = normalize(tree, m.dst)
            if src != st.positions[m.server]:
                raise AlgorithmContractViolation(
                    f"server {m.server} is at {st.positions[m.server]}, move starts at {src}")
            if src == dst:
                continue
            e = common_edge(tree, src, dst)
            if e is None:
                raise AlgorithmContractViolation(f"move {src} -> {dst} does not stay on one edge")
            dist = point_distance(tree, src, dst)
            moved += dist
            rep.server_distance[m.server] += dist
            st.positions[m.server] = dst
            traversed.append(e)
            if dst.offset == 0:
                visited.add(dst.node)
                if not tree.children.get(dst.node):
                    walk_leaves.setdefault(m.server, []).append(dst.node)
            if trace:
                tr.add(now, "traverse", server=m.server, edge=e, src=src, dst=dst)
        served_now = []
        for rid in d.served:
            r = st.pending.get(rid)
            if r is None:
                raise AlgorithmContractViolation(f"request {rid} is not pending")
            if r.leaf not in visited:
                raise AlgorithmContractViolation(f"request {rid} at {r.leaf} was not visited")
            pen = service_penalty(r.penalty, now - r.arrival)
            rep.delay_penalty = rep.delay_penalty + pen
            rep.served_at[rid] = now
            st.served_at[rid] = now
            del st.pending[rid]
            served_now.append(rid)
            if trace:
                tr.add(now, "serve", request=rid, penalty=pen)
        rep.service_cost += moved
        if phys is not None:
            for s in range(inst.k):
                target = leaf_point[_rep_leaf(tree, st.positions[s])]
                stops = [leaf_point[v] for v in walk_leaves.get(s, [])] + [target]
                for q in stops:
                    phys += metric.d(phys_pos[s], q)
                    phys_pos[s] = q
        info = dict(d.info)
        info.update({"time": now, "served": served_now, "cost": moved, "edges": traversed})
        rep.phases.append(info)

    loop = 0
    while True:
        cands = []
        if ai < len(arrivals):
            cands.append(arrivals[ai].arrival)
        while ticks and ticks[0] < now:
            heapq.heappop(ticks)
        if ticks:
            cands.append(ticks[0])
        if adversary is not None:
            ta = adversary.next_time(now)
            if ta is not None:
                cands.append(ta)
        td = algorithm.next_decision_time(now)
        if td is not None:
            if td < now:
                raise AlgorithmContractViolation(f"decision time {td} is in the past ({now})")
            cands.append(td)
        if not cands:
            break
        t = min(cands)
        if horizon is not None and t > horizon:
            break
        if t < now:
            raise PastTime(f"event at {t} before {now}")
        now = t
        view.now = now
        st.now = now
        while ai < len(arrivals) and arrivals[ai].arrival == now:
            admit(arrivals[ai])
            ai += 1
        ticked = False
        if adversary is not None and adversary.next_time(now) == now:
            new, upd = adversary.act(now, st)
            for r in new:
                admit(r)
            for r in upd:
                admit(r, update=True)
            ticked = True
        while ticks and ticks[0] == now:
            heapq.heappop(ticks)
            ticked = True
        if ticked:
            algorithm.on_tick(now)
        guard = 0
        while algorithm.next_decision_time(now) == now:
            d = algorithm.on_decision(now)
            guard += 1
            if guard > LOOP_GUARD:
                raise AlgorithmContractViolation(f"algorithm keeps deciding at time {now}")
            if d is None:
                continue
            if trace:
                tr.add(now, "phase", **{k: v for k, v in d.info.items() if k in ("major_edge", "key_edges")})
            execute(d)
            if trace:
                for e in sorted(set(rep.phases[-1]["edges"])):
                    tr.add(now, "reset", edge=e)
        loop += 1
        if loop > 50 * LOOP_GUARD:
            raise AlgorithmContractViolation("simulation does not terminate")

    end = now if horizon is None else max(horizon, now)
    rep.end_time = end
    for rid in sorted(st.pending):
        r = st.pending[rid]
        rep.unserved.append(rid)
        if end >= r.arrival:
            rep.delay_penalty = rep.delay_penalty + penalty_at(r.penalty, end - r.arrival)
    rep.physical_service_cost = phys
    rep.invariants = algorithm.invariant_summary()
    return rep, tr


@dataclass
class Comparison:
    rows: List[Tuple[str, CostReport]]
    opt: Optional[Fraction] = None

    def ratio(self, rep: CostReport):
        if self.opt is None or rep.total == INF:
            return None
        if self.opt == 0:
            return Fraction(1) if rep.total == 0 else None
        return Fraction(rep.total) / self.opt

    def table(self) -> List[dict]:
        out = []
        for name, rep in self.rows:
            d = rep.to_dict()
            d["name"] = name
            r = self.ratio(rep)
            d["ratio"] = None if r is None else _s(r)
            out.append(d)
        return out


def compare(instance: Instance, algorithms: Sequence[Tuple[str, Algorithm]],
            oracle=None, mode: ClairvoyanceMode = ClairvoyanceMode.CLAIRVOYANT,
            horizon=None, seed: int = 0) -> Comparison:
    """Run every algorithm with the same configuration; ``oracle(instance)`` gives the optimum."""
    if not algorithms:
        raise ValueError("compare needs at least one algorithm")
    rows = []
    for name, alg in algorithms:
        rep, _ = run(instance, alg, mode, horizon, seed, trace=False)
        rows.append((name, rep))
    opt = None if oracle is None else oracle(instance)
    return Comparison(rows, opt)


# ------------------------------------------------------------------ report formatting

REPORT_FIELDS = ("name", "service_cost", "delay_penalty", "total", "phases", "served", "ratio")


def format_reports(rows: List[dict], fmt: str = "table") -> str:
    if fmt == "json":
        return json.dumps(rows, sort_keys=True, indent=2) + "\n"
    fields = [f for f in REPORT_FIELDS if any(f in r for r in rows)]
    cells = [[_cell(r.get(f)) for f in fields] for r in rows]
    if fmt == "csv":
        import csv

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(fields)
        w.writerows(cells)
        return buf.getvalue()
    widths = [max(len(f), *(len(c[i]) for c in cells)) for i, f in enumerate(fields)]
    lines = ["  ".join(f.ljust(w) for f, w in zip(fields, widths))]
    for c in cells:
        lines.append("  ".join(x.ljust(w) for x, w in zip(c, widths)))
    return "\n".join(x.rstrip() for x in lines) + "\n"


def _cell(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, list):
        return str(len(x))
    return str(x)
