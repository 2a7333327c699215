"""The preemptive service algorithm as an engine plug-in."""

from __future__ import annotations

from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from ..engine import Algorithm, Decision, Move
from ..errors import InternalConsistencyError
from ..geometry import at
from ..instance import Request
from .counters import Counters, RateSchedule, schedule_from_penalty, simulate
from .planner import (
    InvariantLog,
    PlanContext,
    ServicePlan,
    apply_plan,
    build_plan,
    major_edge,
    x_scope,
)


def provenance_problems(tree, counters: Counters, unserved: Dict[int, int], server: int) -> List[str]:
    """Weight on e must come from unserved requests inside X_e."""
    out = []
    for e in sorted(counters.contrib):
        scope = None
        for rid in sorted(counters.contrib[e]):
            if rid not in unserved:
                out.append(f"edge {e} holds weight of served request {rid}")
                continue
            if scope is None:
                scope = x_scope(tree, server, e)
            if unserved[rid] not in scope.nodes:
                out.append(f"edge {e} holds weight of request {rid} outside X_e")
    return out


class WaitingState:
    """Counters, server position and pending requests of a single server."""

    def __init__(self, tree, server: int):
        self.tree = tree
        self.server = server
        self.counters = Counters(tree.length)
        self.unserved: Dict[int, int] = {}
        self.schedules: Dict[int, RateSchedule] = {}
        self.clock = Fraction(0)
        self._major: Dict[int, Optional[int]] = {}
        self._path: Dict[int, List[int]] = {}

    def add(self, rid: int, leaf: int, schedule: RateSchedule):
        self.unserved[rid] = leaf
        self.schedules[rid] = schedule
        self._route(rid)

    def _route(self, rid: int):
        leaf = self.unserved[rid]
        self._path[rid] = self.tree.path_edges(leaf, self.server)
        self._major[rid] = major_edge(self.tree, leaf, self.server)

    def moved(self, server: int):
        self.server = server
        for rid in self.unserved:
            self._route(rid)

    def drop(self, rid: int):
        del self.unserved[rid]
        self.schedules.pop(rid, None)
        self._path.pop(rid, None)
        self._major.pop(rid, None)

    def major(self, rid: int) -> Optional[int]:
        return self._major[rid]

    def triggered(self, counters: Optional[Counters] = None) -> List[int]:
        c = counters or self.counters
        return sorted({m for m in self._major.values() if m is not None and m in c.sat})

    def accrue(self, until: Fraction):
        """Advance the real counters to ``until``, stopping early at a trigger."""
        paths = {r: self._path[r] for r in self.unserved}
        return simulate(self.counters, paths, self.schedules, self.clock, until,
                        lambda: bool(self.triggered()))

    def next_trigger(self, now: Fraction) -> Optional[Tuple[Fraction, int]]:
        c = self.counters.copy()
        paths = {r: self._path[r] for r in self.unserved}
        out = simulate(c, paths, self.schedules, now, None, lambda: bool(self.triggered(c)))
        if out.reason != "stop":
            return None
        return out.time, self.triggered(c)[0]


class PreemptiveService(Algorithm):
    """Single-server preemptive service on an HST.

    Works in both clairvoyance modes.  Without clairvoyance the planner
    extrapolates each request's current rate; the engine ticks at every
    breakpoint so waiting-phase accrual stays exact.
    """

    name = "ps"

    def __init__(self, strict: bool = False, diag_const: int = 64, keep_plans: bool = True):
        self.strict = strict
        self.diag_const = diag_const
        self.keep_plans = keep_plans

    def reset(self, tree, instance, view, seed=0):
        super().reset(tree, instance, view, seed)
        if instance.k != 1:
            raise InternalConsistencyError("preemptive service drives exactly one server")
        self.log = InvariantLog(self.strict)
        self.state = WaitingState(tree, instance.start[0])
        self.depth = tree.depth
        self.plans: List[ServicePlan] = []
        self._cache: Optional[Tuple[Fraction, Optional[Fraction]]] = None

    # -- rates
    def _schedule(self, rid: int, now: Fraction) -> RateSchedule:
        r = self.view.request(rid)
        if self.view.clairvoyant:
            return schedule_from_penalty(r.arrival, self.view.full_penalty(rid), now)
        return RateSchedule.constant(now, self.view.current_rate(rid))

    def _advance(self, now: Fraction):
        st = self.state
        if now < st.clock:
            raise InternalConsistencyError(f"clock runs backwards: {now} < {st.clock}")
        out = st.accrue(now)
        if out.time < now:
            raise InternalConsistencyError(f"missed a trigger at {out.time}")
        st.clock = now
        for p in st.counters.bound_violations():
            self.log.check("counter_bounds", False, p)
        self.log.check("counter_bounds", True)

    # -- port
    def on_arrival(self, request: Request, now: Fraction):
        self._advance(now)
        self.state.add(request.id, request.leaf, self._schedule(request.id, now))
        self._cache = None

    def on_tick(self, now: Fraction):
        self._advance(now)
        for rid in self.state.unserved:
            self.state.schedules[rid] = self._schedule(rid, now)
        self._cache = None

    def next_decision_time(self, now: Fraction) -> Optional[Fraction]:
        if self._cache is not None and self._cache[0] == now:
            return self._cache[1]
        self._advance(now)
        st = self.state
        if any(leaf == st.server for leaf in st.unserved.values()) or st.triggered():
            t = now
        else:
            nt = st.next_trigger(now)
            t = None if nt is None else nt[0]
        self._cache = (now, t)
        return t

    def on_decision(self, now: Fraction) -> Optional[Decision]:
        self._advance(now)
        self._cache = None
        st = self.state
        here = sorted(r for r, leaf in st.unserved.items() if leaf == st.server)
        if here:
            for r in here:
                st.counters.remove_request(r)
                st.drop(r)
            return Decision([], here, {"kind": "local"})
        trig = st.triggered()
        if not trig:
            return None
        e_star = trig[0]
        for p in provenance_problems(self.tree, st.counters, st.unserved, st.server):
            self.log.check("weight_provenance", False, p)
        self.log.check("weight_provenance", True)
        ctx = PlanContext(self.tree, dict(st.unserved),
                          {r: self._schedule(r, now) for r in st.unserved}, now, self.log)
        plan = build_plan(ctx, st.counters, st.server, e_star, self.depth, self.diag_const)
        self._apply(plan, st.server)
        if self.keep_plans:
            self.plans.append(plan)
        moves = [Move(0, at(a), at(b)) for a, b in zip(plan.walk, plan.walk[1:])]
        info = {"kind": "phase", "major_edge": e_star, "key_edges": list(plan.key_edges),
                "S": sorted(plan.S), "critical": list(plan.critical)}
        return Decision(moves, list(plan.served), info)

    def _apply(self, plan: ServicePlan, start: int):
        st = self.state
        pending = dict(st.unserved)
        final, cost = apply_plan(self.tree, st.counters, pending, plan, start, self.log)
        for r in plan.served:
            st.drop(r)
        st.moved(final)
        for p in st.counters.bound_violations():
            self.log.check("counter_bounds", False, p)
        return final, cost

    def invariant_summary(self):
        return self.log.summary()
