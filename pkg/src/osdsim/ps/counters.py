"""Edge counters and the exact event-driven accrual loop.

Every source (an unserved request) pushes its instantaneous penalty onto
the nearest unsaturated edge of its path toward a target node.  Rates are
piecewise constant, so the loop jumps from event to event: a rate change,
an edge reaching its length, or the ``until`` bound.  Infinite rates
(deadlines) saturate edges instantly; simultaneous saturations are flagged
one at a time in ascending edge id so callers can stop mid-cascade.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple, Union

from ..errors import PastTime

INF = math.inf
Rate = Union[Fraction, float]


class RateSchedule:
    """Piecewise-constant rate: ``changes`` is a sorted list of (time, rate)."""

    __slots__ = ("times", "rates")

    def __init__(self, changes: Sequence[Tuple[Fraction, Rate]]):
        self.times = [t for t, _ in changes]
        self.rates = [r for _, r in changes]

    @classmethod
    def constant(cls, t0: Fraction, rate: Rate) -> "RateSchedule":
        return cls([(t0, rate)])

    def rate(self, t: Fraction) -> Rate:
        i = bisect_right(self.times, t) - 1
        return self.rates[i] if i >= 0 else Fraction(0)

    def next_change(self, t: Fraction) -> Optional[Fraction]:
        i = bisect_right(self.times, t)
        return self.times[i] if i < len(self.times) else None


def schedule_from_penalty(arrival: Fraction, penalty, t0: Fraction) -> RateSchedule:
    """Future rates of a request whose penalty function is fully known."""
    changes: List[Tuple[Fraction, Rate]] = []
    for off, slope in penalty.segments:
        changes.append((arrival + off, slope))
    if penalty.deadline is not None:
        dl = arrival + penalty.deadline
        changes = [c for c in changes if c[0] < dl] + [(dl, INF)]
    # collapse everything at or before t0 into one entry
    before = [c for c in changes if c[0] <= t0]
    after = [c for c in changes if c[0] > t0]
    head = [(t0, before[-1][1])] if before else [(t0, Fraction(0))]
    return RateSchedule(head + after)


class Counters:
    """Per-edge weights with per-request contribution logs."""

    def __init__(self, length: Callable[[int], Fraction]):
        self.length = length
        self.w: Dict[int, Fraction] = {}
        self.contrib: Dict[int, Dict[int, Fraction]] = {}
        self.sat: Set[int] = set()

    def copy(self) -> "Counters":
        c = Counters(self.length)
        c.w = dict(self.w)
        c.contrib = {e: dict(d) for e, d in self.contrib.items()}
        c.sat = set(self.sat)
        return c

    def weight(self, e: int) -> Fraction:
        return self.w.get(e, Fraction(0))

    def saturated(self, e: int) -> bool:
        return e in self.sat

    def add(self, e: int, rid: int, amount: Fraction):
        if amount == 0:
            return
        self.w[e] = self.weight(e) + amount
        d = self.contrib.setdefault(e, {})
        d[rid] = d.get(rid, Fraction(0)) + amount

    def reset(self, e: int):
        self.w.pop(e, None)
        self.contrib.pop(e, None)
        self.sat.discard(e)

    def remove_request(self, rid: int) -> List[int]:
        """Drop a request's contributions everywhere; returns edges that lost saturation."""
        lost = []
        for e in list(self.contrib):
            d = self.contrib[e]
            if rid in d:
                amt = d.pop(rid)
                self.w[e] = self.weight(e) - amt
                if not d:
                    del self.contrib[e]
                if self.w[e] == 0:
                    del self.w[e]
                if e in self.sat and self.weight(e) < self.length(e):
                    self.sat.discard(e)
                    lost.append(e)
        return lost

    def holders(self, rid: int) -> List[int]:
        return sorted(e for e, d in self.contrib.items() if rid in d)

    def bound_violations(self) -> List[str]:
        out = []
        for e, w in self.w.items():
            if w < 0 or w > self.length(e):
                out.append(f"counter on edge {e} is {w}, outside [0, {self.length(e)}]")
            if e in self.contrib and sum(self.contrib[e].values(), Fraction(0)) != w:
                out.append(f"edge {e}: weight {w} differs from its contribution log")
        for e in self.sat:
            if self.weight(e) != self.length(e):
                out.append(f"edge {e} flagged saturated with weight {self.weight(e)}")
        return out


@dataclass
class Outcome:
    time: Fraction
    reason: str  # "stop", "until" or "idle"
    # weight added by infinite rates at ``time``; ranks simultaneous triggers
    instant: Fraction = Fraction(0)


def target_edge(counters: Counters, path: Sequence[int]) -> Optional[int]:
    for e in path:
        if e not in counters.sat:
            return e
    return None


def simulate(
    counters: Counters,
    paths: Dict[int, Sequence[int]],
    schedules: Dict[int, RateSchedule],
    t0: Fraction,
    until: Optional[Fraction] = None,
    stop: Optional[Callable[[], bool]] = None,
) -> Outcome:
    """Advance ``counters`` from ``t0``.

    Returns at the first moment ``stop()`` holds (checked initially and
    after every saturation), at ``until``, or when nothing can change any
    more ("idle").
    """
    if until is not None and until < t0:
        raise PastTime(f"cannot accrue back from {t0} to {until}")
    t = t0
    instant = Fraction(0)
    stop = stop or (lambda: False)
    if stop():
        return Outcome(t, "stop")
    rids = sorted(paths)
    while True:
        # zero-duration cascade
        targets = {r: target_edge(counters, paths[r]) for r in rids}
        rates = {r: schedules[r].rate(t) for r in rids}
        pending = {e for e, w in counters.w.items() if e not in counters.sat and w >= counters.length(e)}
        inf_targets: Dict[int, int] = {}
        for r in rids:
            e = targets[r]
            if e is not None and rates[r] == INF and e not in inf_targets:
                inf_targets[e] = r
        cand = pending | set(inf_targets)
        if cand:
            e = min(cand)
            deficit = counters.length(e) - counters.weight(e)
            if deficit > 0 and e in inf_targets:
                counters.add(e, inf_targets[e], deficit)
                instant += deficit
            counters.sat.add(e)
            if stop():
                return Outcome(t, "stop", instant)
            continue
        if until is not None and t >= until:
            return Outcome(t, "until", instant)
        # continuous step
        edge_rate: Dict[int, Fraction] = {}
        for r in rids:
            e = targets[r]
            rt = rates[r]
            if e is None or rt == 0:
                continue
            edge_rate[e] = edge_rate.get(e, Fraction(0)) + rt
        horizon = []
        for e, rt in edge_rate.items():
            horizon.append(t + (counters.length(e) - counters.weight(e)) / rt)
        for r in rids:
            nc = schedules[r].next_change(t)
            if nc is not None:
                horizon.append(nc)
        if until is not None:
            horizon.append(until)
        if not horizon:
            return Outcome(t, "idle")
        t_next = min(horizon)
        dt = t_next - t
        if dt > 0:
            instant = Fraction(0)
            for r in rids:
                e = targets[r]
                rt = rates[r]
                if e is not None and rt != 0:
                    counters.add(e, r, rt * dt)
        t = t_next
