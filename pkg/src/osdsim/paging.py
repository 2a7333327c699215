"""Paging with delay on uniform metrics, and weighted paging on stars."""

from __future__ import annotations

import random
from collections import OrderedDict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Sequence, Tuple

from .engine import Algorithm, Decision, Move
from .errors import CapacityZero, NonUniformMetric, ZeroWeight
from .geometry import at
from .hst import Hst, Metric, floor_pow2_exp
from .instance import (
    INF,
    ClairvoyanceMode,
    Instance,
    PenaltyFn,
    Request,
    RequestView,
    service_penalty,
)

POLICIES = ("marking_det", "lru", "marking_rand", "belady")
EMPTY_SLOT = -1  # dummy location of an empty cache slot in the metric view


@dataclass
class Emission:
    page: int
    time: Fraction
    requests: List[int]
    flushed: bool = False


@dataclass
class ReducedStream:
    emissions: List[Emission]

    @property
    def pages(self) -> List[int]:
        return [e.page for e in self.emissions]

    @property
    def times(self) -> List[Fraction]:
        return [e.time for e in self.emissions]


def reduce_stream(requests: Sequence[Request], flush: bool = True) -> ReducedStream:
    """Cut each page's requests into intervals of total penalty one.

    The reduction is online and nonclairvoyant: it only reads penalties
    and rates at the current time through a guarded view.  Intervals still
    open when the input ends are closed at the last event time when
    ``flush`` is set.
    """
    reqs = sorted(requests, key=lambda r: (r.arrival, r.id))
    view = RequestView(ClairvoyanceMode.NONCLAIRVOYANT)
    open_: Dict[int, List[int]] = {}
    out: List[Emission] = []
    ticks = set()
    i = 0
    now = Fraction(0)

    def emit_ready():
        for page in sorted(open_):
            rids = open_[page]
            acc = sum((view.current_penalty(r) for r in rids), Fraction(0))
            if acc >= 1:
                out.append(Emission(page, now, list(rids)))
                del open_[page]

    while True:
        cands = []
        if i < len(reqs):
            cands.append(reqs[i].arrival)
        future = [t for t in ticks if t > now]
        if future:
            cands.append(min(future))
        for page, rids in open_.items():
            acc = sum((view.current_penalty(r) for r in rids), Fraction(0))
            rate = sum((view.current_rate(r) for r in rids), Fraction(0))
            if rate == INF:
                cands.append(now)
            elif rate > 0:
                cands.append(now + (1 - acc) / rate)
        if not cands:
            break
        now = min(cands)
        view.now = now
        while i < len(reqs) and reqs[i].arrival == now:
            r = reqs[i]
            view.admit(r)
            open_.setdefault(r.leaf, []).append(r.id)
            ticks.update(r.tick_times())
            i += 1
        emit_ready()
        ticks = {t for t in ticks if t > now}
    if flush:
        for page in sorted(open_):
            out.append(Emission(page, now, list(open_[page]), flushed=True))
    return ReducedStream(out)


# ------------------------------------------------------------------ classical paging

@dataclass
class PagingResult:
    policy: str
    k: int
    faults: int
    evictions: int
    hits: List[bool]
    caches: List[Tuple[int, ...]]  # cache contents after each request

    @property
    def swaps(self) -> int:
        """Page loads, compulsory ones included."""
        return self.faults


def classical_paging(stream: Sequence[int], policy: str, k: int, seed: int = 0) -> PagingResult:
    if k < 1:
        raise CapacityZero("cache capacity must be at least 1")
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {', '.join(POLICIES)}")
    rng = random.Random(seed)
    cache: "OrderedDict[int, None]" = OrderedDict()
    marked = set()
    faults = evictions = 0
    hits, caches = [], []
    stream = list(stream)
    for i, p in enumerate(stream):
        if p in cache:
            hits.append(True)
            cache.move_to_end(p)
            marked.add(p)
        else:
            hits.append(False)
            faults += 1
            if len(cache) >= k:
                if policy == "lru":
                    victim = next(iter(cache))
                elif policy == "belady":
                    victim = _farthest(stream, i, list(cache))
                else:
                    unmarked = sorted(q for q in cache if q not in marked)
                    if not unmarked:
                        marked.clear()
                        unmarked = sorted(cache)
                    victim = unmarked[0] if policy == "marking_det" else rng.choice(unmarked)
                del cache[victim]
                marked.discard(victim)
                evictions += 1
            cache[p] = None
            marked.add(p)
        caches.append(tuple(sorted(cache)))
    return PagingResult(policy, k, faults, evictions, hits, caches)


def _farthest(stream: Sequence[int], i: int, cache: List[int]) -> int:
    best, best_next = None, -1
    for q in sorted(cache):
        try:
            nxt = stream.index(q, i + 1)
        except ValueError:
            return q
        if nxt > best_next:
            best, best_next = q, nxt
    return best


# ------------------------------------------------------------------ paging with delay

@dataclass
class DelayPagingReport:
    policy: str
    faults: int
    delay_penalty: Fraction
    alg_I: Fraction
    alg_I_prime: int
    stream: ReducedStream
    served_at: Dict[int, Fraction] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "faults": self.faults,
            "delay_penalty": str(self.delay_penalty),
            "alg_I": str(self.alg_I),
            "alg_I_prime": self.alg_I_prime,
            "emissions": len(self.stream.emissions),
        }


def _check_uniform(instance: Instance):
    if isinstance(instance.space, Hst):
        raise NonUniformMetric("paging with delay needs a uniform metric")
    m: Metric = instance.space
    n = len(m.points)
    vals = {m.dist[i][j] for i in range(n) for j in range(n) if i != j}
    if len(vals) > 1:
        raise NonUniformMetric("metric is not uniform")


def paging_with_delay(instance: Instance, policy: str, seed: int = 0) -> DelayPagingReport:
    """Serve a page-with-delay instance by running a classical policy on the reduced stream.

    The cache mirrors the classical run.  A request finding its page
    resident is served on arrival; otherwise it waits for its interval's
    emission, where the page is loaded.
    """
    _check_uniform(instance)
    stream = reduce_stream(instance.requests)
    res = classical_paging(stream.pages, policy, instance.k, seed)
    times = stream.times
    emitted_in: Dict[int, int] = {}
    for j, em in enumerate(stream.emissions):
        for rid in em.requests:
            emitted_in[rid] = j
    delay = Fraction(0)
    served: Dict[int, Fraction] = {}
    for r in instance.requests:
        j = emitted_in[r.id]
        # cache contents in force at the arrival instant (emissions at that instant included)
        last = max((x for x, t in enumerate(times) if t <= r.arrival), default=None)
        resident = last is not None and r.leaf in res.caches[last]
        if resident and j > last:
            served[r.id] = r.arrival
            continue
        when = times[j] if times[j] >= r.arrival else r.arrival
        served[r.id] = when
        delay += service_penalty(r.penalty, when - r.arrival)
    alg_I = Fraction(res.faults) + delay
    return DelayPagingReport(policy, res.faults, delay, alg_I, res.faults, stream, served)


def page_metric_instance(instance: Instance) -> Instance:
    """The k-server view of a page instance: empty slots sit at a dummy point at distance one."""
    _check_uniform(instance)
    pts = list(instance.space.points) + [EMPTY_SLOT]
    n = len(pts)
    dist = tuple(tuple(Fraction(0) if i == j else Fraction(1) for j in range(n)) for i in range(n))
    return Instance(Metric(tuple(pts), dist), instance.requests, instance.k,
                    tuple([EMPTY_SLOT] * instance.k), pages=True)


def random_page_instance(seed: int, n_pages: int = 6, k: int = 2, n_requests: int = 8,
                         deadline_prob: float = 0.2) -> Instance:
    rng = random.Random(seed)
    pages = tuple(range(n_pages))
    reqs = []
    for rid in range(n_requests):
        slope = Fraction(rng.randint(1, 8), 4)
        dl = Fraction(rng.randint(1, 8), 2) if rng.random() < deadline_prob else None
        reqs.append(Request(rid, rng.choice(pages), Fraction(rng.randint(0, 24), 4),
                            PenaltyFn.linear(slope, dl)))
    return Instance(Metric.uniform(pages), tuple(reqs), k, tuple([pages[0]] * k), pages=True)


# ------------------------------------------------------------------ weighted paging on a star

def weighted_star_instance(weights: Mapping[int, object], requests: Sequence[Request],
                           k: int = 1) -> Instance:
    """Star with one leaf per page; the leaf edge is the page weight rounded down to a power of two.

    Request ``leaf`` fields name pages; they are remapped to leaf nodes
    ``page + 1`` under the center 0.  Servers start at the center.
    """
    w = {p: Fraction(x) for p, x in weights.items()}
    for p, x in w.items():
        if x <= 0:
            raise ZeroWeight(f"page {p} has non-positive weight {x}")
    low = min(w.values())
    scale = Fraction(1) / low if low < 1 else Fraction(1)
    parent, exps = {}, {}
    for p in sorted(w):
        parent[p + 1] = 0
        exps[p + 1] = floor_pow2_exp(w[p] * scale)
    tree = Hst(0, parent, exps, {p: p + 1 for p in sorted(w)})
    reqs = [Request(r.id, r.leaf + 1, r.arrival, r.penalty) for r in requests]
    return Instance(tree, tuple(reqs), k, tuple([0] * k)).validate()


def alternating_requests(heavy: int, light: int, weights: Mapping[int, object], rounds: int,
                         ramp=Fraction(1, 4)) -> List[Request]:
    """Heavy and light page alternate every unit of time.

    A request's penalty climbs to its page weight over the last ``ramp``
    of its first unit of delay and stays flat afterwards, a continuous
    stand-in for a one-off charge of the weight at unit delay.
    """
    ramp = Fraction(ramp)
    if not 0 < ramp <= 1:
        raise ValueError("ramp must lie in (0, 1]")
    reqs = []
    for t in range(2 * rounds):
        page = heavy if t % 2 == 0 else light
        w = Fraction(weights[page])
        segs = [(Fraction(0), Fraction(0))] if ramp < 1 else []
        segs += [(1 - ramp, w / ramp), (Fraction(1), Fraction(0))]
        reqs.append(Request(t, page, Fraction(t), PenaltyFn(tuple(segs))))
    return reqs


class ThresholdPaging(Algorithm):
    """Serve a page once its pending penalty reaches the page's edge length.

    The naive per-page threshold strategy for weighted paging; the server
    that was used least recently makes the trip.
    """

    name = "threshold"

    def reset(self, tree, instance, view, seed=0):
        super().reset(tree, instance, view, seed)
        self.pos = list(instance.start)
        self.used = list(range(len(self.pos)))
        self.clock = 0
        self.pending: Dict[int, Request] = {}

    def on_arrival(self, request, now):
        self.pending[request.id] = request

    def _groups(self):
        g: Dict[int, List[int]] = {}
        for rid, r in self.pending.items():
            g.setdefault(r.leaf, []).append(rid)
        return g

    def _ready_time(self, now, leaf, rids):
        if leaf in self.pos:
            return now
        need = self._need(leaf)
        acc = sum((self.view.current_penalty(r) for r in rids), Fraction(0))
        if acc >= need:
            return now
        rate = sum((self.view.current_rate(r) for r in rids), Fraction(0))
        if rate == INF:
            return now
        return None if rate == 0 else now + (need - acc) / rate

    def _need(self, leaf):
        return self.tree.length(leaf)

    def next_decision_time(self, now):
        ts = [self._ready_time(now, leaf, rids) for leaf, rids in self._groups().items()]
        ts = [t for t in ts if t is not None]
        return min(ts) if ts else None

    def on_decision(self, now):
        ready = sorted(leaf for leaf, rids in self._groups().items()
                       if self._ready_time(now, leaf, rids) == now)
        if not ready:
            return None
        leaf = ready[0]
        if leaf in self.pos:
            s = self.pos.index(leaf)
            moves = []
        else:
            s = min(range(len(self.pos)), key=lambda i: (self.used[i], i))
            path = self.tree.path_nodes(self.pos[s], leaf)
            moves = [Move(s, at(a), at(b)) for a, b in zip(path, path[1:])]
            self.pos[s] = leaf
        self.clock += 1
        self.used[s] = self.clock + len(self.pos)
        served = sorted(rid for rid, r in self.pending.items() if r.leaf == leaf)
        for rid in served:
            del self.pending[rid]
        return Decision(moves, served, {"kind": "threshold", "page": leaf})


class DemandLRU(ThresholdPaging):
    """Demand paging with LRU replacement: a page is fetched once its pending penalty reaches one."""

    name = "lru"

    def _need(self, leaf):
        return Fraction(1)
