"""Requests, piecewise-linear delay penalties, instances and their JSON format."""

from __future__ import annotations

import enum
import json
import math
from bisect import bisect_right
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Dict, List, Optional, Tuple, Union

from .errors import (
    ClairvoyanceViolation,
    InstanceSyntaxError,
    InvariantViolation,
    NegativeDelay,
    SchemaError,
)
from .hst import Hst, Metric, validate_hst

INF = math.inf


def frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(x)
    return Fraction(x)


@dataclass(frozen=True)
class PenaltyFn:
    """Continuous nondecreasing piecewise-linear penalty with c(0) = 0.

    ``segments`` holds ``(offset, slope)`` pairs with strictly increasing
    offsets starting at 0; the slope applies from its offset up to the next
    one.  With ``deadline`` set the penalty is +inf from that delay on.
    """

    segments: Tuple[Tuple[Fraction, Fraction], ...]
    deadline: Optional[Fraction] = None

    def __post_init__(self):
        segs = tuple((frac(o), frac(s)) for o, s in self.segments)
        object.__setattr__(self, "segments", segs)
        if self.deadline is not None:
            object.__setattr__(self, "deadline", frac(self.deadline))
        problems = self.problems()
        if problems:
            raise SchemaError("; ".join(problems))

    def problems(self) -> List[str]:
        out = []
        if not self.segments:
            out.append("penalty needs at least one segment")
            return out
        if self.segments[0][0] != 0:
            out.append("first segment offset must be 0")
        for (o1, _), (o2, _) in zip(self.segments, self.segments[1:]):
            if o2 <= o1:
                out.append("segment offsets must be strictly increasing")
        for _, s in self.segments:
            if s < 0:
                out.append("segment slopes must be >= 0")
        if self.deadline is not None and self.deadline <= 0:
            out.append("deadline must be positive")
        return out

    @classmethod
    def linear(cls, slope, deadline=None) -> "PenaltyFn":
        return cls(((Fraction(0), frac(slope)),), deadline)

    @classmethod
    def deadline_only(cls, deadline) -> "PenaltyFn":
        return cls(((Fraction(0), Fraction(0)),), deadline)

    @property
    def offsets(self) -> List[Fraction]:
        return [o for o, _ in self.segments]

    def finite_value(self, delay) -> Fraction:
        """Value of the piecewise-linear part, ignoring the deadline."""
        delay = frac(delay)
        total = Fraction(0)
        for i, (o, s) in enumerate(self.segments):
            if delay <= o:
                break
            end = self.segments[i + 1][0] if i + 1 < len(self.segments) else None
            hi = delay if end is None or delay < end else end
            total += s * (hi - o)
        return total

    def finite_slope(self, delay) -> Fraction:
        i = bisect_right(self.offsets, frac(delay)) - 1
        return self.segments[max(i, 0)][1]

    def breakpoints(self) -> List[Fraction]:
        """Delays > 0 at which the right-derivative changes (deadline included)."""
        out = [o for o in self.offsets[1:]]
        if self.deadline is not None:
            out = [o for o in out if o < self.deadline] + [self.deadline]
        return out


def penalty_at(p: PenaltyFn, delay) -> Union[Fraction, float]:
    delay = frac(delay)
    if delay < 0:
        raise NegativeDelay(f"delay {delay} < 0")
    if p.deadline is not None and delay >= p.deadline:
        return INF
    return p.finite_value(delay)


def penalty_rate_at(p: PenaltyFn, delay) -> Union[Fraction, float]:
    """Right-derivative of :func:`penalty_at`; +inf at and after the deadline."""
    delay = frac(delay)
    if delay < 0:
        raise NegativeDelay(f"delay {delay} < 0")
    if p.deadline is not None and delay >= p.deadline:
        return INF
    return p.finite_slope(delay)


def service_penalty(p: PenaltyFn, delay) -> Union[Fraction, float]:
    """Penalty charged when a request is served after ``delay``.

    Serving exactly at the deadline instant is on time and costs the
    left limit; anything later is infinite.
    """
    delay = frac(delay)
    if delay < 0:
        raise NegativeDelay(f"delay {delay} < 0")
    if p.deadline is not None and delay > p.deadline:
        return INF
    return p.finite_value(delay)


@dataclass(frozen=True)
class Request:
    id: int
    leaf: int
    arrival: Fraction
    penalty: PenaltyFn

    def __post_init__(self):
        object.__setattr__(self, "arrival", frac(self.arrival))

    @property
    def deadline_time(self) -> Optional[Fraction]:
        d = self.penalty.deadline
        return None if d is None else self.arrival + d

    def tick_times(self) -> List[Fraction]:
        return [self.arrival + b for b in self.penalty.breakpoints()]


Space = Union[Metric, Hst]


@dataclass(frozen=True)
class Instance:
    space: Space
    requests: Tuple[Request, ...]
    k: int = 1
    start: Tuple[int, ...] = (0,)
    pages: bool = False  # uniform "pages" space variant

    def __post_init__(self):
        reqs = tuple(sorted(self.requests, key=lambda r: (r.arrival, r.id)))
        object.__setattr__(self, "requests", reqs)
        object.__setattr__(self, "start", tuple(self.start))

    def violations(self) -> List[str]:
        out = []
        if self.k < 1:
            out.append("k must be >= 1")
        if len(self.start) != self.k:
            out.append(f"start lists {len(self.start)} positions for k={self.k}")
        ids = [r.id for r in self.requests]
        if len(set(ids)) != len(ids):
            out.append("request ids are not unique")
        if isinstance(self.space, Hst):
            out += validate_hst(self.space)
            nodes = set(self.space.nodes)
            leaves = set(self.space.leaf_nodes)
            for s in self.start:
                if s not in nodes:
                    out.append(f"start position {s} is not a node")
            for r in self.requests:
                if r.leaf not in leaves:
                    out.append(f"request {r.id}: location {r.leaf} is not a leaf")
        else:
            out += self.space.violations()
            pts = set(self.space.points)
            for s in self.start:
                if s not in pts:
                    out.append(f"start position {s} is not a point")
            for r in self.requests:
                if r.leaf not in pts:
                    out.append(f"request {r.id}: location {r.leaf} is not a point")
        for r in self.requests:
            if r.arrival < 0:
                out.append(f"request {r.id}: negative arrival")
        return out

    def validate(self) -> "Instance":
        v = self.violations()
        if v:
            raise InvariantViolation("; ".join(v))
        return self

    @property
    def horizon_hint(self) -> Fraction:
        return max((r.arrival for r in self.requests), default=Fraction(0))

    def with_requests(self, reqs) -> "Instance":
        return replace(self, requests=tuple(reqs))


class ClairvoyanceMode(enum.Enum):
    CLAIRVOYANT = "clairvoyant"
    NONCLAIRVOYANT = "nonclairvoyant"


class RequestView:
    """Penalty access handed to algorithms.

    In nonclairvoyant mode only delays up to the current delay may be
    queried; the engine moves the clock forward.
    """

    def __init__(self, mode: ClairvoyanceMode):
        self.mode = mode
        self.now = Fraction(0)
        self._reqs: Dict[int, Request] = {}

    def admit(self, r: Request):
        self._reqs[r.id] = r

    def update(self, r: Request):
        self._reqs[r.id] = r

    @property
    def clairvoyant(self) -> bool:
        return self.mode is ClairvoyanceMode.CLAIRVOYANT

    def _guard(self, rid: int, delay: Fraction):
        if self.mode is ClairvoyanceMode.NONCLAIRVOYANT:
            current = self.now - self._reqs[rid].arrival
            if delay > current:
                raise ClairvoyanceViolation(
                    f"request {rid}: queried delay {delay} beyond current delay {current}"
                )

    def penalty(self, rid: int, delay) -> Union[Fraction, float]:
        delay = frac(delay)
        self._guard(rid, delay)
        return penalty_at(self._reqs[rid].penalty, delay)

    def rate(self, rid: int, delay) -> Union[Fraction, float]:
        delay = frac(delay)
        self._guard(rid, delay)
        return penalty_rate_at(self._reqs[rid].penalty, delay)

    def current_rate(self, rid: int) -> Union[Fraction, float]:
        r = self._reqs[rid]
        return self.rate(rid, self.now - r.arrival)

    def current_penalty(self, rid: int) -> Union[Fraction, float]:
        r = self._reqs[rid]
        return self.penalty(rid, self.now - r.arrival)

    def full_penalty(self, rid: int) -> PenaltyFn:
        if not self.clairvoyant:
            raise ClairvoyanceViolation(f"request {rid}: full penalty function is hidden")
        return self._reqs[rid].penalty

    def request(self, rid: int) -> Request:
        return self._reqs[rid]


# ---------------------------------------------------------------- JSON format

def _num(x) -> str:
    x = frac(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def _parse_num(x, where: str) -> Fraction:
    if isinstance(x, bool) or not isinstance(x, (str, int)):
        raise SchemaError(f"{where}: expected a decimal string, got {x!r}")
    try:
        return Fraction(x)
    except (ValueError, ZeroDivisionError) as exc:
        raise SchemaError(f"{where}: bad number {x!r}") from exc


def instance_to_dict(inst: Instance) -> dict:
    if isinstance(inst.space, Hst):
        h = inst.space
        space = {"hst": {
            "nodes": h.nodes,
            "root": h.root,
            "edges": [{"child": c, "parent": h.parent[c], "len_exp": h.len_exp[c]} for c in h.edges],
            "leaves": {str(p): leaf for p, leaf in sorted(h.leaves.items())},
        }}
    else:
        m = inst.space
        key = "pages" if inst.pages else "metric"
        space = {key: {"points": list(m.points), "dist": [[_num(x) for x in row] for row in m.dist]}}
    reqs = []
    for r in inst.requests:
        d = {"id": r.id, "leaf": r.leaf, "arrival": _num(r.arrival),
             "segments": [[_num(o), _num(s)] for o, s in r.penalty.segments]}
        if r.penalty.deadline is not None:
            d["deadline"] = _num(r.penalty.deadline)
        reqs.append(d)
    return {"space": space, "k": inst.k, "start": list(inst.start), "requests": reqs}


def serialize_instance(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1, sort_keys=True) + "\n"


def _req_int(d: dict, key: str, where: str) -> int:
    if key not in d:
        raise SchemaError(f"{where}: missing field '{key}'")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"{where}.{key}: expected integer, got {v!r}")
    return v


def instance_from_dict(doc) -> Instance:
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object")
    for key in ("space", "k", "start", "requests"):
        if key not in doc:
            raise SchemaError(f"missing top-level field '{key}'")
    k = doc["k"]
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        raise SchemaError(f"k: must be an integer >= 1, got {k!r}")
    space_doc = doc["space"]
    if not isinstance(space_doc, dict) or len(space_doc) != 1:
        raise SchemaError("space: must have exactly one of 'metric', 'pages', 'hst'")
    (kind, body), = space_doc.items()
    pages = False
    if kind in ("metric", "pages"):
        pages = kind == "pages"
        pts = body.get("points")
        if not isinstance(pts, list):
            raise SchemaError(f"space.{kind}.points: expected list")
        if "dist" in body:
            dist = [[_parse_num(x, f"space.{kind}.dist") for x in row] for row in body["dist"]]
        elif pages:
            dist = [[Fraction(0) if i == j else Fraction(1) for j in range(len(pts))]
                    for i in range(len(pts))]
        else:
            raise SchemaError(f"space.{kind}: missing field 'dist'")
        space: Space = Metric(tuple(pts), tuple(tuple(r) for r in dist))
    elif kind == "hst":
        edges = body.get("edges")
        if not isinstance(edges, list):
            raise SchemaError("space.hst.edges: expected list")
        parent, exps = {}, {}
        for i, e in enumerate(edges):
            where = f"space.hst.edges[{i}]"
            c = _req_int(e, "child", where)
            parent[c] = _req_int(e, "parent", where)
            exps[c] = _req_int(e, "len_exp", where)
        nodes = body.get("nodes", [])
        if "root" in body:
            root = body["root"]
        else:
            roots = sorted(set(nodes) - set(parent)) or sorted(set(parent.values()) - set(parent))
            if len(roots) != 1:
                raise SchemaError("space.hst: cannot determine a unique root")
            root = roots[0]
        leaves_doc = body.get("leaves", {})
        try:
            leaves = {int(p): int(v) for p, v in leaves_doc.items()}
        except (TypeError, ValueError) as exc:
            raise SchemaError("space.hst.leaves: keys and values must be integers") from exc
        space = Hst(root, parent, exps, leaves)
    else:
        raise SchemaError(f"space: unknown kind '{kind}'")
    start = doc["start"]
    if not isinstance(start, list) or not all(isinstance(s, int) for s in start):
        raise SchemaError("start: expected list of node ids")
    reqs = []
    if not isinstance(doc["requests"], list):
        raise SchemaError("requests: expected list")
    for i, rd in enumerate(doc["requests"]):
        where = f"requests[{i}]"
        if not isinstance(rd, dict):
            raise SchemaError(f"{where}: expected object")
        rid = _req_int(rd, "id", where)
        leaf = _req_int(rd, "leaf", where)
        if "arrival" not in rd or "segments" not in rd:
            raise SchemaError(f"{where}: needs 'arrival' and 'segments'")
        arrival = _parse_num(rd["arrival"], f"{where}.arrival")
        segs = rd["segments"]
        if not isinstance(segs, list) or not all(isinstance(s, list) and len(s) == 2 for s in segs):
            raise SchemaError(f"{where}.segments: expected list of [offset, slope]")
        segs = tuple((_parse_num(o, f"{where}.segments"), _parse_num(s, f"{where}.segments"))
                     for o, s in segs)
        dl = rd.get("deadline")
        dl = None if dl is None else _parse_num(dl, f"{where}.deadline")
        try:
            pen = PenaltyFn(segs, dl)
        except SchemaError as exc:
            raise SchemaError(f"{where}: {exc}") from exc
        reqs.append(Request(rid, leaf, arrival, pen))
    inst = Instance(space, tuple(reqs), k, tuple(start), pages)
    return inst.validate()


def parse_instance(text: str) -> Instance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceSyntaxError(str(exc)) from exc
    return instance_from_dict(doc)
