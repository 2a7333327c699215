"""Preemptive service on HSTs."""

from .algorithm import PreemptiveService, WaitingState
from .counters import Counters, RateSchedule, schedule_from_penalty, simulate
from .planner import (
    InvariantLog,
    PlanContext,
    Scope,
    ServicePlan,
    all_cuts,
    apply_plan,
    build_plan,
    compute_f,
    critical_subtree,
    key_edges,
    major_edge,
    relevant_subtree,
    subset_exact,
    subtree_scope,
    time_forwarding,
    x_scope,
)

__all__ = [
    "Counters",
    "InvariantLog",
    "PlanContext",
    "PreemptiveService",
    "RateSchedule",
    "Scope",
    "ServicePlan",
    "WaitingState",
    "all_cuts",
    "apply_plan",
    "build_plan",
    "compute_f",
    "critical_subtree",
    "key_edges",
    "major_edge",
    "relevant_subtree",
    "schedule_from_penalty",
    "simulate",
    "subset_exact",
    "subtree_scope",
    "time_forwarding",
    "x_scope",
]
