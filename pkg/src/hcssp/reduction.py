"""Reductions of procedural and activity planning to plain C-SSP instances.

Procedural planning embeds the event graph as a C-SSP whose states are the
events: edge costs are per-activity cost estimates, so the expected cost of a
choice assignment equals the likelihood-weighted sum of the estimates.
Activity planning embeds an activity with a chained initial distribution and
per-index budget intervals: the upper limits become the C-SSP bounds, the
lower limits ride along as estimates for bound computations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

from .cssp import CsspModel, DeterministicPolicy, State
from .errors import MissingEstimate
from .hierarchy import Activity, HcsspModel, ProceduralPolicy


@dataclass(frozen=True)
class CostEstimates:
    """Per-activity primary estimates and per-(activity, index) secondary ones."""

    f_bar: Mapping[str, float]
    g_bar: Mapping[Tuple[str, int], float]

    def __init__(self, f_bar, g_bar):
        object.__setattr__(self, "f_bar", dict(f_bar))
        object.__setattr__(self, "g_bar", dict(g_bar))


@dataclass(frozen=True)
class ActivityCssp:
    """Activity embedded as a C-SSP, with the budget interval bookkeeping.

    ``cost_indices[k]`` is the activity's secondary index behind the model's
    k-th secondary cost; ``lower_limits`` are the interval lower ends, used
    as estimates (never as constraints) by bound computations.
    """

    model: CsspModel
    cost_indices: Tuple[int, ...]
    lower_limits: Tuple[float, ...]


def procedural_to_cssp(model: HcsspModel, est: CostEstimates) -> CsspModel:
    """Reduce choice planning over the event graph to a C-SSP.

    States are events, the goal is the end event, actions are the choice
    domains, and transitions mirror the event transitions. The primary cost
    of an edge is the summed primary estimate of the activities riding it;
    constraint j contributes a cost function carrying the secondary
    estimates of its member activities, bounded by the constraint's bound.
    """
    for name in model.activities:
        if name not in est.f_bar:
            raise MissingEstimate(f"no primary cost estimate for activity {name}")
    for j, con in enumerate(model.constraints):
        for name in con.activities:
            key = (name, con.cost_index[name])
            if key not in est.g_bar:
                raise MissingEstimate(
                    f"no secondary estimate for activity {name}, "
                    f"index {con.cost_index[name]} (constraint {j})"
                )

    edge_acts = model.edge_activities()
    actions = {e: list(model.choices.get(e, ())) for e in model.events
               if e != model.end_event}
    primary: Dict = {}
    secondary = [dict() for _ in model.constraints]
    for e in model.events:
        if e == model.end_event:
            continue
        for c in model.choices.get(e, ()):
            for e2, p in model.event_transition.get(e, {}).get(c, {}).items():
                if p <= 0:
                    continue
                names = edge_acts.get((e, e2), [])
                if not names:
                    continue
                f_sum = sum(est.f_bar[n] for n in names)
                if f_sum:
                    primary.setdefault(e, {}).setdefault(c, {})[e2] = f_sum
                for j, con in enumerate(model.constraints):
                    g_sum = sum(
                        est.g_bar[(n, con.cost_index[n])]
                        for n in names
                        if n in set(con.activities)
                    )
                    if g_sum:
                        secondary[j].setdefault(e, {}).setdefault(c, {})[e2] = g_sum
    return CsspModel(
        states=model.events,
        initial_dist={model.start_event: 1.0},
        goals={model.end_event},
        actions=actions,
        transition=model.event_transition,
        costs=[primary] + secondary,
        bounds=[con.bound for con in model.constraints],
    )


def procedural_from_policy(model: HcsspModel, policy: DeterministicPolicy
                           ) -> ProceduralPolicy:
    """Extend a reduced-C-SSP policy to a full choice assignment.

    Events the policy never reaches get their first domain value; the choice
    there cannot matter, but a procedural policy assigns every variable.
    """
    choice_of = {}
    for e in model.events:
        if e == model.end_event:
            continue
        domain = model.choices.get(e, ())
        if e in policy.action_of:
            choice_of[e] = policy.action_of[e]
        elif domain:
            choice_of[e] = domain[0]
    return ProceduralPolicy(choice_of)


def activity_to_cssp(activity: Activity, init: Mapping[State, float],
                     intervals: Mapping[int, Tuple[float, float]]) -> ActivityCssp:
    """Embed an activity as a C-SSP with per-index budget intervals.

    ``intervals[i] = (lo, hi)`` for each constrained secondary index i: the
    upper ends become the C-SSP bounds; lower ends are carried as metadata.
    Unconstrained secondary costs are omitted from the reduced model.
    """
    indices = sorted(intervals)
    for i, (lo, hi) in intervals.items():
        if lo > hi:
            raise ValueError(f"interval for index {i} is reversed: [{lo}, {hi}]")
    bounds_by_index = {i: intervals[i][1] for i in indices}
    sub = activity.to_cssp(init, bounds_by_index)
    return ActivityCssp(
        model=sub,
        cost_indices=tuple(indices),
        lower_limits=tuple(intervals[i][0] for i in indices),
    )
