"""Hierarchical constrained SSP models: events, choices, activities, constraints.

A hierarchical model abstracts the state space into a directed acyclic graph
of events. Edges between events carry activities, each a goal-directed
sub-SSP over a subset of the global states. Choice variables at events select
which activities run; likelihood-weighted sums of the activities' expected
secondary costs are bounded by global constraints. State flow is chained:
each activity starts from the termination distribution of its predecessors.
"""

from __future__ import annotations

import graphlib
import itertools
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

from .cssp import (
    CsspModel,
    DeterministicPolicy,
    State,
    absorption_distribution,
    evaluate_policy,
    validate_model,
)
from .errors import (
    CyclicGraph,
    EmptySupport,
    MissingPolicy,
    NeverActivated,
    SupportOutsideActivity,
    UnassignedChoice,
)

Event = Hashable
Choice = Hashable

PROB_TOL = 1e-9
CONSTRAINT_TOL = 1e-9


@dataclass(frozen=True)
class Activity:
    """Sub-SSP attached to an event edge.

    ``costs[0]`` is the primary cost, ``costs[1..n_secondary]`` the secondary
    ones; goals are absorbing within the activity. ``family`` optionally names
    the shared content of equal instances (same dynamics, entry, and goal) so
    planners can share cached results across route contexts.
    """

    name: str
    start_event: Event
    end_event: Event
    states: Tuple[State, ...]
    actions: Mapping[State, Tuple[Any, ...]]
    transition: Mapping[State, Mapping[Any, Mapping[State, float]]]
    costs: Tuple[Mapping, ...]
    goals: frozenset
    family: Optional[str] = None

    def __init__(self, name, start_event, end_event, states, actions, transition,
                 costs, goals, family=None):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "start_event", start_event)
        object.__setattr__(self, "end_event", end_event)
        object.__setattr__(self, "states", tuple(states))
        object.__setattr__(self, "actions", {s: tuple(a) for s, a in actions.items()})
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "costs", tuple(costs))
        object.__setattr__(self, "goals", frozenset(goals))
        object.__setattr__(self, "family", family)

    @property
    def n_secondary(self) -> int:
        return len(self.costs) - 1

    def to_cssp(self, init: Mapping[State, float],
                bounds_by_index: Optional[Mapping[int, float]] = None) -> CsspModel:
        """Embed as a C-SSP with the given initial distribution.

        ``bounds_by_index`` selects which secondary cost indices become
        bounded costs of the C-SSP (in increasing index order); when None,
        every secondary cost is kept with a zero bound so that raw expected
        costs can be read off an exact evaluation.
        """
        state_set = set(self.states)
        for s, p in init.items():
            if p > 0 and s not in state_set:
                raise SupportOutsideActivity(
                    f"initial mass on {s!r} outside activity {self.name}"
                )
        if bounds_by_index is None:
            indices = list(range(1, self.n_secondary + 1))
            bounds = [0.0] * len(indices)
        else:
            indices = sorted(bounds_by_index)
            bounds = [float(bounds_by_index[i]) for i in indices]
        costs = [self.costs[0]] + [self.costs[i] for i in indices]
        return CsspModel(
            states=self.states,
            initial_dist=dict(init),
            goals=self.goals,
            actions=self.actions,
            transition=self.transition,
            costs=costs,
            bounds=bounds,
        )


@dataclass(frozen=True)
class HcsspConstraint:
    """Bound on the likelihood-weighted expected secondary costs of a set of
    activities; ``cost_index[name]`` picks which secondary cost of each."""

    activities: Tuple[str, ...]
    cost_index: Mapping[str, int]
    bound: float

    def __init__(self, activities, cost_index, bound):
        object.__setattr__(self, "activities", tuple(activities))
        object.__setattr__(self, "cost_index", dict(cost_index))
        object.__setattr__(self, "bound", float(bound))


@dataclass(frozen=True)
class ProceduralPolicy:
    """Full assignment of event choice variables."""

    choice_of: Mapping[Event, Choice]

    def __init__(self, choice_of):
        object.__setattr__(self, "choice_of", dict(choice_of))


@dataclass
class HierarchicalSolution:
    """Procedural policy plus one policy per activated activity."""

    rho: ProceduralPolicy
    gamma: Dict[str, DeterministicPolicy]
    objective: Optional[float] = None
    constraint_values: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True)
class HcsspModel:
    """Hierarchical constrained SSP instance."""

    states: Tuple[State, ...]
    initial_dist: Mapping[State, float]
    events: Tuple[Event, ...]
    start_event: Event
    end_event: Event
    choices: Mapping[Event, Tuple[Choice, ...]]
    event_transition: Mapping[Event, Mapping[Choice, Mapping[Event, float]]]
    activities: Mapping[str, Activity]
    constraints: Tuple[HcsspConstraint, ...]

    def __init__(self, initial_dist, events, start_event, end_event, choices,
                 event_transition, activities, constraints, states=None):
        acts = {a.name: a for a in activities} if not isinstance(activities, Mapping) \
            else dict(activities)
        if states is None:
            seen: Dict[State, None] = {}
            for act in acts.values():
                for s in act.states:
                    seen.setdefault(s, None)
            states = tuple(seen)
        object.__setattr__(self, "states", tuple(states))
        object.__setattr__(self, "initial_dist", dict(initial_dist))
        object.__setattr__(self, "events", tuple(events))
        object.__setattr__(self, "start_event", start_event)
        object.__setattr__(self, "end_event", end_event)
        object.__setattr__(self, "choices", {e: tuple(c) for e, c in choices.items()})
        object.__setattr__(self, "event_transition", event_transition)
        object.__setattr__(self, "activities", acts)
        object.__setattr__(self, "constraints", tuple(constraints))

    def edge_activities(self) -> Dict[Tuple[Event, Event], List[str]]:
        """Activity names per (start event, end event) edge, in name order."""
        out: Dict[Tuple[Event, Event], List[str]] = {}
        for name in sorted(self.activities):
            act = self.activities[name]
            out.setdefault((act.start_event, act.end_event), []).append(name)
        return out

    def event_edges(self) -> Dict[Event, List[Event]]:
        """Successor events over the union of all choices' support."""
        out: Dict[Event, List[Event]] = {e: [] for e in self.events}
        for e in self.events:
            seen = []
            for c in self.choices.get(e, ()):
                for e2, p in self.event_transition.get(e, {}).get(c, {}).items():
                    if p > 0 and e2 not in seen:
                        seen.append(e2)
            out[e] = seen
        return out


def event_topological_order(model: HcsspModel) -> List[Event]:
    """Events ordered so that every edge goes forward; raises on cycles."""
    edges = model.event_edges()
    sorter = graphlib.TopologicalSorter({e: [] for e in model.events})
    for e, succs in edges.items():
        for e2 in succs:
            sorter.add(e2, e)
    try:
        order = list(sorter.static_order())
    except graphlib.CycleError as err:
        raise CyclicGraph(f"event graph contains a cycle: {err.args[1]}") from err
    return [e for e in order if e in set(model.events)]


def topological_order(model: HcsspModel) -> List[Activity]:
    """Activities ordered so predecessors precede successors (name tie-break)."""
    order = event_topological_order(model)
    rank = {e: i for i, e in enumerate(order)}
    acts = sorted(
        model.activities.values(),
        key=lambda a: (rank[a.start_event], rank[a.end_event], a.name),
    )
    return acts


def validate_hcssp(model: HcsspModel) -> List[str]:
    """Report all structural invariant violations (empty when valid)."""
    report: List[str] = []
    events = set(model.events)
    if model.start_event not in events:
        report.append(f"start event {model.start_event!r} is not an event")
    if model.end_event not in events:
        report.append(f"end event {model.end_event!r} is not an event")

    for e in model.events:
        if e == model.end_event:
            continue
        if not model.choices.get(e):
            report.append(f"event {e!r} has no choice variable domain")
        for c in model.choices.get(e, ()):
            row = model.event_transition.get(e, {}).get(c, {})
            row_sum = sum(row.values())
            if abs(row_sum - 1.0) > PROB_TOL:
                report.append(
                    f"event transition row for event {e!r}, choice {c!r} "
                    f"sums to {row_sum!r}"
                )
            for e2 in row:
                if e2 not in events:
                    report.append(
                        f"event transition from {e!r} targets unknown event {e2!r}"
                    )

    try:
        event_topological_order(model)
    except CyclicGraph as err:
        report.append(str(err))

    edge_support = {
        (e, e2)
        for e in model.events
        for c in model.choices.get(e, ())
        for e2, p in model.event_transition.get(e, {}).get(c, {}).items()
        if p > 0
    }
    for name in sorted(model.activities):
        act = model.activities[name]
        if (act.start_event, act.end_event) not in edge_support:
            report.append(
                f"activity {name} rides edge ({act.start_event!r}, "
                f"{act.end_event!r}) that no transition realizes"
            )
        probe_init = {act.states[0]: 1.0} if act.states else {}
        try:
            sub = act.to_cssp(probe_init)
            for line in validate_model(sub):
                report.append(f"activity {name}: {line}")
        except Exception as err:  # structural breakage surfaces as a report line
            report.append(f"activity {name}: cannot embed as C-SSP ({err})")

    used: Dict[Tuple[str, int], int] = {}
    for j, con in enumerate(model.constraints):
        for name in con.activities:
            if name not in model.activities:
                report.append(f"constraint {j} names unknown activity {name}")
                continue
            idx = con.cost_index.get(name)
            if idx is None:
                report.append(f"constraint {j} lacks a cost index for {name}")
                continue
            act = model.activities[name]
            if not (1 <= idx <= act.n_secondary):
                report.append(
                    f"constraint {j} uses cost index {idx} outside 1..{act.n_secondary}"
                    f" for activity {name}"
                )
            key = (name, idx)
            if key in used:
                report.append(
                    f"secondary cost {idx} of activity {name} appears in "
                    f"constraints {used[key]} and {j}; each may appear in at most one"
                )
            used.setdefault(key, j)
        if con.bound < 0:
            report.append(f"constraint {j} has negative bound {con.bound}")

    total = sum(model.initial_dist.values())
    if abs(total - 1.0) > PROB_TOL:
        report.append(f"initial distribution sums to {total!r}, expected 1")
    support = {s for s, p in model.initial_dist.items() if p > 0}
    for name in sorted(model.activities):
        act = model.activities[name]
        if act.start_event == model.start_event and not support <= set(act.states):
            report.append(
                f"initial distribution has mass outside first activity {name}"
            )
    return report


def _choice_weights(model: HcsspModel, rho: Optional[ProceduralPolicy],
                    event: Event) -> List[Tuple[Choice, float]]:
    """Choice weighting at an event: the policy's pick, or uniform when
    planning without a procedural policy."""
    domain = model.choices.get(event, ())
    if rho is not None:
        if event not in rho.choice_of:
            raise UnassignedChoice(f"no choice assigned at reachable event {event!r}")
        return [(rho.choice_of[event], 1.0)]
    if not domain:
        return []
    w = 1.0 / len(domain)
    return [(c, w) for c in domain]


def event_reach_probabilities(model: HcsspModel,
                              rho: Optional[ProceduralPolicy]) -> Dict[Event, float]:
    """Probability of visiting each event under the procedural policy.

    With ``rho=None`` choices are weighted uniformly, which is the planning
    prior used when no procedural policy exists yet.
    """
    reach = {e: 0.0 for e in model.events}
    reach[model.start_event] = 1.0
    for e in event_topological_order(model):
        if reach[e] <= 0 or e == model.end_event:
            continue
        for c, w in _choice_weights(model, rho, e):
            for e2, p in model.event_transition.get(e, {}).get(c, {}).items():
                reach[e2] += reach[e] * w * p
    return reach


def activity_likelihood(model: HcsspModel, rho: ProceduralPolicy,
                        activity) -> float:
    """Probability that the activity's edge is traversed under ``rho``."""
    act = model.activities[activity] if isinstance(activity, str) else activity
    reach = event_reach_probabilities(model, rho)
    r = reach[act.start_event]
    if r <= 0:
        return 0.0
    c = rho.choice_of.get(act.start_event)
    if c is None:
        raise UnassignedChoice(
            f"no choice assigned at reachable event {act.start_event!r}"
        )
    p = model.event_transition.get(act.start_event, {}).get(c, {}).get(act.end_event, 0.0)
    return r * p


def _ancestor_events(model: HcsspModel, target: Event) -> List[Event]:
    """Events from which ``target`` is reachable (excluding target)."""
    edges = model.event_edges()
    preds: Dict[Event, List[Event]] = {e: [] for e in model.events}
    for e, succs in edges.items():
        for e2 in succs:
            preds[e2].append(e)
    seen = {target}
    stack = [target]
    while stack:
        e = stack.pop()
        for p in preds[e]:
            if p not in seen:
                seen.add(p)
                stack.append(p)
    seen.discard(target)
    return [e for e in model.events if e in seen]


def min_activity_likelihood(model: HcsspModel, activity) -> float:
    """Smallest positive execution likelihood over all activating procedural
    policies.

    Exhaustive over choice assignments; only the activity's ancestor events
    influence its reach probability, so enumeration is restricted to them.
    When the event graph is a tree the unique root path makes the minimum a
    product of per-edge minima, with no enumeration at all.
    """
    act = model.activities[activity] if isinstance(activity, str) else activity
    start, end = act.start_event, act.end_event
    edge_probs = [
        model.event_transition.get(start, {}).get(c, {}).get(end, 0.0)
        for c in model.choices.get(start, ())
    ]
    positive_edge = [p for p in edge_probs if p > 0]
    if not positive_edge:
        raise NeverActivated(f"no choice at {start!r} reaches {end!r}")
    min_edge = min(positive_edge)

    tree_reach = _tree_min_reach(model, start)
    if tree_reach is not None:
        if tree_reach <= 0:
            raise NeverActivated(
                f"no procedural policy activates activity {act.name}"
            )
        return tree_reach * min_edge

    ancestors = [e for e in _ancestor_events(model, start) if model.choices.get(e)]
    best_reach = None
    domains = [model.choices[e] for e in ancestors]
    for combo in itertools.product(*domains) if ancestors else [()]:
        rho = ProceduralPolicy(dict(zip(ancestors, combo)))
        reach = _reach_over(model, rho, start)
        if reach > 0 and (best_reach is None or reach < best_reach):
            best_reach = reach
    if best_reach is None:
        raise NeverActivated(
            f"no procedural policy activates activity {act.name}"
        )
    return best_reach * min_edge


def _tree_min_reach(model: HcsspModel, target: Event) -> Optional[float]:
    """Minimum positive reach probability when every event has one parent.

    Returns None when the graph is not a tree rooted at the start event;
    returns 0.0 when the target hangs off an unreachable component.
    """
    parents: Dict[Event, List[Tuple[Event, Choice, float]]] = {}
    for e in model.events:
        for c in model.choices.get(e, ()):
            for e2, p in model.event_transition.get(e, {}).get(c, {}).items():
                if p > 0:
                    parents.setdefault(e2, []).append((e, c, p))
    for e, links in parents.items():
        if len({parent for parent, _, _ in links}) > 1:
            return None
    reach = 1.0
    node = target
    seen = set()
    while node != model.start_event:
        if node in seen or node not in parents:
            return 0.0
        seen.add(node)
        links = parents[node]
        # One parent event; the cheapest choice that still reaches the node.
        reach *= min(p for _, _, p in links)
        node = links[0][0]
    return reach


def _reach_over(model: HcsspModel, partial_rho: ProceduralPolicy,
                target: Event) -> float:
    """Reach probability of ``target`` given choices at its ancestors only."""
    reach = {e: 0.0 for e in model.events}
    reach[model.start_event] = 1.0
    assigned = partial_rho.choice_of
    for e in event_topological_order(model):
        if e == target:
            break
        if reach[e] <= 0 or e == model.end_event:
            continue
        c = assigned.get(e)
        if c is None:
            continue
        for e2, p in model.event_transition.get(e, {}).get(c, {}).items():
            reach[e2] += reach[e] * p
    return reach[target]


@dataclass
class ActivityEvaluation:
    """Exact per-activity quantities under a fixed hierarchical solution."""

    likelihood: float
    initial: Dict[State, float]
    f: float
    raw_g: Tuple[float, ...]
    termination: Dict[State, float]


def _restrict_distribution(dist: Mapping[State, float], states,
                           context: str) -> Dict[State, float]:
    allowed = set(states)
    kept = {s: p for s, p in dist.items() if p > 0 and s in allowed}
    total = sum(kept.values())
    if total <= 0:
        raise EmptySupport(f"{context}: no probability mass inside the activity")
    return {s: p / total for s, p in kept.items()}


def propagate_flow(model: HcsspModel, rho: Optional[ProceduralPolicy],
                   gamma: Mapping[str, DeterministicPolicy],
                   evaluate: bool = True, until: Optional[Event] = None):
    """Walk the event graph, chaining activity distributions along edges.

    Returns ``(arrival, records)``: per-event arrival state distributions
    (conditioned on reaching the event) and per-activity
    ``ActivityEvaluation`` records for the activities that were evaluated
    (activated ones when ``rho`` is given, all reachable ones under the
    uniform planning prior otherwise).

    Activity-free edges propagate the upstream arrival distribution
    unchanged, so chains of pure events compose with the flow constraints.
    With ``until`` set, the walk covers only ancestors of that event and
    stops there, so policies are required only for upstream activities.
    """
    reach = event_reach_probabilities(model, rho)
    edge_acts = model.edge_activities()
    arrival: Dict[Event, Dict[State, float]] = {
        model.start_event: dict(model.initial_dist)
    }
    incoming: Dict[Event, List[Tuple[float, Dict[State, float]]]] = {}
    records: Dict[str, ActivityEvaluation] = {}
    scope = None
    if until is not None:
        scope = set(_ancestor_events(model, until))
        scope.add(until)

    for e in event_topological_order(model):
        if scope is not None and e not in scope:
            continue
        if e != model.start_event:
            mix = incoming.get(e)
            if not mix:
                continue
            total = sum(w for w, _ in mix)
            if total <= 0:
                continue
            blended: Dict[State, float] = {}
            for w, dist in mix:
                for s, p in dist.items():
                    blended[s] = blended.get(s, 0.0) + (w / total) * p
            arrival[e] = blended
        if e == until:
            break
        if e == model.end_event or reach.get(e, 0.0) <= 0:
            continue
        if e not in arrival:
            continue
        for c, w in _choice_weights(model, rho, e):
            for e2, p in model.event_transition.get(e, {}).get(c, {}).items():
                if p <= 0:
                    continue
                weight = reach[e] * w * p
                names = edge_acts.get((e, e2), [])
                if not names:
                    incoming.setdefault(e2, []).append((weight, arrival[e]))
                    continue
                share = weight / len(names)
                for name in names:
                    act = model.activities[name]
                    init = _restrict_distribution(
                        arrival[e], act.states, f"activity {name}"
                    )
                    if name not in records:
                        if evaluate:
                            policy = gamma.get(name)
                            if policy is None:
                                raise MissingPolicy(
                                    f"activated activity {name} has no policy"
                                )
                            sub = act.to_cssp(init)
                            pv = evaluate_policy(sub, policy)
                            term = absorption_distribution(sub, policy)
                            records[name] = ActivityEvaluation(
                                likelihood=weight, initial=init, f=pv.f,
                                raw_g=pv.raw_g, termination=term,
                            )
                        else:
                            records[name] = ActivityEvaluation(
                                likelihood=weight, initial=init, f=0.0,
                                raw_g=(), termination={},
                            )
                    else:
                        records[name].likelihood += weight
                    if evaluate:
                        incoming.setdefault(e2, []).append(
                            (share, records[name].termination)
                        )
    return arrival, records


def chain_distributions(model: HcsspModel, rho: Optional[ProceduralPolicy],
                        gamma_prefix: Mapping[str, DeterministicPolicy],
                        activity) -> Dict[State, float]:
    """Initial distribution for the given activity under chained flow.

    The first activities receive the model's initial distribution; later ones
    the likelihood-weighted mixture of their predecessors' termination
    distributions, restricted and renormalized to the activity's states.
    """
    act = model.activities[activity] if isinstance(activity, str) else activity
    if act.start_event == model.start_event:
        return _restrict_distribution(
            model.initial_dist, act.states, f"activity {act.name}"
        )
    arrival, _ = propagate_flow(model, rho, gamma_prefix, evaluate=True,
                                until=act.start_event)
    if act.start_event not in arrival:
        raise EmptySupport(
            f"activity {act.name}: start event {act.start_event!r} receives no flow"
        )
    return _restrict_distribution(
        arrival[act.start_event], act.states, f"activity {act.name}"
    )


def evaluate_solution(model: HcsspModel, sol: HierarchicalSolution
                      ) -> Tuple[float, Tuple[float, ...], bool]:
    """Exact objective, per-constraint values, and feasibility of a solution.

    The objective is the likelihood-weighted sum of activated activities'
    expected primary costs; constraint j sums the likelihood-weighted
    expected secondary costs named by its index map.
    """
    _, records = propagate_flow(model, sol.rho, sol.gamma, evaluate=True)
    objective = sum(rec.likelihood * rec.f for rec in records.values())
    values = []
    for con in model.constraints:
        total = 0.0
        for name in con.activities:
            rec = records.get(name)
            if rec is None:
                continue
            idx = con.cost_index[name]
            total += rec.likelihood * rec.raw_g[idx - 1]
        values.append(total)
    feasible = all(v <= con.bound + CONSTRAINT_TOL
                   for v, con in zip(values, model.constraints))
    return objective, tuple(values), feasible


# -- JSON interface ------------------------------------------------------


def hcssp_to_json(model: HcsspModel) -> Dict[str, Any]:
    return {
        "events": list(model.events),
        "start_event": model.start_event,
        "end_event": model.end_event,
        "choices": {e: list(c) for e, c in model.choices.items()},
        "event_transitions": {
            e: {c: dict(row) for c, row in per.items()}
            for e, per in model.event_transition.items()
        },
        "initial": dict(model.initial_dist),
        "activities": {
            name: {
                "start_event": act.start_event,
                "end_event": act.end_event,
                "states": list(act.states),
                "actions": {s: list(a) for s, a in act.actions.items()},
                "transitions": {
                    s: {a: dict(row) for a, row in per.items()}
                    for s, per in act.transition.items()
                },
                "costs": [
                    {s: {a: dict(row) for a, row in per.items()}
                     for s, per in table.items()}
                    for table in act.costs
                ],
                "goals": sorted(act.goals, key=repr),
            }
            for name, act in sorted(model.activities.items())
        },
        "constraints": [
            {
                "activities": list(con.activities),
                "cost_index": dict(con.cost_index),
                "bound": con.bound,
            }
            for con in model.constraints
        ],
    }


def hcssp_from_json(data: Mapping[str, Any]) -> HcsspModel:
    required = ["events", "start_event", "end_event", "choices",
                "event_transitions", "initial", "activities", "constraints"]
    for key in required:
        if key not in data:
            raise KeyError(f"problem file is missing required key {key!r}")
    activities = {
        name: Activity(
            name=name,
            start_event=frag["start_event"],
            end_event=frag["end_event"],
            states=list(frag["states"]),
            actions={s: list(a) for s, a in frag["actions"].items()},
            transition={
                s: {a: {s2: float(p) for s2, p in row.items()}
                    for a, row in per.items()}
                for s, per in frag["transitions"].items()
            },
            costs=[
                {s: {a: {s2: float(v) for s2, v in row.items()}
                     for a, row in per.items()}
                 for s, per in table.items()}
                for table in frag["costs"]
            ],
            goals=set(frag["goals"]),
        )
        for name, frag in data["activities"].items()
    }
    constraints = [
        HcsspConstraint(
            activities=list(con["activities"]),
            cost_index={k: int(v) for k, v in con["cost_index"].items()},
            bound=float(con["bound"]),
        )
        for con in data["constraints"]
    ]
    return HcsspModel(
        initial_dist={s: float(p) for s, p in data["initial"].items()},
        events=list(data["events"]),
        start_event=data["start_event"],
        end_event=data["end_event"],
        choices={e: list(c) for e, c in data["choices"].items()},
        event_transition={
            e: {c: {e2: float(p) for e2, p in row.items()} for c, row in per.items()}
            for e, per in data["event_transitions"].items()
        },
        activities=activities,
        constraints=constraints,
    )
