"""Brute-force oracles and Monte Carlo rollout harnesses.

These paths are deliberately independent of the solvers: enumeration works on
dense per-assignment linear algebra, and rollouts are pure simulation. They
exist to certify solver outputs on small instances and to sanity-check exact
evaluations statistically.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .cssp import CsspModel, DeterministicPolicy, State
from .errors import TooLarge
from .hierarchy import (
    HcsspModel,
    HierarchicalSolution,
    ProceduralPolicy,
    event_topological_order,
    evaluate_solution,
)

ENUMERATION_CAP = 10**6
FEASIBLE_TOL = 0.0
BOUND_TOL = 1e-9


@dataclass
class OracleResult:
    """Enumeration outcome: the optimum, a witness, and the candidate count."""

    optimum: float
    argmin: Optional[object]
    count: int

    @property
    def infeasible(self) -> bool:
        return not math.isfinite(self.optimum)


# -- deterministic-policy enumeration for C-SSPs ---------------------------


def _any_policy_reachable(model: CsspModel) -> List[State]:
    """States reachable from the initial support under some action sequence."""
    support = [s for s, p in model.initial_dist.items() if p > 0]
    seen = {s for s in support if s not in model.goals}
    stack = list(seen)
    while stack:
        s = stack.pop()
        for a in model.actions.get(s, ()):
            for s2, p in model.transition.get(s, {}).get(a, {}).items():
                if p > 0 and s2 not in model.goals and s2 not in seen:
                    seen.add(s2)
                    stack.append(s2)
    return [s for s in model.states if s in seen]


def brute_force_cssp(model: CsspModel, chunk_size: int = 20000) -> OracleResult:
    """Exact constrained optimum by enumerating all deterministic assignments.

    Enumerates action assignments over the any-policy-reachable states,
    discards improper ones by graph closure, solves each induced absorbing
    chain densely, and returns the feasible minimum (infinite when none).
    """
    states = _any_policy_reachable(model)
    r = len(states)
    if r == 0:
        return OracleResult(0.0, DeterministicPolicy({}), 1)
    action_lists = [model.actions.get(s, ()) for s in states]
    if any(len(al) == 0 for al in action_lists):
        return OracleResult(math.inf, None, 0)
    sizes = [len(al) for al in action_lists]
    total = 1
    for n in sizes:
        total *= n
        if total > ENUMERATION_CAP:
            raise TooLarge(
                f"assignment count exceeds the {ENUMERATION_CAP} enumeration cap"
            )

    idx = {s: i for i, s in enumerate(states)}
    n_cost = len(model.costs)
    goal_col = r  # all goals collapse to one absorbing column
    # Per (state, action): successor columns, probabilities, expected costs.
    k_max = 1
    for s in states:
        for a in model.actions[s]:
            k_max = max(k_max, len(model.transition[s][a]))
    a_max = max(sizes)
    succ = np.full((r, a_max, k_max), goal_col, dtype=np.int64)
    prob = np.zeros((r, a_max, k_max))
    exp_cost = np.zeros((r, a_max, n_cost))
    for i, s in enumerate(states):
        for j, a in enumerate(model.actions[s]):
            for k, (s2, p) in enumerate(model.transition[s][a].items()):
                succ[i, j, k] = idx.get(s2, goal_col)
                prob[i, j, k] = p
                for c in range(n_cost):
                    exp_cost[i, j, c] += p * model.cost_entry(c, s, a, s2)

    init_w = np.zeros(r)
    for s, p in model.initial_dist.items():
        if s in idx:
            init_w[idx[s]] = p
    start_mask = init_w > 0
    bounds = np.asarray(model.bounds)

    radices = np.asarray(sizes, dtype=np.int64)
    place = np.ones(r, dtype=np.int64)
    for i in range(r - 2, -1, -1):
        place[i] = place[i + 1] * radices[i + 1]

    best = math.inf
    best_combo: Optional[np.ndarray] = None
    examined = 0
    rows = np.arange(r)
    for start in range(0, total, chunk_size):
        count = min(chunk_size, total - start)
        combo_ids = np.arange(start, start + count, dtype=np.int64)
        digits = (combo_ids[:, None] // place[None, :]) % radices[None, :]

        sidx = succ[rows[None, :, None], digits[:, :, None], :]  # (b, r, k)
        pvals = prob[rows[None, :, None], digits[:, :, None], :]
        P = np.zeros((count, r, r))
        direct_goal = np.zeros((count, r), dtype=bool)
        b_ar = np.repeat(np.arange(count), r * k_max)
        s_ar = np.tile(np.repeat(rows, k_max), count)
        t_ar = sidx.reshape(-1)
        p_ar = pvals.reshape(-1)
        interior = t_ar < r
        np.add.at(
            P,
            (b_ar[interior], s_ar[interior], t_ar[interior]),
            p_ar[interior],
        )
        gm = (~interior) & (p_ar > 0)
        direct_goal[b_ar[gm], s_ar[gm]] = True

        edges = P > 0
        can = direct_goal.copy()
        for _ in range(r):
            can = can | (edges & can[:, None, :]).any(axis=2)
        reach = np.broadcast_to(start_mask, (count, r)).copy()
        for _ in range(r):
            reach = reach | (reach[:, :, None] & edges).any(axis=1)
        proper = ~(reach & ~can).any(axis=1)
        examined += count
        if not proper.any():
            continue

        Pp = P[proper]
        # Trap rows (states that cannot reach the goal) are unreachable in
        # proper assignments; zeroing them keeps I - P nonsingular.
        trap = ~can[proper]
        Pp = np.where(trap[:, :, None], 0.0, Pp)
        cp = exp_cost[rows[None, :], digits[proper][:, :], :]
        A = np.broadcast_to(np.eye(r), Pp.shape) - Pp
        V = np.linalg.solve(A, cp)
        totals = np.einsum("j,bjc->bc", init_w, V)
        raw_g = totals[:, 1:]
        feasible = (raw_g - bounds[None, :] <= FEASIBLE_TOL).all(axis=1)
        if feasible.any():
            fvals = np.where(feasible, totals[:, 0], np.inf)
            local = int(np.argmin(fvals))
            if fvals[local] < best:
                best = float(fvals[local])
                best_combo = digits[proper][local].copy()

    argmin = None
    if best_combo is not None:
        argmin = DeterministicPolicy(
            {states[i]: model.actions[states[i]][best_combo[i]] for i in range(r)}
        )
    return OracleResult(best if best_combo is not None else math.inf,
                        argmin, examined)


# -- hierarchical enumeration ----------------------------------------------


def _policy_tables(model: CsspModel) -> Tuple[List[DeterministicPolicy], np.ndarray]:
    """All proper assignments of a small C-SSP with their exact cost vectors."""
    states = _any_policy_reachable(model)
    r = len(states)
    n_cost = len(model.costs)
    if r == 0:
        return [DeterministicPolicy({})], np.zeros((1, n_cost))
    action_lists = [model.actions.get(s, ()) for s in states]
    if any(len(al) == 0 for al in action_lists):
        return [], np.zeros((0, n_cost))
    policies: List[DeterministicPolicy] = []
    rows: List[np.ndarray] = []
    from .cssp import evaluate_policy
    from .errors import ImproperPolicy, UnassignedState

    for combo in itertools.product(*action_lists):
        policy = DeterministicPolicy(dict(zip(states, combo)))
        try:
            pv = evaluate_policy(model, policy)
        except (ImproperPolicy, UnassignedState):
            continue
        policies.append(policy)
        rows.append(np.asarray((pv.f,) + pv.raw_g))
    return policies, np.asarray(rows).reshape(len(policies), n_cost)


def _fixed_point_inits(model: HcsspModel) -> Optional[Dict[str, Dict[State, float]]]:
    """Per-activity initial distributions when chaining is policy-independent.

    Holds when flow arrives at every event as a single point mass regardless
    of choices: each activity has one goal state and all routes into an event
    deliver the same state. Returns None when that structure is absent.
    """
    support = [s for s, p in model.initial_dist.items() if p > 0]
    if len(support) != 1:
        return None
    arrival_point: Dict = {model.start_event: support[0]}
    edge_acts = model.edge_activities()
    inits: Dict[str, Dict[State, float]] = {}
    for e in event_topological_order(model):
        if e not in arrival_point or e == model.end_event:
            continue
        point = arrival_point[e]
        for c in model.choices.get(e, ()):
            for e2, p in model.event_transition.get(e, {}).get(c, {}).items():
                if p <= 0:
                    continue
                names = edge_acts.get((e, e2), [])
                if names:
                    carried = set()
                    for name in names:
                        act = model.activities[name]
                        if len(act.goals) != 1 or point not in set(act.states):
                            return None
                        inits.setdefault(name, {point: 1.0})
                        carried.add(next(iter(act.goals)))
                    if len(carried) != 1:
                        return None
                    delivered = carried.pop()
                else:
                    delivered = point
                if e2 in arrival_point and arrival_point[e2] != delivered:
                    return None
                arrival_point[e2] = delivered
    return inits


def _procedural_assignments(model: HcsspModel):
    events = [e for e in model.events
              if e != model.end_event and model.choices.get(e)]
    domains = [model.choices[e] for e in events]
    for combo in itertools.product(*domains):
        yield ProceduralPolicy(dict(zip(events, combo)))


def brute_force_hcssp(model: HcsspModel,
                      activity_bounds: Optional[Mapping[Tuple[str, int],
                                                        Tuple[float, float]]] = None,
                      enforce: str = "box") -> OracleResult:
    """Exact hierarchical optimum by enumerating procedural and activity
    policies jointly, with chained distributions.

    ``activity_bounds`` optionally restricts activated activities' expected
    secondary costs to per-(activity, index) intervals: ``enforce="upper"``
    rejects only costs above the interval, ``"box"`` rejects costs outside it.
    """
    count_bound = 1
    for e in model.events:
        if e != model.end_event and model.choices.get(e):
            count_bound *= len(model.choices[e])
    inits = _fixed_point_inits(model)
    if inits is None:
        return _brute_force_hcssp_slow(model, activity_bounds, enforce)

    tables: Dict[str, Tuple[List[DeterministicPolicy], np.ndarray]] = {}
    for name in sorted(model.activities):
        act = model.activities[name]
        if name not in inits:
            continue  # unreachable on every route
        sub = act.to_cssp(inits[name])
        tables[name] = _policy_tables(sub)
        count_bound *= max(len(tables[name][0]), 1)
        if count_bound > ENUMERATION_CAP:
            raise TooLarge(
                f"joint candidate count exceeds the {ENUMERATION_CAP} cap"
            )

    index_of = {
        (name, con.cost_index[name]): j
        for j, con in enumerate(model.constraints)
        for name in con.activities
    }
    best = math.inf
    best_sol: Optional[HierarchicalSolution] = None
    examined = 0
    for rho in _procedural_assignments(model):
        from .hierarchy import activity_likelihood

        active = [
            (name, activity_likelihood(model, rho, name))
            for name in sorted(model.activities)
        ]
        active = [(n, like) for n, like in active if like > 0]
        if any(n not in tables or not tables[n][0] for n, _ in active):
            continue
        shapes = [len(tables[n][0]) for n, _ in active]
        if not active:
            continue
        m = len(active)
        objective = np.zeros(shapes)
        cons = np.zeros([len(model.constraints)] + shapes)
        ok = np.ones(shapes, dtype=bool)
        for axis, (name, like) in enumerate(active):
            _, values = tables[name]
            shape = [1] * m
            shape[axis] = shapes[axis]
            objective = objective + like * values[:, 0].reshape(shape)
            for j, con in enumerate(model.constraints):
                if name in set(con.activities):
                    col = con.cost_index[name]
                    cons[j] = cons[j] + like * values[:, col].reshape(shape)
            if activity_bounds:
                for (bname, bidx), (lo, hi) in activity_bounds.items():
                    if bname != name:
                        continue
                    gvals = values[:, bidx].reshape(shape)
                    within = gvals <= hi + BOUND_TOL
                    if enforce == "box":
                        within = within & (gvals >= lo - BOUND_TOL)
                    ok = ok & within
        for j, con in enumerate(model.constraints):
            ok = ok & (cons[j] <= con.bound + BOUND_TOL)
        examined += int(np.prod(shapes))
        masked = np.where(ok, objective, np.inf)
        flat = int(np.argmin(masked))
        if masked.reshape(-1)[flat] < best:
            best = float(masked.reshape(-1)[flat])
            picks = np.unravel_index(flat, shapes)
            gamma = {
                name: tables[name][0][picks[axis]]
                for axis, (name, _) in enumerate(active)
            }
            best_sol = HierarchicalSolution(rho=rho, gamma=gamma)
    if best_sol is not None:
        objective, values, feasible = evaluate_solution(model, best_sol)
        best_sol.objective = objective
        best_sol.constraint_values = values
    return OracleResult(best, best_sol, examined)


def _brute_force_hcssp_slow(model, activity_bounds, enforce) -> OracleResult:
    """Fallback joint enumeration with full chained re-evaluation."""
    best = math.inf
    best_sol = None
    examined = 0
    from .hierarchy import activity_likelihood

    for rho in _procedural_assignments(model):
        active = [
            name for name in sorted(model.activities)
            if activity_likelihood(model, rho, name) > 0
        ]
        sub_policies: List[List[DeterministicPolicy]] = []
        for name in active:
            act = model.activities[name]
            states = [s for s in act.states if s not in act.goals]
            combos = [
                DeterministicPolicy(dict(zip(states, combo)))
                for combo in itertools.product(
                    *(act.actions.get(s, ()) for s in states)
                )
            ]
            sub_policies.append(combos)
        for combo in itertools.product(*sub_policies):
            examined += 1
            if examined > ENUMERATION_CAP:
                raise TooLarge(
                    f"joint candidate count exceeds the {ENUMERATION_CAP} cap"
                )
            sol = HierarchicalSolution(rho=rho, gamma=dict(zip(active, combo)))
            try:
                objective, values, feasible = evaluate_solution(model, sol)
            except Exception:
                continue
            if not feasible:
                continue
            if activity_bounds and not _within_bounds(
                model, sol, activity_bounds, enforce
            ):
                continue
            if objective < best:
                best = objective
                sol.objective = objective
                sol.constraint_values = values
                best_sol = sol
    return OracleResult(best, best_sol, examined)


def _within_bounds(model, sol, activity_bounds, enforce) -> bool:
    from .hierarchy import propagate_flow

    _, records = propagate_flow(model, sol.rho, sol.gamma, evaluate=True)
    for (name, idx), (lo, hi) in activity_bounds.items():
        rec = records.get(name)
        if rec is None:
            continue
        g = rec.raw_g[idx - 1]
        if g > hi + BOUND_TOL:
            return False
        if enforce == "box" and g < lo - BOUND_TOL:
            return False
    return True


# -- Monte Carlo rollout harness -------------------------------------------


class _PolicyTables:
    """Sampling tables of the chain induced by a policy on a C-SSP."""

    def __init__(self, model: CsspModel, policy: DeterministicPolicy):
        self.states = list(model.states)
        self.index = {s: i for i, s in enumerate(self.states)}
        self.goal_mask = np.array([s in model.goals for s in self.states])
        n = len(self.states)
        k_max = 1
        for s in self.states:
            a = policy.action_of.get(s)
            if a is not None and s not in model.goals:
                k_max = max(k_max, len(model.transition[s][a]))
        n_cost = len(model.costs)
        self.succ = np.zeros((n, k_max), dtype=np.int64)
        self.cum = np.ones((n, k_max))
        self.cost = np.zeros((n, k_max, n_cost))
        self.defined = np.zeros(n, dtype=bool)
        for s in self.states:
            i = self.index[s]
            if s in model.goals:
                continue
            a = policy.action_of.get(s)
            if a is None:
                continue
            self.defined[i] = True
            row = model.transition[s][a]
            probs = np.array([row[s2] for s2 in row])
            cum = np.cumsum(probs) / probs.sum()
            for k, s2 in enumerate(row):
                self.succ[i, k] = self.index[s2]
                for c in range(n_cost):
                    self.cost[i, k, c] = model.cost_entry(c, s, a, s2)
            self.cum[i, : len(probs)] = cum

    def simulate(self, start_idx: np.ndarray, rng: np.random.Generator,
                 max_steps: int = 100000) -> Tuple[np.ndarray, np.ndarray]:
        """Run all episodes in lockstep; returns (totals, final state index)."""
        n_ep = len(start_idx)
        n_cost = self.cost.shape[2]
        totals = np.zeros((n_ep, n_cost))
        current = start_idx.copy()
        alive = ~self.goal_mask[current]
        for _ in range(max_steps):
            if not alive.any():
                return totals, current
            act_idx = np.nonzero(alive)[0]
            s = current[act_idx]
            if not self.defined[s].all():
                bad = self.states[int(s[~self.defined[s]][0])]
                raise KeyError(f"no action simulated at state {bad!r}")
            u = rng.random(len(act_idx))
            slot = (u[:, None] > self.cum[s]).sum(axis=1)
            totals[act_idx] += self.cost[s, slot, :]
            nxt = self.succ[s, slot]
            current[act_idx] = nxt
            alive[act_idx] = ~self.goal_mask[nxt]
        raise RuntimeError("rollout exceeded the step limit; improper policy?")


def rollout_cssp(model: CsspModel, policy: DeterministicPolicy, n_episodes: int,
                 rng: np.random.Generator,
                 init: Optional[Mapping[State, float]] = None) -> np.ndarray:
    """Per-episode accumulated cost vectors under pure simulation."""
    tables = _PolicyTables(model, policy)
    dist = model.initial_dist if init is None else init
    support = sorted(dist, key=repr)
    probs = np.array([dist[s] for s in support], dtype=float)
    probs = probs / probs.sum()
    picks = rng.choice(len(support), size=n_episodes, p=probs)
    start_idx = np.array([tables.index[support[k]] for k in picks])
    totals, _ = tables.simulate(start_idx, rng)
    return totals


def rollout_solution(model: HcsspModel, sol: HierarchicalSolution,
                     n_episodes: int, rng: np.random.Generator
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """Simulate full hierarchical executions.

    Returns ``(primary, constraint_costs)`` with one row per episode;
    ``constraint_costs[:, j]`` accumulates the secondary costs that
    constraint j meters, across all executed activities.
    """
    rho = sol.rho
    state_index: Dict[State, int] = {s: i for i, s in enumerate(model.states)}
    dist = model.initial_dist
    support = sorted(dist, key=repr)
    probs = np.array([dist[s] for s in support], dtype=float)
    probs = probs / probs.sum()
    picks = rng.choice(len(support), size=n_episodes, p=probs)
    current_state = np.array([state_index[support[k]] for k in picks])
    current_event = np.zeros(n_episodes, dtype=np.int64)
    event_index = {e: i for i, e in enumerate(model.events)}
    current_event[:] = event_index[model.start_event]

    primary = np.zeros(n_episodes)
    n_con = len(model.constraints)
    con_costs = np.zeros((n_episodes, n_con))
    metered = {
        (name, con.cost_index[name]): j
        for j, con in enumerate(model.constraints)
        for name in con.activities
    }
    edge_acts = model.edge_activities()
    tables_cache: Dict[Tuple[str, str], _PolicyTables] = {}

    for e in event_topological_order(model):
        if e == model.end_event:
            continue
        here = np.nonzero(current_event == event_index[e])[0]
        if len(here) == 0:
            continue
        c = rho.choice_of[e]
        row = model.event_transition[e][c]
        succ_events = sorted(row, key=repr)
        cum = np.cumsum([row[x] for x in succ_events])
        cum = cum / cum[-1]
        u = rng.random(len(here))
        choice_slot = (u[:, None] > cum[None, :]).sum(axis=1)
        for slot, e2 in enumerate(succ_events):
            moved = here[choice_slot == slot]
            if len(moved) == 0:
                continue
            for name in edge_acts.get((e, e2), []):
                act = model.activities[name]
                policy = sol.gamma.get(name)
                if policy is None:
                    raise KeyError(f"no policy for executed activity {name}")
                key = (name, "tables")
                if key not in tables_cache:
                    sub = act.to_cssp({act.states[0]: 1.0})
                    tables_cache[key] = _PolicyTables(sub, policy)
                tables = tables_cache[key]
                local_start = np.array(
                    [tables.index[model.states[gi]] for gi in current_state[moved]]
                )
                totals, final = tables.simulate(local_start, rng)
                primary[moved] += totals[:, 0]
                for idx in range(1, act.n_secondary + 1):
                    j = metered.get((name, idx))
                    if j is not None:
                        con_costs[moved, j] += totals[:, idx]
                current_state[moved] = np.array(
                    [state_index[tables.states[fi]] for fi in final]
                )
            current_event[moved] = event_index[e2]
    return primary, con_costs
