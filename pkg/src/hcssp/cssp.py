"""Explicit constrained stochastic shortest path models and exact policy evaluation.

A C-SSP couples a goal-directed MDP with an indexed list of cost functions:
index 0 is the primary objective and indices 1..N are secondary costs, each
with an upper bound. Policies are deterministic state-to-action maps and are
evaluated exactly by solving the linear fixed-point system of the induced
absorbing Markov chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DimensionMismatch,
    ImproperPolicy,
    UnassignedState,
)

State = Hashable
Action = Hashable

PROB_TOL = 1e-9
# Direct linear solve below this many reachable states, iterative sweeps above.
DIRECT_SOLVE_LIMIT = 5000
ITER_TOL = 1e-9
ITER_MAX_SWEEPS = 10**6


@dataclass(frozen=True)
class CsspModel:
    """Explicit finite C-SSP.

    Attributes:
        states: ordered state identifiers (order fixes all tie-breaking).
        initial_dist: probability map over states, summing to one.
        goals: nonempty subset of states; absorbing and cost-free.
        actions: per-state action lists (goal states are normalized to none).
        transition: transition[s][a] is a probability map over successors.
        costs: cost tables; costs[i][s][a][s'] is the i-th cost of the move.
            Index 0 is the primary cost; missing entries are zero.
        bounds: upper bounds for cost indices 1..N.
    """

    states: Tuple[State, ...]
    initial_dist: Mapping[State, float]
    goals: frozenset
    actions: Mapping[State, Tuple[Action, ...]]
    transition: Mapping[State, Mapping[Action, Mapping[State, float]]]
    costs: Tuple[Mapping[State, Mapping[Action, Mapping[State, float]]], ...]
    bounds: Tuple[float, ...]

    def __init__(self, states, initial_dist, goals, actions, transition, costs, bounds):
        object.__setattr__(self, "states", tuple(states))
        object.__setattr__(self, "initial_dist", dict(initial_dist))
        object.__setattr__(self, "goals", frozenset(goals))
        # Goal states are absorbing with zero cost under every action; they are
        # normalized to have no actions so the absorbing sink is implicit.
        object.__setattr__(
            self,
            "actions",
            {s: tuple(actions.get(s, ())) for s in states if s not in self.goals},
        )
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "costs", tuple(costs))
        object.__setattr__(self, "bounds", tuple(float(b) for b in bounds))

    @property
    def n_secondary(self) -> int:
        return len(self.costs) - 1

    def cost_entry(self, index: int, s: State, a: Action, s2: State) -> float:
        table = self.costs[index]
        return float(table.get(s, {}).get(a, {}).get(s2, 0.0))

    @cached_property
    def _compiled(self) -> "_CompiledCssp":
        return _CompiledCssp(self)


@dataclass(frozen=True)
class DeterministicPolicy:
    """State-to-action map over non-goal states.

    The domain must cover every state reachable from the model's initial
    distribution; it may assign actions to additional states as well.
    """

    action_of: Mapping[State, Action]

    def __init__(self, action_of):
        object.__setattr__(self, "action_of", dict(action_of))

    def key(self) -> Tuple[Tuple[State, Action], ...]:
        """Canonical hashable form (sorted by repr for mixed key types)."""
        return tuple(sorted(self.action_of.items(), key=lambda kv: repr(kv[0])))


@dataclass(frozen=True)
class PolicyValue:
    """Exact expected costs of a deterministic policy.

    ``g[i] = raw_g[i] - bounds[i]``; feasibility is ``g <= 0`` componentwise.
    """

    f: float
    g: Tuple[float, ...]
    raw_g: Tuple[float, ...]

    def feasible(self, tol: float = 0.0) -> bool:
        return all(gi <= tol for gi in self.g)


@dataclass(frozen=True)
class ScalarizedSsp:
    """Single-cost SSP produced by folding secondary costs into the primary.

    ``evaluate_policy(model).f + offset`` equals the Lagrangian value
    f(pi) + lambda . g(pi) of the original model.
    """

    model: CsspModel
    offset: float


class _CompiledCssp:
    """Index-based arrays for vectorized value iteration and evaluation.

    Non-goal states occupy indices 0..n-1 in model order; goal states follow
    at n..n+G-1 and act as a zero-value sink.
    """

    def __init__(self, model: CsspModel):
        self.model = model
        goals = model.goals
        self.interior: List[State] = [s for s in model.states if s not in goals]
        self.goal_states: List[State] = [s for s in model.states if s in goals]
        self.n = len(self.interior)
        self.n_goal = len(self.goal_states)
        self.index: Dict[State, int] = {s: i for i, s in enumerate(self.interior)}
        for j, s in enumerate(self.goal_states):
            self.index[s] = self.n + j

        self.action_lists: List[Tuple[Action, ...]] = [
            model.actions.get(s, ()) for s in self.interior
        ]
        self.a_max = max((len(al) for al in self.action_lists), default=0)
        n, a_max = self.n, self.a_max
        self.k_max = 1
        for s in self.interior:
            for a in model.actions.get(s, ()):
                row = model.transition.get(s, {}).get(a, {})
                self.k_max = max(self.k_max, len(row))

        self.valid = np.zeros((n, a_max), dtype=bool)
        self.succ_idx = np.zeros((n, a_max, self.k_max), dtype=np.int64)
        self.succ_p = np.zeros((n, a_max, self.k_max))
        n_cost = len(model.costs)
        # Expected immediate cost per (state, action, cost index).
        self.exp_cost = np.zeros((n, a_max, n_cost))

        for i, s in enumerate(self.interior):
            for j, a in enumerate(self.action_lists[i]):
                row = model.transition.get(s, {}).get(a, {})
                if not row:
                    continue
                self.valid[i, j] = True
                for k, (s2, p) in enumerate(row.items()):
                    self.succ_idx[i, j, k] = self.index[s2]
                    self.succ_p[i, j, k] = p
                    for c in range(n_cost):
                        self.exp_cost[i, j, c] += p * model.cost_entry(c, s, a, s2)

    # -- graph helpers -------------------------------------------------

    def proper_state_mask(self, action_mask: Optional[np.ndarray] = None) -> np.ndarray:
        """States from which some policy reaches a goal with probability one.

        Alternates two prunings until a fixpoint: drop actions with a successor
        outside the current candidate set, then drop states that cannot reach a
        goal through the remaining actions.
        """
        if self.n == 0:
            return np.zeros(0, dtype=bool)
        allowed = self.valid.copy()
        if action_mask is not None:
            allowed &= action_mask
        candidate = np.ones(self.n, dtype=bool)
        while True:
            ext = np.concatenate([candidate, np.ones(self.n_goal, dtype=bool)])
            # An action is usable iff every positive-probability successor stays
            # inside candidate-or-goal.
            in_cand = ext[self.succ_idx] | ~(self.succ_p > 0)
            ok_action = allowed & in_cand.all(axis=2)
            reach = self._reach_goal_mask(ok_action, candidate)
            new_candidate = candidate & reach
            if np.array_equal(new_candidate, candidate):
                return candidate
            candidate = new_candidate

    def _reach_goal_mask(self, ok_action: np.ndarray, candidate: np.ndarray) -> np.ndarray:
        """Backward reachability of the goal sink through usable actions."""
        reach = np.zeros(self.n, dtype=bool)
        # Build reverse adjacency once per call; sizes here are modest.
        frontier = list(range(self.n, self.n + self.n_goal))
        reached_ext = np.zeros(self.n + self.n_goal, dtype=bool)
        reached_ext[self.n:] = True
        # Predecessor lists: state i reaches ext node e via (i, j) if p > 0.
        preds: Dict[int, List[int]] = {}
        pos = self.succ_p > 0
        src, act, slot = np.nonzero(pos & ok_action[:, :, None])
        dst = self.succ_idx[src, act, slot]
        for s_i, d_i in zip(src.tolist(), dst.tolist()):
            preds.setdefault(d_i, []).append(s_i)
        # A state is marked once ANY usable action leads toward the goal region;
        # combined with the successor-containment pruning this is exact.
        while frontier:
            e = frontier.pop()
            for s_i in preds.get(e, ()):
                if not reach[s_i] and candidate[s_i]:
                    reach[s_i] = True
                    frontier.append(s_i)
        return reach

    # -- value iteration ------------------------------------------------

    def value_iteration(
        self,
        weights: np.ndarray,
        action_mask: Optional[np.ndarray] = None,
        v_init: Optional[np.ndarray] = None,
        tol: float = ITER_TOL,
        max_sweeps: int = 200000,
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Minimize expected total weighted cost to the goal sink.

        Returns ``(values, greedy_action_index, proper_mask)``. States outside
        the proper set get value ``inf`` and action index ``-1``. Greedy ties
        break toward the lowest action index.
        """
        proper = self.proper_state_mask(action_mask)
        if self.n == 0:
            return np.zeros(0), np.zeros(0, dtype=np.int64), proper
        c = self.exp_cost @ weights
        allowed = self.valid.copy()
        if action_mask is not None:
            allowed &= action_mask
        ext_proper = np.concatenate([proper, np.ones(self.n_goal, dtype=bool)])
        succ_ok = (ext_proper[self.succ_idx] | ~(self.succ_p > 0)).all(axis=2)
        allowed &= succ_ok
        c_masked = np.where(allowed, c, np.inf)

        if v_init is None:
            v = np.zeros(self.n)
        else:
            v = np.where(np.isfinite(v_init), v_init, 0.0)
        v = np.where(proper, v, 0.0)
        v_ext = np.zeros(self.n + self.n_goal)
        if not self.a_max:
            return np.full(self.n, np.inf), np.full(self.n, -1, dtype=np.int64), proper
        for _ in range(max_sweeps):
            v_ext[: self.n] = v
            q = c_masked + (self.succ_p * v_ext[self.succ_idx]).sum(axis=2)
            v_new = np.where(proper, np.min(q, axis=1), 0.0)
            diff = np.max(np.abs(v_new - v)) if self.n else 0.0
            v = v_new
            if diff <= tol:
                break
        v_ext[: self.n] = v
        q = c_masked + (self.succ_p * v_ext[self.succ_idx]).sum(axis=2)
        greedy = np.where(proper, np.argmin(q, axis=1), -1).astype(np.int64)
        return np.where(proper, v, np.inf), greedy, proper

    def policy_action_indices(self, policy: DeterministicPolicy) -> np.ndarray:
        """Map a policy to per-state action indices (-1 where unassigned)."""
        out = np.full(self.n, -1, dtype=np.int64)
        for s, a in policy.action_of.items():
            i = self.index.get(s)
            if i is None or i >= self.n:
                continue
            try:
                out[i] = self.action_lists[i].index(a)
            except ValueError:
                raise UnassignedState(f"policy assigns unknown action {a!r} at state {s!r}")
        return out

    def policy_from_indices(self, indices: np.ndarray, restrict_reachable: bool = False,
                            init: Optional[Mapping[State, float]] = None) -> DeterministicPolicy:
        if restrict_reachable:
            reach = self.reachable_under(indices, init)
            pairs = {
                self.interior[i]: self.action_lists[i][indices[i]]
                for i in range(self.n)
                if reach[i] and indices[i] >= 0
            }
        else:
            pairs = {
                self.interior[i]: self.action_lists[i][indices[i]]
                for i in range(self.n)
                if indices[i] >= 0
            }
        return DeterministicPolicy(pairs)

    def initial_vector(self, init: Optional[Mapping[State, float]] = None) -> np.ndarray:
        dist = self.model.initial_dist if init is None else init
        vec = np.zeros(self.n + self.n_goal)
        for s, p in dist.items():
            vec[self.index[s]] = p
        return vec

    def reachable_under(self, indices: np.ndarray,
                        init: Optional[Mapping[State, float]] = None) -> np.ndarray:
        """Interior states reachable from the initial support under the policy."""
        reach = np.zeros(self.n, dtype=bool)
        for i in self.reachable_order(indices, init):
            reach[i] = True
        return reach

    def reachable_order(self, indices: np.ndarray,
                        init: Optional[Mapping[State, float]] = None) -> List[int]:
        """Reachable interior states in BFS discovery order under the policy.

        Every state's discoverer precedes it, which the next-best policy
        enumeration relies on for its partition to be exact.
        """
        from collections import deque

        vec = self.initial_vector(init)
        seen = np.zeros(self.n, dtype=bool)
        order: List[int] = []
        queue = deque(i for i in range(self.n) if vec[i] > 0)
        for i in queue:
            seen[i] = True
        while queue:
            i = queue.popleft()
            order.append(i)
            j = indices[i]
            if j < 0:
                continue
            succs = sorted(
                int(self.succ_idx[i, j, k])
                for k in range(self.k_max)
                if self.succ_p[i, j, k] > 0
            )
            for d in succs:
                if d < self.n and not seen[d]:
                    seen[d] = True
                    queue.append(d)
        return order


def validate_model(model: CsspModel) -> List[str]:
    """Return a report of violated model invariants (empty when valid)."""
    report: List[str] = []
    state_set = set(model.states)
    if len(state_set) != len(model.states):
        report.append("duplicate state identifiers")
    if not model.goals:
        report.append("goal set is empty")
    for g in model.goals:
        if g not in state_set:
            report.append(f"goal state {g!r} is not a state")

    total = sum(model.initial_dist.values())
    if abs(total - 1.0) > PROB_TOL:
        report.append(f"initial distribution sums to {total!r}, expected 1")
    for s, p in model.initial_dist.items():
        if s not in state_set:
            report.append(f"initial distribution names unknown state {s!r}")
        if p < 0:
            report.append(f"initial probability of state {s!r} is negative")

    for s in model.states:
        if s in model.goals:
            continue
        for a in model.actions.get(s, ()):
            row = model.transition.get(s, {}).get(a, {})
            row_sum = sum(row.values())
            if abs(row_sum - 1.0) > PROB_TOL:
                report.append(
                    f"transition row for state {s!r}, action {a!r} sums to {row_sum!r}"
                )
            for s2, p in row.items():
                if s2 not in state_set:
                    report.append(
                        f"transition from {s!r} via {a!r} targets unknown state {s2!r}"
                    )
                if p < 0:
                    report.append(
                        f"negative transition probability at ({s!r}, {a!r}, {s2!r})"
                    )

    for i, table in enumerate(model.costs):
        for s, per_action in table.items():
            for a, row in per_action.items():
                for s2, value in row.items():
                    if value < 0:
                        report.append(
                            f"cost {i} at ({s!r}, {a!r}, {s2!r}) is negative; "
                            "costs must be nonnegative"
                        )

    if len(model.bounds) != model.n_secondary:
        report.append(
            f"{len(model.bounds)} bounds for {model.n_secondary} secondary cost functions"
        )
    for i, b in enumerate(model.bounds):
        if b < 0:
            report.append(f"bound {i + 1} is negative")

    report.extend(_zero_cost_cycle_report(model))
    return report


def _zero_cost_cycle_report(model: CsspModel) -> List[str]:
    """Detect cycles among non-goal states traversable at zero primary cost.

    Such cycles break well-posedness of the total-cost criterion, so they are
    reported even though well-formed rows may still contain them.
    """
    if not model.costs:
        return []
    adj: Dict[State, set] = {}
    for s in model.states:
        if s in model.goals:
            continue
        for a in model.actions.get(s, ()):
            for s2, p in model.transition.get(s, {}).get(a, {}).items():
                if p > 0 and s2 not in model.goals:
                    if model.cost_entry(0, s, a, s2) == 0.0:
                        adj.setdefault(s, set()).add(s2)
    # Iterative DFS cycle detection over the zero-cost edge graph.
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {s: WHITE for s in adj}
    for root in adj:
        if color[root] != WHITE:
            continue
        stack = [(root, iter(sorted(adj.get(root, ()), key=repr)))]
        color[root] = GRAY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if nxt not in adj:
                    continue
                if color.get(nxt, WHITE) == GRAY:
                    return [
                        "zero-primary-cost cycle through state "
                        f"{nxt!r}; every non-goal cycle must have positive primary cost"
                    ]
                if color.get(nxt, WHITE) == WHITE:
                    color[nxt] = GRAY
                    stack.append((nxt, iter(sorted(adj.get(nxt, ()), key=repr))))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return []


def _policy_chain(model: CsspModel, policy: DeterministicPolicy,
                  init: Optional[Mapping[State, float]] = None):
    """Reachable restriction of the chain induced by the policy.

    Returns ``(comp, reach_idx, P, c_rows, col_of)`` where ``P`` is the
    interior-to-interior transition matrix over reachable states and
    ``c_rows[i]`` the expected immediate cost vector for cost index i.
    """
    comp = model._compiled
    indices = comp.policy_action_indices(policy)
    vec = comp.initial_vector(init)
    if vec.sum() <= 0:
        raise ValueError("initial distribution has no mass")
    reach = comp.reachable_under(indices, init)
    reach_idx = np.nonzero(reach)[0]
    for i in reach_idx:
        if indices[i] < 0:
            raise UnassignedState(
                f"reachable state {comp.interior[i]!r} has no assigned action"
            )
    col_of = {int(i): k for k, i in enumerate(reach_idx)}
    r = len(reach_idx)
    rows, cols, vals = [], [], []
    n_cost = len(model.costs)
    c_rows = np.zeros((n_cost, r))
    for k, i in enumerate(reach_idx):
        j = indices[i]
        c_rows[:, k] = comp.exp_cost[i, j, :]
        for slot in range(comp.k_max):
            p = comp.succ_p[i, j, slot]
            if p > 0:
                d = int(comp.succ_idx[i, j, slot])
                if d < comp.n:
                    rows.append(k)
                    cols.append(col_of[d])
                    vals.append(p)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(r, r))
    return comp, reach_idx, P, c_rows, col_of


def _check_proper(comp: _CompiledCssp, reach_idx: np.ndarray, indices: np.ndarray) -> None:
    """Graph check: every reachable state must reach the goal under the policy."""
    goal_feed = set()
    for i in reach_idx:
        j = indices[i]
        for slot in range(comp.k_max):
            if comp.succ_p[i, j, slot] > 0:
                d = int(comp.succ_idx[i, j, slot])
                if d >= comp.n:
                    goal_feed.add(int(i))
    # Backward BFS from states that step into a goal.
    preds: Dict[int, List[int]] = {}
    for i in reach_idx:
        j = indices[i]
        for slot in range(comp.k_max):
            if comp.succ_p[i, j, slot] > 0:
                d = int(comp.succ_idx[i, j, slot])
                if d < comp.n:
                    preds.setdefault(d, []).append(int(i))
    frontier = list(goal_feed)
    can = set(goal_feed)
    while frontier:
        v = frontier.pop()
        for u in preds.get(v, ()):
            if u not in can:
                can.add(u)
                frontier.append(u)
    missing = [int(i) for i in reach_idx if int(i) not in can]
    if missing:
        s = comp.interior[missing[0]]
        raise ImproperPolicy(
            f"goal unreachable from state {s!r} under the policy; "
            "absorption probability is below one"
        )


def _solve_linear(P: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    """Solve (I - P) x = rhs for an absorbing chain restriction P.

    ``rhs`` may be a vector or an (r, m) matrix of stacked right-hand sides.
    """
    r = P.shape[0]
    if r == 0:
        return np.zeros_like(rhs)
    if r <= DIRECT_SOLVE_LIMIT:
        A = sp.identity(r, format="csc") - P
        x = spla.spsolve(A, rhs)
        return np.asarray(x).reshape(rhs.shape)
    # Iterative fixed-point sweeps; geometric convergence for proper policies.
    x = np.zeros_like(rhs, dtype=float)
    for _ in range(ITER_MAX_SWEEPS):
        x_new = rhs + P @ x
        if np.max(np.abs(x_new - x)) <= ITER_TOL:
            return x_new
        x = x_new
    raise ImproperPolicy("iterative evaluation failed to contract")


def evaluate_policy(model: CsspModel, policy: DeterministicPolicy,
                    init: Optional[Mapping[State, float]] = None) -> PolicyValue:
    """Exact expected accumulated costs from the initial distribution to goal.

    Solves ``V = c + P V`` over the states reachable under the policy. Raises
    ``UnassignedState`` if a reachable state lacks an action and
    ``ImproperPolicy`` if goal absorption is not certain.
    """
    comp, reach_idx, P, c_rows, col_of = _policy_chain(model, policy, init)
    indices = comp.policy_action_indices(policy)
    _check_proper(comp, reach_idx, indices)
    r = len(reach_idx)
    vec = comp.initial_vector(init)
    n_cost = len(model.costs)
    if r == 0:
        raw = np.zeros(n_cost)
    else:
        V = _solve_linear(P, np.ascontiguousarray(c_rows.T))
        V = np.asarray(V).reshape(r, n_cost)
        residual = np.max(np.abs(V - (c_rows.T + P @ V)))
        if residual > 1e-9 * max(1.0, np.max(np.abs(V))):
            raise ImproperPolicy(f"linear system residual {residual:g} too large")
        init_weights = np.array([vec[i] for i in reach_idx])
        raw = init_weights @ V
    if n_cost - 1 != len(model.bounds):
        raise DimensionMismatch(
            f"{n_cost - 1} secondary costs but {len(model.bounds)} bounds"
        )
    f = float(raw[0])
    raw_g = tuple(float(x) for x in raw[1:])
    g = tuple(rg - b for rg, b in zip(raw_g, model.bounds))
    return PolicyValue(f=f, g=g, raw_g=raw_g)


def absorption_distribution(model: CsspModel, policy: DeterministicPolicy,
                            init: Optional[Mapping[State, float]] = None
                            ) -> Dict[State, float]:
    """Distribution over goal states at absorption (termination distribution).

    Computed from the occupancy measure of the reachable policy chain; initial
    mass already on goal states stays there. Total mass is one for proper
    policies.
    """
    comp, reach_idx, P, _, col_of = _policy_chain(model, policy, init)
    indices = comp.policy_action_indices(policy)
    _check_proper(comp, reach_idx, indices)
    vec = comp.initial_vector(init)
    out: Dict[State, float] = {}
    for j, s in enumerate(comp.goal_states):
        if vec[comp.n + j] > 0:
            out[s] = out.get(s, 0.0) + float(vec[comp.n + j])
    r = len(reach_idx)
    if r:
        iota = np.array([vec[i] for i in reach_idx])
        occ = _solve_linear(P.T.tocsr(), iota)
        occ = np.asarray(occ).reshape(r)
        for k, i in enumerate(reach_idx):
            j = indices[i]
            for slot in range(comp.k_max):
                p = comp.succ_p[i, j, slot]
                if p > 0:
                    d = int(comp.succ_idx[i, j, slot])
                    if d >= comp.n:
                        s = comp.goal_states[d - comp.n]
                        out[s] = out.get(s, 0.0) + float(occ[k] * p)
    total = sum(out.values())
    if abs(total - 1.0) > 1e-6:
        raise ImproperPolicy(f"absorption mass {total:g} differs from one")
    # Renormalize away the tiny linear-solve residue for downstream chaining.
    return {s: p / total for s, p in out.items() if p > 0}


def scalarize(model: CsspModel, lam: Sequence[float]) -> ScalarizedSsp:
    """Fold secondary costs into a single cost table with weights ``lam``.

    The returned model has edge costs ``C_0 + sum_i lam[i] * C_i`` and no
    bounds; the constant offset ``-lam . bounds`` is reported separately so
    that scalarized policy value plus offset equals the Lagrangian value.
    """
    lam = [float(x) for x in lam]
    if len(lam) != model.n_secondary:
        raise DimensionMismatch(
            f"lambda has length {len(lam)}, model has {model.n_secondary} secondary costs"
        )
    if any(x < 0 for x in lam):
        raise DimensionMismatch("lambda must be componentwise nonnegative")
    combined: Dict[State, Dict[Action, Dict[State, float]]] = {}
    for s in model.states:
        if s in model.goals:
            continue
        for a in model.actions.get(s, ()):
            for s2 in model.transition.get(s, {}).get(a, {}):
                value = model.cost_entry(0, s, a, s2)
                for i, w in enumerate(lam):
                    if w:
                        value += w * model.cost_entry(i + 1, s, a, s2)
                combined.setdefault(s, {}).setdefault(a, {})[s2] = value
    offset = -sum(w * b for w, b in zip(lam, model.bounds))
    folded = CsspModel(
        states=model.states,
        initial_dist=model.initial_dist,
        goals=model.goals,
        actions=model.actions,
        transition=model.transition,
        costs=[combined],
        bounds=[],
    )
    return ScalarizedSsp(model=folded, offset=offset)


# -- JSON interface ------------------------------------------------------


def model_to_json(model: CsspModel) -> Dict[str, Any]:
    """Serialize to the JSON problem schema (states as given, probs as numbers)."""
    return {
        "states": list(model.states),
        "initial": {s: p for s, p in model.initial_dist.items()},
        "goals": sorted(model.goals, key=repr),
        "actions": {s: list(al) for s, al in model.actions.items() if al},
        "transitions": {
            s: {a: dict(row) for a, row in per.items()}
            for s, per in model.transition.items()
        },
        "costs": [
            {s: {a: dict(row) for a, row in per.items()} for s, per in table.items()}
            for table in model.costs
        ],
        "bounds": list(model.bounds),
    }


def model_from_json(data: Mapping[str, Any]) -> CsspModel:
    """Build a model from the JSON problem schema; structural errors raise."""
    required = ["states", "initial", "goals", "actions", "transitions", "costs", "bounds"]
    for key in required:
        if key not in data:
            raise KeyError(f"problem file is missing required key {key!r}")
    return CsspModel(
        states=list(data["states"]),
        initial_dist={s: float(p) for s, p in data["initial"].items()},
        goals=set(data["goals"]),
        actions={s: list(al) for s, al in data["actions"].items()},
        transition={
            s: {a: {s2: float(p) for s2, p in row.items()} for a, row in per.items()}
            for s, per in data["transitions"].items()
        },
        costs=[
            {
                s: {a: {s2: float(v) for s2, v in row.items()} for a, row in per.items()}
                for s, per in table.items()
            }
            for table in data["costs"]
        ],
        bounds=[float(b) for b in data["bounds"]],
    )
