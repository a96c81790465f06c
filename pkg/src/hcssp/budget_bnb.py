"""Branch-and-bound over the budget-allocation space of a hierarchical model.

Every (activity, secondary index) pair named by a constraint gets a budget
interval; the product of those intervals is the allocation space. The search
repeatedly bisects the partition with the lowest lower bound along its
longest edge and rebounds the children. Bounds come from planning each
activity against the partition's upper limits, then planning the choice layer
with the resulting cost estimates: optimistic estimates give a lower bound,
incumbent-based estimates give a feasible assembled solution whose exact
objective is the upper bound.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Tuple

from .anytime import AnytimeResult, DualConfig, anytime_solve
from .cssp import DeterministicPolicy, State, absorption_distribution
from .errors import (
    ConvergedInfeasible,
    DegeneratePartition,
    EmptySupport,
    HcsspError,
    Infeasible,
    InfeasibleRelaxation,
    NoFeasibleSolution,
)
from .hierarchy import (
    Activity,
    HcsspModel,
    HierarchicalSolution,
    activity_likelihood,
    event_reach_probabilities,
    event_topological_order,
    evaluate_solution,
    min_activity_likelihood,
)
from .reduction import CostEstimates, activity_to_cssp, procedural_from_policy, \
    procedural_to_cssp

logger = logging.getLogger(__name__)

# Sentinel edge cost standing in for an unusable activity; large enough to
# dominate every real plan, small enough to stay in safe float territory.
BIG_COST = 1e12

PairKey = Tuple[str, int]


@dataclass(frozen=True)
class Partition:
    """Axis-aligned box of budget intervals, one per constrained pair."""

    intervals: Mapping[PairKey, Tuple[float, float]]

    def __init__(self, intervals):
        object.__setattr__(
            self,
            "intervals",
            {k: (float(lo), float(hi)) for k, (lo, hi) in intervals.items()},
        )

    def lower(self, name: str, index: int) -> float:
        return self.intervals[(name, index)][0]

    def upper(self, name: str, index: int) -> float:
        return self.intervals[(name, index)][1]

    def sorted_keys(self) -> List[PairKey]:
        return sorted(self.intervals)

    def signature(self) -> Tuple:
        return tuple((k, round(lo, 12), round(hi, 12))
                     for k, (lo, hi) in sorted(self.intervals.items()))


def initial_partition(model: HcsspModel) -> Partition:
    """Box covering every feasible allocation: [0, bound / min likelihood].

    Any feasible solution satisfies L(E|rho) g_E <= bound, and the executing
    likelihood is at least the minimum activating likelihood, so the upper
    limit covers every attainable secondary cost.
    """
    intervals: Dict[PairKey, Tuple[float, float]] = {}
    for con in model.constraints:
        for name in con.activities:
            like = min_activity_likelihood(model, name)
            intervals[(name, con.cost_index[name])] = (0.0, con.bound / like)
    return Partition(intervals)


def split_longest_edge(q: Partition,
                       reference: Optional[Mapping[PairKey, float]] = None
                       ) -> Tuple[Partition, Partition]:
    """Bisect the longest interval at its midpoint (lexicographic tie-break).

    With ``reference`` lengths given, edges are compared relative to them;
    the search passes the initial box so that dimensions whose scales differ
    by orders of magnitude (bound / min-likelihood) are refined evenly.
    """
    best_key = None
    best_len = 0.0
    for key in q.sorted_keys():
        lo, hi = q.intervals[key]
        length = hi - lo
        if reference is not None:
            scale = reference.get(key, 1.0)
            length = length / scale if scale > 0 else 0.0
        if length > best_len:
            best_len = length
            best_key = key
    if best_key is None:
        raise DegeneratePartition("every interval has zero length")
    lo, hi = q.intervals[best_key]
    mid = 0.5 * (lo + hi)
    left = dict(q.intervals)
    right = dict(q.intervals)
    left[best_key] = (lo, mid)
    right[best_key] = (mid, hi)
    return Partition(left), Partition(right)


@dataclass
class ActivityPlan:
    """Outcome of planning one activity against a partition's upper limits."""

    phi_minus: float
    phi_plus: float
    policy: Optional[DeterministicPolicy]
    raw_g: Dict[int, float]
    termination: Optional[Dict[State, float]]
    initial: Dict[State, float]


def _constrained_indices(model: HcsspModel) -> Dict[str, List[int]]:
    out: Dict[str, List[int]] = {}
    for con in model.constraints:
        for name in con.activities:
            out.setdefault(name, []).append(con.cost_index[name])
    return {name: sorted(idx) for name, idx in out.items()}


def _distribution_signature(dist: Mapping[State, float]) -> Tuple:
    return tuple(sorted(((repr(s), round(p, 12)) for s, p in dist.items() if p > 0)))


def _plan_one(activity: Activity, init: Mapping[State, float],
              intervals: Mapping[int, Tuple[float, float]], l: Optional[int],
              cache: Optional[dict], config: Optional[DualConfig]) -> ActivityPlan:
    key = None
    if cache is not None:
        key = (
            activity.family or activity.name,
            _distribution_signature(init),
            tuple((i, round(hi, 12)) for i, (_, hi) in sorted(intervals.items())),
            l,
        )
        hit = cache.get(key)
        if hit is not None:
            return hit
    try:
        wrapped = activity_to_cssp(activity, init, intervals)
        try:
            result = anytime_solve(wrapped.model, l=l, config=config)
        except Infeasible:
            # No policy respects the upper limits: the activity is unusable
            # anywhere inside this partition.
            plan = ActivityPlan(math.inf, math.inf, None, {}, None, dict(init))
            result = None
        if result is not None:
            policy = result.incumbent or result.dual.best_dual_policy
            raw_g: Dict[int, float] = {}
            if result.incumbent_value is not None:
                for pos, idx in enumerate(wrapped.cost_indices):
                    raw_g[idx] = result.incumbent_value.raw_g[pos]
            termination = absorption_distribution(wrapped.model, policy)
            plan = ActivityPlan(
                phi_minus=result.lower_bound,
                phi_plus=result.upper_bound,
                policy=result.incumbent,
                raw_g=raw_g,
                termination=termination,
                initial=dict(init),
            )
    except (InfeasibleRelaxation, EmptySupport) as err:
        logger.debug("activity %s unusable: %s", activity.name, err)
        plan = ActivityPlan(math.inf, math.inf, None, {}, None, dict(init))
    if cache is not None:
        cache[key] = plan
    return plan


def _plan_activities(model: HcsspModel, q: Partition, l: Optional[int],
                     cache: Optional[dict], config: Optional[DualConfig]
                     ) -> Dict[str, ActivityPlan]:
    """Plan every reachable activity in topological order with chained flow.

    Choices are weighted uniformly (no procedural policy exists yet), and
    each activity's initial distribution mixes the termination distributions
    of its planned predecessors; plain event edges pass flow through
    unchanged. An unusable activity contributes a uniform-over-goals
    stand-in distribution so planning downstream of it stays defined (such
    paths carry sentinel costs and are avoided by the choice layer).
    """
    constrained = _constrained_indices(model)
    reach = event_reach_probabilities(model, None)
    edge_acts = model.edge_activities()
    arrival: Dict = {model.start_event: dict(model.initial_dist)}
    incoming: Dict = {}
    plans: Dict[str, ActivityPlan] = {}

    for e in event_topological_order(model):
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
        if e == model.end_event or reach.get(e, 0.0) <= 0 or e not in arrival:
            continue
        domain = model.choices.get(e, ())
        if not domain:
            continue
        w_choice = 1.0 / len(domain)
        for c in domain:
            for e2, p in model.event_transition.get(e, {}).get(c, {}).items():
                if p <= 0:
                    continue
                weight = reach[e] * w_choice * p
                names = edge_acts.get((e, e2), [])
                if not names:
                    incoming.setdefault(e2, []).append((weight, arrival[e]))
                    continue
                share = weight / len(names)
                for name in names:
                    if name not in plans:
                        act = model.activities[name]
                        intervals = {
                            i: q.intervals[(name, i)]
                            for i in constrained.get(name, [])
                        }
                        plans[name] = _plan_one(
                            act, arrival[e], intervals, l, cache, config
                        )
                    plan = plans[name]
                    if plan.termination is not None:
                        term = plan.termination
                    else:
                        act = model.activities[name]
                        goals = sorted(act.goals, key=repr)
                        term = {g: 1.0 / len(goals) for g in goals}
                    incoming.setdefault(e2, []).append((share, term))
    return plans


def _estimates_for_lb(model: HcsspModel, q: Partition,
                      plans: Mapping[str, ActivityPlan]) -> CostEstimates:
    f_bar = {}
    for name in model.activities:
        plan = plans.get(name)
        if plan is None:
            f_bar[name] = 0.0  # never on a traversable edge
        else:
            f_bar[name] = min(plan.phi_minus, BIG_COST)
    g_bar = {key: lo for key, (lo, _) in q.intervals.items()}
    return CostEstimates(f_bar, g_bar)


def _estimates_for_ub(model: HcsspModel, q: Partition,
                      plans: Mapping[str, ActivityPlan]) -> CostEstimates:
    f_bar = {}
    g_bar = {}
    for name in model.activities:
        plan = plans.get(name)
        if plan is None:
            f_bar[name] = 0.0
        else:
            f_bar[name] = min(plan.phi_plus, BIG_COST)
    for key, (_, hi) in q.intervals.items():
        name, idx = key
        plan = plans.get(name)
        if plan is not None and idx in plan.raw_g:
            g_bar[key] = plan.raw_g[idx]
        else:
            g_bar[key] = hi  # placeholder; the edge carries a sentinel cost
    return CostEstimates(f_bar, g_bar)


def compute_lb(model: HcsspModel, q: Partition, l: Optional[int] = 0,
               cache: Optional[dict] = None,
               config: Optional[DualConfig] = None) -> float:
    """Lower bound on the optimum over solutions whose allocation lies in q.

    Each activity is planned against the partition's upper limits and its
    anytime lower bound becomes the primary estimate; secondary estimates are
    the partition's lower limits. The choice layer's anytime lower bound on
    the reduced problem is then a valid bound: infinity certifies that the
    partition contains no feasible allocation.
    """
    plans = _plan_activities(model, q, l, cache, config)
    est = _estimates_for_lb(model, q, plans)
    reduced = procedural_to_cssp(model, est)
    try:
        result = anytime_solve(reduced, l=l, config=config)
    except (Infeasible, InfeasibleRelaxation):
        return math.inf
    beta = result.lower_bound
    return math.inf if beta >= BIG_COST / 2 else beta


def compute_ub(model: HcsspModel, q: Partition, l: Optional[int] = 0,
               cache: Optional[dict] = None,
               config: Optional[DualConfig] = None
               ) -> Tuple[float, Optional[HierarchicalSolution]]:
    """Upper bound for the partition with the assembled solution attaining it.

    Activities are planned against the partition's upper limits; incumbent
    policies and their actual expected secondary costs feed the choice layer.
    A returned solution is re-evaluated exactly (with chained distributions
    under its own procedural policy) and verified feasible; its exact
    objective is the reported bound.
    """
    plans = _plan_activities(model, q, l, cache, config)
    est = _estimates_for_ub(model, q, plans)
    reduced = procedural_to_cssp(model, est)
    try:
        result = anytime_solve(reduced, l=l, config=config)
    except (Infeasible, InfeasibleRelaxation):
        return math.inf, None
    if result.incumbent is None or result.upper_bound >= BIG_COST / 2:
        return math.inf, None
    rho = procedural_from_policy(model, result.incumbent)
    gamma: Dict[str, DeterministicPolicy] = {}
    for name in sorted(model.activities):
        if activity_likelihood(model, rho, name) <= 0:
            continue
        plan = plans.get(name)
        if plan is None or plan.policy is None:
            return math.inf, None
        gamma[name] = plan.policy
    sol = HierarchicalSolution(rho=rho, gamma=gamma)
    try:
        objective, values, feasible = evaluate_solution(model, sol)
    except HcsspError as err:
        logger.debug("assembled solution failed exact evaluation: %s", err)
        return math.inf, None
    if not feasible:
        return math.inf, None
    if objective > result.upper_bound + 1e-7:
        logger.warning(
            "exact objective %.9g exceeds reduced-problem bound %.9g "
            "(chained initial distributions shifted)", objective, result.upper_bound,
        )
    sol.objective = objective
    sol.constraint_values = values
    return objective, sol


class BnbTracePoint(NamedTuple):
    iteration: int
    wall_time: float
    alpha: float
    beta: float
    incumbent_objective: float


@dataclass
class BnbState:
    """Search state: active partitions with bounds, incumbent, and history."""

    active_partitions: List[Tuple[Partition, float, float]]
    incumbent: Optional[HierarchicalSolution]
    global_alpha: float
    global_beta: float
    trace: List[BnbTracePoint]
    iterations: int


def branch_and_bound(model: HcsspModel, epsilon: float, l: Optional[int] = 0,
                     max_iterations: Optional[int] = None,
                     time_budget: Optional[float] = None,
                     config: Optional[DualConfig] = None
                     ) -> Tuple[HierarchicalSolution, BnbState]:
    """Anytime global search over budget allocations.

    Splits the lowest-lower-bound partition along its longest edge until the
    incumbent objective is within ``epsilon`` of the global lower bound, or a
    budget runs out. Raises ``ConvergedInfeasible`` when every partition is
    certified empty and ``NoFeasibleSolution`` when budgets exhaust without
    an incumbent; both carry the final state.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    start_time = time.perf_counter()
    cache: dict = {}

    q0 = initial_partition(model)
    edge_scale = {key: hi - lo for key, (lo, hi) in q0.intervals.items()}
    alpha_inc = math.inf
    incumbent: Optional[HierarchicalSolution] = None

    alpha0, sol0 = compute_ub(model, q0, l, cache, config)
    if sol0 is not None:
        incumbent = sol0
        alpha_inc = alpha0
    beta0 = compute_lb(model, q0, l, cache, config)

    # Selection is best-bound; ties plunge depth-first (newest first, low
    # child before high), since sibling bounds tie structurally whenever the
    # split dimension does not bind and breadth-first would stall on them.
    heap: List[Tuple[float, int, Partition, float]] = []
    counter = 0
    heapq.heappush(heap, (beta0, -counter, q0, alpha0))
    counter += 1
    closed_beta = math.inf  # best bound among retired partitions

    beta_k = beta0
    alpha_k = alpha_inc
    trace = [BnbTracePoint(0, time.perf_counter() - start_time,
                           alpha_k, beta_k, alpha_inc)]
    k = 0

    def state() -> BnbState:
        return BnbState(
            active_partitions=[(q, a, b) for b, _, q, a in sorted(heap)],
            incumbent=incumbent,
            global_alpha=alpha_k,
            global_beta=beta_k,
            trace=trace,
            iterations=k,
        )

    while alpha_k - beta_k > epsilon:
        if max_iterations is not None and k >= max_iterations:
            break
        if time_budget is not None and time.perf_counter() - start_time > time_budget:
            break
        if not heap:
            break
        beta_sel, sel_count, q_sel, sel_alpha = heapq.heappop(heap)
        if not math.isfinite(beta_sel):
            # The minimum is infinite, so every remaining partition is
            # certified empty; record the tightened bound and stop.
            heapq.heappush(heap, (beta_sel, sel_count, q_sel, sel_alpha))
            beta_k = max(beta_k, min(closed_beta, heap[0][0]))
            trace.append(BnbTracePoint(k, time.perf_counter() - start_time,
                                       alpha_k, beta_k, alpha_inc))
            break
        try:
            q_left, q_right = split_longest_edge(q_sel, reference=edge_scale)
        except DegeneratePartition:
            # Unsplittable box: retire it but keep its bound in play.
            closed_beta = min(closed_beta, beta_sel)
            continue
        for q_child in (q_right, q_left):
            alpha_c, sol_c = compute_ub(model, q_child, l, cache, config)
            if alpha_c < alpha_inc:
                incumbent = sol_c
                alpha_inc = alpha_c
            beta_c = compute_lb(model, q_child, l, cache, config)
            heapq.heappush(heap, (beta_c, -counter, q_child, alpha_c))
            counter += 1
        k += 1
        candidates = [closed_beta]
        if heap:
            candidates.append(heap[0][0])
        # Bounds are monotone: the children's bounds dominate the parent's,
        # so the clamp only smooths floating-point jitter.
        beta_k = max(beta_k, min(candidates))
        alpha_k = alpha_inc
        trace.append(BnbTracePoint(k, time.perf_counter() - start_time,
                                   alpha_k, beta_k, alpha_inc))

    final = state()
    if incumbent is None:
        if not math.isfinite(beta_k) and beta_k > 0:
            raise ConvergedInfeasible(
                "every budget allocation is certified infeasible", state=final
            )
        raise NoFeasibleSolution(
            "search budget exhausted without a feasible solution", state=final
        )
    return incumbent, final


def write_bnb_trace_csv(state: BnbState, path) -> None:
    """Write the search history as ``k,wall_time_s,alpha_k,beta_k,incumbent_obj``."""
    with open(path, "w") as fh:
        fh.write("k,wall_time_s,alpha_k,beta_k,incumbent_obj\n")
        for point in state.trace:
            fh.write(
                f"{point.iteration},{point.wall_time!r},{point.alpha!r},"
                f"{point.beta!r},{point.incumbent_objective!r}\n"
            )
