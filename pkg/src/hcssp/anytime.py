"""Two-stage anytime solver for constrained stochastic shortest path problems.

Stage 1 maximizes the piecewise-linear concave Lagrangian dual, which yields a
lower bound and a candidate policy. Stage 2 closes the duality gap by
enumerating deterministic policies in nondecreasing order of their Lagrangian
value at the optimal multiplier, updating the incumbent whenever a better
feasible policy appears. Both bounds are valid at every iteration, so the
search can be cut off after any number of stage-2 expansions.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .cssp import (
    CsspModel,
    DeterministicPolicy,
    PolicyValue,
    evaluate_policy,
)
from .errors import DimensionMismatch, Infeasible, InfeasibleRelaxation, NoProperPolicy

FEASIBLE_TOL = 0.0


@dataclass(frozen=True)
class DualState:
    """Outcome of stage 1: the dual maximizer and its certificate.

    Multiplier probes on the nonpositive-slack side of the bracket are primal
    feasible, so stage 1 also reports the best feasible policy it touched.
    """

    lambda_star: Tuple[float, ...]
    dual_value: float
    best_dual_policy: DeterministicPolicy
    policy_value: PolicyValue
    best_feasible_policy: Optional[DeterministicPolicy] = None
    best_feasible_value: Optional[PolicyValue] = None


@dataclass
class DualConfig:
    """Knobs for the dual ascent; defaults match the reference behavior."""

    lambda_cap: float = 1e6
    term_tol: float = 1e-9
    max_supergradient_iters: int = 500
    step_scale: float = 1.0


class TracePoint(NamedTuple):
    iteration: int
    lower_bound: float
    upper_bound: float
    feasible_found: bool


@dataclass
class AnytimeResult:
    """Incumbent policy plus certified bounds and the bound history."""

    incumbent: Optional[DeterministicPolicy]
    incumbent_value: Optional[PolicyValue]
    lower_bound: float
    upper_bound: float
    iterations_used: int
    trace: List[TracePoint] = field(default_factory=list)
    dual: Optional[DualState] = None


def _solve_at(model: CsspModel, lam: np.ndarray, v_cache: dict,
              action_mask: Optional[np.ndarray] = None):
    """Optimal deterministic policy for the scalarized SSP at multiplier lam.

    Returns ``(policy, policy_value, lagrangian_value)`` where the policy is
    the full greedy assignment over all proper states and the value is exact.
    Returns None when no proper policy exists from the initial support.
    """
    comp = model._compiled
    weights = np.concatenate([[1.0], lam])
    v, greedy, proper = comp.value_iteration(
        weights, action_mask=action_mask, v_init=v_cache.get("v")
    )
    v_cache["v"] = np.where(np.isfinite(v), v, 0.0)
    vec = comp.initial_vector()
    for i in range(comp.n):
        if vec[i] > 0 and not proper[i]:
            return None
    policy = comp.policy_from_indices(greedy)
    pv = evaluate_policy(model, policy)
    # Zero multipliers contribute nothing even against infinite slacks.
    lag = pv.f + sum(w * g for w, g in zip(lam, pv.g) if w != 0.0)
    return policy, pv, lag


def solve_weighted_ssp(model: CsspModel, lam: Sequence[float], heuristic=None
                       ) -> Tuple[DeterministicPolicy, float]:
    """Minimize the scalarized cost f + lam . g over deterministic policies.

    The explicit backend runs value iteration to convergence, so ``heuristic``
    (an admissible state-value estimate used by forward-search backends) is
    accepted but ignored. The returned value is exact for the returned policy
    and includes the -lam . bounds offset.
    """
    lam = np.asarray([float(x) for x in lam])
    if lam.size != model.n_secondary:
        raise DimensionMismatch(
            f"lambda has length {lam.size}, model has {model.n_secondary} secondary costs"
        )
    if (lam < 0).any():
        raise ValueError("lambda must be componentwise nonnegative")
    out = _solve_at(model, lam, {})
    if out is None:
        raise NoProperPolicy(
            "goal unreachable with probability one from the initial support"
        )
    policy, _, lag = out
    return policy, lag


def dual_ascent(model: CsspModel, config: Optional[DualConfig] = None) -> DualState:
    """Maximize the Lagrangian dual L(lam) = min_pi f(pi) + lam . g(pi).

    One secondary cost uses sign bisection on g_1 with exact intersection
    probes (finite termination on the piecewise-linear dual); several use
    projected supergradient ascent. Raises ``InfeasibleRelaxation`` when even
    lam = 0 admits no proper policy.
    """
    config = config or DualConfig()
    n = model.n_secondary
    v_cache: dict = {}
    feasible_seen: list = [None, None]  # (policy, value) with the lowest f

    def solve(lam_vec) -> Tuple[DeterministicPolicy, PolicyValue, float]:
        out = _solve_at(model, np.asarray(lam_vec, dtype=float), v_cache)
        if out is None:
            raise InfeasibleRelaxation(
                "no proper policy exists even for the unconstrained relaxation"
            )
        policy, pv, lag = out
        if pv.feasible(FEASIBLE_TOL) and (
            feasible_seen[1] is None or pv.f < feasible_seen[1].f
        ):
            feasible_seen[0] = policy
            feasible_seen[1] = pv
        return out

    pol0, pv0, L0 = solve(np.zeros(n))
    if n == 0:
        state = DualState((), L0, pol0, pv0)
    elif n == 1:
        state = _dual_bisection(solve, pol0, pv0, L0, config)
    else:
        state = _dual_supergradient(solve, pol0, pv0, L0, n, config)
    return DualState(
        state.lambda_star,
        state.dual_value,
        state.best_dual_policy,
        state.policy_value,
        best_feasible_policy=feasible_seen[0],
        best_feasible_value=feasible_seen[1],
    )


def _dual_bisection(solve, pol0, pv0, L0, config: DualConfig) -> DualState:
    if pv0.g[0] <= 0:
        # Nonpositive supergradient at zero: lam = 0 maximizes the concave dual.
        return DualState((0.0,), L0, pol0, pv0)
    lo, f_lo, g_lo = 0.0, pv0.f, pv0.g[0]
    hi = 1.0
    pol_hi, pv_hi, L_hi = solve([hi])
    while pv_hi.g[0] > 0 and hi < config.lambda_cap:
        lo, f_lo, g_lo = hi, pv_hi.f, pv_hi.g[0]
        hi = min(hi * 2.0, config.lambda_cap)
        pol_hi, pv_hi, L_hi = solve([hi])
    if pv_hi.g[0] > 0:
        # Positive slope at the cap; the dual is effectively unbounded, which
        # certifies primal infeasibility as far as the cap can express it.
        return DualState((hi,), L_hi, pol_hi, pv_hi)
    f_hi, g_hi = pv_hi.f, pv_hi.g[0]

    best = (L_hi, (hi,), pol_hi, pv_hi) if L_hi >= L0 else (L0, (0.0,), pol0, pv0)
    for _ in range(200):
        lam_x = (f_hi - f_lo) / (g_lo - g_hi)
        lam_x = min(max(lam_x, lo), hi)
        v_hat = f_lo + lam_x * g_lo
        pol_x, pv_x, L_x = solve([lam_x])
        if L_x > best[0]:
            best = (L_x, (lam_x,), pol_x, pv_x)
        if L_x >= v_hat - config.term_tol * max(1.0, abs(v_hat)):
            # The support-line intersection is attained, hence it is the max.
            if abs(pv_x.g[0]) <= 1e-12:
                return _flat_segment_midpoint(
                    solve, lam_x, L_x, (f_lo, g_lo), (f_hi, g_hi), config
                )
            if pv_x.g[0] > 0:
                # Harvest the kink's feasible side: the minimizer just beyond
                # the maximum is feasible and its cost is nearly optimal.
                solve([lam_x * (1.0 + 1e-6) + 1e-9])
            return DualState((lam_x,), L_x, pol_x, pv_x)
        if pv_x.g[0] > 0:
            lo, f_lo, g_lo = lam_x, pv_x.f, pv_x.g[0]
        else:
            hi, f_hi, g_hi = lam_x, pv_x.f, pv_x.g[0]
    L_b, lam_b, pol_b, pv_b = best
    return DualState(lam_b, L_b, pol_b, pv_b)


def _flat_segment_midpoint(solve, lam_x, level, lo_line, hi_line, config: DualConfig
                           ) -> DualState:
    """Resolve a flat dual maximum by probing toward the segment midpoint."""
    f_lo, g_lo = lo_line
    f_hi, g_hi = hi_line
    left = (level - f_lo) / g_lo if g_lo > 0 else lam_x
    right = (level - f_hi) / g_hi if g_hi < 0 else lam_x
    left, right = min(left, lam_x), max(right, lam_x)
    lam_best, pol_best, pv_best, L_best = lam_x, None, None, level
    for _ in range(60):
        mid = 0.5 * (left + right)
        pol_m, pv_m, L_m = solve([mid])
        if L_m >= level - config.term_tol * max(1.0, abs(level)):
            lam_best, pol_best, pv_best, L_best = mid, pol_m, pv_m, L_m
            break
        # The flat segment lies on the side the cutting line rises toward.
        if pv_m.g[0] > 0:
            left = (level - pv_m.f) / pv_m.g[0]
        else:
            right = (level - pv_m.f) / pv_m.g[0]
        if right - left <= 1e-12 * max(1.0, right):
            break
    if pol_best is None:
        pol_best, pv_best, L_best = solve([lam_best])
    return DualState((lam_best,), L_best, pol_best, pv_best)


def _dual_supergradient(solve, pol0, pv0, L0, n, config: DualConfig) -> DualState:
    lam = np.zeros(n)
    best = (L0, tuple(lam), pol0, pv0)
    for k in range(1, config.max_supergradient_iters + 1):
        _, pv, _ = solve(lam)
        grad = np.asarray(pv.g)
        lam = np.maximum(lam + (config.step_scale / math.sqrt(k)) * grad, 0.0)
        lam = np.minimum(lam, config.lambda_cap)
        pol_k, pv_k, L_k = solve(lam)
        if L_k > best[0]:
            best = (L_k, tuple(float(x) for x in lam), pol_k, pv_k)
    L_b, lam_b, pol_b, pv_b = best
    return DualState(lam_b, L_b, pol_b, pv_b)


def stage2_enumerate(model: CsspModel, dual: DualState,
                     budget: Optional[int] = None
                     ) -> Iterator[Tuple[DeterministicPolicy, float, PolicyValue]]:
    """Yield proper deterministic policies in nondecreasing L(lam*, .) order.

    Uses subproblem partitioning: popping a subproblem emits its optimal
    policy, then spawns one child per state the policy reaches, forbidding
    the policy's decision there while forcing all earlier ones. Children
    tile the parent's policy space minus the emitted policy, so the stream
    is exhaustive and duplicate-free. Yields ``(policy, L_value, value)``
    with the policy restricted to its reachable states.
    """
    comp = model._compiled
    lam = np.asarray(dual.lambda_star, dtype=float)
    heap: List[Tuple[float, int, np.ndarray, np.ndarray, PolicyValue]] = []
    counter = 0
    v_cache: dict = {}

    def push(mask: Optional[np.ndarray]):
        nonlocal counter
        out = _solve_at(model, lam, v_cache, action_mask=mask)
        if out is None:
            return
        policy, pv, lag = out
        indices = comp.policy_action_indices(policy)
        stored_mask = mask if mask is not None else comp.valid.copy()
        heapq.heappush(heap, (lag, counter, stored_mask, indices, pv))
        counter += 1

    push(None)
    emitted = 0
    while heap:
        lag, _, mask, indices, pv = heapq.heappop(heap)
        order = comp.reachable_order(indices)
        reach = np.zeros(comp.n, dtype=bool)
        reach[order] = True
        restricted = comp.policy_from_indices(
            np.where(reach, indices, -1), restrict_reachable=False
        )
        yield restricted, lag, pv
        emitted += 1
        if budget is not None and emitted >= budget:
            return
        # Split over the reachable decisions in discovery order: child i
        # forbids the policy's i-th decision and forces all earlier ones.
        base = mask.copy()
        for i in order:
            j = indices[i]
            child = base.copy()
            child[i, j] = False
            push(child)
            base[i, :] = False
            base[i, j] = True


def anytime_solve(model: CsspModel, l: Optional[int] = None,
                  heuristic=None, config: Optional[DualConfig] = None
                  ) -> AnytimeResult:
    """Run stage 1, then up to ``l`` stage-2 expansions (None means unbounded).

    The trace gets one record for stage-1 completion and one per expansion.
    With unbounded ``l`` the bounds meet at the deterministic optimum, or
    ``Infeasible`` is raised (carrying the result) once the policy space is
    exhausted without a feasible policy.
    """
    dual = dual_ascent(model, config)
    lam = np.asarray(dual.lambda_star, dtype=float)
    incumbent: Optional[DeterministicPolicy] = None
    incumbent_value: Optional[PolicyValue] = None
    upper = math.inf
    if dual.policy_value.feasible(FEASIBLE_TOL):
        incumbent = dual.best_dual_policy
        incumbent_value = dual.policy_value
        upper = dual.policy_value.f
    if dual.best_feasible_value is not None and dual.best_feasible_value.f < upper:
        incumbent = dual.best_feasible_policy
        incumbent_value = dual.best_feasible_value
        upper = dual.best_feasible_value.f
    lower = min(dual.dual_value, upper)
    trace = [TracePoint(0, lower, upper, incumbent is not None)]
    result = AnytimeResult(
        incumbent=incumbent,
        incumbent_value=incumbent_value,
        lower_bound=lower,
        upper_bound=upper,
        iterations_used=0,
        trace=trace,
        dual=dual,
    )
    if l is not None and l <= 0:
        return result

    stream = stage2_enumerate(model, dual)
    exhausted = False
    # The first emission re-derives the stage-1 policy; at a dual kink the tie
    # may break toward the other optimal line, so process it for the incumbent
    # (without counting it as an expansion).
    first = next(stream, None)
    if first is None:
        exhausted = True
    else:
        _, _, first_pv = first
        if first_pv.feasible(FEASIBLE_TOL) and first_pv.f < upper:
            upper = first_pv.f
            incumbent = first[0]
            incumbent_value = first_pv
            lower = min(lower, upper)
            trace[0] = TracePoint(0, lower, upper, True)
    expansions = 0
    if not exhausted:
        for policy, lag, pv in stream:
            expansions += 1
            if pv.feasible(FEASIBLE_TOL) and pv.f < upper:
                upper = pv.f
                incumbent, incumbent_value = policy, pv
            lower = max(lower, min(lag, upper))
            trace.append(TracePoint(expansions, lower, upper, incumbent is not None))
            if lag >= upper:
                # No later candidate can beat the incumbent.
                lower = upper
                trace[-1] = TracePoint(expansions, lower, upper, True)
                break
            if l is not None and expansions >= l:
                break
        else:
            exhausted = True

    if exhausted:
        # Every proper deterministic policy has been enumerated; fold the
        # final bound tightening into the last trace row.
        lower = upper
        trace[-1] = TracePoint(trace[-1].iteration, lower, upper,
                               incumbent is not None)
    result.incumbent = incumbent
    result.incumbent_value = incumbent_value
    result.lower_bound = lower
    result.upper_bound = upper
    result.iterations_used = expansions
    if exhausted and incumbent is None:
        raise Infeasible("no feasible deterministic policy exists", result=result)
    return result


def write_trace_csv(result: AnytimeResult, path) -> None:
    """Write the bound history as ``iter,lb,ub,feasible_found`` rows."""
    with open(path, "w") as fh:
        fh.write("iter,lb,ub,feasible_found\n")
        for point in result.trace:
            fh.write(
                f"{point.iteration},{point.lower_bound!r},{point.upper_bound!r},"
                f"{int(point.feasible_found)}\n"
            )
