"""Partition handling, bound subroutines, and the budget search itself."""

import math

import numpy as np
import pytest

from hcssp.anytime import anytime_solve
from hcssp.budget_bnb import (
    BnbState,
    Partition,
    branch_and_bound,
    compute_lb,
    compute_ub,
    initial_partition,
    split_longest_edge,
    write_bnb_trace_csv,
)
from hcssp.errors import ConvergedInfeasible, DegeneratePartition
from hcssp.hierarchy import HcsspConstraint, HcsspModel, evaluate_solution
from hcssp.oracles import brute_force_hcssp

from conftest import chain_ch1, random_hcssp, step_activity, toy_hierarchy


def wrap_cssp_as_hcssp(cssp, delta):
    """Single-activity hierarchical wrapper around a two-state chain."""
    from hcssp.hierarchy import Activity

    act = Activity(
        name="only",
        start_event="t0",
        end_event="tE",
        states=cssp.states,
        actions={"s0": list(cssp.actions["s0"])},
        transition=cssp.transition,
        costs=cssp.costs,
        goals=cssp.goals,
    )
    return HcsspModel(
        initial_dist=cssp.initial_dist,
        events=["t0", "tE"],
        start_event="t0",
        end_event="tE",
        choices={"t0": ["go"]},
        event_transition={"t0": {"go": {"tE": 1.0}}},
        activities=[act],
        constraints=[HcsspConstraint(["only"], {"only": 1}, delta)],
    )


def test_initial_partition_unit_likelihood(toy_delta10=None):
    model = wrap_cssp_as_hcssp(chain_ch1(), delta=10.0)
    part = initial_partition(model)
    assert part.intervals[("only", 1)] == (0.0, pytest.approx(10.0))


def test_initial_partition_scales_by_min_likelihood():
    model = toy_hierarchy(delta=10.0)
    part = initial_partition(model)
    assert part.intervals[("pass_door", 1)][1] == pytest.approx(10.0 / 0.9)
    assert part.intervals[("roundabout", 1)][1] == pytest.approx(10.0 / 0.1)
    assert part.intervals[("hall_exit", 1)][1] == pytest.approx(10.0)


def test_initial_partition_two_activities_one_constraint():
    model = toy_hierarchy(delta=4.0)
    part = initial_partition(model)
    assert part.intervals[("hall_exit", 1)] == (0.0, pytest.approx(4.0))
    assert part.intervals[("pass_door", 1)][1] == pytest.approx(4.0 / 0.9)


def test_split_bisects_longest_edge():
    q = Partition({("e1", 1): (0.0, 10.0), ("e2", 1): (0.0, 4.0)})
    left, right = split_longest_edge(q)
    assert left.intervals[("e1", 1)] == (0.0, 5.0)
    assert right.intervals[("e1", 1)] == (5.0, 10.0)
    assert left.intervals[("e2", 1)] == (0.0, 4.0)


def test_split_tie_breaks_lexicographically():
    q = Partition({("e1", 1): (0.0, 4.0), ("e2", 1): (0.0, 4.0)})
    left, _ = split_longest_edge(q)
    assert left.intervals[("e1", 1)] == (0.0, 2.0)
    assert left.intervals[("e2", 1)] == (0.0, 4.0)


def test_split_skips_degenerate_edges():
    q = Partition({("e1", 1): (2.0, 2.0), ("e2", 1): (0.0, 6.0)})
    left, right = split_longest_edge(q)
    assert left.intervals[("e2", 1)] == (0.0, 3.0)
    assert right.intervals[("e2", 1)] == (3.0, 6.0)


def test_split_degenerate_partition_raises():
    q = Partition({("e1", 1): (1.0, 1.0)})
    with pytest.raises(DegeneratePartition):
        split_longest_edge(q)


def test_compute_lb_single_activity_equals_dual_bound():
    model = wrap_cssp_as_hcssp(chain_ch1(), delta=5.0)
    q = initial_partition(model)
    beta = compute_lb(model, q, l=0)
    result = anytime_solve(chain_ch1(), l=0)
    assert beta == pytest.approx(result.lower_bound, abs=1e-7)


def test_compute_lb_infeasible_lower_limits_give_infinity():
    # Lower limits above the constraint bound make every allocation violate.
    model = wrap_cssp_as_hcssp(chain_ch1(), delta=5.0)
    q = Partition({("only", 1): (7.0, 9.0)})
    assert compute_lb(model, q, l=None) == math.inf


def test_compute_ub_single_activity_matches_anytime():
    model = wrap_cssp_as_hcssp(chain_ch1(), delta=5.0)
    q = initial_partition(model)
    alpha, sol = compute_ub(model, q, l=None)
    direct = anytime_solve(chain_ch1())
    assert alpha == pytest.approx(direct.upper_bound, abs=1e-7)
    assert sol.gamma["only"].action_of["s0"] == "a_slow"


def test_compute_ub_infeasible_partition():
    model = wrap_cssp_as_hcssp(chain_ch1(), delta=5.0)
    q = Partition({("only", 1): (0.0, 0.5)})
    alpha, sol = compute_ub(model, q, l=None)
    assert alpha == math.inf and sol is None


def test_compute_bounds_sandwich_oracle_on_toy():
    model = toy_hierarchy(delta=5.0)
    q = initial_partition(model)
    oracle = brute_force_hcssp(model)
    beta = compute_lb(model, q, l=None)
    alpha, sol = compute_ub(model, q, l=None)
    assert beta <= oracle.optimum + 1e-7
    assert alpha >= oracle.optimum - 1e-7
    assert sol is not None


def test_bnb_single_activity_collapses_to_cssp():
    model = wrap_cssp_as_hcssp(chain_ch1(), delta=5.0)
    sol, state = branch_and_bound(model, epsilon=1e-6, l=None)
    assert sol.objective == pytest.approx(10.0)
    assert state.global_beta >= 10.0 - 1e-6
    assert state.global_alpha == pytest.approx(10.0)


def test_bnb_certifies_infeasible_space():
    model = wrap_cssp_as_hcssp(chain_ch1(), delta=0.5)
    with pytest.raises(ConvergedInfeasible) as info:
        branch_and_bound(model, epsilon=1e-6, l=None)
    assert info.value.state.incumbent is None


def test_bnb_toy_hierarchy_picks_best_route():
    model = toy_hierarchy(delta=5.0)
    sol, state = branch_and_bound(model, epsilon=1e-6, l=None)
    oracle = brute_force_hcssp(model)
    assert sol.objective == pytest.approx(oracle.optimum, abs=1e-6)
    assert sol.rho.choice_of["t0"] == "door"


def test_bnb_respects_constraint_routing():
    model = toy_hierarchy(delta=1.0)
    sol, state = branch_and_bound(model, epsilon=1e-6, l=None)
    assert sol.rho.choice_of["t0"] == "hall"
    assert sol.objective == pytest.approx(8.0, abs=1e-6)


def test_bnb_matches_oracle_on_random_grid_instance():
    rng = np.random.default_rng(61)
    model = random_hcssp(rng)
    oracle = brute_force_hcssp(model)
    if oracle.infeasible:
        with pytest.raises(ConvergedInfeasible):
            branch_and_bound(model, epsilon=1e-3, l=None, max_iterations=500)
    else:
        sol, state = branch_and_bound(model, epsilon=1e-3, l=None,
                                      max_iterations=500)
        assert sol.objective <= oracle.optimum + 1e-3
        assert sol.objective >= oracle.optimum - 1e-9


def test_bnb_trace_monotone_and_sandwiched():
    model = toy_hierarchy(delta=5.0)
    oracle = brute_force_hcssp(model)
    sol, state = branch_and_bound(model, epsilon=1e-6, l=None)
    alphas = [p.alpha for p in state.trace]
    betas = [p.beta for p in state.trace]
    assert all(b <= a + 1e-9 for a, b in zip(alphas, betas))
    assert all(b2 >= b1 - 1e-9 for b1, b2 in zip(betas, betas[1:]))
    assert all(a2 <= a1 + 1e-9 for a1, a2 in zip(alphas, alphas[1:]))
    for a, b in zip(alphas, betas):
        assert b <= oracle.optimum + 1e-9
        assert a >= oracle.optimum - 1e-9


def test_bnb_incumbent_is_feasible_exactly():
    model = toy_hierarchy(delta=1.8)
    sol, _ = branch_and_bound(model, epsilon=1e-6, l=None)
    objective, values, feasible = evaluate_solution(model, sol)
    assert feasible
    assert objective == pytest.approx(sol.objective)


def test_bnb_l0_returns_feasible_incumbent():
    model = toy_hierarchy(delta=5.0)
    sol, state = branch_and_bound(model, epsilon=1e-3, l=0, max_iterations=200)
    _, _, feasible = evaluate_solution(model, sol)
    assert feasible


def test_bnb_trace_csv_format(tmp_path):
    model = toy_hierarchy(delta=5.0)
    _, state = branch_and_bound(model, epsilon=1e-6, l=None)
    path = tmp_path / "bnb.csv"
    write_bnb_trace_csv(state, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "k,wall_time_s,alpha_k,beta_k,incumbent_obj"
    assert len(lines) == 1 + len(state.trace)
