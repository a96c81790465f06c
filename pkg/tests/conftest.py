"""Shared fixtures and instance generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from hcssp.cssp import CsspModel, DeterministicPolicy
from hcssp.hierarchy import (
    Activity,
    HcsspConstraint,
    HcsspModel,
    HierarchicalSolution,
    ProceduralPolicy,
)


def chain_ch1(delta: float = 5.0) -> CsspModel:
    """Two-state chain with a fast/high-damage and a slow/low-damage action."""
    return CsspModel(
        states=["s0", "s1"],
        initial_dist={"s0": 1.0},
        goals={"s1"},
        actions={"s0": ["a_fast", "a_slow"]},
        transition={"s0": {"a_fast": {"s1": 1.0}, "a_slow": {"s1": 1.0}}},
        costs=[
            {"s0": {"a_fast": {"s1": 1.0}, "a_slow": {"s1": 10.0}}},
            {"s0": {"a_fast": {"s1": 10.0}, "a_slow": {"s1": 1.0}}},
        ],
        bounds=[delta],
    )


@pytest.fixture
def ch1() -> CsspModel:
    return chain_ch1()


def random_cssp(rng: np.random.Generator, n_states: int = None, n_actions: int = None,
                delta: float = None) -> CsspModel:
    """Random small C-SSP with one secondary cost and a reachable goal.

    Primary costs are bounded away from zero so every cycle has positive
    primary cost; state n-1 is the goal and each state keeps a biased chance
    of stepping forward so the goal stays reachable.
    """
    if n_states is None:
        n_states = int(rng.integers(3, 9))
    if n_actions is None:
        n_actions = int(rng.integers(2, 4))
    states = [f"s{i}" for i in range(n_states)]
    goal = states[-1]
    actions = {}
    transition = {}
    cost0 = {}
    cost1 = {}
    for i, s in enumerate(states[:-1]):
        acts = [f"a{j}" for j in range(n_actions)]
        actions[s] = acts
        transition[s] = {}
        cost0[s] = {}
        cost1[s] = {}
        for a in acts:
            n_succ = int(rng.integers(1, 4))
            # Bias one successor toward a later state so the goal is reachable.
            later = states[min(i + int(rng.integers(1, n_states - i)), n_states - 1)]
            others = [states[int(k)] for k in rng.integers(0, n_states, size=n_succ - 1)]
            succs = list(dict.fromkeys([later] + others))
            probs = rng.dirichlet(np.ones(len(succs)))
            transition[s][a] = {s2: float(p) for s2, p in zip(succs, probs)}
            cost0[s][a] = {
                s2: float(rng.uniform(0.1, 5.0)) for s2 in transition[s][a]
            }
            cost1[s][a] = {
                s2: float(rng.uniform(0.0, 5.0)) for s2 in transition[s][a]
            }
    if delta is None:
        delta = float(rng.uniform(0.5, 8.0))
    return CsspModel(
        states=states,
        initial_dist={states[0]: 1.0},
        goals={goal},
        actions=actions,
        transition=transition,
        costs=[cost0, cost1],
        bounds=[delta],
    )


def step_activity(name: str, start_event, end_event, src: str, dst: str,
                  primary: float, damage: float = 0.0) -> Activity:
    """One-step activity moving deterministically from src to dst."""
    return Activity(
        name=name,
        start_event=start_event,
        end_event=end_event,
        states=[src, dst],
        actions={src: ["m"]},
        transition={src: {"m": {dst: 1.0}}},
        costs=[
            {src: {"m": {dst: primary}}},
            {src: {"m": {dst: damage}}},
        ],
        goals={dst},
    )


def toy_hierarchy(delta: float = 5.0) -> HcsspModel:
    """Door-or-hallway branching model with an uncontrollable lock outcome.

    Route via the door: go_door (f=2), then with probability 0.9 pass_door
    (f=3, damage 2), else roundabout (f=9, damage 0). Route via the hallway:
    go_hall (f=4) then hall_exit (f=4, damage 1).
    """
    activities = [
        step_activity("go_door", "t0", "tD", "x_start", "x_door", 2.0),
        step_activity("go_hall", "t0", "tH", "x_start", "x_hall", 4.0),
        step_activity("pass_door", "tOpen", "tE", "x_door", "x_exit", 3.0, damage=2.0),
        step_activity("roundabout", "tLocked", "tE", "x_door", "x_exit", 9.0),
        step_activity("hall_exit", "tH", "tE", "x_hall", "x_exit", 4.0, damage=1.0),
    ]
    return HcsspModel(
        initial_dist={"x_start": 1.0},
        events=["t0", "tD", "tOpen", "tLocked", "tH", "tE"],
        start_event="t0",
        end_event="tE",
        choices={
            "t0": ["door", "hall"],
            "tD": ["observe"],
            "tOpen": ["go"],
            "tLocked": ["go"],
            "tH": ["go"],
        },
        event_transition={
            "t0": {"door": {"tD": 1.0}, "hall": {"tH": 1.0}},
            "tD": {"observe": {"tOpen": 0.9, "tLocked": 0.1}},
            "tOpen": {"go": {"tE": 1.0}},
            "tLocked": {"go": {"tE": 1.0}},
            "tH": {"go": {"tE": 1.0}},
        },
        activities=activities,
        constraints=[
            HcsspConstraint(
                activities=["pass_door", "roundabout", "hall_exit"],
                cost_index={"pass_door": 1, "roundabout": 1, "hall_exit": 1},
                bound=delta,
            )
        ],
    )


def toy_door_policy() -> HierarchicalSolution:
    gamma = {
        "go_door": DeterministicPolicy({"x_start": "m"}),
        "pass_door": DeterministicPolicy({"x_door": "m"}),
        "roundabout": DeterministicPolicy({"x_door": "m"}),
    }
    rho = ProceduralPolicy({"t0": "door", "tD": "observe",
                            "tOpen": "go", "tLocked": "go", "tH": "go"})
    return HierarchicalSolution(rho=rho, gamma=gamma)


def toy_hall_policy() -> HierarchicalSolution:
    gamma = {
        "go_hall": DeterministicPolicy({"x_start": "m"}),
        "hall_exit": DeterministicPolicy({"x_hall": "m"}),
    }
    rho = ProceduralPolicy({"t0": "hall", "tD": "observe",
                            "tOpen": "go", "tLocked": "go", "tH": "go"})
    return HierarchicalSolution(rho=rho, gamma=gamma)


def grid_activity(rng: np.random.Generator, name: str, start_event, end_event,
                  entry: str, exit_: str, width: int, height: int,
                  hazard_rate: float = 0.3) -> Activity:
    """Small grid sub-SSP: east/south moves with 0.8/0.1/0.1 slip, damage on
    entering hazardous cells, entry at (0,0) and goal at the far corner."""
    def cell(x, y):
        if (x, y) == (0, 0):
            return entry
        if (x, y) == (width - 1, height - 1):
            return exit_
        return f"{name}:{x},{y}"

    states = [cell(x, y) for y in range(height) for x in range(width)]
    damage = {
        (x, y): float(rng.uniform(1.0, 6.0))
        for y in range(height) for x in range(width)
        if rng.random() < hazard_rate and (x, y) not in {(0, 0), (width - 1, height - 1)}
    }
    moves = {"e": (1, 0), "s": (0, 1)}
    deviations = {"e": [(0, -1), (0, 1)], "s": [(-1, 0), (1, 0)]}
    actions = {}
    transition = {}
    cost0 = {}
    cost1 = {}
    for y in range(height):
        for x in range(width):
            if (x, y) == (width - 1, height - 1):
                continue
            s = cell(x, y)
            actions[s] = ["e", "s"]
            transition[s] = {}
            cost0[s] = {}
            cost1[s] = {}
            for a, (dx, dy) in moves.items():
                outcomes = [((dx, dy), 0.8)]
                for ddx, ddy in deviations[a]:
                    outcomes.append(((ddx, ddy), 0.1))
                row = {}
                for (ox, oy), p in outcomes:
                    nx, ny = x + ox, y + oy
                    if not (0 <= nx < width and 0 <= ny < height):
                        nx, ny = x, y  # wall bump
                    s2 = cell(nx, ny)
                    row[s2] = row.get(s2, 0.0) + p
                transition[s][a] = row
                cost0[s][a] = {s2: 1.0 for s2 in row}
                cost1[s][a] = {
                    s2: damage.get(_cell_xy(s2, name, entry, exit_, width, height), 0.0)
                    for s2 in row
                }
    return Activity(
        name=name,
        start_event=start_event,
        end_event=end_event,
        states=states,
        actions=actions,
        transition=transition,
        costs=[cost0, cost1],
        goals={cell(width - 1, height - 1)},
    )


def _cell_xy(state, name, entry, exit_, width, height):
    if state == entry:
        return (0, 0)
    if state == exit_:
        return (width - 1, height - 1)
    coords = state.split(":")[-1]
    x, y = coords.split(",")
    return (int(x), int(y))


def random_hcssp(rng: np.random.Generator, delta: float = None) -> HcsspModel:
    """Random small hierarchical instance with landmark-chained activities.

    Shapes: a two-activity chain, a two-route join, or an uncontrollable
    branch; activities are small east/south grids whose entry and exit cells
    are shared landmark states, and one constraint meters damage.
    """
    shape = rng.choice(["chain", "choice", "branch"])
    sizes = []
    while True:
        sizes = [
            (int(rng.integers(2, 4)), int(rng.integers(2, 4))) for _ in range(3)
        ]
        count = 1
        for w, h in sizes:
            count *= 2 ** (w * h - 1)
        if count * 4 <= 10**6:
            break
    mk = lambda k, se, ee, a, b: grid_activity(
        rng, f"E{k}", se, ee, a, b, sizes[k][0], sizes[k][1]
    )
    if shape == "chain":
        acts = [mk(0, "t0", "t1", "p0", "p1"), mk(1, "t1", "tE", "p1", "p2")]
        events = ["t0", "t1", "tE"]
        choices = {"t0": ["go"], "t1": ["go"]}
        trans = {"t0": {"go": {"t1": 1.0}}, "t1": {"go": {"tE": 1.0}}}
    elif shape == "choice":
        # Either go direct (E1) or take the two-leg route (E0 then E2); both
        # routes end at the same exit landmark.
        acts = [
            mk(0, "t0", "t1", "p0", "p1"),
            mk(1, "t0", "tE", "p0", "p2"),
            mk(2, "t1", "tE", "p1", "p2"),
        ]
        events = ["t0", "t1", "tE"]
        choices = {"t0": ["legs", "direct"], "t1": ["go"]}
        trans = {
            "t0": {"legs": {"t1": 1.0}, "direct": {"tE": 1.0}},
            "t1": {"go": {"tE": 1.0}},
        }
    else:  # uncontrollable branch after the first activity
        p_open = float(rng.uniform(0.5, 0.95))
        acts = [
            mk(0, "t0", "t1", "p0", "p1"),
            mk(1, "t1", "tE", "p1", "p2"),
            mk(2, "t2", "tE", "p1", "p2"),
        ]
        events = ["t0", "t1", "t2", "tE"]
        choices = {"t0": ["go"], "t1": ["u"], "t2": ["go"]}
        trans = {
            "t0": {"go": {"t1": 1.0}},
            "t1": {"u": {"tE": p_open, "t2": 1.0 - p_open}},
            "t2": {"go": {"tE": 1.0}},
        }
    member_names = [a.name for a in acts if rng.random() < 0.8] or [acts[0].name]
    if delta is None:
        delta = float(rng.uniform(0.5, 6.0))
    return HcsspModel(
        initial_dist={"p0": 1.0},
        events=events,
        start_event="t0",
        end_event="tE",
        choices=choices,
        event_transition=trans,
        activities=acts,
        constraints=[
            HcsspConstraint(
                activities=member_names,
                cost_index={n: 1 for n in member_names},
                bound=delta,
            )
        ],
    )
