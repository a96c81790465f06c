"""Evacuation benchmark generator: rooms, doors, hallways, hazards.

A robot evacuates a building of rectangular grid rooms joined by connectors.
Hallways are always passable; a door turns out to be locked with some
probability, discovered on arrival. Navigating a room between two landmarks
(start position, exit position, doors, hallways) is one activity: a grid SSP
with four move actions, 0.85 probability of the intended step and 0.075 for
each perpendicular slip, wall bumps staying in place. Every action costs one
time step; entering a hazardous cell adds its damage to the secondary cost.
One global constraint keeps expected damage within the given budget.

The route layer is generated as a tree of events: at each landmark the robot
chooses which landmark to head for next among those that keep the exit
certainly reachable (under both door outcomes, without revisiting), and each
door approach branches on an uncontrollable open/locked outcome.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Tuple

from .errors import InvalidSpec
from .hierarchy import Activity, HcsspConstraint, HcsspModel

MOVE_INTENDED = 0.85
MOVE_SLIP = 0.075
DOOR_LOCK_DEFAULT = 0.1

_MOVES = {"n": (0, -1), "e": (1, 0), "s": (0, 1), "w": (-1, 0)}
_SLIPS = {"n": ("w", "e"), "e": ("n", "s"), "s": ("e", "w"), "w": ("s", "n")}


@dataclass(frozen=True)
class Room:
    id: str
    w: int
    h: int


@dataclass(frozen=True)
class Connector:
    from_room: str
    to_room: str
    kind: str  # "door" or "hallway"
    lock_prob: float = DOOR_LOCK_DEFAULT
    from_cell: Optional[Tuple[int, int]] = None
    to_cell: Optional[Tuple[int, int]] = None
    id: Optional[str] = None


@dataclass(frozen=True)
class Hazard:
    room: str
    x: int
    y: int
    damage: float = 50.0


@dataclass(frozen=True)
class Placement:
    room: str
    x: int
    y: int


@dataclass(frozen=True)
class EvacuationSpec:
    rooms: Tuple[Room, ...]
    connectors: Tuple[Connector, ...]
    hazards: Tuple[Hazard, ...]
    start: Placement
    exit: Placement
    delta: float

    def __init__(self, rooms, connectors, hazards, start, exit, delta):
        object.__setattr__(self, "rooms", tuple(rooms))
        object.__setattr__(self, "connectors", tuple(connectors))
        object.__setattr__(self, "hazards", tuple(hazards))
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "exit", exit)
        object.__setattr__(self, "delta", float(delta))


def spec_from_json(data: Mapping[str, Any]) -> EvacuationSpec:
    """Parse the scenario schema; connector cells are optional and default to
    facing wall midpoints."""
    try:
        rooms = [Room(r["id"], int(r["w"]), int(r["h"])) for r in data["rooms"]]
        connectors = [
            Connector(
                from_room=c["from"],
                to_room=c["to"],
                kind=c["kind"],
                lock_prob=float(c.get("lock_prob", DOOR_LOCK_DEFAULT)),
                from_cell=_cell(c.get("from_cell")),
                to_cell=_cell(c.get("to_cell")),
                id=c.get("id"),
            )
            for c in data["connectors"]
        ]
        hazards = [
            Hazard(h["room"], int(h["x"]), int(h["y"]),
                   float(h.get("damage", 50.0)))
            for h in data.get("hazards", [])
        ]
        start = Placement(data["start"]["room"], int(data["start"]["x"]),
                          int(data["start"]["y"]))
        exit_ = Placement(data["exit"]["room"], int(data["exit"]["x"]),
                          int(data["exit"]["y"]))
        return EvacuationSpec(rooms, connectors, hazards, start, exit_,
                              float(data["delta"]))
    except (KeyError, TypeError, ValueError) as err:
        raise InvalidSpec(f"malformed scenario description: {err}") from err


def _cell(value) -> Optional[Tuple[int, int]]:
    if value is None:
        return None
    return (int(value["x"]), int(value["y"]))


def spec_to_json(spec: EvacuationSpec) -> Dict[str, Any]:
    return {
        "rooms": [{"id": r.id, "w": r.w, "h": r.h} for r in spec.rooms],
        "connectors": [
            {
                "from": c.from_room,
                "to": c.to_room,
                "kind": c.kind,
                "lock_prob": c.lock_prob,
                **({"from_cell": {"x": c.from_cell[0], "y": c.from_cell[1]}}
                   if c.from_cell else {}),
                **({"to_cell": {"x": c.to_cell[0], "y": c.to_cell[1]}}
                   if c.to_cell else {}),
                **({"id": c.id} if c.id else {}),
            }
            for c in spec.connectors
        ],
        "hazards": [
            {"room": h.room, "x": h.x, "y": h.y, "damage": h.damage}
            for h in spec.hazards
        ],
        "start": {"room": spec.start.room, "x": spec.start.x, "y": spec.start.y},
        "exit": {"room": spec.exit.room, "x": spec.exit.x, "y": spec.exit.y},
        "delta": spec.delta,
    }


class _Builder:
    def __init__(self, spec: EvacuationSpec):
        self.spec = spec
        self.rooms = {r.id: r for r in spec.rooms}
        if len(self.rooms) != len(spec.rooms):
            raise InvalidSpec("duplicate room ids")
        self._check_placement(spec.start, "start")
        self._check_placement(spec.exit, "exit")

        # Landmarks: start, exit, one per connector; each knows its cell in
        # every room it belongs to.
        self.cell_of: Dict[Tuple[str, str], Tuple[int, int]] = {}
        self.rooms_of: Dict[str, List[str]] = {}
        self.kind: Dict[str, str] = {}
        self.lock_prob: Dict[str, float] = {}
        self._add_landmark("start", spec.start.room, (spec.start.x, spec.start.y),
                           "point")
        self._add_landmark("exit", spec.exit.room, (spec.exit.x, spec.exit.y),
                           "point")
        door_n = hall_n = 0
        for c in spec.connectors:
            for room_id in (c.from_room, c.to_room):
                if room_id not in self.rooms:
                    raise InvalidSpec(f"connector references unknown room {room_id!r}")
            if c.kind not in ("door", "hallway"):
                raise InvalidSpec(f"connector kind {c.kind!r} is not door/hallway")
            if c.kind == "door":
                door_n += 1
                name = c.id or f"door{door_n}"
            else:
                hall_n += 1
                name = c.id or f"hallway{hall_n}"
            from_cell = c.from_cell or self._default_cell(c.from_room, east=True)
            to_cell = c.to_cell or self._default_cell(c.to_room, east=False)
            self._check_boundary(c.from_room, from_cell, name)
            self._check_boundary(c.to_room, to_cell, name)
            self._add_landmark(name, c.from_room, from_cell, c.kind)
            self._add_landmark(name, c.to_room, to_cell, c.kind)
            self.lock_prob[name] = c.lock_prob if c.kind == "door" else 0.0

        self.hazard_at: Dict[Tuple[str, int, int], float] = {}
        for hz in spec.hazards:
            if hz.room not in self.rooms:
                raise InvalidSpec(f"hazard references unknown room {hz.room!r}")
            self._check_cell(hz.room, (hz.x, hz.y), "hazard")
            self.hazard_at[(hz.room, hz.x, hz.y)] = hz.damage
        for name, where in (("start", spec.start), ("exit", spec.exit)):
            if (where.room, where.x, where.y) in self.hazard_at:
                raise InvalidSpec(f"{name} cell is hazardous")

        self.landmarks_in_room: Dict[str, List[str]] = {r.id: [] for r in spec.rooms}
        for (name, room_id) in self.cell_of:
            self.landmarks_in_room[room_id].append(name)
        for room_id in self.landmarks_in_room:
            self.landmarks_in_room[room_id].sort()

        self._room_dynamics_cache: Dict[str, Tuple[dict, dict, dict, list]] = {}
        self._room_has_hazard = {
            r.id: any(key[0] == r.id for key in self.hazard_at)
            for r in spec.rooms
        }

    # -- spec checks ----------------------------------------------------

    def _check_placement(self, p: Placement, what: str):
        if p.room not in self.rooms:
            raise InvalidSpec(f"{what} references unknown room {p.room!r}")
        self._check_cell(p.room, (p.x, p.y), what)

    def _check_cell(self, room_id: str, cell: Tuple[int, int], what: str):
        room = self.rooms[room_id]
        x, y = cell
        if not (0 <= x < room.w and 0 <= y < room.h):
            raise InvalidSpec(
                f"{what} cell ({x}, {y}) is outside room {room_id!r} "
                f"({room.w}x{room.h})"
            )

    def _check_boundary(self, room_id: str, cell: Tuple[int, int], name: str):
        self._check_cell(room_id, cell, f"connector {name}")
        room = self.rooms[room_id]
        x, y = cell
        if x not in (0, room.w - 1) and y not in (0, room.h - 1):
            raise InvalidSpec(
                f"connector {name} cell ({x}, {y}) is not on the boundary "
                f"of room {room_id!r}"
            )

    def _default_cell(self, room_id: str, east: bool) -> Tuple[int, int]:
        room = self.rooms[room_id]
        return (room.w - 1 if east else 0, room.h // 2)

    def _add_landmark(self, name: str, room_id: str, cell: Tuple[int, int],
                      kind: str):
        key = (name, room_id)
        if key in self.cell_of and self.cell_of[key] != cell:
            raise InvalidSpec(
                f"landmark {name} placed at two different cells in room {room_id!r}"
            )
        for (other, other_room), other_cell in self.cell_of.items():
            if other_room == room_id and other_cell == cell and other != name:
                raise InvalidSpec(
                    f"landmarks {other} and {name} share cell {cell} in room "
                    f"{room_id!r}; set explicit connector cells"
                )
        self.cell_of[key] = cell
        self.rooms_of.setdefault(name, [])
        if room_id not in self.rooms_of[name]:
            self.rooms_of[name].append(room_id)
        self.kind.setdefault(name, kind)

    # -- grid dynamics ----------------------------------------------------

    def _state_id(self, room_id: str, x: int, y: int) -> str:
        for (name, rid), cell in self.cell_of.items():
            if rid == room_id and cell == (x, y):
                return f"lm:{name}"
        return f"{room_id}:{x},{y}"

    def room_dynamics(self, room_id: str):
        """Shared per-room transition and cost tables over aliased state ids."""
        if room_id in self._room_dynamics_cache:
            return self._room_dynamics_cache[room_id]
        room = self.rooms[room_id]
        alias = {
            cell: f"lm:{name}"
            for (name, rid), cell in self.cell_of.items()
            if rid == room_id
        }

        def sid(x, y):
            return alias.get((x, y), f"{room_id}:{x},{y}")

        states = [sid(x, y) for y in range(room.h) for x in range(room.w)]
        transition: dict = {}
        cost_time: dict = {}
        cost_damage: dict = {}
        for y in range(room.h):
            for x in range(room.w):
                s = sid(x, y)
                transition[s] = {}
                cost_time[s] = {}
                cost_damage[s] = {}
                for a in ("n", "e", "s", "w"):
                    outcomes = [(_MOVES[a], MOVE_INTENDED)]
                    for slip in _SLIPS[a]:
                        outcomes.append((_MOVES[slip], MOVE_SLIP))
                    row: Dict[str, float] = {}
                    dmg: Dict[str, float] = {}
                    for (dx, dy), p in outcomes:
                        nx, ny = x + dx, y + dy
                        if not (0 <= nx < room.w and 0 <= ny < room.h):
                            nx, ny = x, y  # wall bump
                        s2 = sid(nx, ny)
                        row[s2] = row.get(s2, 0.0) + p
                        damage = self.hazard_at.get((room_id, nx, ny), 0.0)
                        if damage:
                            dmg[s2] = damage
                    transition[s][a] = row
                    cost_time[s][a] = {s2: 1.0 for s2 in row}
                    if dmg:
                        cost_damage[s][a] = dmg
        self._room_dynamics_cache[room_id] = (transition, cost_time, cost_damage,
                                              states)
        return self._room_dynamics_cache[room_id]

    def navigation_activity(self, name: str, room_id: str, from_lm: str,
                            to_lm: str, start_event, end_event) -> Activity:
        transition, cost_time, cost_damage, states = self.room_dynamics(room_id)
        actions = {s: ("n", "e", "s", "w") for s in states}
        return Activity(
            name=name,
            start_event=start_event,
            end_event=end_event,
            states=states,
            actions=actions,
            transition=transition,
            costs=[cost_time, cost_damage],
            goals={f"lm:{to_lm}"},
            family=f"nav:{room_id}:{from_lm}->{to_lm}",
        )

    # -- route tree ---------------------------------------------------------

    def build(self) -> HcsspModel:
        start_node = ("start", frozenset([self.spec.start.room]), frozenset())
        finish_memo: Dict[Tuple, bool] = {}

        def children_of(node, room_id, v):
            lm, sides, visited = node
            visited2 = visited | {lm}
            if v == "exit":
                return []
            if self.kind[v] == "hallway":
                return [(v, frozenset(self.rooms_of[v]), visited2)]
            return [
                (v, frozenset(self.rooms_of[v]), visited2),  # open
                (v, frozenset([room_id]), visited2),         # locked
            ]

        def viable_choices(node):
            lm, sides, visited = node
            out = []
            for room_id in sorted(sides):
                for v in self.landmarks_in_room[room_id]:
                    if v == lm or v in visited or v == "start":
                        continue
                    kids = children_of(node, room_id, v)
                    if all(can_finish(kid) for kid in kids):
                        out.append((room_id, v))
            return out

        def can_finish(node) -> bool:
            lm, sides, visited = node
            if lm == "exit":
                return True
            key = node
            if key in finish_memo:
                return finish_memo[key]
            finish_memo[key] = False  # cycles are impossible; be safe anyway
            ok = bool(viable_choices(node))
            finish_memo[key] = ok
            return ok

        if not can_finish(start_node):
            raise InvalidSpec(
                "no route guarantees reaching the exit under every door outcome"
            )

        events: List[str] = []
        choices: Dict[str, List[str]] = {}
        transitions: Dict[str, Dict[str, Dict[str, float]]] = {}
        activities: List[Activity] = []
        activity_counter = [0]
        event_of: Dict[Tuple, str] = {}
        end_event = "tE"

        def mint_activity_name(room_id, lm, v) -> str:
            name = f"a{activity_counter[0]}:{room_id}:{lm}->{v}"
            activity_counter[0] += 1
            return name

        def new_event(label: str) -> str:
            name = f"t{len(events)}@{label}"
            events.append(name)
            return name

        def expand(node) -> str:
            if node in event_of:
                return event_of[node]
            lm, sides, visited = node
            ev = new_event(lm)
            event_of[node] = ev
            options = viable_choices(node)
            choices[ev] = []
            transitions[ev] = {}
            for room_id, v in options:
                label = f"go:{room_id}:{v}"
                choices[ev].append(label)
                act_name = mint_activity_name(room_id, lm, v)
                if v == "exit":
                    target = end_event
                    activities.append(self.navigation_activity(
                        act_name, room_id, lm, v, ev, target))
                    transitions[ev][label] = {target: 1.0}
                elif self.kind[v] == "hallway":
                    child = (v, frozenset(self.rooms_of[v]), visited | {lm})
                    target = expand(child)
                    activities.append(self.navigation_activity(
                        act_name, room_id, lm, v, ev, target))
                    transitions[ev][label] = {target: 1.0}
                else:
                    # Walk to the door, then learn whether it is locked.
                    try_node = ("try", v, room_id, visited | {lm})
                    if try_node in event_of:
                        try_ev = event_of[try_node]
                    else:
                        try_ev = new_event(f"try-{v}")
                        event_of[try_node] = try_ev
                        open_child = (v, frozenset(self.rooms_of[v]),
                                      visited | {lm})
                        locked_child = (v, frozenset([room_id]), visited | {lm})
                        open_ev = expand(open_child)
                        locked_ev = expand(locked_child)
                        p_lock = self.lock_prob[v]
                        choices[try_ev] = ["observe"]
                        transitions[try_ev] = {
                            "observe": {open_ev: 1.0 - p_lock,
                                        locked_ev: p_lock},
                        }
                    activities.append(self.navigation_activity(
                        act_name, room_id, lm, v, ev, try_ev))
                    transitions[ev][label] = {try_ev: 1.0}
            return ev

        expand(start_node)
        events.append(end_event)

        constrained = [
            a.name for a in activities
            if self._room_has_hazard[self._room_of_activity(a)]
        ]
        constraints = [HcsspConstraint(
            activities=constrained,
            cost_index={n: 1 for n in constrained},
            bound=self.spec.delta,
        )]
        start_sid = self._state_id(self.spec.start.room, self.spec.start.x,
                                   self.spec.start.y)
        return HcsspModel(
            initial_dist={start_sid: 1.0},
            events=events,
            start_event=events[0],
            end_event=end_event,
            choices=choices,
            event_transition=transitions,
            activities=activities,
            constraints=constraints,
        )

    @staticmethod
    def _room_of_activity(act: Activity) -> str:
        return act.name.split(":")[1]


def build_evacuation(spec: EvacuationSpec) -> HcsspModel:
    """Compile a scenario into a hierarchical model (see module docstring)."""
    return _Builder(spec).build()


def canonical_spec(delta: float = 1.0) -> EvacuationSpec:
    """Six-room benchmark building, 18644 grid cells in total.

    The fast route runs through two doors (lock probability 0.1 each); a
    hallway chain offers a safe roundabout. Hazards cluster in the interiors
    of the start room and the middle room, leaving wall-hugging corridors
    clear, so small damage budgets force either careful paths or the detour.
    """
    rooms = [
        Room("R1", 56, 56),
        Room("R2", 56, 56),
        Room("R3", 56, 56),
        Room("R4", 55, 56),
        Room("R5", 54, 57),
        Room("R6", 54, 57),
    ]
    connectors = [
        Connector("R1", "R2", "door", 0.1, from_cell=(55, 28), to_cell=(0, 28)),
        Connector("R2", "R3", "door", 0.1, from_cell=(55, 28), to_cell=(0, 28)),
        Connector("R1", "R4", "hallway", from_cell=(28, 55), to_cell=(28, 0)),
        Connector("R4", "R5", "hallway", from_cell=(54, 28), to_cell=(0, 28)),
        Connector("R5", "R6", "hallway", from_cell=(53, 28), to_cell=(0, 28)),
        Connector("R6", "R3", "hallway", from_cell=(28, 0), to_cell=(28, 55)),
        Connector("R2", "R5", "hallway", from_cell=(28, 55), to_cell=(28, 0)),
    ]
    hazards: List[Hazard] = []
    # Scattered burning patches near (not across) the natural routes: the
    # shortest paths graze them, so expected damage trades smoothly against
    # travel time, and wide detours push the exposure toward zero.
    blocks = [
        # R1: along start->door1, start->hallway1, door1->hallway1 diagonals.
        ("R1", 16, 8), ("R1", 30, 16), ("R1", 44, 24),
        ("R1", 10, 24), ("R1", 20, 40),
        ("R1", 40, 38),
        # R2: along door1->door2 and the drops toward hallway5.
        ("R2", 14, 25), ("R2", 34, 26),
        ("R2", 12, 40), ("R2", 38, 40),
    ]
    for room_id, x0, y0 in blocks:
        for y in range(y0, y0 + 6):
            for x in range(x0, x0 + 6):
                hazards.append(Hazard(room_id, x, y, 50.0))
    return EvacuationSpec(
        rooms=rooms,
        connectors=connectors,
        hazards=hazards,
        start=Placement("R1", 4, 4),
        exit=Placement("R3", 50, 50),
        delta=delta,
    )


def load_spec(path) -> EvacuationSpec:
    with open(path) as fh:
        return spec_from_json(json.load(fh))


def save_spec(spec: EvacuationSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec_to_json(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")
