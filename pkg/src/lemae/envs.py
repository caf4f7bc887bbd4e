"""Deterministic grid-world versions of the sparse-reward exploration tasks.

Coordinates are ``(x, y)`` with ``(0, 0)`` in the upper-left corner.
Every task exposes the flat global state as a tuple of ints, gives
extrinsic reward 1 only on the step that reaches success, and steps all
agents simultaneously.  A blocked move leaves the agent where it is.
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field
from typing import Sequence

UP, DOWN, LEFT, RIGHT = range(4)
ACTION_NAMES = ("up", "down", "left", "right")
N_ACTIONS = 4
MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))

TASKS = ("pass", "secret_room", "push_box", "large_pass", "river")
SINGLE_TASKS = ("single_pass", "single_secret_room", "single_push_box", "single_large_pass")


class InvalidAction(ValueError):
    pass


@dataclass
class EnvSpec:
    name: str
    grid_w: int
    grid_h: int
    n_agents: int
    horizon: int
    geometry: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.grid_w < 2 or self.grid_h < 2:
            raise ValueError("grid must be at least 2x2")
        if self.n_agents < 1:
            raise ValueError("need at least one agent")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "grid_w": self.grid_w,
            "grid_h": self.grid_h,
            "n_agents": self.n_agents,
            "horizon": self.horizon,
            "geometry": copy.deepcopy(self.geometry),
        }


def _pass_geometry(size: int, wall_x: int, switches) -> dict:
    return {"wall_x": wall_x, "door": [wall_x, size // 2], "switches": switches}


_DEFAULTS = {
    "pass": lambda: EnvSpec("pass", 30, 30, 2, 300, _pass_geometry(30, 15, [[7, 7], [22, 22]])),
    "large_pass": lambda: EnvSpec(
        "large_pass", 50, 50, 2, 500, _pass_geometry(50, 25, [[12, 12], [37, 37]])
    ),
    "secret_room": lambda: EnvSpec(
        "secret_room", 25, 25, 2, 300,
        {
            "wall_x": 12,
            "room_walls_y": [8, 17],
            "doors": [[12, 4], [12, 12], [12, 20]],
            "left_switch": [6, 12],
            "room_switches": [[18, 4], [18, 12], [18, 20]],
            "target_room": 1,
        },
    ),
    "push_box": lambda: EnvSpec(
        "push_box", 15, 15, 2, 300, {"box": [7, 7], "starts": [[7, 6], [7, 8]]}
    ),
    "river": lambda: EnvSpec(
        "river", 30, 30, 2, 300,
        {
            "river_x": [14, 15],
            "river_y": [14, 15],
            "mountain": [[0, 7], [22, 29]],
            "start_max": [13, 13],
            "goal_min": [22, 22],
        },
    ),
}


def default_spec(name: str, **overrides) -> EnvSpec:
    """Default spec for ``name``; ``single_*`` names give the one-agent variant."""
    base = name[len("single_"):] if name.startswith("single_") else name
    if base not in _DEFAULTS or (base != name and base == "river"):
        raise ValueError(f"unknown task {name!r}")
    spec = _DEFAULTS[base]()
    if base != name:
        spec.name = name
        spec.n_agents = 1
        if base == "push_box":
            spec.geometry["starts"] = spec.geometry["starts"][:1]
    geometry = overrides.pop("geometry", None)
    for key, value in overrides.items():
        if not hasattr(spec, key):
            raise ValueError(f"unknown env field {key!r}")
        setattr(spec, key, value)
    if geometry:
        unknown = set(geometry) - set(spec.geometry)
        if unknown:
            raise ValueError(f"unknown geometry keys for {name}: {sorted(unknown)}")
        spec.geometry.update(copy.deepcopy(geometry))
    spec.__post_init__()
    return spec


class GridEnv:
    """Shared movement, collision and bookkeeping for the grid tasks."""

    state_form = ""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.n_agents = spec.n_agents
        self.w = spec.grid_w
        self.h = spec.grid_h
        self.blocked: set[tuple[int, int]] = set()
        self.pos: list[tuple[int, int]] = []
        self.t = 0
        self._build()
        self._check_geometry()

    # subclasses fill these in
    def _build(self) -> None:
        pass

    def _check_geometry(self) -> None:
        for x, y in self.blocked:
            if not (0 <= x < self.w and 0 <= y < self.h):
                raise ValueError(f"{self.spec.name}: wall cell {(x, y)} outside the grid")

    def _start_cells(self) -> list[tuple[int, int]]:
        raise NotImplementedError

    def _can_enter(self, agent: int, cell: tuple[int, int]) -> bool:
        x, y = cell
        return 0 <= x < self.w and 0 <= y < self.h and cell not in self.blocked

    def _after_move(self) -> None:
        pass

    def is_success(self) -> bool:
        raise NotImplementedError

    def state(self) -> tuple:
        raise NotImplementedError

    def views(self) -> list[tuple]:
        """Per-agent keys for the tabular learners."""
        raise NotImplementedError

    # -- public API ------------------------------------------------------
    def reset(self, seed: int | None = None) -> tuple:
        rng = random.Random(seed)
        cells = self._start_cells()
        self.pos = rng.sample(cells, self.n_agents) if cells else []
        self.t = 0
        self._on_reset()
        return self.state()

    def _on_reset(self) -> None:
        pass

    def step(self, actions: Sequence[int]):
        if len(actions) != self.n_agents:
            raise InvalidAction(f"expected {self.n_agents} actions, got {len(actions)}")
        for a in actions:
            if a not in (0, 1, 2, 3):
                raise InvalidAction(f"action {a!r} is not one of 0..3")
        self._move(actions)
        self._after_move()
        self.t += 1
        success = self.is_success()
        done = success or self.t >= self.spec.horizon
        return self.state(), (1.0 if success else 0.0), done, success

    def _targets(self, actions: Sequence[int]) -> list[tuple[int, int]]:
        out = []
        for i, a in enumerate(actions):
            x, y = self.pos[i]
            dx, dy = MOVES[a]
            cell = (x + dx, y + dy)
            out.append(cell if self._can_enter(i, cell) else (x, y))
        return out

    def _move(self, actions: Sequence[int]) -> None:
        self.pos = resolve_collisions(self.pos, self._targets(actions))


def resolve_collisions(cur: Sequence[tuple], proposed: Sequence[tuple]) -> list[tuple]:
    """Cancel moves so no two agents share a cell or swap places.

    On a clash the lower-indexed agent keeps its move; an agent that is
    not moving can never be displaced.
    """
    new = list(proposed)
    n = len(new)
    changed = True
    while changed:
        changed = False
        for i in range(n):
            for j in range(i + 1, n):
                clash = new[i] == new[j]
                swap = new[i] == cur[j] and new[j] == cur[i] and new[i] != cur[i]
                if not (clash or swap):
                    continue
                loser = j if new[j] != cur[j] else i
                if new[loser] == cur[loser]:
                    loser = i
                new[loser] = cur[loser]
                changed = True
    return new


class PassEnv(GridEnv):
    """Two rooms split by a wall; the door opens while any switch is occupied.

    The one-agent variant latches the door open once a switch is visited,
    since a lone agent cannot hold a switch and pass the door at once.
    """

    state_form = "(agent0.x, agent0.y, agent1.x, agent1.y, door.open)"

    def _build(self):
        g = self.spec.geometry
        self.wall_x = int(g["wall_x"])
        self.door = tuple(g["door"])
        self.switches = {tuple(s) for s in g["switches"]}
        if self.door[0] != self.wall_x:
            raise ValueError("door must sit in the wall column")
        self.blocked = {(self.wall_x, y) for y in range(self.h)} - {self.door}
        self.latch = self.n_agents == 1
        if self.latch:
            self.state_form = "(agent0.x, agent0.y, door.open)"
        self.open = False

    def _start_cells(self):
        return [
            (x, y) for x in range(self.wall_x) for y in range(self.h)
            if (x, y) not in self.switches and (x, y) not in self.blocked
        ]

    def _on_reset(self):
        self.open = False

    def _switch_held(self) -> bool:
        return any(p in self.switches for p in self.pos)

    def _can_enter(self, agent, cell):
        if not super()._can_enter(agent, cell):
            return False
        if cell == self.door:
            return self.open
        return True

    def _after_move(self):
        self.open = (self.latch and self.open) or self._switch_held()

    def is_success(self):
        return all(x > self.wall_x for x, _ in self.pos)

    def _region(self, cell) -> int:
        x, _ = cell
        return 0 if x < self.wall_x else (1 if x == self.wall_x else 2)

    def state(self):
        out = []
        for x, y in self.pos:
            out += (x, y)
        out.append(int(self.open))
        return tuple(out)

    def views(self):
        d = int(self.open)
        regions = [self._region(p) for p in self.pos]
        return [
            (x, y, d) + tuple(r for j, r in enumerate(regions) if j != i)
            for i, (x, y) in enumerate(self.pos)
        ]


class SecretRoomEnv(PassEnv):
    """A left room and three right rooms behind one door each.

    The left switch opens every door; a right room's switch opens only its
    own door.  The state's door element is 1 while any door is open.
    """

    def _build(self):
        g = self.spec.geometry
        self.wall_x = int(g["wall_x"])
        self.room_walls = [int(y) for y in g["room_walls_y"]]
        self.doors = [tuple(d) for d in g["doors"]]
        self.left_switch = tuple(g["left_switch"])
        self.room_switches = [tuple(s) for s in g["room_switches"]]
        self.target_room = int(g["target_room"])
        if len(self.doors) != len(self.room_walls) + 1 or len(self.room_switches) != len(self.doors):
            raise ValueError("secret_room needs one door and one switch per right room")
        self.switches = {self.left_switch, *self.room_switches}
        self.blocked = {(self.wall_x, y) for y in range(self.h)} - set(self.doors)
        for y in self.room_walls:
            self.blocked |= {(x, y) for x in range(self.wall_x + 1, self.w)}
        self.bounds = []
        lo = 0
        for y in self.room_walls + [self.h]:
            self.bounds.append((lo, y - 1))
            lo = y + 1
        self.latch = self.n_agents == 1
        if self.latch:
            self.state_form = "(agent0.x, agent0.y, door.open)"
        self.door_open = [False] * len(self.doors)

    @property
    def open(self):
        return any(self.door_open)

    @open.setter
    def open(self, value):
        # PassEnv resets through this attribute
        if not value:
            self.door_open = [False] * len(self.doors)

    def room_of(self, cell) -> int | None:
        x, y = cell
        if x <= self.wall_x:
            return None
        for k, (lo, hi) in enumerate(self.bounds):
            if lo <= y <= hi:
                return k
        return None

    def _can_enter(self, agent, cell):
        if not GridEnv._can_enter(self, agent, cell):
            return False
        if cell in self.doors:
            return self.door_open[self.doors.index(cell)]
        return True

    def _after_move(self):
        held = set(self.pos)
        left = self.left_switch in held
        self.door_open = [
            (self.latch and was) or left or sw in held
            for was, sw in zip(self.door_open, self.room_switches)
        ]

    def is_success(self):
        return all(self.room_of(p) == self.target_room for p in self.pos)

    def _region(self, cell):
        if cell[0] < self.wall_x:
            return 0
        if cell[0] == self.wall_x:
            return 1
        room = self.room_of(cell)
        return 2 + (room if room is not None else 0)

    def views(self):
        doors = tuple(int(d) for d in self.door_open)
        regions = [self._region(p) for p in self.pos]
        return [
            (x, y) + doors + tuple(r for j, r in enumerate(regions) if j != i)
            for i, (x, y) in enumerate(self.pos)
        ]


class PushBoxEnv(GridEnv):
    """Agents must push a box into a wall; it only moves when all push together.

    Every agent must stand in the row or column adjacent to the box on the
    same side (diagonal neighbours count) and move towards it.
    """

    state_form = "(agent0.x, agent0.y, agent1.x, agent1.y, box.x, box.y)"

    def _build(self):
        g = self.spec.geometry
        self.box_start = tuple(g["box"])
        self.starts = [tuple(s) for s in g["starts"]]
        if len(self.starts) < self.n_agents:
            raise ValueError("push_box needs a start cell per agent")
        if self.n_agents == 1:
            self.state_form = "(agent0.x, agent0.y, box.x, box.y)"
        self.box = self.box_start

    def reset(self, seed=None):
        self.pos = list(self.starts[: self.n_agents])
        self.box = self.box_start
        self.t = 0
        return self.state()

    def _start_cells(self):
        return list(self.starts)

    def _can_enter(self, agent, cell):
        return super()._can_enter(agent, cell) and cell != self.box

    def _behind(self, cell, action) -> bool:
        (x, y), (bx, by) = cell, self.box
        if action == RIGHT:
            return x == bx - 1 and abs(y - by) <= 1
        if action == LEFT:
            return x == bx + 1 and abs(y - by) <= 1
        if action == DOWN:
            return y == by - 1 and abs(x - bx) <= 1
        return y == by + 1 and abs(x - bx) <= 1

    def _move(self, actions):
        a0 = actions[0]
        if all(a == a0 for a in actions) and all(self._behind(p, a0) for p in self.pos):
            dx, dy = MOVES[a0]
            nb = (self.box[0] + dx, self.box[1] + dy)
            if 0 <= nb[0] < self.w and 0 <= nb[1] < self.h:
                self.box = nb
                self.pos = [(x + dx, y + dy) for x, y in self.pos]
                return
        super()._move(actions)

    def is_success(self):
        bx, by = self.box
        return bx in (0, self.w - 1) or by in (0, self.h - 1)

    def state(self):
        out = []
        for x, y in self.pos:
            out += (x, y)
        out += self.box
        return tuple(out)

    def views(self):
        s = self.state()
        return [s] * self.n_agents


class RiverEnv(GridEnv):
    """Alice (agent 0) may step onto river cells only while Bob (agent 1) stands in the river."""

    state_form = "(alice.x, alice.y, bob.x, bob.y)"

    def _build(self):
        g = self.spec.geometry
        rx = {int(v) for v in g["river_x"]}
        ry = {int(v) for v in g["river_y"]}
        self.river = {(x, y) for x in range(self.w) for y in range(self.h) if x in rx or y in ry}
        (mx0, mx1), (my0, my1) = g["mountain"]
        self.blocked = {(x, y) for x in range(mx0, mx1 + 1) for y in range(my0, my1 + 1)}
        self.start_max = tuple(g["start_max"])
        self.goal_min = tuple(g["goal_min"])
        self.rx, self.ry = min(rx), min(ry)
        self._bob_wet = False

    def _start_cells(self):
        return [
            (x, y) for x in range(self.start_max[0] + 1) for y in range(self.start_max[1] + 1)
            if (x, y) not in self.river and (x, y) not in self.blocked
        ]

    def _move(self, actions):
        self._bob_wet = self.n_agents > 1 and self.pos[1] in self.river
        super()._move(actions)

    def _can_enter(self, agent, cell):
        if not super()._can_enter(agent, cell):
            return False
        if agent == 0 and cell in self.river:
            return self._bob_wet
        return True

    def is_success(self):
        gx, gy = self.goal_min
        return all(x >= gx and y >= gy for x, y in self.pos)

    def _region(self, cell) -> int:
        if cell in self.river:
            return 4
        x, y = cell
        return (1 if x > self.rx else 0) + (2 if y > self.ry else 0)

    def state(self):
        out = []
        for x, y in self.pos:
            out += (x, y)
        return tuple(out)

    def views(self):
        regions = [self._region(p) for p in self.pos]
        return [
            (x, y) + tuple(r for j, r in enumerate(regions) if j != i)
            for i, (x, y) in enumerate(self.pos)
        ]


_CLASSES = {
    "pass": PassEnv,
    "large_pass": PassEnv,
    "secret_room": SecretRoomEnv,
    "push_box": PushBoxEnv,
    "river": RiverEnv,
}


def make_env(spec: EnvSpec | str) -> GridEnv:
    if isinstance(spec, str):
        spec = default_spec(spec)
    base = spec.name[len("single_"):] if spec.name.startswith("single_") else spec.name
    return _CLASSES[base](spec)


def reset(spec: EnvSpec, seed: int | None = None) -> tuple:
    return make_env(spec).reset(seed)


def success_probes(spec: EnvSpec | str) -> list[tuple]:
    """Deterministic legal states covering start, mid-task and success configurations."""
    env = make_env(spec)
    spec = env.spec
    probes = [env.reset(seed) for seed in range(4)]
    n = env.n_agents

    def place(cells, **extra):
        env.pos = [tuple(c) for c in cells[:n]]
        for k, v in extra.items():
            setattr(env, k, v)
        env._after_move()
        return env.state()

    if isinstance(env, SecretRoomEnv):
        ls = env.left_switch
        probes.append(place([ls, (ls[0] + 1, ls[1])]))
        for k, (lo, hi) in enumerate(env.bounds):
            y = (lo + hi) // 2
            probes.append(place([(env.wall_x + 2, y), (env.wall_x + 3, y)]))
        probes.append(place([env.doors[0], ls]))
        probes.append(place([env.room_switches[env.target_room], (0, 0)]))
    elif isinstance(env, PassEnv):
        sw = sorted(env.switches)
        right = (env.wall_x + 2, env.h - 1)
        probes.append(place([sw[0], (0, 0)]))
        probes.append(place([sw[0], env.door]))
        probes.append(place([(0, 0), right]))
        probes.append(place([sw[-1], (env.wall_x - 1, env.door[1])]))
        probes.append(place([right, (env.w - 1, 0)]))
        probes.append(place([(env.w - 1, env.h - 1), right]))
    elif isinstance(env, PushBoxEnv):
        bx, by = env.box_start
        probes.append(place([(bx - 1, by), (bx - 1, by + 1)]))
        probes.append(place([(bx - 1, by - 1), (bx - 1, by + 1)], box=(bx + 3, by)))
        probes.append(place([(0, 0), (1, 0)], box=(env.w - 1, by)))
        probes.append(place([(bx, 1), (bx + 1, 1)], box=(bx, 0)))
        probes.append(place([(env.w - 2, by), (env.w - 2, by + 1)], box=(env.w - 1, by)))
        probes.append(place([(2, 2), (3, 3)], box=(bx, env.h - 1)))
    elif isinstance(env, RiverEnv):
        gx, gy = env.goal_min
        probes.append(place([(env.rx - 1, 3), (env.rx, 3)]))
        probes.append(place([(env.rx, 3), (env.rx + 1, 3)]))
        probes.append(place([(env.rx + 3, env.ry - 2), (env.rx + 3, env.ry)]))
        probes.append(place([(env.rx + 3, env.ry + 3), (env.rx + 4, env.ry + 3)]))
        probes.append(place([(gx, gy), (gx + 1, gy)]))
        probes.append(place([(env.w - 1, env.h - 1), (gx, env.h - 1)]))
    while len(probes) < 10:
        probes.append(env.reset(100 + len(probes)))
    return probes
