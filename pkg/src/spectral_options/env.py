"""Tabular gridworld environments parsed from ASCII maps.

A map is a rectangular block of characters: ``#`` wall, ``.`` open floor,
``S`` the unique start cell, ``G`` a goal cell.  Every open cell (including
``S`` and ``G``) becomes one tabular state; state ids are assigned in
row-major order.  The four actions move one cell north/east/south/west;
moving into a wall or off the grid leaves the state unchanged.  Entering a
goal cell yields ``goal_reward`` and ends the episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

N_ACTIONS = 4
ACTION_NAMES = ("N", "E", "S", "W")
# Row/column deltas per action, index-aligned with ACTION_NAMES.
DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))
# Perpendicular action pairs used when slip_prob > 0.
_PERPENDICULAR = {0: (1, 3), 1: (0, 2), 2: (1, 3), 3: (0, 2)}


class MapError(ValueError):
    """Raised for any malformed ASCII map."""


@dataclass
class Step:
    state: int
    action: int
    reward: float
    next_state: int
    done: bool


@dataclass
class Trajectory:
    """A chained sequence of steps from a single episode."""

    steps: list[Step] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def append(self, step: Step):
        if self.steps and self.steps[-1].next_state != step.state:
            raise ValueError("trajectory steps must chain: s'_t == s_{t+1}")
        self.steps.append(step)


@dataclass
class GridWorld:
    height: int
    width: int
    walls: np.ndarray          # bool (height, width), True where '#'
    cells: list[tuple[int, int]]   # state id -> (row, col)
    index: dict[tuple[int, int], int]
    start: int
    goals: frozenset[int]
    step_reward: float = 0.0
    goal_reward: float = 1.0
    slip_prob: float = 0.0

    @property
    def n_states(self) -> int:
        return len(self.cells)

    def is_terminal(self, s: int) -> bool:
        return s in self.goals

    def move(self, s: int, a: int) -> int:
        """Deterministic successor of (s, a): neighbour cell, or s on a wall bump."""
        r, c = self.cells[s]
        dr, dc = DELTAS[a]
        nr, nc = r + dr, c + dc
        if 0 <= nr < self.height and 0 <= nc < self.width and not self.walls[nr, nc]:
            return self.index[(nr, nc)]
        return s


def bundled_map_text(name: str) -> str:
    """Return the text of a map shipped with the package (e.g. "three_rooms")."""
    ref = resources.files("spectral_options") / "maps" / f"{name}.txt"
    if not ref.is_file():
        raise MapError(f"no bundled map named {name!r}")
    return ref.read_text()


def load_gridworld(map_text: str, step_reward: float = 0.0, goal_reward: float = 1.0,
                   slip_prob: float = 0.0) -> GridWorld:
    """Parse an ASCII map into a GridWorld.

    Raises MapError for a non-rectangular map, an unknown character, zero or
    multiple 'S' cells, or zero 'G' cells.
    """
    lines = [ln for ln in map_text.splitlines() if ln != ""]
    if not lines:
        raise MapError("empty map")
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise MapError("non-rectangular map: all rows must have equal length")
    height = len(lines)

    if not 0.0 <= slip_prob <= 1.0:
        raise MapError(f"slip_prob must lie in [0, 1], got {slip_prob}")

    walls = np.zeros((height, width), dtype=bool)
    cells: list[tuple[int, int]] = []
    index: dict[tuple[int, int], int] = {}
    starts: list[int] = []
    goals: list[int] = []
    for r, ln in enumerate(lines):
        for c, ch in enumerate(ln):
            if ch == "#":
                walls[r, c] = True
                continue
            if ch not in ".SG":
                raise MapError(f"unknown map character {ch!r} at row {r}, col {c}")
            sid = len(cells)
            cells.append((r, c))
            index[(r, c)] = sid
            if ch == "S":
                starts.append(sid)
            elif ch == "G":
                goals.append(sid)

    if len(starts) == 0:
        raise MapError("map has no start cell 'S'")
    if len(starts) > 1:
        raise MapError(f"map has {len(starts)} start cells; exactly one 'S' required")
    if len(goals) == 0:
        raise MapError("map has no goal cell 'G'")

    return GridWorld(height=height, width=width, walls=walls, cells=cells, index=index,
                     start=starts[0], goals=frozenset(goals), step_reward=step_reward,
                     goal_reward=goal_reward, slip_prob=slip_prob)


def step(world: GridWorld, s: int, a: int, rng: np.random.Generator | None = None):
    """One environment transition from state s under action a.

    Returns (next_state, reward, done).  With slip_prob > 0 the commanded
    action is replaced, with that probability, by one of the two
    perpendicular actions chosen uniformly; an rng is then required.
    """
    if world.is_terminal(s):
        raise ValueError(f"cannot step from terminal state {s}")
    if not 0 <= a < N_ACTIONS:
        raise ValueError(f"invalid action {a}")
    if world.slip_prob > 0.0:
        if rng is None:
            raise ValueError("slip_prob > 0 requires an rng")
        if rng.random() < world.slip_prob:
            a = _PERPENDICULAR[a][rng.integers(2)]
    s2 = world.move(s, a)
    done = s2 in world.goals
    reward = world.goal_reward if done else world.step_reward
    return s2, reward, done


def sample_trajectory(world: GridWorld, policy, max_steps: int,
                      rng: np.random.Generator,
                      start: int | None = None) -> Trajectory:
    """Roll out one episode from ``start`` (the map start state by default).

    ``policy`` is called as policy(state, rng) and must return an action id.
    The rollout stops on episode termination or after max_steps steps.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    s = world.start if start is None else start
    if world.is_terminal(s):
        raise ValueError(f"cannot start an episode at terminal state {s}")
    traj = Trajectory()
    for _ in range(max_steps):
        a = policy(s, rng)
        s2, r, done = step(world, s, a, rng)
        traj.append(Step(s, a, r, s2, done))
        if done:
            break
        s = s2
    return traj


def uniform_random_policy(state: int, rng: np.random.Generator) -> int:
    return int(rng.integers(N_ACTIONS))
