"""Benchmark environments: ASCII gridworld mazes and Fruit Tree Navigation."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lmdp import Ordering, TabularMOMDP, lex_compare

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTION_NAMES = ["up", "down", "left", "right"]
_MOVES = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0)}

FREE, HIGH, LOW = "free", "high", "low"
_TOKENS = {"__": FREE, "G_": FREE, "S_": FREE, "HH": HIGH, "hh": LOW}
_TILE_CHARS = {FREE: "__", HIGH: "HH", LOW: "hh"}

ENDPOINT_PRIMARY = "endpoint"
PATH_PRIMARY = "path"
SCHEMES = (ENDPOINT_PRIMARY, PATH_PRIMARY)


class MazeParseError(ValueError):
    pass


@dataclass
class MazeSpec:
    """Grid layout plus reward parameters.

    ``tiles[row][col]`` holds FREE / HIGH / LOW with row 0 at the bottom.
    Cells are addressed as ``(col, row)``.
    """

    width: int
    height: int
    start: tuple[int, int]
    goal: tuple[int, int]
    tiles: list[list[str]]
    high_penalty: float = -5.0
    low_penalty: float = -4.0
    goal_reward: float = 1.0
    scheme: str = ENDPOINT_PRIMARY
    name: str = ""

    def __post_init__(self):
        self.start = tuple(int(v) for v in self.start)
        self.goal = tuple(int(v) for v in self.goal)
        self.validate()

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("maze must have at least one cell")
        if len(self.tiles) != self.height or any(len(r) != self.width for r in self.tiles):
            raise ValueError(f"tile map does not match {self.width}x{self.height}")
        for cell, what in ((self.start, "start"), (self.goal, "goal")):
            if not self.in_bounds(cell):
                raise ValueError(f"{what} {cell} is outside the grid")
            if self.tile(cell) != FREE:
                raise ValueError(f"{what} {cell} must be a free tile")
        if self.start == self.goal:
            raise ValueError("start and goal coincide")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown objective scheme {self.scheme!r}")

    def in_bounds(self, cell) -> bool:
        c, r = cell
        return 0 <= c < self.width and 0 <= r < self.height

    def tile(self, cell) -> str:
        c, r = cell
        return self.tiles[r][c]

    def penalty(self, cell) -> float:
        t = self.tile(cell)
        if t == HIGH:
            return self.high_penalty
        if t == LOW:
            return self.low_penalty
        return 0.0

    def bad_cells(self) -> set[tuple[int, int]]:
        return {(c, r) for r in range(self.height) for c in range(self.width) if self.tiles[r][c] != FREE}

    def state_of(self, cell) -> int:
        c, r = cell
        return r * self.width + c

    def cell_of(self, s: int) -> tuple[int, int]:
        return (s % self.width, s // self.width)

    def replace(self, **kw) -> MazeSpec:
        d = dict(
            width=self.width, height=self.height, start=self.start, goal=self.goal,
            tiles=[list(r) for r in self.tiles], high_penalty=self.high_penalty,
            low_penalty=self.low_penalty, goal_reward=self.goal_reward,
            scheme=self.scheme, name=self.name,
        )
        d.update(kw)
        return MazeSpec(**d)


_LABEL = re.compile(r"\s+(\d+)\s*$")


def parse_maze(text: str, **kw) -> MazeSpec:
    """Parse the ``|__|G_|HH|`` drawing format.

    Lines without a ``|`` (titles, the top border, column labels) are
    skipped. A trailing integer on a row line is its row label; rows are
    otherwise numbered bottom-up. Extra keyword arguments go to MazeSpec.
    """
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if "|" not in line:
            continue
        label = None
        m = _LABEL.search(line)
        if m:
            label = int(m.group(1))
            line = line[: m.start()]
        body = line.strip().strip("|")
        tokens = [t.strip() for t in body.split("|")]
        for t in tokens:
            if t not in _TOKENS:
                raise MazeParseError(f"line {lineno}: unknown cell token {t!r}")
        rows.append((lineno, label, tokens))
    if not rows:
        raise MazeParseError("no maze rows found")

    width = len(rows[0][2])
    height = len(rows)
    for lineno, _, tokens in rows:
        if len(tokens) != width:
            raise MazeParseError(f"line {lineno}: expected {width} cells, got {len(tokens)}")

    tiles = [[FREE] * width for _ in range(height)]
    start = goal = None
    for i, (lineno, label, tokens) in enumerate(rows):
        r = height - 1 - i
        if label is not None and label != r:
            raise MazeParseError(f"line {lineno}: row label {label} but position implies row {r}")
        for c, t in enumerate(tokens):
            tiles[r][c] = _TOKENS[t]
            if t == "S_":
                if start is not None:
                    raise MazeParseError(f"line {lineno}: second start cell")
                start = (c, r)
            elif t == "G_":
                if goal is not None:
                    raise MazeParseError(f"line {lineno}: second goal cell")
                goal = (c, r)
    if start is None:
        raise MazeParseError("maze has no start cell S_")
    if goal is None:
        raise MazeParseError("maze has no goal cell G_")
    return MazeSpec(width, height, start, goal, tiles, **kw)


def maze_to_text(spec: MazeSpec) -> str:
    lines = [" " + "___" * spec.width + "_"]
    for r in range(spec.height - 1, -1, -1):
        cells = []
        for c in range(spec.width):
            if (c, r) == spec.start:
                cells.append("S_")
            elif (c, r) == spec.goal:
                cells.append("G_")
            else:
                cells.append(_TILE_CHARS[spec.tiles[r][c]])
        lines.append("|" + "|".join(cells) + f"| {r}")
    lines.append(" " + "  ".join(str(c) for c in range(spec.width)))
    return "\n".join(lines) + "\n"


def load_maze(path, **kw) -> MazeSpec:
    return parse_maze(Path(path).read_text(), **kw)


def maze_to_momdp(spec: MazeSpec, gamma: float = 0.99) -> TabularMOMDP:
    """Deterministic 4-action gridworld; moves off the grid stay put.

    Rewards depend on the entered cell. Endpoint scheme: R1 = goal reward
    on entering G, R2 = tile penalty. Path scheme: R1 = tile penalty plus
    +1 on entering G, R2 = -1 per step and 0 on entering G.
    """
    n = spec.width * spec.height
    p = np.zeros((n, 4, n))
    r = np.zeros((2, n, 4, n))
    for s in range(n):
        cell = spec.cell_of(s)
        for a, (dc, dr) in _MOVES.items():
            nxt = (cell[0] + dc, cell[1] + dr)
            if not spec.in_bounds(nxt):
                nxt = cell
            s2 = spec.state_of(nxt)
            p[s, a, s2] = 1.0
            at_goal = nxt == spec.goal
            pen = spec.penalty(nxt)
            if spec.scheme == ENDPOINT_PRIMARY:
                r[0, s, a, s2] = spec.goal_reward if at_goal else 0.0
                r[1, s, a, s2] = pen
            else:
                r[0, s, a, s2] = pen + (1.0 if at_goal else 0.0)
                r[1, s, a, s2] = 0.0 if at_goal else -1.0
    names = ["goal", "penalty"] if spec.scheme == ENDPOINT_PRIMARY else ["penalty", "time"]
    return TabularMOMDP(
        transition=p,
        rewards=r,
        initial_state=spec.state_of(spec.start),
        terminal_states=frozenset([spec.state_of(spec.goal)]),
        gamma=gamma,
        state_labels=[spec.cell_of(s) for s in range(n)],
        action_labels=list(ACTION_NAMES),
        objective_names=names,
        meta={
            "kind": "maze",
            "name": spec.name,
            "width": spec.width,
            "bad_states": sorted(spec.state_of(c) for c in spec.bad_cells()),
            "goal_reward": spec.goal_reward,
        },
    )


MAZE_SMALL = """\
 __________
 |__|G_|__| 2
 |HH|HH|__| 1
 |__|S_|__| 0
  0  1  2
"""

MAZE_EXTENDED = """\
_____________
|__|G_|__|__| 4
|__|hh|hh|hh| 3
|__|__|__|__| 2
|HH|HH|HH|__| 1
|S_|__|__|__| 0
 0  1  2  3
"""

MAZE_CONCAVE_SIMPLE = """\
 __________
 |__|G_|__| 4
 |__|hh|hh| 3
 |__|__|__| 2
 |HH|HH|__| 1
 |S_|__|__| 0
  0  1  2
"""

MAZE_EARLY_LATE = """\
 __________
 |__|G_|__| 10
 |HH|HH|__| 9
 |__|__|__| 8
 |__|hh|hh| 7
 |__|__|__| 6
  __|__|__  5
 |__|__|__| 4
 |__|hh|hh| 3
 |__|__|__| 2
 |HH|HH|__| 1
 |__|S_|__| 0
  0  1  2
"""

_BUILTIN_TEXT = {
    "maze-small": MAZE_SMALL,
    "maze-extended": MAZE_EXTENDED,
    "maze-concave-simple": MAZE_CONCAVE_SIMPLE,
    "maze-early-late": MAZE_EARLY_LATE,
}


def builtin_mazes() -> dict[str, MazeSpec]:
    return {name: parse_maze(text, name=name) for name, text in _BUILTIN_TEXT.items()}


def builtin_maze(name: str, **kw) -> MazeSpec:
    if name not in _BUILTIN_TEXT:
        raise KeyError(f"unknown maze {name!r}; choose from {sorted(_BUILTIN_TEXT)}")
    return parse_maze(_BUILTIN_TEXT[name], name=name, **kw)


# ---------------------------------------------------------------------------
# Fruit Tree Navigation


@dataclass
class FtnSpec:
    depth: int = 5
    n_rewards: int = 6
    seed: int = 0
    target_leaf: int = 13
    margin: float = 1e-3
    max_redraws: int = 1000
    leaf_rewards: np.ndarray | None = field(default=None, repr=False)
    thresholds: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if not 0 <= self.target_leaf < 2**self.depth:
            raise ValueError(f"target leaf {self.target_leaf} outside 0..{2**self.depth - 1}")
        if self.leaf_rewards is None:
            self.leaf_rewards, self.thresholds = _draw_leaves(self)
        else:
            self.leaf_rewards = np.asarray(self.leaf_rewards, dtype=np.float64)
            if self.leaf_rewards.shape != (2**self.depth, self.n_rewards):
                raise ValueError(f"leaf rewards must be {(2**self.depth, self.n_rewards)}")
            if self.thresholds is None:
                self.thresholds = self.leaf_rewards[self.target_leaf, :-1] - self.margin
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)

    @property
    def n_leaves(self) -> int:
        return 2**self.depth

    def leaf_state(self, leaf: int) -> int:
        return 2**self.depth - 1 + leaf

    def leaf_path(self, leaf: int) -> list[int]:
        """Actions (0 left, 1 right) from the root down to ``leaf``."""
        return [(leaf >> (self.depth - 1 - i)) & 1 for i in range(self.depth)]


def _unique_best(leaves, target, tau) -> bool:
    return all(
        lex_compare(leaves[target], leaves[j], tau) == Ordering.GREATER
        for j in range(len(leaves))
        if j != target
    )


def _draw_leaves(spec: FtnSpec):
    # uniform components, then each vector scaled to unit length
    rng = np.random.default_rng(spec.seed)
    for _ in range(spec.max_redraws):
        leaves = rng.uniform(0.0, 1.0, size=(spec.n_leaves, spec.n_rewards))
        leaves /= np.linalg.norm(leaves, axis=1, keepdims=True)
        tau = leaves[spec.target_leaf, :-1] - spec.margin
        if _unique_best(leaves, spec.target_leaf, tau):
            return leaves, tau
    raise RuntimeError(f"no draw made leaf {spec.target_leaf} the unique optimum in {spec.max_redraws} tries")


def ftn_env(spec: FtnSpec, gamma: float = 0.99) -> TabularMOMDP:
    """Heap-ordered binary tree: node i has children 2i+1 (left) and 2i+2 (right)."""
    n_internal = 2**spec.depth - 1
    n = 2 * n_internal + 1
    p = np.zeros((n, 2, n))
    r = np.zeros((spec.n_rewards, n, 2, n))
    for s in range(n_internal):
        for a in (0, 1):
            child = 2 * s + 1 + a
            p[s, a, child] = 1.0
            if child >= n_internal:
                r[:, s, a, child] = spec.leaf_rewards[child - n_internal]
    for s in range(n_internal, n):
        p[s, :, s] = 1.0
    return TabularMOMDP(
        transition=p,
        rewards=r,
        initial_state=0,
        terminal_states=frozenset(range(n_internal, n)),
        gamma=gamma,
        action_labels=["left", "right"],
        objective_names=[f"r{i + 1}" for i in range(spec.n_rewards)],
        meta={"kind": "ftn", "depth": spec.depth, "target_state": spec.leaf_state(spec.target_leaf)},
    )


def choice_env(outcomes, gamma: float = 1.0, name: str = "choice") -> TabularMOMDP:
    """One decision from state 0; action ``j`` ends in terminal ``j + 1`` with reward ``outcomes[j]``."""
    outcomes = np.atleast_2d(np.asarray(outcomes, dtype=np.float64))
    n_a, k = outcomes.shape
    n_s = n_a + 1
    p = np.zeros((n_s, n_a, n_s))
    r = np.zeros((k, n_s, n_a, n_s))
    for j in range(n_a):
        p[0, j, j + 1] = 1.0
        r[:, 0, j, j + 1] = outcomes[j]
    return TabularMOMDP(
        transition=p, rewards=r, initial_state=0, terminal_states=frozenset(range(1, n_s)),
        gamma=gamma, objective_names=[f"R{i + 1}" for i in range(k)],
        meta={"kind": "choice", "name": name},
    )
