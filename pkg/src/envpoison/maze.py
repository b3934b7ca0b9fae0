"""Grid mazes as tabular MDPs.

Cells are addressed ``(row, col)`` with 1-based indices, row 1 at the top.
Actions are ``up, down, left, right`` in that fixed order. Under any action
the agent stays put with probability ``stay_prob`` and otherwise moves to the
neighbouring cell; moving into a wall or off the grid means staying.

Rewards are expectations over the next cell, so that ``r(s, a)`` is a plain
table: every action costs ``step_reward``, landing on a gray cell adds
``gray_penalty`` and entering the destination adds ``goal_reward``. The
destination is absorbing with zero reward.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mdp import MdpError, TabularMdp

ACTIONS = ("up", "down", "left", "right")
MOVES = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}

# Two routes from the corner (1,1) to the destination (6,5): right along row 1
# then down column 5 (the true optimum), or down column 1 and along row 5
# past the gray cell at (5,2) (the attack target).
DEFAULT_MAP = """\
S....
.###.
.###.
.###.
.G...
####D
"""


@dataclass(frozen=True)
class MazeSpec:
    rows: int
    cols: int
    start: tuple
    goal: tuple
    walls: frozenset = field(default_factory=frozenset)
    gray_cells: frozenset = field(default_factory=frozenset)
    stay_prob: float = 0.7
    step_reward: float = -1.0
    gray_penalty: float = -5.0
    goal_reward: float = 10.0
    discount: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "goal", tuple(self.goal))
        object.__setattr__(self, "walls", frozenset(tuple(c) for c in self.walls))
        object.__setattr__(self, "gray_cells", frozenset(tuple(c) for c in self.gray_cells))
        if self.rows < 1 or self.cols < 1:
            raise MdpError("maze needs positive dimensions")
        for name, cell in [("start", self.start), ("goal", self.goal)] + [
            ("gray cell", c) for c in sorted(self.gray_cells)
        ]:
            if not self.in_bounds(cell):
                raise MdpError(f"{name} {cell} is outside the {self.rows}x{self.cols} grid")
            if cell in self.walls:
                raise MdpError(f"{name} {cell} is a wall")
        if not 0.0 <= self.stay_prob < 1.0:
            raise MdpError(f"stay_prob must be in [0, 1), got {self.stay_prob}")

    def in_bounds(self, cell) -> bool:
        r, c = cell
        return 1 <= r <= self.rows and 1 <= c <= self.cols

    def free_cells(self) -> list:
        return [
            (r, c)
            for r in range(1, self.rows + 1)
            for c in range(1, self.cols + 1)
            if (r, c) not in self.walls
        ]

    @classmethod
    def from_ascii(cls, text: str, **params) -> "MazeSpec":
        """Parse a map: ``#`` wall, ``.`` free, ``G`` gray, ``S`` start,
        ``D`` destination."""
        lines = [ln.strip() for ln in text.strip("\n").splitlines() if ln.strip()]
        if not lines:
            raise MdpError("empty maze map")
        width = len(lines[0])
        walls, gray = set(), set()
        start = goal = None
        for i, line in enumerate(lines, start=1):
            if len(line) != width:
                raise MdpError(f"map row {i} has {len(line)} cells, expected {width}")
            for j, ch in enumerate(line, start=1):
                if ch == "#":
                    walls.add((i, j))
                elif ch == "G":
                    gray.add((i, j))
                elif ch == "S":
                    if start is not None:
                        raise MdpError("map has more than one start 'S'")
                    start = (i, j)
                elif ch == "D":
                    if goal is not None:
                        raise MdpError("map has more than one destination 'D'")
                    goal = (i, j)
                elif ch != ".":
                    raise MdpError(f"unknown map character {ch!r} at row {i}, column {j}")
        if start is None or goal is None:
            raise MdpError("map needs a start 'S' and a destination 'D'")
        return cls(
            rows=len(lines), cols=width, start=start, goal=goal,
            walls=frozenset(walls), gray_cells=frozenset(gray), **params,
        )

    def to_ascii(self) -> str:
        out = []
        for r in range(1, self.rows + 1):
            row = ""
            for c in range(1, self.cols + 1):
                cell = (r, c)
                if cell in self.walls:
                    row += "#"
                elif cell == self.start:
                    row += "S"
                elif cell == self.goal:
                    row += "D"
                elif cell in self.gray_cells:
                    row += "G"
                else:
                    row += "."
            out.append(row)
        return "\n".join(out) + "\n"


def default_maze_spec(**overrides) -> MazeSpec:
    return MazeSpec.from_ascii(DEFAULT_MAP, **overrides)


def _neighbour(spec: MazeSpec, cell, action) -> tuple:
    dr, dc = MOVES[action]
    nxt = (cell[0] + dr, cell[1] + dc)
    if not spec.in_bounds(nxt) or nxt in spec.walls:
        return cell
    return nxt


def build_maze(spec: MazeSpec) -> TabularMdp:
    cells = spec.free_cells()
    if len(cells) < 2:
        raise MdpError("maze must have at least two free cells")
    index = {cell: i for i, cell in enumerate(cells)}

    # reachability ignores the stochastic stay, which never opens a path
    seen = {spec.start}
    queue = deque([spec.start])
    while queue:
        cell = queue.popleft()
        for a in ACTIONS:
            nxt = _neighbour(spec, cell, a)
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    if spec.goal not in seen:
        raise MdpError(f"destination {spec.goal} is unreachable from start {spec.start}")

    S, A = len(cells), len(ACTIONS)
    P = np.zeros((S, A, S))
    bonus = np.zeros(S)
    for cell in spec.gray_cells:
        bonus[index[cell]] += spec.gray_penalty
    for cell, s in index.items():
        if cell == spec.goal:
            P[s, :, s] = 1.0
            continue
        for a, name in enumerate(ACTIONS):
            P[s, a, s] += spec.stay_prob
            P[s, a, index[_neighbour(spec, cell, name)]] += 1.0 - spec.stay_prob

    g = index[spec.goal]
    landing = bonus.copy()
    landing[g] += spec.goal_reward
    R = spec.step_reward + P @ landing
    R[g] = 0.0
    return TabularMdp(
        P, R, spec.discount,
        labels=tuple(cells), action_names=ACTIONS, absorbing=frozenset({g}),
    )
