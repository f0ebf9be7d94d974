"""Frontier extraction, grid planning, frontier-based exploration and the
count-based exploration reward."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy import ndimage

from . import _kernels
from .geometry import Action, Pose, wrap_angle
from .mapping import FREE, OCCUPIED, UNKNOWN, PoseEstimate, TopDownMap

Cell = tuple[int, int]

MARGINS = (2, 1, 0)


class ExplorationComplete(Exception):
    """No frontier can be reached from the agent's cell."""


@dataclass
class Frontier:
    cells: list[Cell]
    representative: Cell

    def __post_init__(self):
        if not self.cells:
            raise ValueError("frontier needs at least one cell")


def frontier_mask(m: TopDownMap) -> np.ndarray:
    """Free cells with at least one unknown 4-neighbour (outside counts as unknown)."""
    unk = np.pad(m.state == UNKNOWN, 1, constant_values=True)
    near = unk[:-2, 1:-1] | unk[2:, 1:-1] | unk[1:-1, :-2] | unk[1:-1, 2:]
    return (m.state == FREE) & near


def _medoid(cells: np.ndarray) -> Cell:
    d = np.sqrt(((cells[:, None, :] - cells[None, :, :]) ** 2).sum(-1)).sum(1)
    i = int(np.argmin(d))  # cells arrive row-major, so ties go lexicographic
    return int(cells[i, 0]), int(cells[i, 1])


def extract_frontiers(m: TopDownMap) -> list[Frontier]:
    fm = frontier_mask(m)
    labels, n = ndimage.label(fm, structure=np.ones((3, 3), bool))
    out = []
    for k in range(1, n + 1):
        cells = m.cells_where(labels == k)
        out.append(Frontier([(int(r), int(c)) for r, c in cells], _medoid(cells)))
    out.sort(key=lambda f: f.representative)
    return out


def passable_mask(m: TopDownMap, margin: int = 0, blocked=()) -> np.ndarray:
    """Free cells at Chebyshev distance > ``margin`` from any occupied cell."""
    ok = m.state == FREE
    if margin > 0:
        occ = m.state == OCCUPIED
        size = 2 * margin + 1
        ok &= ~ndimage.binary_dilation(occ, structure=np.ones((size, size), bool))
    for r, c in blocked:
        if m.inside(r, c):
            ok[r - m.row0, c - m.col0] = False
    return ok


def distance_field(m: TopDownMap, start: Cell, margin: int = 0, blocked=()) -> np.ndarray:
    """Cell-unit path costs from ``start`` over passable cells (start itself always allowed)."""
    m.ensure(start[0], start[0], start[1], start[1])
    passable = passable_mask(m, margin, blocked)
    return _kernels.dijkstra(passable, start[0] - m.row0, start[1] - m.col0)


def reachable_from(m: TopDownMap, start: Cell) -> np.ndarray:
    return np.isfinite(distance_field(m, start))


def plan_path(m: TopDownMap, start: Cell, goal: Cell, *, margin: int = 0, blocked=()) -> list[Cell] | None:
    """Shortest 8-connected path over free cells; the goal cell may be non-free.

    Returns ``None`` when the goal cannot be reached.  Neighbour ties are
    broken lexicographically by (row offset, col offset).
    """
    if m.state_at(*start) != FREE:
        raise ValueError(f"start cell {start} is not free")
    if start == goal:
        return [start]
    m.ensure(min(start[0], goal[0]), max(start[0], goal[0]), min(start[1], goal[1]), max(start[1], goal[1]))
    passable = passable_mask(m, margin, blocked)
    s = (start[0] - m.row0, start[1] - m.col0)
    g = (goal[0] - m.row0, goal[1] - m.col0)
    passable[g] = True
    dist = _kernels.dijkstra(passable, *s)
    if not np.isfinite(dist[g]):
        return None
    path = _kernels.backtrack(dist, passable, s, g)
    return [(r + m.row0, c + m.col0) for r, c in path]


def path_cost(path: list[Cell]) -> float:
    cost = 0.0
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        cost += math.sqrt(2.0) if r0 != r1 and c0 != c1 else 1.0
    return cost


def _path_target(m: TopDownMap, pose: Pose, path: list[Cell], lookahead: float = 0.2):
    for r, c in path:
        x, y = m.center(r, c)
        if math.hypot(x - pose.x, y - pose.y) >= lookahead:
            return x, y
    return m.center(*path[-1])


def _path_bearing(m: TopDownMap, pose: Pose, path: list[Cell], lookahead: float = 0.2) -> float:
    x, y = _path_target(m, pose, path, lookahead)
    if math.hypot(x - pose.x, y - pose.y) < 1e-9:
        return pose.yaw + math.pi
    return math.atan2(y - pose.y, x - pose.x)


def waypoint_action(m: TopDownMap, pose: Pose, path: list[Cell], turn_angle: float, lookahead: float = 0.2) -> Action:
    """Turn toward the first path cell at least ``lookahead`` away, or step when aligned."""
    x, y = _path_target(m, pose, path, lookahead)
    if math.hypot(x - pose.x, y - pose.y) < 1e-9:
        return Action.RotateLeft
    err = wrap_angle(math.atan2(y - pose.y, x - pose.x) - pose.yaw)
    if abs(err) <= turn_angle / 2 + 1e-9:
        return Action.MoveForward
    return Action.RotateRight if err < 0 else Action.RotateLeft


def step_collides(m: TopDownMap, x0: float, y0: float, x1: float, y1: float, radius: float, blocked=()) -> bool:
    """Swept-disc test of one straight move against occupied and ``blocked`` map cells.

    Cells the disc already overlaps at the start are ignored.
    """
    res = m.resolution
    r_lo, c_lo = m.cell_of(min(x0, x1) - radius, min(y0, y1) - radius)
    r_hi, c_hi = m.cell_of(max(x0, x1) + radius, max(y0, y1) + radius)
    cells = [(r, c) for r in range(r_lo, r_hi + 1) for c in range(c_lo, c_hi + 1)
             if m.state_at(r, c) == OCCUPIED or (r, c) in blocked]
    if not cells:
        return False
    rc = np.array(cells, dtype=float)
    n = max(2, int(math.ceil(math.hypot(x1 - x0, y1 - y0) / 0.02)) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    px, py = x0 + t * (x1 - x0), y0 + t * (y1 - y0)
    dx = np.maximum(np.maximum(rc[:, 1] * res - px, 0.0), px - (rc[:, 1] + 1) * res)
    dy = np.maximum(np.maximum(rc[:, 0] * res - py, 0.0), py - (rc[:, 0] + 1) * res)
    touch = dx * dx + dy * dy < radius * radius
    # cells already under the disc where the agent stands are quantization noise
    return bool(np.any(touch[:, ~touch[0]]))


@dataclass(frozen=True)
class Motion:
    turn_angle: float = math.radians(30.0)
    step_size: float = 0.25
    radius: float = 0.18


def _value(m: TopDownMap, field: np.ndarray, x: float, y: float) -> float:
    r, c = m.cell_of(x, y)
    return float(field[r - m.row0, c - m.col0]) if m.inside(r, c) else math.inf


def _heading_ok(m, pose: Pose, yaw: float, to_goal: np.ndarray, motion: Motion, blocked) -> float | None:
    """Cost-to-go after one step along ``yaw``, or None if the step collides or gains nothing."""
    x1 = pose.x + motion.step_size * math.cos(yaw)
    y1 = pose.y + motion.step_size * math.sin(yaw)
    v = _value(m, to_goal, x1, y1)
    if not v < _value(m, to_goal, pose.x, pose.y) - 1e-9:
        return None
    if step_collides(m, pose.x, pose.y, x1, y1, motion.radius, blocked):
        return None
    return v


def drive_action(m: TopDownMap, pose: Pose, path: list[Cell], to_goal: np.ndarray, motion: Motion,
                 blocked=()) -> Action | None:
    """Follow ``path`` by heading comparison; detour when that heading is unusable.

    ``to_goal`` is a cost-to-go field over the map arrays.  When a step along
    the heading the path asks for would hit a mapped obstacle or not bring the
    agent closer, the heading with the best cost-to-go after one step is used
    instead, each turn it needs costing half a cell.  Returns None when no
    heading makes progress.
    """
    act = waypoint_action(m, pose, path, motion.turn_angle)
    n = int(round(2 * math.pi / motion.turn_angle))
    err = _path_bearing(m, pose, path) - pose.yaw
    k_aim = int(round(wrap_angle(err) / motion.turn_angle)) % n
    if _heading_ok(m, pose, pose.yaw + k_aim * motion.turn_angle, to_goal, motion, blocked) is not None:
        return act
    best = None
    for k in range(n):
        v = _heading_ok(m, pose, pose.yaw + k * motion.turn_angle, to_goal, motion, blocked)
        if v is None:
            continue
        key = (v + 0.5 * min(k, n - k), k > n - k)
        if best is None or key < best[0]:
            best = (key, k)
    if best is None:
        return None
    k = best[1]
    if k == 0:
        return Action.MoveForward
    return Action.RotateLeft if k <= n - k else Action.RotateRight


class ExplorationPolicy(Protocol):
    def next_action(self, m: TopDownMap, est: PoseEstimate, rng: np.random.Generator) -> Action: ...


@dataclass
class FBEState:
    """Per-episode exploration memory kept on the agent side.

    A frontier cell is first approached to within ``approach`` cells.  If it
    survives that look it gets a second one from a ring between
    ``view_ring`` cells, which brings low tops into view, and is blacklisted
    only after that.
    """

    turn_angle: float = math.radians(30.0)
    approach: int = 3  # frontier counts as reached from this many cells away
    view_ring: tuple = (5, 9)
    blacklist: set = field(default_factory=set)
    second_look: set = field(default_factory=set)
    bumped: set = field(default_factory=set)
    frontier_id: int | None = None
    target: Cell | None = None
    turns_at_target: int = 0
    step_size: float = 0.25
    radius: float = 0.18

    @property
    def motion(self) -> Motion:
        return Motion(self.turn_angle, self.step_size, self.radius)

    @property
    def reach(self) -> int:
        return max(self.approach, self.view_ring[1])

    def zone(self, cell: Cell, facing: tuple = (0, 0)) -> np.ndarray:
        """Footprint of the cells from which ``cell`` may be inspected.

        ``facing`` points from the unknown side towards the cell; when set,
        only offsets in front of that side are kept.
        """
        if cell in self.second_look:
            lo, hi = self.view_ring
            g = np.arange(-hi, hi + 1)
            d2 = g[:, None] ** 2 + g[None, :] ** 2
            fp = (d2 >= lo * lo) & (d2 <= hi * hi)
        else:
            g = np.arange(-self.approach, self.approach + 1)
            fp = np.ones((len(g), len(g)), dtype=bool)
        if facing != (0, 0):
            fp &= g[:, None] * facing[0] + g[None, :] * facing[1] > 0
        return fp

    def give_up(self, cell: Cell) -> None:
        if cell in self.second_look:
            self.second_look.discard(cell)
            self.blacklist.add(cell)
        else:
            self.second_look.add(cell)
        self.turns_at_target = 0

    def clear(self) -> None:
        self.blacklist.clear()
        self.second_look.clear()
        self.bumped.clear()


def _plan_with_fallback(m: TopDownMap, start: Cell, state: FBEState):
    for blocked in (state.bumped, ()):
        for margin in MARGINS:
            yield margin, blocked, distance_field(m, start, margin, blocked)
        if not state.bumped:
            break


def _facing(m: TopDownMap, cell: Cell) -> tuple[int, int]:
    r, c = cell
    fr = fc = 0
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        if m.state_at(r + dr, c + dc) == UNKNOWN:
            fr -= dr
            fc -= dc
    return fr, fc


def _pick_frontier(m: TopDownMap, start: Cell, frontiers, state: FBEState):
    cand = [(i, cell) for i, f in enumerate(frontiers) for cell in f.cells if cell not in state.blacklist]
    if not cand:
        return None
    for margin, blocked, dist in _plan_with_fallback(m, start, state):
        near = {}
        best = None
        for i, (r, c) in cand:
            key = (r, c) in state.second_look, _facing(m, (r, c))
            if key not in near:
                fp = state.zone((r, c), key[1])
                near[key] = ndimage.minimum_filter(dist, footprint=fp, mode="constant", cval=np.inf)
            cost = near[key][r - m.row0, c - m.col0]
            if np.isfinite(cost) and (best is None or cost < best[0]):
                best = (cost, i, (r, c))
        if best is not None:
            return best + (margin, blocked, dist)
    return None


def fbe_next_action(m: TopDownMap, est: PoseEstimate, state: FBEState) -> Action:
    """Head for the frontier with the cheapest approach; replans every call.

    A frontier cell is approached by reaching any passable cell of its
    inspection zone (see ``FBEState``).  Once there the agent turns to face
    it; if it still borders unknown space after a full turn, or no step
    brings the agent closer, the agent moves on to the next zone or gives up
    on the cell.
    """
    pose = est.pose
    start = m.cell_of(pose.x, pose.y)
    frontiers = extract_frontiers(m)
    while True:
        pick = _pick_frontier(m, start, frontiers, state)
        if pick is None:
            state.frontier_id = None
            raise ExplorationComplete()
        cost, fid, cell, margin, blocked, dist = pick
        state.frontier_id = fid
        if cell != state.target:
            state.target = cell
            state.turns_at_target = 0
        r, c = cell
        if cost == 0.0:
            # standing in the zone: face the unknown side of the frontier cell
            unk = [m.center(r + dr, c + dc) for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))
                   if m.state_at(r + dr, c + dc) == UNKNOWN]
            tx = sum(p[0] for p in unk) / len(unk)
            ty = sum(p[1] for p in unk) / len(unk)
            err = wrap_angle(math.atan2(ty - pose.y, tx - pose.x) - pose.yaw)
            full_turn = int(round(2 * math.pi / state.turn_angle))
            if abs(err) > state.turn_angle / 2 + 1e-9 and state.turns_at_target < full_turn:
                state.turns_at_target += 1
                return Action.RotateRight if err < 0 else Action.RotateLeft
            state.give_up(cell)
            continue
        # walk to the cheapest zone cell
        fp = state.zone(cell, _facing(m, cell))
        half = fp.shape[0] // 2
        zone = np.argwhere(fp) + [r - m.row0 - half, c - m.col0 - half]
        inside = (zone[:, 0] >= 0) & (zone[:, 0] < dist.shape[0]) & (zone[:, 1] >= 0) & (zone[:, 1] < dist.shape[1])
        zone = zone[inside]
        zone = zone[np.isfinite(dist[zone[:, 0], zone[:, 1]])]
        goal = tuple(int(v) for v in zone[int(np.argmin(dist[zone[:, 0], zone[:, 1]]))])
        passable = passable_mask(m, margin, blocked)
        s = (start[0] - m.row0, start[1] - m.col0)
        path = _kernels.backtrack(dist, passable, s, goal)
        path = [(pr + m.row0, pc + m.col0) for pr, pc in path]
        passable[s] = True
        to_goal = _kernels.dijkstra_multi(passable, zone.astype(np.int64))
        act = drive_action(m, pose, path, to_goal, state.motion, blocked)
        if act is not None:
            return act
        state.give_up(cell)


@dataclass
class FBEPolicy:
    state: FBEState = field(default_factory=FBEState)

    def next_action(self, m: TopDownMap, est: PoseEstimate, rng=None) -> Action:
        return fbe_next_action(m, est, self.state)


@dataclass
class RandomWalkPolicy:
    """Ablation baseline: MoveForward three times as likely as each turn."""

    choices: tuple = (Action.MoveForward,) * 3 + (Action.RotateLeft, Action.RotateRight)

    def next_action(self, m: TopDownMap, est: PoseEstimate, rng: np.random.Generator) -> Action:
        return self.choices[int(rng.integers(len(self.choices)))]


def _true_pose(item) -> Pose:
    if isinstance(item, Pose):
        return item
    tp = item["true_pose"] if isinstance(item, dict) else item.true_pose
    return tp if isinstance(tp, Pose) else Pose.from_dict(tp)


def exploration_reward(trace, resolution: float = 0.125, visit_reward: float = 0.1, step_penalty: float = 0.01) -> float:
    """Offline count-based reward over true poses.

    ``trace[0]`` is the start pose: its cell is marked visited without reward.
    Every later entry is one step and costs ``step_penalty``.
    """
    poses = [_true_pose(t) for t in trace]
    if not poses:
        return 0.0
    seen = {(math.floor(poses[0].y / resolution), math.floor(poses[0].x / resolution))}
    total = 0.0
    for p in poses[1:]:
        cell = (math.floor(p.y / resolution), math.floor(p.x / resolution))
        if cell not in seen:
            seen.add(cell)
            total += visit_reward
        total -= step_penalty
    return total
