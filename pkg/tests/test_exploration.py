import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cowpasture.geometry import Action, Pose
from cowpasture.mapping import FREE, OCCUPIED, UNKNOWN, PoseEstimate, TopDownMap
from cowpasture.exploration import (
    ExplorationComplete,
    FBEState,
    RandomWalkPolicy,
    exploration_reward,
    extract_frontiers,
    fbe_next_action,
    path_cost,
    plan_path,
)

from oracles import grid_dijkstra


def grid_map(states, half_extent=None):
    """TopDownMap whose arrays are exactly ``states`` with global (0, 0) at the corner."""
    states = np.asarray(states, dtype=np.uint8)
    m = TopDownMap(half_extent=0.125)
    m.state = states.copy()
    m.relevance = np.zeros(states.shape)
    m.height = np.zeros(states.shape)
    m.row0 = m.col0 = 0
    return m


def corridor_map(lo, hi, open_lo=True, open_hi=True):
    """Free corridor over columns [lo, hi] of global rows -2..2, walled; open ends border unknown."""
    m = TopDownMap(half_extent=4.0)
    for r in range(-3, 4):
        for c in range(lo - 1, hi + 2):
            edge = (c == lo - 1 and not open_lo) or (c == hi + 1 and not open_hi)
            if abs(r) == 3 or edge:
                m.state[r - m.row0, c - m.col0] = OCCUPIED
            elif lo <= c <= hi:
                m.state[r - m.row0, c - m.col0] = FREE
    return m


def est_at(r, c, yaw):
    return PoseEstimate(Pose((c + 0.5) * 0.125, (r + 0.5) * 0.125, yaw))


def test_all_unknown_has_no_frontiers():
    assert extract_frontiers(TopDownMap()) == []


def test_single_free_cell():
    m = grid_map(np.zeros((3, 3)))
    m.state[1, 1] = FREE
    (f,) = extract_frontiers(m)
    assert f.cells == [(1, 1)] and f.representative == (1, 1)


def _brute_frontiers(states):
    h, w = states.shape
    cells = set()
    for r in range(h):
        for c in range(w):
            if states[r, c] != FREE:
                continue
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                # outside the arrays is unknown
                if not (0 <= rr < h and 0 <= cc < w) or states[rr, cc] == UNKNOWN:
                    cells.add((r, c))
                    break
    groups = []
    left = set(cells)
    while left:
        stack = [left.pop()]
        g = set(stack)
        while stack:
            r, c = stack.pop()
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    n = (r + dr, c + dc)
                    if n in left:
                        left.discard(n)
                        g.add(n)
                        stack.append(n)
        groups.append(frozenset(g))
    return set(groups)


@given(st.integers(0, 2**31), st.integers(4, 12))
def test_frontiers_match_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    states = rng.choice([UNKNOWN, FREE, OCCUPIED], size=(n, n), p=[0.35, 0.5, 0.15])
    got = extract_frontiers(grid_map(states))
    assert {frozenset(f.cells) for f in got} == _brute_frontiers(states)
    reps = [f.representative for f in got]
    assert reps == sorted(reps)
    for f in got:
        assert f.representative in f.cells


def test_half_explored_room():
    states = np.zeros((10, 10))
    states[:, :5] = FREE
    states[0, :5] = states[:, 0] = OCCUPIED
    got = extract_frontiers(grid_map(states))
    assert {frozenset(f.cells) for f in got} == _brute_frontiers(states)


def test_plan_trivial_and_corridor():
    m = grid_map(np.full((3, 7), FREE))
    assert plan_path(m, (1, 1), (1, 1)) == [(1, 1)]
    assert plan_path(m, (1, 1), (1, 5)) == [(1, c) for c in range(1, 6)]


def test_plan_from_non_free_errors():
    m = grid_map(np.full((3, 3), OCCUPIED))
    with pytest.raises(ValueError):
        plan_path(m, (1, 1), (0, 0))


def test_plan_unreachable_is_none():
    states = np.full((5, 5), FREE)
    states[:, 2] = OCCUPIED
    assert plan_path(grid_map(states), (2, 0), (2, 4)) is None


@given(st.integers(0, 2**31), st.integers(5, 15))
def test_maze_paths_are_optimal(seed, n):
    rng = np.random.default_rng(seed)
    states = np.where(rng.random((n, n)) < 0.3, OCCUPIED, FREE).astype(np.uint8)
    states[0, 0] = FREE
    goal = (int(rng.integers(n)), int(rng.integers(n)))
    m = grid_map(states)
    path = plan_path(m, (0, 0), goal)
    want = grid_dijkstra(states == FREE, (0, 0), goal)
    if path is None:
        assert want == math.inf
        return
    assert math.isclose(path_cost(path), want, abs_tol=1e-9)
    assert path[0] == (0, 0) and path[-1] == goal
    for a, b in zip(path, path[1:]):
        assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1
    assert all(states[c] == FREE for c in path[:-1])


def test_plan_is_deterministic():
    states = np.full((9, 9), FREE)
    m = grid_map(states)
    assert plan_path(m, (0, 0), (8, 4)) == plan_path(grid_map(states), (0, 0), (8, 4))


def test_frontier_ahead_moves_forward():
    m = corridor_map(-2, 20, open_lo=False)
    assert fbe_next_action(m, est_at(0, 0, 0.0), FBEState()) == Action.MoveForward


def test_frontier_behind_turns_left():
    m = corridor_map(-20, 2, open_hi=False)
    assert fbe_next_action(m, est_at(0, 0, 0.0), FBEState()) == Action.RotateLeft


@pytest.mark.parametrize("lo,hi,want", [(-10, 14, Action.RotateLeft), (-14, 10, Action.RotateRight)])
def test_picks_cheaper_frontier(lo, hi, want):
    m = corridor_map(lo, hi)
    state = FBEState()
    act = fbe_next_action(m, est_at(0, 0, math.pi / 2), state)
    frontiers = extract_frontiers(m)
    # oracle: path cost to each frontier from the agent cell
    passable = (m.state == FREE)
    s = (0 - m.row0, 0 - m.col0)
    cost = [min(grid_dijkstra(passable, s, (r - m.row0, c - m.col0)) for r, c in f.cells) for f in frontiers]
    assert state.frontier_id == int(np.argmin(cost))
    assert act == want


def test_fbe_is_deterministic():
    m = corridor_map(-10, 14)
    a = fbe_next_action(m.copy(), est_at(0, 3, 1.0), FBEState())
    b = fbe_next_action(m.copy(), est_at(0, 3, 1.0), FBEState())
    assert a == b


def test_fully_explored_signals_complete():
    m = corridor_map(-5, 5, False, False)
    with pytest.raises(ExplorationComplete):
        fbe_next_action(m, est_at(0, 0, 0.0), FBEState())


def test_random_walk_never_stops():
    rng = np.random.default_rng(0)
    pol = RandomWalkPolicy()
    acts = {pol.next_action(TopDownMap(), PoseEstimate(), rng) for _ in range(200)}
    assert Action.Stop not in acts and acts == {Action.MoveForward, Action.RotateLeft, Action.RotateRight}


def test_reward_one_step():
    assert math.isclose(exploration_reward([Pose(0.06, 0.06, 0), Pose(0.31, 0.06, 0)]), 0.09)


def test_reward_rotate_in_place():
    trace = [Pose(0.06, 0.06, 0.5 * k) for k in range(11)]
    assert math.isclose(exploration_reward(trace), -0.10)


def test_reward_straight_walk():
    # 0.25 m steps over 0.125 m cells: every step lands in a new cell
    trace = [Pose(0.06 + 0.25 * k, 0.06, 0) for k in range(5)]
    assert math.isclose(exploration_reward(trace), 0.4 - 0.04)


def test_reward_paper_constants():
    trace = [Pose(0.06 + 0.25 * k, 0.06, 0) for k in range(3)]
    assert math.isclose(exploration_reward(trace, visit_reward=0.1, step_penalty=0.01), exploration_reward(trace))
