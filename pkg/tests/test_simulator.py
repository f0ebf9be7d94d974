import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from cowpasture.geometry import Action, Pose
from cowpasture.scene import ObjectSpec, Scene, Task
from cowpasture.simulator import (
    AgentConfig,
    SimState,
    agent_config_for_profile,
    check_success,
    line_of_sight,
    render,
    shortest_path_length,
    step,
)

from oracles import grid_dijkstra, pixel_rays, sampled_sight

CS = 0.25


def room(rows=16, cols=16):
    w = np.zeros((rows, cols))
    w[0, :] = w[-1, :] = w[:, 0] = w[:, -1] = 2.5
    return w


def box(iid, r, c, h=0.5, cat="vase"):
    return ObjectSpec(iid, cat, footprint=[(r, c)], height=h, position=((c + 0.5) * CS, (r + 0.5) * CS))


def task_for(scene, iid, start=Pose(1.0, 1.0, 0.0)):
    return Task("t", scene.id, "vase", [iid], start, "plain", "vase")


def test_blocked_move_is_failure():
    scene = Scene("s", CS, room(), [])
    # wall face at x = 0.25; agent radius 0.18 leaves 0.1 m of clearance at x = 0.53
    s0 = SimState(Pose(0.53, 2.0, math.pi))
    s1, _, ok = step(scene, s0, Action.MoveForward, AgentConfig(), np.random.default_rng(0))
    assert not ok and s1.pose == s0.pose


def test_noiseless_rotate_and_move():
    scene = Scene("s", CS, room(), [])
    cfg = AgentConfig()
    rng = np.random.default_rng(0)
    s, _, ok = step(scene, SimState(Pose(2.0, 2.0, 0.0)), Action.RotateLeft, cfg, rng)
    assert ok and math.isclose(s.pose.yaw, math.radians(30), abs_tol=1e-12)
    s, _, ok = step(scene, SimState(Pose(2.0, 2.0, 0.0)), Action.MoveForward, cfg, rng)
    assert ok and math.isclose(s.pose.x, 2.25, abs_tol=1e-12) and s.pose.y == 2.0


def test_stop_ends_episode():
    scene = Scene("s", CS, room(), [])
    s, _, _ = step(scene, SimState(Pose(2.0, 2.0, 0.3)), Action.Stop, AgentConfig(), np.random.default_rng(0))
    assert s.done and s.pose == Pose(2.0, 2.0, 0.3)


@given(st.integers(1, 8), st.sampled_from([0.0, math.pi / 2, math.pi, -math.pi / 2]))
def test_forward_steps_compose(n, yaw):
    scene = Scene("s", CS, room(24, 24), [])
    s = SimState(Pose(3.0, 3.0, yaw))
    cfg = AgentConfig()
    for _ in range(n):
        s, _, ok = step(scene, s, Action.MoveForward, cfg, np.random.default_rng(0))
        assert ok
    assert math.isclose(math.hypot(s.pose.x - 3.0, s.pose.y - 3.0), n * 0.25, abs_tol=1e-9)


def test_flat_wall_depth():
    w = room(20, 20)
    w[:, 12] = 2.5  # wall face at x = 3.0
    scene = Scene("s", CS, w, [])
    cfg = AgentConfig()
    obs = render(scene, Pose(1.0, 2.5, 0.0), cfg)
    k = cfg.intrinsics
    rays = pixel_rays(k.width, k.height, k.horizontal_fov)
    for v in (k.height // 2 - 1, k.height // 2):
        np.testing.assert_allclose(obs.depth.values[v], 2.0 / rays[v, :, 0], rtol=1e-9)


def test_out_of_range_is_sentinel():
    scene = Scene("s", CS, room(40, 40), [])
    cfg = AgentConfig(max_depth=0.5)
    obs = render(scene, Pose(5.0, 5.0, 0.0), cfg)
    assert np.all(obs.depth.values == obs.depth.sentinel)
    assert np.all(obs.labels < 0)


def test_occluded_object_not_rendered():
    w = room()
    w[1:-1, 8] = 2.5
    scene = Scene("s", CS, w, [box("v", 8, 11)])
    obs = render(scene, Pose(1.0, 2.0, 0.0), AgentConfig())
    assert "v" not in obs.visible_ids()
    open_scene = Scene("s", CS, room(), [box("v", 8, 11)])
    assert "v" in render(open_scene, Pose(1.0, 2.125, 0.0), AgentConfig()).visible_ids()


def test_hidden_objects_never_rendered():
    dresser = ObjectSpec("d", "dresser", footprint=[(8, 8)], height=0.8, position=(2.125, 2.125), kind="furniture")
    ball = ObjectSpec("b", "basketball", hidden_in_or_under="d", hidden_relation="in")
    scene = Scene("s", CS, room(), [dresser, ball])
    obs = render(scene, Pose(1.0, 2.125, 0.0), AgentConfig())
    assert "d" in obs.visible_ids() and "b" not in obs.visible_ids()


@given(st.floats(0.6, 3.4), st.floats(0.6, 3.4), st.floats(-math.pi, math.pi))
def test_render_invariants(x, y, yaw):
    scene = Scene("s", CS, room(), [box("v", 8, 8), box("m", 4, 11, 0.3, "mug")])
    pose = Pose(x, y, yaw)
    assume(scene.heightmap[scene.cell_of(x, y)] == 0)
    cfg = AgentConfig()
    a = render(scene, pose, cfg)
    b = render(scene, pose, cfg)
    assert np.array_equal(a.depth.values, b.depth.values) and np.array_equal(a.labels, b.labels)
    d = a.depth.values
    assert np.all(d[d < a.depth.sentinel] > 0)
    assert np.all(d[a.labels >= 0] < cfg.max_depth)


def test_noisy_episode_determinism():
    scene = Scene("s", CS, room(), [box("v", 8, 8)])
    cfg = agent_config_for_profile("habitat_like")
    actions = [Action.MoveForward, Action.RotateLeft, Action.MoveForward, Action.RotateRight] * 3

    def run():
        rng = np.random.default_rng(5)
        s = SimState(Pose(1.0, 1.0, 0.3))
        out = []
        for act in actions:
            s, obs, ok = step(scene, s, act, cfg, rng)
            out.append((s.pose, ok, obs.depth.values.tobytes()))
        return out

    assert run() == run()


def test_success_close_goal():
    scene = Scene("s", CS, room(), [box("v", 8, 8)])
    assert check_success(scene, task_for(scene, "v"), Pose(2.125 - 0.5, 2.125, 0.0))


def test_failure_when_far():
    scene = Scene("s", CS, room(), [box("v", 8, 8)])
    # 1.5 m from the box centre, 1.375 m from its nearest face
    assert not check_success(scene, task_for(scene, "v"), Pose(2.125 - 1.5, 2.125, 0.0))


def test_failure_behind_wall():
    w = room()
    w[1:-1, 7] = 2.5
    scene = Scene("s", CS, w, [box("v", 8, 8)])
    pose = Pose(2.125 - 0.8, 2.125, 0.0)
    assert not check_success(scene, task_for(scene, "v"), pose)
    # independent sampled sight lines agree that no sample point is visible
    cam = (pose.x, pose.y, 0.9)
    for tx in (2.0, 2.125, 2.25):
        for tz in (0.25, 0.49):
            assert not sampled_sight(scene.heightmap, CS, cam, (tx, 2.125, tz), {(8, 8)})


def test_hidden_goal_uses_container():
    dresser = ObjectSpec("d", "dresser", footprint=[(8, 8)], height=0.8, position=(2.125, 2.125), kind="furniture")
    ball = ObjectSpec("b", "basketball", hidden_in_or_under="d", hidden_relation="in")
    scene = Scene("s", CS, room(), [dresser, ball])
    t = Task("t", "s", "basketball in the dresser", ["b"], Pose(1, 1, 0), "hidden", "basketball")
    assert check_success(scene, t, Pose(1.5, 2.125, 0.0))
    assert not check_success(scene, t, Pose(0.6, 0.6, 0.0))


def test_shortest_path_zero_inside_radius():
    scene = Scene("s", CS, room(), [box("v", 8, 8)])
    assert shortest_path_length(scene, Pose(1.625, 2.125, 0), task_for(scene, "v")) == 0.0


def corridor():
    w = np.full((3, 14), 2.5)
    w[1, 1:13] = 0.0
    return w


def test_straight_corridor():
    # goal box 10 cells ahead of the start; success needs 1 m to its near face
    scene = Scene("s", CS, corridor(), [box("v", 1, 11)])
    start = Pose(1.5 * CS, 1.5 * CS, 0.0)
    assert math.isclose(shortest_path_length(scene, start, task_for(scene, "v", start)), 10 * 0.25 - 1.0)


def test_unreachable_is_inf():
    w = corridor()
    w[1, 6] = 2.5
    scene = Scene("s", CS, w, [box("v", 1, 11)])
    start = Pose(1.5 * CS, 1.5 * CS, 0.0)
    assert shortest_path_length(scene, start, task_for(scene, "v", start)) == math.inf


def l_corridor(n):
    w = np.full((n, n), 2.5)
    w[1:3, 1:n - 1] = 0.0
    w[1:n - 1, n - 3:n - 1] = 0.0
    return w


def _oracle_shortest(scene, start, iid, radius=1.0):
    hm = scene.heightmap
    passable = hm <= 0.2
    o = scene.obj(iid)
    (gr, gc), = o.footprint
    sr, sc = scene.cell_of(start.x, start.y)
    best = math.inf
    for r, c in np.argwhere(passable):
        x, y = (c + 0.5) * CS, (r + 0.5) * CS
        dx = max(gc * CS - x, 0, x - (gc + 1) * CS)
        dy = max(gr * CS - y, 0, y - (gr + 1) * CS)
        if math.hypot(dx, dy) > radius:
            continue
        top = ((gc + 0.5) * CS, (gr + 0.5) * CS, o.top - 0.01)
        if not sampled_sight(hm, CS, (x, y, 0.9), top, {(gr, gc)}, n=800):
            continue
        best = min(best, grid_dijkstra(passable, (sr, sc), (int(r), int(c))))
    return best * CS


@pytest.mark.parametrize("n,goal_r", [(10, 7), (14, 11), (18, 15)])
def test_l_corridor_matches_exhaustive(n, goal_r):
    scene = Scene("s", CS, l_corridor(n), [box("v", goal_r, n - 2, 0.3)])
    start = Pose(1.5 * CS, 1.5 * CS, 0.0)
    got = shortest_path_length(scene, start, task_for(scene, "v", start))
    assert math.isclose(got, _oracle_shortest(scene, start, "v"), abs_tol=1e-9)


def _random_heights(rng):
    return np.where(rng.random((16, 16)) < 0.2, rng.uniform(0.2, 1.5, (16, 16)), 0.0)


@given(st.floats(0.3, 3.7), st.floats(0.3, 3.7), st.floats(0.1, 2.0),
       st.floats(0.3, 3.7), st.floats(0.3, 3.7), st.floats(0.1, 2.0), st.integers(0, 2**31))
def test_clear_sight_is_clear_when_sampled(x0, y0, z0, x1, y1, z1, seed):
    # every sample lies in some walked cell above that cell's lowest segment
    # height, so a clear exact walk implies clear samples
    hm = _random_heights(np.random.default_rng(seed))
    p0, p1 = (x0, y0, z0), (x1, y1, z1)
    if line_of_sight(hm, CS, p0, p1):
        assert sampled_sight(hm, CS, p0, p1)


def test_line_of_sight_agrees_with_sampling():
    rng = np.random.default_rng(11)
    disagree = 0
    n = 400
    for _ in range(n):
        hm = _random_heights(rng)
        p0 = (*rng.uniform(0.3, 3.7, 2), rng.uniform(0.1, 2.0))
        p1 = (*rng.uniform(0.3, 3.7, 2), rng.uniform(0.1, 2.0))
        disagree += line_of_sight(hm, CS, p0, p1) != sampled_sight(hm, CS, p0, p1)
    # sampling only misses sub-millimetre corner clips
    assert disagree <= 2
