"""The explore-then-plan decision loop and episode runner."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .exploration import (
    MARGINS,
    ExplorationComplete,
    FBEPolicy,
    FBEState,
    Motion,
    RandomWalkPolicy,
    drive_action,
    passable_mask,
)
from .geometry import Action, Pose, wrap_angle
from .localization import (
    OracleLocalizer,
    OracleLocalizerConfig,
    PrecomputedLocalizer,
    center_pixel_postprocess,
    project_relevance,
    projected_cells,
    threshold_mask,
)
from .mapping import (
    FREE,
    FailureDetectorConfig,
    PoseEstimate,
    TopDownMap,
    detect_action_failure,
    forward_motion_residuals,
    register_depth,
    reinitialize_if_stuck,
    update_pose_estimate,
)
from .scene import Scene, Task, parse_description, visible_proxies
from .simulator import AgentConfig, SimState, check_success, render, step

TRAJECTORY_FORMAT = "cowpasture.trajectory/1"


@dataclass(frozen=True)
class CowConfig:
    localizer: str = "oracle"  # oracle | precomputed
    oracle: OracleLocalizerConfig = field(default_factory=OracleLocalizerConfig)
    precomputed_dir: str | None = None
    exploration: str = "fbe"  # fbe | random
    tau: float = 0.5
    postprocess: str = "center_pixel"  # center_pixel | full_mask
    trigger: float | None = None  # defaults to tau
    max_steps: int = 500
    stop_distance: float = 1.0
    failure: FailureDetectorConfig = field(default_factory=FailureDetectorConfig)
    failure_guard: bool = True  # second opinion from reprojecting the previous frame
    agent: AgentConfig = field(default_factory=AgentConfig)
    map_resolution: float = 0.125

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.localizer not in ("oracle", "precomputed"):
            raise ValueError(f"unknown localizer {self.localizer!r}")
        if self.localizer == "precomputed" and not self.precomputed_dir:
            raise ValueError("precomputed localizer needs precomputed_dir")
        if self.exploration not in ("fbe", "random"):
            raise ValueError(f"unknown exploration policy {self.exploration!r}")
        if self.postprocess not in ("center_pixel", "full_mask"):
            raise ValueError(f"unknown postprocess {self.postprocess!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.stop_distance <= 0:
            raise ValueError("stop_distance must be > 0")

    @property
    def trigger_level(self) -> float:
        return self.tau if self.trigger is None else self.trigger

    def to_dict(self) -> dict:
        return {
            "localizer": self.localizer,
            "oracle": self.oracle.to_dict(),
            "precomputed_dir": self.precomputed_dir,
            "exploration": self.exploration,
            "tau": self.tau,
            "postprocess": self.postprocess,
            "trigger": self.trigger,
            "max_steps": self.max_steps,
            "stop_distance": self.stop_distance,
            "failure": {"mu_threshold": self.failure.mu_threshold, "sigma_threshold": self.failure.sigma_threshold},
            "failure_guard": self.failure_guard,
            "agent": self.agent.to_dict(),
            "map_resolution": self.map_resolution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CowConfig":
        d = dict(d)
        d["oracle"] = OracleLocalizerConfig(**d["oracle"])
        d["failure"] = FailureDetectorConfig(**d["failure"])
        d["agent"] = AgentConfig.from_dict(d["agent"])
        return cls(**d)


def config_hash(doc) -> str:
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class CowState:
    """Agent-side episode memory."""

    policy: object
    rng: np.random.Generator
    turn_angle: float = math.radians(30.0)
    seen_now: set = field(default_factory=set)  # map cells hit by this frame's detections
    bad_stops: set = field(default_factory=set)  # cells where the target proved occluded

    @property
    def fbe(self) -> FBEState | None:
        return getattr(self.policy, "state", None)

    @property
    def bumped(self) -> set:
        st = self.fbe
        return st.bumped if st is not None else set()

    def note_bump(self, m: TopDownMap, est: PoseEstimate, step_size: float, radius: float = 0.18) -> None:
        """Block the cells the body would have swept into on a failed step."""
        p = est.pose
        own = m.cell_of(p.x, p.y)
        for d in np.arange(radius, step_size + radius + 1e-9, 0.5 * m.resolution):
            cell = m.cell_of(p.x + d * math.cos(p.yaw), p.y + d * math.sin(p.yaw))
            if cell != own:
                self.bumped.add(cell)


def new_cow_state(cfg: CowConfig, seed: int) -> CowState:
    if cfg.exploration == "fbe":
        policy = FBEPolicy(FBEState(turn_angle=cfg.agent.turn_angle, step_size=cfg.agent.step_size,
                                    radius=cfg.agent.radius))
    else:
        policy = RandomWalkPolicy()
    return CowState(policy, np.random.default_rng([seed, 1]), cfg.agent.turn_angle)


def _map_sight(m: TopDownMap, p0, p1, ignore_near, radius: int = 1) -> bool:
    """Sight test on the map's observed surface heights (unknown cells never block).

    Occupied neighbours of the target cell with about the same surface height
    are taken to be the target itself and skipped.
    """
    res = m.resolution
    x0, y0, z0 = p0
    x1, y1, z1 = p1
    dx, dy = x1 - x0, y1 - y0
    ix, iy = math.floor(x0 / res), math.floor(y0 / res)
    ex, ey = math.floor(x1 / res), math.floor(y1 / res)
    tr, tc = ignore_near
    h_target = m.height[tr - m.row0, tc - m.col0] if m.inside(tr, tc) else 0.0
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    tmx = (((ix + 1) * res - x0) / dx if dx > 0 else (ix * res - x0) / dx) if dx else math.inf
    tmy = (((iy + 1) * res - y0) / dy if dy > 0 else (iy * res - y0) / dy) if dy else math.inf
    tdx = abs(res / dx) if dx else math.inf
    tdy = abs(res / dy) if dy else math.inf
    t_in = 0.0
    for _ in range(abs(ex - ix) + abs(ey - iy) + 1):
        t_out = min(tmx, tmy, 1.0)
        if (iy, ix) != (tr, tc) and m.state_at(iy, ix) == _kernels.OCCUPIED:
            h = m.height[iy - m.row0, ix - m.col0]
            same_object = max(abs(iy - tr), abs(ix - tc)) <= radius and abs(h - h_target) <= 0.05
            if not same_object and min(z0 + t_in * (z1 - z0), z0 + t_out * (z1 - z0)) <= h:
                return False
        if tmx >= 1.0 and tmy >= 1.0:
            break
        if tmx < tmy:
            ix += sx
            t_in = tmx
            tmx += tdx
        else:
            iy += sy
            t_in = tmy
            tmy += tdy
    return True


def _target_point(m: TopDownMap, cell, camera_height: float):
    x, y = m.center(*cell)
    h = m.height[cell[0] - m.row0, cell[1] - m.col0] if m.inside(*cell) else 0.0
    return x, y, max(min(h, camera_height) - 0.01, 0.0)


def _in_view(state: CowState, target, slack: int = 2) -> bool:
    tr, tc = target
    return any(max(abs(r - tr), abs(c - tc)) <= slack for r, c in state.seen_now)


def can_stop(m: TopDownMap, pose: Pose, target, cfg: CowConfig, state: CowState) -> bool:
    """Close enough and detected in the current frame near the target cell."""
    x, y = m.center(*target)
    if math.hypot(x - pose.x, y - pose.y) > cfg.stop_distance - 0.5 * m.resolution:
        return False
    return _in_view(state, target)


def _goal_cells(m: TopDownMap, target, cfg: CowConfig, bad_stops=frozenset()) -> list:
    """Free cells from which Stop would be accepted for ``target``."""
    reach = cfg.stop_distance - m.resolution
    n = int(math.ceil(reach / m.resolution))
    tx, ty, tz = _target_point(m, target, cfg.agent.camera_height)
    out = []
    for r in range(target[0] - n, target[0] + n + 1):
        for c in range(target[1] - n, target[1] + n + 1):
            if m.state_at(r, c) != FREE or (r, c) in bad_stops:
                continue
            x, y = m.center(r, c)
            if math.hypot(x - tx, y - ty) > reach:
                continue
            if _map_sight(m, (x, y, cfg.agent.camera_height), (tx, ty, tz), target):
                out.append((r, c))
    return out


ARRIVED = object()  # returned by _drive_to_any when already on a goal cell


def _drive_to_any(m: TopDownMap, pose: Pose, goals, bumped, agent):
    """Next action toward the cheapest of ``goals`` under the margin fallback chain.

    Returns ``ARRIVED`` when already on a goal cell and None when no goal can
    be made progress toward.
    """
    if not goals:
        return None
    start = m.cell_of(pose.x, pose.y)
    if start in set(goals):
        return ARRIVED
    m.ensure(start[0], start[0], start[1], start[1])
    s = (start[0] - m.row0, start[1] - m.col0)
    motion = Motion(agent.turn_angle, agent.step_size, agent.radius)
    for blocked in ((bumped, ()) if bumped else ((),)):
        for margin in MARGINS:
            passable = passable_mask(m, margin, blocked)
            dist = _kernels.dijkstra(passable, *s)
            best = None
            for r, c in goals:
                d = dist[r - m.row0, c - m.col0]
                if np.isfinite(d) and (best is None or d < best[0]):
                    best = (d, (r - m.row0, c - m.col0))
            if best is None:
                continue
            path = _kernels.backtrack(dist, passable, s, best[1])
            path = [(r + m.row0, c + m.col0) for r, c in path]
            seeds = np.array([(r - m.row0, c - m.col0) for r, c in goals
                              if np.isfinite(dist[r - m.row0, c - m.col0])], dtype=np.int64)
            passable[s] = True
            act = drive_action(m, pose, path, _kernels.dijkstra_multi(passable, seeds), motion, blocked)
            if act is not None:
                return act
    return None


def _explore(m, est, state: CowState, info: dict) -> Action:
    try:
        action = state.policy.next_action(m, est, state.rng)
    except ExplorationComplete:
        info["exploration_complete"] = True
        return Action.Stop
    fbe = state.fbe
    info["frontier_id"] = fbe.frontier_id if fbe is not None else None
    return action


def cow_step(m: TopDownMap, est: PoseEstimate, cfg: CowConfig, state: CowState, info: dict | None = None) -> Action:
    """One decision: plan to the best relevance cell if it clears the trigger, else explore."""
    info = {} if info is None else info
    info.setdefault("frontier_id", None)
    pose = est.pose
    top = m.max_relevance()
    if top > 0 and top >= cfg.trigger_level:
        target = m.argmax_relevance()
        info["target"] = target
        if can_stop(m, pose, target, cfg, state):
            return Action.Stop
        tx, ty = m.center(*target)
        start = m.cell_of(pose.x, pose.y)
        near = math.hypot(tx - pose.x, ty - pose.y) <= cfg.stop_distance - 0.5 * m.resolution
        if near and start not in state.bad_stops:
            err = wrap_angle(math.atan2(ty - pose.y, tx - pose.x) - pose.yaw)
            if abs(err) > cfg.agent.turn_angle + 1e-9:
                return Action.RotateRight if err < 0 else Action.RotateLeft
            # facing the target yet not seeing it: this spot is occluded
            state.bad_stops.add(start)
        act = _drive_to_any(m, pose, _goal_cells(m, target, cfg, state.bad_stops), state.bumped, cfg.agent)
        if act is None:
            # nothing certifiably good: get as close as the map allows
            free = m.cells_where(m.state == FREE)
            d = np.hypot((free[:, 1] + 0.5) * m.resolution - tx, (free[:, 0] + 0.5) * m.resolution - ty)
            order = np.argsort(d, kind="stable")[:64]
            cand = [tuple(map(int, free[i])) for i in order if tuple(map(int, free[i])) not in state.bad_stops]
            act = _drive_to_any(m, pose, cand, state.bumped, cfg.agent)
        if act is None or act is ARRIVED:
            return Action.Stop
        return act
    return _explore(m, est, state, info)


@dataclass
class StepRecord:
    t: int
    action: str
    succeeded: bool
    est_pose: Pose
    true_pose: Pose
    localizer_fired: bool
    goal_detected: bool
    target_in_view: bool
    failure_detected: bool
    reinitialized: bool
    frontier_id: int | None

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "action": self.action,
            "succeeded": self.succeeded,
            "est_pose": self.est_pose.to_dict(),
            "true_pose": self.true_pose.to_dict(),
            "localizer_fired": self.localizer_fired,
            "goal_detected": self.goal_detected,
            "target_in_view": self.target_in_view,
            "failure_detected": self.failure_detected,
            "reinitialized": self.reinitialized,
            "frontier_id": self.frontier_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(
            d["t"], d["action"], d["succeeded"], Pose.from_dict(d["est_pose"]), Pose.from_dict(d["true_pose"]),
            d["localizer_fired"], d["goal_detected"], d["target_in_view"], d["failure_detected"],
            d["reinitialized"], d["frontier_id"],
        )


@dataclass
class Trajectory:
    task_id: str
    scene_id: str
    seed: int
    start_pose: Pose
    records: list[StepRecord]
    status: str  # stopped | exhausted | budget
    success: bool
    config_hash: str = ""
    goal_ever_in_view: bool = False
    max_steps: int = 500

    @property
    def steps(self) -> int:
        return len(self.records)

    def true_poses(self) -> list[Pose]:
        return [self.start_pose] + [r.true_pose for r in self.records]

    def path_length(self) -> float:
        poses = self.true_poses()
        return float(sum(math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(poses, poses[1:])))

    def header(self) -> dict:
        return {
            "format": TRAJECTORY_FORMAT,
            "config_hash": self.config_hash,
            "task_id": self.task_id,
            "scene_id": self.scene_id,
            "seed": self.seed,
            "start_pose": self.start_pose.to_dict(),
            "max_steps": self.max_steps,
        }

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        lines.append(json.dumps({"end": self.status, "success": self.success, "steps": self.steps,
                                 "goal_ever_in_view": self.goal_ever_in_view}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Trajectory":
        lines = [json.loads(s) for s in text.splitlines() if s.strip()]
        if not lines or lines[0].get("format") != TRAJECTORY_FORMAT:
            raise ValueError("not a trajectory file")
        head, body = lines[0], lines[1:]
        tail = body[-1] if body and "end" in body[-1] else None
        recs = [StepRecord.from_dict(d) for d in (body[:-1] if tail else body)]
        return cls(
            head["task_id"], head["scene_id"], head["seed"], Pose.from_dict(head["start_pose"]), recs,
            tail["end"] if tail else "incomplete", bool(tail and tail["success"]), head["config_hash"],
            bool(tail and tail.get("goal_ever_in_view")), head.get("max_steps", 500),
        )

    @classmethod
    def load(cls, path) -> "Trajectory":
        return cls.loads(Path(path).read_text())


def make_localizer(cfg: CowConfig, scene: Scene, task: Task, seed: int):
    if cfg.localizer == "precomputed":
        return PrecomputedLocalizer(cfg.precomputed_dir, task.task_id)
    oc = cfg.oracle
    return OracleLocalizer(scene, OracleLocalizerConfig(
        oc.p_false_negative, oc.p_false_positive, oc.attribute_blindness, seed, oc.leak, oc.blob_radius))


class EpisodeRunner:
    """Step-wise episode execution; ``run_episode`` drives it to the end.

    Exposes the agent map after every step so replays can render it.
    """

    def __init__(self, scene: Scene, task: Task, cfg: CowConfig, seed: int):
        if task.scene_id != scene.id:
            raise ValueError(f"task {task.task_id} is for scene {task.scene_id}, got {scene.id}")
        self.scene, self.task, self.cfg, self.seed = scene, task, cfg, seed
        self.sim_rng = np.random.default_rng([seed, 0])
        self.sim = SimState(task.start_pose)
        self.obs = render(scene, task.start_pose, cfg.agent, self.sim_rng)
        self.localizer = make_localizer(cfg, scene, task, seed)
        vocab = {o.category for o in scene.objects}
        self.goal = parse_description(task.goal_description, vocab)
        self.goal_proxies = visible_proxies(scene, task.goal_instance_ids)
        self.est = PoseEstimate()
        self.map = TopDownMap(cfg.map_resolution)
        self.state = new_cow_state(cfg, seed)
        self.prev_depth = None
        self.last_action: Action | None = None
        self.records: list[StepRecord] = []
        self.done = False
        self.exhausted = False
        self.goal_ever_in_view = False

    def perceive(self) -> dict:
        """Agent-side update from the current observation (no simulator access)."""
        cfg = self.cfg
        obs = self.obs.for_agent()
        failed = False
        if self.last_action is not None and self.last_action is not Action.Stop:
            if self.last_action is Action.MoveForward:
                failed = detect_action_failure(self.prev_depth, obs.depth, cfg.failure)
                if failed and cfg.failure_guard:
                    res = forward_motion_residuals(self.prev_depth, obs.depth, cfg.agent.intrinsics,
                                                   cfg.agent.step_size)
                    # floor, walls parallel to the motion and open sky look the same after a step
                    failed = res is None or res[0] <= res[1]
            if failed:
                self.state.note_bump(self.map, self.est, cfg.agent.step_size, cfg.agent.radius)
            self.est = update_pose_estimate(self.est, self.last_action, failed, cfg.agent)
        k = cfg.agent.intrinsics
        register_depth(self.map, obs.depth, self.est, k, cfg.agent.camera_height)
        rel = self.localizer.localize(obs, self.goal)
        mask = threshold_mask(rel, cfg.tau)
        if cfg.postprocess == "center_pixel":
            mask = center_pixel_postprocess(mask)
        project_relevance(self.map, mask, obs.depth, self.est, k, cfg.agent.camera_height, rel.values)
        self.state.seen_now = projected_cells(self.map, mask, obs.depth, self.est, k, cfg.agent.camera_height)
        approach = self.state.fbe.reach if self.state.fbe is not None else 0
        _, reinit = reinitialize_if_stuck(self.map, self.est, approach)
        if reinit and self.state.fbe is not None:
            self.state.fbe.clear()
            self.state.bad_stops.clear()
            self.state.seen_now = set()
        goal_px = self.obs.pixels_of(self.goal_proxies)
        return {
            "failed": failed,
            "reinit": reinit,
            "fired": bool(mask.any()),
            "detected": bool((mask & goal_px).any()),
            "in_view": bool(goal_px.any()),
            "mask": mask,
        }

    def advance(self) -> StepRecord:
        if self.done:
            raise RuntimeError("episode already finished")
        p = self.perceive()
        info: dict = {}
        action = cow_step(self.map, self.est, self.cfg, self.state, info)
        self.goal_ever_in_view |= p["in_view"]
        self.prev_depth = self.obs.depth
        self.sim, self.obs, ok = step(self.scene, self.sim, action, self.cfg.agent, self.sim_rng)
        rec = StepRecord(
            len(self.records), action.value, ok, self.est.pose, self.sim.pose, p["fired"], p["detected"],
            p["in_view"], p["failed"], p["reinit"], info.get("frontier_id"),
        )
        self.records.append(rec)
        self.last_action = action
        # a stop forced by running out of frontiers is giving up, not a claim
        self.exhausted = action is Action.Stop and bool(info.get("exploration_complete"))
        if action is Action.Stop or len(self.records) >= self.cfg.max_steps:
            self.done = True
        return rec

    def trajectory(self) -> Trajectory:
        stopped = bool(self.records) and self.records[-1].action == Action.Stop.value
        success = stopped and not self.exhausted and check_success(self.scene, self.task, self.sim.pose, self.obs, config=self.cfg.agent)
        return Trajectory(
            self.task.task_id, self.scene.id, self.seed, self.task.start_pose, list(self.records),
            "exhausted" if self.exhausted else "stopped" if stopped else "budget", success, config_hash(self.cfg.to_dict()),
            self.goal_ever_in_view, self.cfg.max_steps,
        )


def run_episode(scene: Scene, task: Task, cfg: CowConfig | None = None, seed: int = 0) -> Trajectory:
    runner = EpisodeRunner(scene, task, cfg or CowConfig(), seed)
    while not runner.done:
        runner.advance()
    return runner.trajectory()


def replay_actions(scene: Scene, task: Task, traj: Trajectory, agent: AgentConfig) -> list[Pose]:
    """Re-simulate logged actions; returns the true pose after each one."""
    rng = np.random.default_rng([traj.seed, 0])
    sim = SimState(task.start_pose)
    render(scene, sim.pose, agent, rng)
    poses = []
    for rec in traj.records:
        sim, _, _ = step(scene, sim, Action(rec.action), agent, rng)
        poses.append(sim.pose)
    return poses


def replay_frames(scene: Scene, task: Task, traj: Trajectory, cfg: CowConfig) -> list[str]:
    """ASCII map snapshots at every decision point of a logged episode.

    The agent's perception is rebuilt from re-simulated observations and the
    logged actions, so the frames match what the agent saw when it decided.
    """
    if traj.scene_id != scene.id:
        raise ValueError(f"trajectory is for scene {traj.scene_id!r}, got {scene.id!r}")
    runner = EpisodeRunner(scene, task, cfg, traj.seed)
    frames = []
    n = max(len(traj.records), 1)
    for t in range(n):
        runner.perceive()
        pose = runner.est.pose
        head = f"step {t} est=({pose.x:.3f}, {pose.y:.3f}, {math.degrees(pose.yaw):.1f})"
        if t < len(traj.records):
            head += f" action={traj.records[t].action}"
        rel = runner.map.relevance_table()
        body = runner.map.to_ascii(pose)
        side = "\n".join(f"  rel {r} {c} {v:.4f}" for r, c, v in rel)
        frames.append(head + "\n" + body + ("\n" + side if side else ""))
        if t < len(traj.records):
            action = Action(traj.records[t].action)
            runner.prev_depth = runner.obs.depth
            runner.sim, runner.obs, _ = step(scene, runner.sim, action, cfg.agent, runner.sim_rng)
            runner.last_action = action
    return frames
