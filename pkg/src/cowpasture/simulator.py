"""Ground-truth stepping, rendering, success checks and oracle shortest paths."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import _kernels
from .geometry import Action, CameraIntrinsics, DepthImage, Pose, action_delta, world_rays
from .scene import Scene, Task, visible_proxies

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgentConfig:
    step_size: float = 0.25
    turn_angle: float = math.radians(30.0)
    camera_height: float = 0.9
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    translation_noise_sigma: float = 0.0
    rotation_noise_sigma: float = 0.0
    depth_noise_sigma: float = 0.0  # relative (multiplicative) per-pixel std
    max_depth: float = 10.0
    radius: float = 0.18
    traversable_height: float = 0.2
    success_radius: float = 1.0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        for name in ("translation_noise_sigma", "rotation_noise_sigma", "depth_noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.max_depth <= 0:
            raise ValueError("max_depth must be > 0")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["intrinsics"] = self.intrinsics.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        d = dict(d)
        d["intrinsics"] = CameraIntrinsics(**d["intrinsics"])
        return cls(**d)


NOISE_PROFILES = {
    "none": {},
    "robothor_like": {"translation_noise_sigma": 0.005, "rotation_noise_sigma": math.radians(0.5)},
    "habitat_like": {"depth_noise_sigma": 0.02},
}


def agent_config_for_profile(profile: str, **overrides) -> AgentConfig:
    if profile not in NOISE_PROFILES:
        raise ValueError(f"unknown noise profile {profile!r}; choose from {sorted(NOISE_PROFILES)}")
    return AgentConfig(**{**NOISE_PROFILES[profile], **overrides})


@dataclass
class Observation:
    depth: DepthImage
    labels: np.ndarray  # object index per pixel, -1 for walls/floor/no return
    instance_ids: tuple[str, ...]
    true_pose: Pose | None = None

    def __post_init__(self):
        if self.labels.shape != self.depth.values.shape:
            raise ValueError("depth and semantic dims differ")

    @property
    def semantic(self) -> np.ndarray:
        """Per-pixel instance id, '' where nothing labelled was hit."""
        ids = np.array(("",) + tuple(self.instance_ids), dtype=object)
        return ids[self.labels + 1]

    def visible_ids(self) -> list[str]:
        return sorted({self.instance_ids[i] for i in np.unique(self.labels) if i >= 0})

    def pixels_of(self, instance_ids) -> np.ndarray:
        want = [i for i, name in enumerate(self.instance_ids) if name in set(instance_ids)]
        return np.isin(self.labels, want)

    def for_agent(self) -> "Observation":
        """Copy with the simulator-private pose stripped."""
        return replace(self, true_pose=None)


@dataclass
class SimState:
    pose: Pose
    steps: int = 0
    done: bool = False


def render(scene: Scene, pose: Pose, config: AgentConfig, rng: np.random.Generator | None = None) -> Observation:
    k = config.intrinsics
    rays = np.ascontiguousarray(world_rays(k, pose).reshape(-1, 3))
    top, split, lo, hi = scene.render_layers()
    ranges, _z, ids = _kernels.raycast(
        top, split, lo, hi, scene.cell_size, pose.x, pose.y, config.camera_height, rays, config.max_depth
    )
    hit = np.isfinite(ranges)
    depth = np.where(hit, ranges, config.max_depth)
    if config.depth_noise_sigma > 0 and rng is not None:
        noise = rng.normal(0.0, config.depth_noise_sigma, size=depth.shape)
        depth = np.where(hit, np.clip(depth * (1.0 + noise), 1e-3, config.max_depth), depth)
    labels = np.where(hit, ids, -1)
    shape = (k.height, k.width)
    return Observation(
        DepthImage(depth.reshape(shape), config.max_depth),
        labels.reshape(shape).astype(np.int64),
        tuple(o.instance_id for o in scene.objects),
        pose,
    )


def _obstacle_boxes(scene: Scene, traversable_height: float):
    rows, cols = np.nonzero(scene.heightmap > traversable_height)
    cs = scene.cell_size
    return cols * cs, rows * cs, (cols + 1) * cs, (rows + 1) * cs


def collides(scene: Scene, x0, y0, x1, y1, radius: float, traversable_height: float = 0.2) -> bool:
    """Whether a disc swept from (x0, y0) to (x1, y1) touches an obstacle column."""
    rows, cols = scene.shape
    cs = scene.cell_size
    lo_x, hi_x = min(x0, x1) - radius, max(x0, x1) + radius
    lo_y, hi_y = min(y0, y1) - radius, max(y0, y1) + radius
    if lo_x < 0 or lo_y < 0 or hi_x > cols * cs or hi_y > rows * cs:
        return True
    bx0, by0, bx1, by1 = _obstacle_boxes(scene, traversable_height)
    near = (bx1 >= lo_x) & (bx0 <= hi_x) & (by1 >= lo_y) & (by0 <= hi_y)
    if not near.any():
        return False
    bx0, by0, bx1, by1 = bx0[near], by0[near], bx1[near], by1[near]
    n = max(2, int(math.ceil(math.hypot(x1 - x0, y1 - y0) / 0.01)) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    px = x0 + t * (x1 - x0)
    py = y0 + t * (y1 - y0)
    dx = np.maximum(np.maximum(bx0 - px, 0.0), px - bx1)
    dy = np.maximum(np.maximum(by0 - py, 0.0), py - by1)
    return bool(np.any(dx * dx + dy * dy < radius * radius))


def step(scene: Scene, state: SimState, action: Action, config: AgentConfig, rng: np.random.Generator):
    """Advance one action.  Returns (new state, observation, action_succeeded)."""
    pose = state.pose
    ok = True
    if action is Action.Stop:
        new = SimState(pose, state.steps + 1, True)
    elif action is Action.MoveForward:
        dist = config.step_size
        if config.translation_noise_sigma > 0:
            dist += rng.normal(0.0, config.translation_noise_sigma)
        yaw = pose.yaw
        if config.rotation_noise_sigma > 0:
            yaw += rng.normal(0.0, config.rotation_noise_sigma)
        nx = pose.x + dist * math.cos(yaw)
        ny = pose.y + dist * math.sin(yaw)
        if collides(scene, pose.x, pose.y, nx, ny, config.radius, config.traversable_height):
            ok = False
            new = SimState(pose, state.steps + 1)
        else:
            new = SimState(Pose(nx, ny, yaw), state.steps + 1)
    else:
        turn = action_delta(action, config).yaw
        if config.rotation_noise_sigma > 0:
            turn += rng.normal(0.0, config.rotation_noise_sigma)
        new = SimState(Pose(pose.x, pose.y, pose.yaw + turn), state.steps + 1)
    return new, render(scene, new.pose, config, rng), ok


def line_of_sight(heights: np.ndarray, cell: float, p0, p1, ignore=frozenset()) -> bool:
    """3-D segment test against column heights using a 2-D grid walk.

    Cells in ``ignore`` never block.  Blocking means the segment's height over
    some part of a cell is at or below the column top.
    """
    x0, y0, z0 = p0
    x1, y1, z1 = p1
    rows, cols = heights.shape
    dx, dy = x1 - x0, y1 - y0
    ix, iy = int(math.floor(x0 / cell)), int(math.floor(y0 / cell))
    ex, ey = int(math.floor(x1 / cell)), int(math.floor(y1 / cell))
    if dx > 0:
        sx, tmx, tdx = 1, ((ix + 1) * cell - x0) / dx, cell / dx
    elif dx < 0:
        sx, tmx, tdx = -1, (ix * cell - x0) / dx, -cell / dx
    else:
        sx, tmx, tdx = 0, math.inf, math.inf
    if dy > 0:
        sy, tmy, tdy = 1, ((iy + 1) * cell - y0) / dy, cell / dy
    elif dy < 0:
        sy, tmy, tdy = -1, (iy * cell - y0) / dy, -cell / dy
    else:
        sy, tmy, tdy = 0, math.inf, math.inf
    t_in = 0.0
    for _ in range(abs(ex - ix) + abs(ey - iy) + 1):
        t_out = min(tmx, tmy, 1.0)
        if (iy, ix) not in ignore:
            if not (0 <= iy < rows and 0 <= ix < cols):
                return False
            zmin = min(z0 + t_in * (z1 - z0), z0 + t_out * (z1 - z0))
            if zmin <= heights[iy, ix]:
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


_TOP_SAMPLES = ((0.0, 0.0), (-0.3, -0.3), (-0.3, 0.3), (0.3, -0.3), (0.3, 0.3))
_SIDE_SAMPLES = ((-0.49, 0.0), (0.49, 0.0), (0.0, -0.49), (0.0, 0.49))


def _goal_targets(scene: Scene, task: Task):
    """(footprint cells, sight points) for each visible stand-in of the goal.

    Sight points sample every footprint cell's top face and the middle of
    its four sides.
    """
    cs = scene.cell_size
    out = []
    for pid in visible_proxies(scene, task.goal_instance_ids):
        o = scene.obj(pid)
        pts = []
        for r, c in o.footprint:
            x, y = (c + 0.5) * cs, (r + 0.5) * cs
            for ox, oy in _TOP_SAMPLES:
                pts.append((x + ox * cs, y + oy * cs, o.top - 0.01))
            for ox, oy in _SIDE_SAMPLES:
                pts.append((x + ox * cs, y + oy * cs, o.base_height + 0.5 * o.height))
        out.append((set(o.footprint), pts))
    return out


def _cell_distance(cell, x: float, y: float, cs: float) -> float:
    r, c = cell
    dx = max(c * cs - x, 0.0, x - (c + 1) * cs)
    dy = max(r * cs - y, 0.0, y - (r + 1) * cs)
    return math.hypot(dx, dy)


def _success_at(scene: Scene, targets, x: float, y: float, camera_height: float, radius: float) -> bool:
    cs = scene.cell_size
    heights = scene.heightmap
    for cells, pts in targets:
        if not any(_cell_distance(rc, x, y, cs) <= radius for rc in cells):
            continue
        for p in pts:
            if line_of_sight(heights, cs, (x, y, camera_height), p, cells):
                return True
    return False


def check_success(scene: Scene, task: Task, pose: Pose, last_observation=None, radius: float | None = None,
                  config: AgentConfig | None = None) -> bool:
    """Distance to the nearest goal footprint point within ``radius`` plus line of sight.

    Sight is either a clear sampled line from the camera or, when the final
    observation is given, goal pixels in it.  Hidden goals are judged against
    their container.
    """
    cfg = config or AgentConfig()
    r = cfg.success_radius if radius is None else radius
    targets = _goal_targets(scene, task)
    if _success_at(scene, targets, pose.x, pose.y, cfg.camera_height, r):
        return True
    if last_observation is None:
        return False
    # sampled sight lines can miss a sliver the camera does see
    cs = scene.cell_size
    near = [pid for pid in visible_proxies(scene, task.goal_instance_ids)
            if any(_cell_distance(rc, pose.x, pose.y, cs) <= r for rc in scene.obj(pid).footprint)]
    return bool(near) and bool(last_observation.pixels_of(near).any())


def shortest_path_length(scene: Scene, start: Pose, task: Task, config: AgentConfig | None = None) -> float:
    """Geodesic metres from the start cell to the closest cell where Stop would succeed.

    Returns ``math.inf`` when no such cell is reachable.
    """
    cfg = config or AgentConfig()
    passable = ~scene.obstacle_mask(cfg.traversable_height)
    sr, sc = scene.cell_of(start.x, start.y)
    dist = _kernels.dijkstra(passable, sr, sc)
    targets = _goal_targets(scene, task)
    cs = scene.cell_size
    reach = cfg.success_radius + cs
    best = math.inf
    order = np.argsort(dist, axis=None, kind="stable")
    for flat in order:
        r, c = divmod(int(flat), dist.shape[1])
        d = dist[r, c]
        if not math.isfinite(d) or d >= best:
            break
        x, y = (c + 0.5) * cs, (r + 0.5) * cs
        if not any(
            math.hypot(x - (cc + 0.5) * cs, y - (rr + 0.5) * cs) <= reach for cells, _ in targets for rr, cc in cells
        ):
            continue
        if _success_at(scene, targets, x, y, cfg.camera_height, cfg.success_radius):
            best = d
    if not math.isfinite(best):
        log.warning("goal of %s unreachable from start", task.task_id)
        return math.inf
    return best * cs
