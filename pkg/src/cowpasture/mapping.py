"""Agent-side belief: dead-reckoned pose, top-down map and action-failure checks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels
from .geometry import Action, CameraIntrinsics, DepthImage, Pose, action_delta, compose, world_rays

UNKNOWN = _kernels.UNKNOWN
FREE = _kernels.FREE
OCCUPIED = _kernels.OCCUPIED

_PAD = 16
_EPS = 1e-4


class TopDownMap:
    """Growable grid in the agent's start frame.

    Cells are addressed by global integer indices ``(row, col)`` with
    ``row = floor(y / resolution)``; the backing arrays start at
    ``(row0, col0)`` and grow when evidence lands outside them.  Besides the
    cell state the map keeps per-cell max relevance and the highest surface
    point observed in the cell (used for 3-D sight checks).
    """

    def __init__(self, resolution: float = 0.125, half_extent: float = 4.0):
        self.resolution = float(resolution)
        n = int(math.ceil(half_extent / resolution))
        self.row0 = -n
        self.col0 = -n
        self.state = np.zeros((2 * n, 2 * n), dtype=np.uint8)
        self.relevance = np.zeros((2 * n, 2 * n))
        self.height = np.zeros((2 * n, 2 * n))

    @property
    def origin(self) -> tuple[float, float]:
        return self.col0 * self.resolution, self.row0 * self.resolution

    @property
    def shape(self) -> tuple[int, int]:
        return self.state.shape

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution))

    def center(self, r: int, c: int) -> tuple[float, float]:
        return (c + 0.5) * self.resolution, (r + 0.5) * self.resolution

    def inside(self, r: int, c: int) -> bool:
        return 0 <= r - self.row0 < self.state.shape[0] and 0 <= c - self.col0 < self.state.shape[1]

    def state_at(self, r: int, c: int) -> int:
        return int(self.state[r - self.row0, c - self.col0]) if self.inside(r, c) else UNKNOWN

    def ensure(self, rmin: int, rmax: int, cmin: int, cmax: int) -> None:
        """Grow the arrays so global cells in [rmin, rmax] x [cmin, cmax] exist."""
        rows, cols = self.state.shape
        r0, c0 = self.row0, self.col0
        nr0 = min(r0, rmin - _PAD) if rmin < r0 else r0
        nc0 = min(c0, cmin - _PAD) if cmin < c0 else c0
        nr1 = max(r0 + rows, rmax + 1 + _PAD) if rmax >= r0 + rows else r0 + rows
        nc1 = max(c0 + cols, cmax + 1 + _PAD) if cmax >= c0 + cols else c0 + cols
        if (nr0, nc0, nr1, nc1) == (r0, c0, r0 + rows, c0 + cols):
            return
        for name in ("state", "relevance", "height"):
            old = getattr(self, name)
            new = np.zeros((nr1 - nr0, nc1 - nc0), dtype=old.dtype)
            new[r0 - nr0:r0 - nr0 + rows, c0 - nc0:c0 - nc0 + cols] = old
            setattr(self, name, new)
        self.row0, self.col0 = nr0, nc0

    def copy(self) -> "TopDownMap":
        m = TopDownMap.__new__(TopDownMap)
        m.resolution = self.resolution
        m.row0, m.col0 = self.row0, self.col0
        m.state = self.state.copy()
        m.relevance = self.relevance.copy()
        m.height = self.height.copy()
        return m

    def reset(self) -> None:
        self.state[:] = UNKNOWN
        self.relevance[:] = 0.0
        self.height[:] = 0.0

    def counts(self) -> dict:
        return {
            "unknown": int(np.sum(self.state == UNKNOWN)),
            "free": int(np.sum(self.state == FREE)),
            "occupied": int(np.sum(self.state == OCCUPIED)),
        }

    def max_relevance(self) -> float:
        return float(self.relevance.max()) if self.relevance.size else 0.0

    def argmax_relevance(self) -> tuple[int, int]:
        """Global cell of the highest relevance; row-major first on ties."""
        r, c = np.unravel_index(int(np.argmax(self.relevance)), self.relevance.shape)
        return int(r) + self.row0, int(c) + self.col0

    def cells_where(self, mask: np.ndarray) -> np.ndarray:
        idx = np.argwhere(mask)
        idx[:, 0] += self.row0
        idx[:, 1] += self.col0
        return idx

    def to_ascii(self, pose: Pose | None = None, crop: bool = True) -> str:
        """Rows printed top (max y) to bottom; '.' free, '#' occupied, '?' unknown, '@' agent."""
        chars = np.array(["?", ".", "#"])[self.state]
        if pose is not None:
            r, c = self.cell_of(pose.x, pose.y)
            if self.inside(r, c):
                chars[r - self.row0, c - self.col0] = "@"
        rows = range(chars.shape[0])
        cols = slice(None)
        if crop:
            known = np.argwhere((self.state != UNKNOWN) | (chars == "@"))
            if len(known):
                rows = range(known[:, 0].min(), known[:, 0].max() + 1)
                cols = slice(known[:, 1].min(), known[:, 1].max() + 1)
        return "\n".join("".join(chars[r, cols]) for r in reversed(rows))

    def relevance_table(self) -> list[tuple[int, int, float]]:
        """Sidecar rows (row, col, value) for every cell with nonzero relevance."""
        idx = np.argwhere(self.relevance > 0)
        return [(int(r) + self.row0, int(c) + self.col0, float(self.relevance[r, c])) for r, c in idx]


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose = Pose(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class FailureDetectorConfig:
    mu_threshold: float = 0.1
    sigma_threshold: float = 0.1

    def __post_init__(self):
        if self.mu_threshold < 0 or self.sigma_threshold < 0:
            raise ValueError("failure thresholds must be >= 0")


def detect_action_failure(prev: DepthImage, cur: DepthImage, cfg: FailureDetectorConfig | None = None) -> bool:
    """A motion failed when consecutive depth frames barely differ (mean AND std small)."""
    cfg = cfg or FailureDetectorConfig()
    if prev.values.shape != cur.values.shape:
        raise ValueError(f"depth shapes differ: {prev.values.shape} vs {cur.values.shape}")
    diff = np.abs(prev.values - cur.values)
    return bool(diff.mean() < cfg.mu_threshold and diff.std() < cfg.sigma_threshold)


def forward_motion_residuals(prev: DepthImage, cur: DepthImage, k: CameraIntrinsics, step_size: float):
    """Mean forward-depth residuals of the "stayed put" and "moved ``step_size`` ahead" hypotheses.

    Valid pixels of ``prev`` are lifted to 3-D, shifted back by the step and
    reprojected into ``cur``, whose inverse forward depth is interpolated
    bilinearly (exact on planes).  Both residuals are averaged over the
    pixels where that is possible.  Returns (static, moved), or None when no
    pixel can be compared.
    """
    rays = k.camera_rays()
    zp = np.where(prev.valid, prev.values * rays[..., 0], np.nan)
    zc = np.where(cur.valid, cur.values * rays[..., 0], np.nan)
    inv = 1.0 / zc
    vv, uu = np.nonzero(prev.valid & cur.valid)
    pts = prev.values[vv, uu][:, None] * rays[vv, uu]
    pts[:, 0] -= step_size
    front = pts[:, 0] > 1e-6
    vv, uu, pts = vv[front], uu[front], pts[front]
    uf = k.cx - k.fx * pts[:, 1] / pts[:, 0]
    vf = k.cy - k.fy * pts[:, 2] / pts[:, 0]
    u0, v0 = np.floor(uf).astype(np.int64), np.floor(vf).astype(np.int64)
    inside = (u0 >= 0) & (u0 + 1 < k.width) & (v0 >= 0) & (v0 + 1 < k.height)
    vv, uu, pts, uf, vf, u0, v0 = vv[inside], uu[inside], pts[inside], uf[inside], vf[inside], u0[inside], v0[inside]
    a, b = uf - u0, vf - v0
    w = (inv[v0, u0] * (1 - a) * (1 - b) + inv[v0, u0 + 1] * a * (1 - b)
         + inv[v0 + 1, u0] * (1 - a) * b + inv[v0 + 1, u0 + 1] * a * b)
    ok = np.isfinite(w) & (w > 0)
    if not ok.any():
        return None
    static = np.abs(zp[vv, uu] - zc[vv, uu])[ok].mean()
    moved = np.abs(pts[ok, 0] - 1.0 / w[ok]).mean()
    return float(static), float(moved)


def update_pose_estimate(est: PoseEstimate, action: Action, failed: bool, config=None) -> PoseEstimate:
    if action is Action.Stop:
        raise ValueError("Stop does not move the agent")
    if failed:
        return est
    if config is None:
        from .simulator import AgentConfig

        config = AgentConfig()
    return PoseEstimate(compose(est.pose, action_delta(action, config)))


def _frame_points(depth: DepthImage, k: CameraIntrinsics, pose: Pose, camera_height: float):
    """Ray directions, ranges and validity for every pixel, flattened row-major."""
    if depth.values.shape != (k.height, k.width):
        raise ValueError(f"depth shape {depth.values.shape} does not match intrinsics {(k.height, k.width)}")
    rays = world_rays(k, pose).reshape(-1, 3)
    d = depth.values.reshape(-1)
    valid = d < depth.sentinel
    cam = np.array([pose.x, pose.y, camera_height])
    return rays, d, valid, cam


def register_depth(
    m: TopDownMap,
    depth: DepthImage,
    est: PoseEstimate,
    k: CameraIntrinsics,
    agent_height: float = 0.9,
    free_height: float | None = None,
) -> TopDownMap:
    """Fuse one depth frame into ``m`` (in place; also returned).

    Hits are nudged a hair further along their ray so surface points fall in
    the cell they belong to.  Hits below ``free_height`` clear their cell,
    hits up to ``agent_height`` occupy it, and higher ones only update the
    height layer.  The floor trace of every floor hit is carved free up to
    the hit.  A ray that ends on an obstacle, or returns nothing while
    pointing level or down, carves its trace too, but only when it is the
    bottom pixel of its column or the pixel just below it hit the floor.
    """
    fh = m.resolution if free_height is None else free_height
    rays, d, valid, cam = _frame_points(depth, k, est.pose, agent_height)
    pushed = cam + (d + _EPS)[:, None] * rays
    hit = cam + d[:, None] * rays
    z = pushed[:, 2]
    free_hit = valid & (z < fh)
    occ_hit = valid & (z >= fh) & (z <= agent_height)
    # Pixels in one column share an azimuth, so floor hits already carve its
    # floor trace.  Other rays only carve where nothing below them reached the
    # floor; higher rays would sweep over low tops they never touched.
    below = np.ones((k.height, k.width), dtype=bool)
    below[:-1] = free_hit.reshape(k.height, k.width)[1:]
    carve = free_hit | (below.reshape(-1) & np.where(valid, z <= agent_height, rays[:, 2] <= 0.0))
    ends = np.where(valid[:, None], hit[:, :2], cam[:2] + depth.sentinel * rays[:, :2])[carve]

    xs = np.concatenate([[cam[0]], ends[:, 0], pushed[valid, 0]])
    ys = np.concatenate([[cam[1]], ends[:, 1], pushed[valid, 1]])
    res = m.resolution
    m.ensure(
        int(math.floor(ys.min() / res)) - 1,
        int(math.floor(ys.max() / res)) + 1,
        int(math.floor(xs.min() / res)) - 1,
        int(math.floor(xs.max() / res)) + 1,
    )
    _kernels.register(
        m.state, m.row0, m.col0, res, float(cam[0]), float(cam[1]),
        np.ascontiguousarray(ends), np.ascontiguousarray(pushed[free_hit, :2]),
        np.ascontiguousarray(pushed[occ_hit, :2]),
    )
    solid = valid & (z >= fh)
    if solid.any():
        rr = np.floor(pushed[solid, 1] / res).astype(np.int64) - m.row0
        cc = np.floor(pushed[solid, 0] / res).astype(np.int64) - m.col0
        np.maximum.at(m.height, (rr, cc), z[solid])
    return m


def reinitialize_if_stuck(m: TopDownMap, est: PoseEstimate, approach: int = 0) -> tuple[TopDownMap, bool]:
    """Wipe the map when frontiers exist but none can be reached from the agent cell.

    With ``approach > 0`` a frontier cell also counts as reachable when some
    reachable cell lies within that many cells of it (Chebyshev), matching
    how the explorer plans towards frontiers.
    """
    from .exploration import extract_frontiers, reachable_from

    frontiers = extract_frontiers(m)
    if not frontiers:
        return m, False
    r, c = m.cell_of(est.pose.x, est.pose.y)
    reach = reachable_from(m, (r, c))
    if approach > 0:
        reach = ndimage.maximum_filter(reach, size=2 * approach + 1, mode="constant", cval=False)
    for f in frontiers:
        for fr, fc in f.cells:
            if reach[fr - m.row0, fc - m.col0]:
                return m, False
    m.reset()
    m.ensure(r, r, c, c)
    m.state[r - m.row0, c - m.col0] = FREE
    return m, True
