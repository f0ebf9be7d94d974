"""Independent reference computations shared by the tests.

Nothing here calls into the package's ray, map or planning code: rays are
built from the pinhole formula directly and traced by dense sampling.
"""
from __future__ import annotations

import heapq
import math

import numpy as np
from scipy import ndimage

UNKNOWN, FREE, OCCUPIED = 0, 1, 2


def relative_pose(start, pose):
    """``pose`` expressed in the frame of ``start`` as (x, y, yaw)."""
    dx, dy = pose.x - start.x, pose.y - start.y
    c, s = math.cos(start.yaw), math.sin(start.yaw)
    yaw = math.atan2(math.sin(pose.yaw - start.yaw), math.cos(pose.yaw - start.yaw))
    return c * dx + s * dy, -s * dx + c * dy, yaw


def pixel_rays(width, height, hfov):
    """Unit body-frame rays (forward, left, up) for every pixel, shape (H, W, 3)."""
    fx = (width / 2.0) / math.tan(hfov / 2.0)
    u = np.arange(width) - (width - 1) / 2.0
    v = np.arange(height) - (height - 1) / 2.0
    uu, vv = np.meshgrid(u, v)
    r = np.stack([np.ones_like(uu), -uu / fx, -vv / fx], axis=-1)
    return r / np.linalg.norm(r, axis=-1, keepdims=True)


class RayOracleMap:
    """Brute-force replay of the registration rule on a dict-free dense grid.

    Per frame and pixel: a hit pushed 1e-4 m along its ray lands in a cell
    that becomes free below ``free_height`` and occupied up to the camera
    height.  Floor hits carve their whole floor trace; obstacle hits and
    no-returns pointing level or down carve theirs only for the bottom pixel
    of a column or when the pixel below hit the floor.  Traces are sampled
    every ``step`` metres.  Within a frame occupied beats free; across frames
    occupied is never cleared.
    """

    def __init__(self, resolution=0.125, free_height=0.125, half=400, step=0.005):
        self.res = resolution
        self.fh = free_height
        self.half = half
        self.step = step
        self.state = np.zeros((2 * half, 2 * half), dtype=np.int8)

    def _cells(self, x, y):
        r = np.floor(y / self.res).astype(np.int64) + self.half
        c = np.floor(x / self.res).astype(np.int64) + self.half
        return r * (2 * self.half) + c

    def add(self, depth, sentinel, rays, x, y, yaw, cam_h):
        h, w = depth.shape
        c, s = math.cos(yaw), math.sin(yaw)
        dx = c * rays[..., 0] - s * rays[..., 1]
        dy = s * rays[..., 0] + c * rays[..., 1]
        dz = rays[..., 2]
        valid = depth < sentinel
        zp = cam_h + (depth + 1e-4) * dz
        floor = valid & (zp < self.fh)
        occ = valid & (zp >= self.fh) & (zp <= cam_h)
        below = np.ones_like(valid)
        below[:-1] = floor[1:]
        carve = floor | (below & np.where(valid, zp <= cam_h, dz <= 0.0))
        free_idx, occ_idx = [], []
        for v, u in zip(*np.nonzero(carve)):
            d = depth[v, u]
            t = np.arange(0.0, d, self.step)
            t = np.append(t, d)
            free_idx.append(self._cells(x + t * dx[v, u], y + t * dy[v, u]))
        px = x + (depth + 1e-4) * dx
        py = y + (depth + 1e-4) * dy
        free_idx.append(self._cells(px[floor], py[floor]))
        occ_idx.append(self._cells(px[occ], py[occ]))
        flat = self.state.reshape(-1)
        f = np.unique(np.concatenate(free_idx))
        f = f[flat[f] != OCCUPIED]
        flat[f] = FREE
        flat[np.unique(np.concatenate(occ_idx))] = OCCUPIED

    def state_at(self, r, c):
        return int(self.state[r + self.half, c + self.half])

    def observed(self):
        """Global (row, col) of every known cell."""
        idx = np.argwhere(self.state != UNKNOWN) - self.half
        return {(int(a), int(b)) for a, b in idx}


def map_fidelity(m, oracle: RayOracleMap):
    """Fraction of cells known to either map whose states differ."""
    known = oracle.observed()
    for a, b in np.argwhere(m.state != UNKNOWN):
        known.add((int(a) + m.row0, int(b) + m.col0))
    diff = sum(1 for r, c in known if m.state_at(r, c) != oracle.state_at(r, c))
    return diff / max(len(known), 1), len(known)


def world_to_map(start, wx, wy, res=0.125):
    lx, ly, _ = relative_pose(start, type(start)(wx, wy, 0.0))
    return math.floor(ly / res), math.floor(lx / res)


def map_to_world(start, r, c, res=0.125):
    lx, ly = (c + 0.5) * res, (r + 0.5) * res
    cs, sn = math.cos(start.yaw), math.sin(start.yaw)
    return start.x + cs * lx - sn * ly, start.y + sn * lx + cs * ly


def occupied_violations(m, scene, start, free_height=0.125):
    """Occupied map cells outside the true obstacles grown by one map cell."""
    k = int(round(scene.cell_size / m.resolution))
    obstacle = np.kron(scene.heightmap >= free_height, np.ones((k, k), dtype=bool))
    grown = ndimage.binary_dilation(obstacle, structure=np.ones((3, 3), bool))
    bad = 0
    for a, b in np.argwhere(m.state == OCCUPIED):
        wx, wy = map_to_world(start, a + m.row0, b + m.col0, m.resolution)
        i, j = math.floor(wy / m.resolution), math.floor(wx / m.resolution)
        inside = 0 <= i < grown.shape[0] and 0 <= j < grown.shape[1]
        bad += not (inside and grown[i, j])
    return bad


def reachable_scene_cells(scene, start, traversable_height=0.2):
    """Scene cells with room for the agent, 4-connected to the start cell."""
    blocked = scene.heightmap > traversable_height
    ok = ~ndimage.binary_dilation(blocked, structure=np.ones((3, 3), bool), border_value=1)
    lab, _ = ndimage.label(ok)
    r, c = int(start.y // scene.cell_size), int(start.x // scene.cell_size)
    return np.argwhere(lab == lab[r, c])


def observable_floor(scene, start, render, agent, stride=2, yaws=8, free_height=0.125):
    """World floor cells (map resolution) seen directly from a lattice of reachable poses."""
    from cowpasture.geometry import Pose

    rays = pixel_rays(agent.intrinsics.width, agent.intrinsics.height, agent.intrinsics.horizontal_fov)
    res = 0.125
    seen = set()
    for r, c in reachable_scene_cells(scene, start):
        if r % stride or c % stride:
            continue
        x, y = (c + 0.5) * scene.cell_size, (r + 0.5) * scene.cell_size
        for k in range(yaws):
            yaw = 2 * math.pi * k / yaws
            depth = render(scene, Pose(x, y, yaw), agent).depth
            d = depth.values
            cs, sn = math.cos(yaw), math.sin(yaw)
            dx = cs * rays[..., 0] - sn * rays[..., 1]
            dy = sn * rays[..., 0] + cs * rays[..., 1]
            z = agent.camera_height + (d + 1e-4) * rays[..., 2]
            floor = (d < depth.sentinel) & (z < free_height)
            px = x + (d + 1e-4) * dx
            py = y + (d + 1e-4) * dy
            for i, j in zip(np.floor(py[floor] / res).astype(int), np.floor(px[floor] / res).astype(int)):
                seen.add((int(i), int(j)))
    k = int(round(scene.cell_size / res))
    free = np.kron(scene.heightmap < free_height, np.ones((k, k), dtype=bool))
    return {(i, j) for i, j in seen if 0 <= i < free.shape[0] and 0 <= j < free.shape[1] and free[i, j]}


def grid_dijkstra(passable, start, goal):
    """Plain heap Dijkstra over 8-neighbours with unit / sqrt(2) steps."""
    h, w = passable.shape
    dist = {start: 0.0}
    pq = [(0.0, start)]
    while pq:
        d, (r, c) = heapq.heappop(pq)
        if (r, c) == goal:
            return d
        if d > dist[(r, c)]:
            continue
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == dc == 0:
                    continue
                nr, nc = r + dr, c + dc
                if not (0 <= nr < h and 0 <= nc < w) or not (passable[nr, nc] or (nr, nc) == goal):
                    continue
                nd = d + (math.sqrt(2.0) if dr and dc else 1.0)
                if nd < dist.get((nr, nc), math.inf):
                    dist[(nr, nc)] = nd
                    heapq.heappush(pq, (nd, (nr, nc)))
    return math.inf


def march_hits(heightmap, cell, x, y, yaw, cam_h, rays, max_range, step=0.004):
    """First point where each ray enters a heightmap column or the floor; NaN for no hit."""
    h, w = heightmap.shape
    c, s = math.cos(yaw), math.sin(yaw)
    out = np.full(rays.shape[:-1] + (3,), np.nan)
    t = np.arange(step, max_range, step)
    for idx in np.ndindex(rays.shape[:-1]):
        f, l, u = rays[idx]
        px = x + t * (c * f - s * l)
        py = y + t * (s * f + c * l)
        pz = cam_h + t * u
        r = np.floor(py / cell).astype(int)
        q = np.floor(px / cell).astype(int)
        inside = (r >= 0) & (r < h) & (q >= 0) & (q < w)
        top = np.where(inside, heightmap[np.clip(r, 0, h - 1), np.clip(q, 0, w - 1)], np.inf)
        hit = np.nonzero((pz <= 0.0) | (pz <= top))[0]
        if len(hit):
            i = hit[0]
            out[idx] = (px[i], py[i], max(pz[i], 0.0))
    return out


def sampled_sight(heights, cell, p0, p1, ignore=frozenset(), n=4000):
    """Segment clear of columns, checked at ``n`` evenly spaced points."""
    t = np.linspace(0.0, 1.0, n)
    x = p0[0] + t * (p1[0] - p0[0])
    y = p0[1] + t * (p1[1] - p0[1])
    z = p0[2] + t * (p1[2] - p0[2])
    r = np.floor(y / cell).astype(int)
    c = np.floor(x / cell).astype(int)
    for i in range(n):
        if (r[i], c[i]) in ignore:
            continue
        if not (0 <= r[i] < heights.shape[0] and 0 <= c[i] < heights.shape[1]):
            return False
        if z[i] <= heights[r[i], c[i]]:
            return False
    return True
