"""Compiled inner loops: heightmap ray casting, free-space carving, grid Dijkstra."""
from __future__ import annotations

import heapq
import math

import numba
import numpy as np

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

SQRT2 = math.sqrt(2.0)


@numba.njit(cache=True)
def raycast(heights, split, id_low, id_top, cell, cam_x, cam_y, cam_z, dirs, max_range):
    """March unit rays through a grid of vertical columns.

    Returns per-ray range (``inf`` when nothing is hit within ``max_range``),
    the hit height and the instance index of the hit layer (-1 for none/walls).
    Cells outside the grid are treated as empty space.
    """
    n = dirs.shape[0]
    rows, cols = heights.shape
    ranges = np.full(n, np.inf)
    zs = np.zeros(n)
    ids = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        dx = dirs[k, 0]
        dy = dirs[k, 1]
        dz = dirs[k, 2]
        h = math.sqrt(dx * dx + dy * dy)
        ix = int(math.floor(cam_x / cell))
        iy = int(math.floor(cam_y / cell))
        if h < 1e-12:
            if dz < 0 and 0 <= ix < cols and 0 <= iy < rows:
                top = heights[iy, ix]
                r = (cam_z - top) / (-dz)
                if r <= max_range:
                    ranges[k] = r
                    zs[k] = top
                    ids[k] = id_top[iy, ix]
            continue
        ux = dx / h
        uy = dy / h
        slope = dz / h
        s_max = max_range * h
        if ux > 0:
            step_x = 1
            t_max_x = ((ix + 1) * cell - cam_x) / ux
            t_dx = cell / ux
        elif ux < 0:
            step_x = -1
            t_max_x = (ix * cell - cam_x) / ux
            t_dx = -cell / ux
        else:
            step_x = 0
            t_max_x = np.inf
            t_dx = np.inf
        if uy > 0:
            step_y = 1
            t_max_y = ((iy + 1) * cell - cam_y) / uy
            t_dy = cell / uy
        elif uy < 0:
            step_y = -1
            t_max_y = (iy * cell - cam_y) / uy
            t_dy = -cell / uy
        else:
            step_y = 0
            t_max_y = np.inf
            t_dy = np.inf
        s_in = 0.0
        while True:
            if ix < 0 or iy < 0 or ix >= cols or iy >= rows:
                break
            top = heights[iy, ix]
            s_out = min(t_max_x, t_max_y)
            z_in = cam_z + slope * s_in
            s_hit = -1.0
            z_hit = 0.0
            if s_in > 0.0 and z_in <= top:
                s_hit = s_in
                z_hit = z_in
            elif slope < 0.0:
                z_out = cam_z + slope * s_out
                if z_out <= top:
                    s_hit = (top - cam_z) / slope
                    if s_hit < s_in:
                        s_hit = s_in
                    z_hit = top
            if s_hit >= 0.0:
                r = s_hit / h
                if r <= max_range:
                    ranges[k] = r
                    zs[k] = z_hit
                    if z_hit < split[iy, ix]:
                        ids[k] = id_low[iy, ix]
                    else:
                        ids[k] = id_top[iy, ix]
                break
            if s_out > s_max:
                break
            if t_max_x < t_max_y:
                ix += step_x
                s_in = t_max_x
                t_max_x += t_dx
            else:
                iy += step_y
                s_in = t_max_y
                t_max_y += t_dy
    return ranges, zs, ids


@numba.njit(cache=True)
def _walk_free(state, frame_occ, row0, col0, res, x0, y0, x1, y1):
    """Mark every cell crossed by the 2-D segment as free (2-D DDA)."""
    rows, cols = state.shape
    ix = int(math.floor(x0 / res))
    iy = int(math.floor(y0 / res))
    ex = int(math.floor(x1 / res))
    ey = int(math.floor(y1 / res))
    dx = x1 - x0
    dy = y1 - y0
    if dx > 0:
        sx = 1
        tmx = ((ix + 1) * res - x0) / dx
        tdx = res / dx
    elif dx < 0:
        sx = -1
        tmx = (ix * res - x0) / dx
        tdx = -res / dx
    else:
        sx = 0
        tmx = np.inf
        tdx = np.inf
    if dy > 0:
        sy = 1
        tmy = ((iy + 1) * res - y0) / dy
        tdy = res / dy
    elif dy < 0:
        sy = -1
        tmy = (iy * res - y0) / dy
        tdy = -res / dy
    else:
        sy = 0
        tmy = np.inf
        tdy = np.inf
    n_steps = abs(ex - ix) + abs(ey - iy)
    for _ in range(n_steps + 1):
        r = iy - row0
        c = ix - col0
        if 0 <= r < rows and 0 <= c < cols:
            if state[r, c] != OCCUPIED and not frame_occ[r, c]:
                state[r, c] = FREE
        if tmx > 1.0 and tmy > 1.0:
            break
        if tmx < tmy:
            ix += sx
            tmx += tdx
        else:
            iy += sy
            tmy += tdy


@numba.njit(cache=True)
def register(state, row0, col0, res, cam_x, cam_y, seg_ends, free_pts, occ_pts):
    """Fuse one frame of evidence into ``state`` in place.

    Occupied evidence from this frame and earlier frames is never carved free.
    """
    rows, cols = state.shape
    frame_occ = np.zeros((rows, cols), dtype=np.bool_)
    for k in range(occ_pts.shape[0]):
        r = int(math.floor(occ_pts[k, 1] / res)) - row0
        c = int(math.floor(occ_pts[k, 0] / res)) - col0
        if 0 <= r < rows and 0 <= c < cols:
            frame_occ[r, c] = True
    for k in range(seg_ends.shape[0]):
        _walk_free(state, frame_occ, row0, col0, res, cam_x, cam_y, seg_ends[k, 0], seg_ends[k, 1])
    for k in range(free_pts.shape[0]):
        r = int(math.floor(free_pts[k, 1] / res)) - row0
        c = int(math.floor(free_pts[k, 0] / res)) - col0
        if 0 <= r < rows and 0 <= c < cols:
            if state[r, c] != OCCUPIED and not frame_occ[r, c]:
                state[r, c] = FREE
    for r in range(rows):
        for c in range(cols):
            if frame_occ[r, c]:
                state[r, c] = OCCUPIED


@numba.njit(cache=True)
def dijkstra_multi(passable, seeds):
    """8-connected Dijkstra in cell units (diagonal = sqrt 2) from every row of ``seeds``.

    Heap entries are (dist, row, col) so equal-cost pops resolve row-major.
    Seeds are distance 0 whether or not they are passable.
    """
    rows, cols = passable.shape
    dist = np.full((rows, cols), np.inf)
    done = np.zeros((rows, cols), dtype=np.bool_)
    heap = [(0.0, 0, 0)]
    heap.pop()
    for k in range(seeds.shape[0]):
        sr, sc = seeds[k, 0], seeds[k, 1]
        if dist[sr, sc] > 0.0:
            dist[sr, sc] = 0.0
            heapq.heappush(heap, (0.0, sr, sc))
    while len(heap) > 0:
        d, r, c = heapq.heappop(heap)
        if done[r, c]:
            continue
        done[r, c] = True
        for dr in range(-1, 2):
            for dc in range(-1, 2):
                if dr == 0 and dc == 0:
                    continue
                nr = r + dr
                nc = c + dc
                if nr < 0 or nc < 0 or nr >= rows or nc >= cols:
                    continue
                if not passable[nr, nc] or done[nr, nc]:
                    continue
                w = SQRT2 if dr != 0 and dc != 0 else 1.0
                nd = d + w
                if nd < dist[nr, nc]:
                    dist[nr, nc] = nd
                    heapq.heappush(heap, (nd, nr, nc))
    return dist


def dijkstra(passable, sr, sc):
    """Single-source version of :func:`dijkstra_multi`."""
    return dijkstra_multi(passable, np.array([[sr, sc]], dtype=np.int64))


NEIGHBOR_ORDER = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def backtrack(dist: np.ndarray, passable: np.ndarray, start, goal) -> list[tuple[int, int]]:
    """Recover a shortest path from a distance field.

    Walking back from ``goal``, the first neighbour in lexicographic (dr, dc)
    order that lies on a shortest path is taken, which fixes tie-breaking
    independently of heap internals.
    """
    path = [goal]
    cur = goal
    rows, cols = dist.shape
    while cur != start:
        r, c = cur
        for dr, dc in NEIGHBOR_ORDER:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < rows and 0 <= nc < cols):
                continue
            if not passable[nr, nc] and (nr, nc) != start:
                continue
            w = SQRT2 if dr and dc else 1.0
            if abs(dist[nr, nc] + w - dist[r, c]) < 1e-9:
                cur = (nr, nc)
                break
        else:  # pragma: no cover - dist field inconsistent
            raise RuntimeError("broken distance field while backtracking")
        path.append(cur)
    path.reverse()
    return path
