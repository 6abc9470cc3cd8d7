"""Numba kernels for grid geometry: ray traversal, 8-connected Dijkstra, and
the first-order upwind fast-marching eikonal solver.

All kernels operate on uint8 cell arrays indexed [ix, iy] with the state
convention UNKNOWN=0, FREE=1, OCCUPIED=2, and world coordinates mapped by
``ix = floor((x - origin_x) / resolution)``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

INF = 1e30


@njit(cache=True)
def world_to_cell(x, y, origin_x, origin_y, resolution):
    ix = int(math.floor((x - origin_x) / resolution))
    iy = int(math.floor((y - origin_y) / resolution))
    return ix, iy


@njit(cache=True)
def _ray_setup(x0, y0, dx, dy, origin_x, origin_y, resolution):
    """Amanatides-Woo initialization: cell indices, step signs, tMax, tDelta."""
    ix = int(math.floor((x0 - origin_x) / resolution))
    iy = int(math.floor((y0 - origin_y) / resolution))
    step_x = 1 if dx > 0 else (-1 if dx < 0 else 0)
    step_y = 1 if dy > 0 else (-1 if dy < 0 else 0)
    if dx != 0.0:
        nx = origin_x + (ix + (1 if step_x > 0 else 0)) * resolution
        t_max_x = (nx - x0) / dx
        t_delta_x = abs(resolution / dx)
    else:
        t_max_x = INF
        t_delta_x = INF
    if dy != 0.0:
        ny = origin_y + (iy + (1 if step_y > 0 else 0)) * resolution
        t_max_y = (ny - y0) / dy
        t_delta_y = abs(resolution / dy)
    else:
        t_max_y = INF
        t_delta_y = INF
    return ix, iy, step_x, step_y, t_max_x, t_max_y, t_delta_x, t_delta_y


@njit(cache=True)
def raycast_first_hit(cells, x0, y0, angle, max_range, origin_x, origin_y, resolution):
    """Distance along the ray to the first occupied cell, or inf within max_range."""
    dx = math.cos(angle)
    dy = math.sin(angle)
    w, h = cells.shape
    ix, iy, step_x, step_y, t_max_x, t_max_y, t_delta_x, t_delta_y = _ray_setup(
        x0, y0, dx, dy, origin_x, origin_y, resolution
    )
    t = 0.0
    while t <= max_range:
        if ix < 0 or iy < 0 or ix >= w or iy >= h:
            return INF
        if cells[ix, iy] == OCCUPIED and t > 0.0:
            return t
        if t_max_x < t_max_y:
            t = t_max_x
            t_max_x += t_delta_x
            ix += step_x
        else:
            t = t_max_y
            t_max_y += t_delta_y
            iy += step_y
    return INF


@njit(cache=True)
def segment_blocked(cells, x0, y0, x1, y1, origin_x, origin_y, resolution):
    """True when the open segment (x0,y0)->(x1,y1) crosses an occupied cell."""
    dx = x1 - x0
    dy = y1 - y0
    length = math.hypot(dx, dy)
    if length < 1e-12:
        return False
    dx /= length
    dy /= length
    w, h = cells.shape
    ix, iy, step_x, step_y, t_max_x, t_max_y, t_delta_x, t_delta_y = _ray_setup(
        x0, y0, dx, dy, origin_x, origin_y, resolution
    )
    t = 0.0
    while t < length:
        if 0 <= ix < w and 0 <= iy < h and cells[ix, iy] == OCCUPIED:
            return True
        if t_max_x < t_max_y:
            t = t_max_x
            t_max_x += t_delta_x
            ix += step_x
        else:
            t = t_max_y
            t_max_y += t_delta_y
            iy += step_y
    return False


@njit(cache=True)
def integrate_ray(cells, x0, y0, angle, hit_range, free_range, min_range,
                  origin_x, origin_y, resolution):
    """Mark cells free along one depth ray and the hit cell occupied.

    ``hit_range`` is the measured depth (inf for no return); free marking
    starts at ``min_range`` (closer cells were not sensed) and stops at the
    hit or at ``free_range``. Occupied cells never revert to free. Returns
    the number of cells whose state changed.
    """
    changed = 0
    dx = math.cos(angle)
    dy = math.sin(angle)
    w, h = cells.shape
    limit = hit_range if hit_range < free_range else free_range
    ix, iy, step_x, step_y, t_max_x, t_max_y, t_delta_x, t_delta_y = _ray_setup(
        x0, y0, dx, dy, origin_x, origin_y, resolution
    )
    t = 0.0
    while t < limit:
        t_enter = t
        if t_max_x < t_max_y:
            t_exit = t_max_x
            nix, niy = ix + step_x, iy
            t_max_x += t_delta_x
        else:
            t_exit = t_max_y
            nix, niy = ix, iy + step_y
            t_max_y += t_delta_y
        if 0 <= ix < w and 0 <= iy < h:
            # free only where the sensed interval actually covered the cell
            if t_exit > min_range and t_enter < limit:
                if cells[ix, iy] == UNKNOWN:
                    cells[ix, iy] = FREE
                    changed += 1
        ix, iy = nix, niy
        t = t_exit
    if hit_range < free_range and hit_range >= min_range:
        hx = x0 + dx * (hit_range + 0.5 * resolution)
        hy = y0 + dy * (hit_range + 0.5 * resolution)
        hix, hiy = world_to_cell(hx, hy, origin_x, origin_y, resolution)
        if 0 <= hix < w and 0 <= hiy < h:
            if cells[hix, hiy] != OCCUPIED:
                cells[hix, hiy] = OCCUPIED
                changed += 1
    return changed


# ---------------------------------------------------------------------------
# Binary heap shared by Dijkstra and fast marching
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _heap_push(keys, idxs, size, key, idx):
    i = size
    keys[i] = key
    idxs[i] = idx
    while i > 0:
        parent = (i - 1) // 2
        if keys[parent] <= keys[i]:
            break
        keys[parent], keys[i] = keys[i], keys[parent]
        idxs[parent], idxs[i] = idxs[i], idxs[parent]
        i = parent
    return size + 1


@njit(cache=True, inline="always")
def _heap_pop(keys, idxs, size):
    top_key = keys[0]
    top_idx = idxs[0]
    size -= 1
    keys[0] = keys[size]
    idxs[0] = idxs[size]
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        smallest = i
        if left < size and keys[left] < keys[smallest]:
            smallest = left
        if right < size and keys[right] < keys[smallest]:
            smallest = right
        if smallest == i:
            break
        keys[smallest], keys[i] = keys[i], keys[smallest]
        idxs[smallest], idxs[i] = idxs[i], idxs[smallest]
        i = smallest
    return top_key, top_idx, size


@njit(cache=True)
def dijkstra_field(cells, seed_ix, seed_iy, resolution, unknown_factor, occupied_blocked):
    """8-connected shortest-path field (meters) from a seed cell.

    Unknown cells cost ``unknown_factor`` times their metric length; occupied
    cells are impassable when ``occupied_blocked``.
    """
    w, h = cells.shape
    dist = np.full((w, h), INF, dtype=np.float64)
    n = w * h
    heap_keys = np.empty(8 * n + 8, dtype=np.float64)
    heap_idxs = np.empty(8 * n + 8, dtype=np.int64)
    size = 0
    if seed_ix < 0 or seed_iy < 0 or seed_ix >= w or seed_iy >= h:
        return dist
    dist[seed_ix, seed_iy] = 0.0
    size = _heap_push(heap_keys, heap_idxs, size, 0.0, seed_ix * h + seed_iy)
    diag = resolution * math.sqrt(2.0)
    while size > 0:
        d, idx, size = _heap_pop(heap_keys, heap_idxs, size)
        ix = idx // h
        iy = idx % h
        if d > dist[ix, iy]:
            continue
        for oy in range(-1, 2):
            for ox in range(-1, 2):
                if ox == 0 and oy == 0:
                    continue
                nx = ix + ox
                ny = iy + oy
                if nx < 0 or ny < 0 or nx >= w or ny >= h:
                    continue
                state = cells[nx, ny]
                if occupied_blocked and state == OCCUPIED:
                    continue
                step = diag if (ox != 0 and oy != 0) else resolution
                if state == UNKNOWN:
                    step *= unknown_factor
                nd = d + step
                if nd < dist[nx, ny]:
                    dist[nx, ny] = nd
                    if size < heap_keys.shape[0]:
                        size = _heap_push(heap_keys, heap_idxs, size, nd, nx * h + ny)
    return dist


@njit(cache=True)
def fmm_field(cells, seeds, resolution, unknown_factor):
    """First-order upwind fast-marching arrival field from seed cells.

    ``seeds`` is an (k, 2) int64 array of cell indices. Local slowness is 1
    in free cells and ``unknown_factor`` in unknown cells; occupied cells are
    never accepted. Arrival times are in meters.
    """
    w, h = cells.shape
    arrival = np.full((w, h), INF, dtype=np.float64)
    status = np.zeros((w, h), dtype=np.uint8)   # 0 far, 1 narrow, 2 accepted
    n = w * h
    heap_keys = np.empty(6 * n, dtype=np.float64)
    heap_idxs = np.empty(6 * n, dtype=np.int64)
    size = 0
    for s in range(seeds.shape[0]):
        ix, iy = seeds[s, 0], seeds[s, 1]
        if ix < 0 or iy < 0 or ix >= w or iy >= h:
            continue
        if cells[ix, iy] == OCCUPIED:
            continue
        arrival[ix, iy] = 0.0
        status[ix, iy] = 1
        size = _heap_push(heap_keys, heap_idxs, size, 0.0, ix * h + iy)
    while size > 0:
        t, idx, size = _heap_pop(heap_keys, heap_idxs, size)
        ix = idx // h
        iy = idx % h
        if status[ix, iy] == 2:
            continue
        status[ix, iy] = 2
        for k in range(4):
            if k == 0:
                nx, ny = ix + 1, iy
            elif k == 1:
                nx, ny = ix - 1, iy
            elif k == 2:
                nx, ny = ix, iy + 1
            else:
                nx, ny = ix, iy - 1
            if nx < 0 or ny < 0 or nx >= w or ny >= h:
                continue
            if status[nx, ny] == 2 or cells[nx, ny] == OCCUPIED:
                continue
            hx = INF
            if nx - 1 >= 0 and status[nx - 1, ny] == 2:
                hx = arrival[nx - 1, ny]
            if nx + 1 < w and status[nx + 1, ny] == 2 and arrival[nx + 1, ny] < hx:
                hx = arrival[nx + 1, ny]
            hy = INF
            if ny - 1 >= 0 and status[nx, ny - 1] == 2:
                hy = arrival[nx, ny - 1]
            if ny + 1 < h and status[nx, ny + 1] == 2 and arrival[nx, ny + 1] < hy:
                hy = arrival[nx, ny + 1]
            hcost = resolution * (unknown_factor if cells[nx, ny] == UNKNOWN else 1.0)
            if hx > hy:
                hx, hy = hy, hx
            if hy - hx >= hcost:
                cand = hx + hcost
            else:
                cand = 0.5 * (hx + hy + math.sqrt(2.0 * hcost * hcost - (hy - hx) * (hy - hx)))
            if cand < arrival[nx, ny]:
                arrival[nx, ny] = cand
                status[nx, ny] = 1
                if size < heap_keys.shape[0]:
                    size = _heap_push(heap_keys, heap_idxs, size, cand, nx * h + ny)
    return arrival


@njit(cache=True)
def nearest_clear_cell(cells, ix, iy, max_radius_cells):
    """Closest non-occupied cell to (ix, iy) within a cell radius, or (-1, -1)."""
    w, h = cells.shape
    if 0 <= ix < w and 0 <= iy < h and cells[ix, iy] != OCCUPIED:
        return ix, iy
    best_d2 = max_radius_cells * max_radius_cells + 1.0
    best_x, best_y = -1, -1
    r = int(math.ceil(max_radius_cells))
    for ox in range(-r, r + 1):
        for oy in range(-r, r + 1):
            nx, ny = ix + ox, iy + oy
            if nx < 0 or ny < 0 or nx >= w or ny >= h:
                continue
            if cells[nx, ny] == OCCUPIED:
                continue
            d2 = float(ox * ox + oy * oy)
            better = d2 < best_d2
            if d2 == best_d2 and (nx < best_x or (nx == best_x and ny < best_y)):
                better = True
            if better:
                best_d2 = d2
                best_x, best_y = nx, ny
    if best_d2 <= max_radius_cells * max_radius_cells:
        return best_x, best_y
    return -1, -1


@njit(cache=True)
def nearest_free_cell(cells, ix, iy, max_radius_cells):
    """Closest free cell to (ix, iy) within a Euclidean cell radius, or (-1, -1)."""
    w, h = cells.shape
    if 0 <= ix < w and 0 <= iy < h and cells[ix, iy] == FREE:
        return ix, iy
    best_d2 = max_radius_cells * max_radius_cells + 1.0
    best_x, best_y = -1, -1
    r = int(math.ceil(max_radius_cells))
    for ox in range(-r, r + 1):
        for oy in range(-r, r + 1):
            nx, ny = ix + ox, iy + oy
            if nx < 0 or ny < 0 or nx >= w or ny >= h:
                continue
            if cells[nx, ny] != FREE:
                continue
            d2 = float(ox * ox + oy * oy)
            better = d2 < best_d2
            if d2 == best_d2 and (nx < best_x or (nx == best_x and ny < best_y)):
                better = True
            if better:
                best_d2 = d2
                best_x, best_y = nx, ny
    if best_d2 <= max_radius_cells * max_radius_cells:
        return best_x, best_y
    return -1, -1
