"""Compiled inner loops for the lattice sandpile.

Falls back to plain Python when numba is missing; results are identical,
only slower.
"""

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


MAX_TOPPLING_STEPS = 100_000_000


@njit(cache=True)
def relax(grid, width, height, threshold, queue, n_queued):
    """Topple every site listed in ``queue[:n_queued]`` until the grid is stable.

    ``grid`` is the flattened (row-major) height array and is modified in
    place.  ``queue`` is a ring buffer of capacity ``width * height``; a site
    is enqueued only when it crosses the threshold, so it never holds a site
    twice.  Returns ``(topplings, grains_lost)``; ``topplings`` is -1 if the
    tripwire on queue pops fired.
    """
    cap = width * height
    head = 0
    count = n_queued
    topplings = 0
    lost = 0
    pops = 0
    while count > 0:
        site = queue[head]
        head += 1
        if head == cap:
            head = 0
        count -= 1
        pops += 1
        if pops > MAX_TOPPLING_STEPS:
            return -1, lost
        h = grid[site]
        if h < threshold:
            continue
        k = (h - threshold) // 4 + 1
        grid[site] = h - 4 * k
        topplings += k
        x = site % width
        y = site // width
        for d in range(4):
            if d == 0:
                nx, ny = x - 1, y
            elif d == 1:
                nx, ny = x + 1, y
            elif d == 2:
                nx, ny = x, y - 1
            else:
                nx, ny = x, y + 1
            if nx < 0 or nx >= width or ny < 0 or ny >= height:
                lost += k
                continue
            nb = ny * width + nx
            before = grid[nb]
            grid[nb] = before + k
            if before < threshold and before + k >= threshold:
                tail = head + count
                if tail >= cap:
                    tail -= cap
                queue[tail] = nb
                count += 1
    return topplings, lost


@njit(cache=True)
def drive(grid, width, height, threshold, sites, t0, out_time, out_size, out_lost):
    """Drop one grain on each of ``sites`` in order, relaxing after each.

    Events are written to the ``out_*`` arrays; returns the number of events,
    or ``-(i + 1)`` if the tripwire fired while relaxing grain ``i``.
    """
    queue = np.empty(width * height, dtype=np.int64)
    n_events = 0
    for i in range(sites.size):
        site = sites[i]
        grid[site] += 1
        if grid[site] < threshold:
            continue
        queue[0] = site
        size, lost = relax(grid, width, height, threshold, queue, 1)
        if size < 0:
            return -(i + 1)
        out_time[n_events] = t0 + i
        out_size[n_events] = size
        out_lost[n_events] = lost
        n_events += 1
    return n_events
