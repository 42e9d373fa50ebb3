import numpy as np
import pytest
from hypothesis import strategies as st

from avalanche.geometry import ManifoldPoint


def brute_force_stabilize(grid, threshold=4):
    """Scan-until-fixed-point toppling, one toppling at a time.

    Deliberately shares nothing with the FIFO kernel.  Returns the stable
    grid, the number of topplings and the grains lost over the edge.
    """
    g = [list(map(int, row)) for row in np.asarray(grid)]
    h, w = len(g), len(g[0])
    topplings = lost = 0
    changed = True
    while changed:
        changed = False
        for y in range(h):
            for x in range(w):
                if g[y][x] >= threshold:
                    g[y][x] -= 4
                    topplings += 1
                    changed = True
                    for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
                        if 0 <= nx < w and 0 <= ny < h:
                            g[ny][nx] += 1
                        else:
                            lost += 1
    return np.array(g, dtype=np.int64), topplings, lost


@pytest.fixture
def brute_stabilize():
    return brute_force_stabilize


sigmas = st.floats(min_value=0.1, max_value=10.0, allow_nan=False)
mus = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)
points = st.builds(ManifoldPoint, mus, sigmas)


def random_point(rng, mu_max=10.0, sigma_lo=0.1, sigma_hi=10.0):
    return ManifoldPoint(float(rng.uniform(-mu_max, mu_max)), float(rng.uniform(sigma_lo, sigma_hi)))
