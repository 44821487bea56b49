"""Independent reference implementations used only by the test suite.

These deliberately share no code with the library: grid persistence by
level-by-level flood fill, Wasserstein by exhaustive matching enumeration,
bilinear interpolation written out directly, and so on. They are slow and
simple on purpose.
"""

import itertools
import math

import numpy as np


def floodfill_pd0(values2d, connectivity=4):
    """0D sublevel persistence of a grid by thresholding and flood fill.

    For each distinct level, label the components of {f <= level} (ties
    resolved exactly like the sweep: a cell belongs to the sublevel set once
    its value is <= level). Component identity is tracked by the component's
    birth cell: the minimal (value, index) cell it contains. A component
    "dies" at the first level where its birth cell shares a label with an
    older birth cell. Returns (finite pairs, essential births) where pairs
    are (birth, death, birth_cell, death_cell=None) -- the flood fill knows
    deaths' levels, not saddles, so only levels are compared.
    """
    arr = np.asarray(values2d, dtype=float)
    h, w = arr.shape
    flat = arr.reshape(-1)
    levels = sorted(set(flat.tolist()))

    def neighbors(i):
        y, x = divmod(i, w)
        out = []
        if x > 0:
            out.append(i - 1)
        if x + 1 < w:
            out.append(i + 1)
        if y > 0:
            out.append(i - w)
        if y + 1 < h:
            out.append(i + w)
        if connectivity == 8:
            if x > 0 and y > 0:
                out.append(i - w - 1)
            if x + 1 < w and y > 0:
                out.append(i - w + 1)
            if x > 0 and y + 1 < h:
                out.append(i + w - 1)
            if x + 1 < w and y + 1 < h:
                out.append(i + w + 1)
        return out

    def label_components(level):
        mask = flat <= level
        label = [-1] * (h * w)
        comps = []
        for start in range(h * w):
            if not mask[start] or label[start] != -1:
                continue
            comp = []
            stack = [start]
            label[start] = len(comps)
            while stack:
                c = stack.pop()
                comp.append(c)
                for nb in neighbors(c):
                    if mask[nb] and label[nb] == -1:
                        label[nb] = len(comps)
                        stack.append(nb)
            comps.append(comp)
        return label, comps

    # birth cell of a component = cell minimizing (value, index)
    def birth_cell_of(comp):
        return min(comp, key=lambda c: (flat[c], c))

    alive = {}  # birth_cell -> birth value
    finite = []
    for level in levels:
        label, comps = label_components(level)
        present = {}
        for comp in comps:
            bc = birth_cell_of(comp)
            present[bc] = comp
        # components whose birth cell appears for the first time
        for bc in present:
            if bc not in alive and flat[bc] == level:
                alive[bc] = float(flat[bc])
        # previously alive components whose birth cell no longer labels a
        # component died at this level (they merged into an older one)
        for bc in list(alive):
            if bc not in present:
                finite.append((alive[bc], float(level), bc))
                del alive[bc]
    essentials = sorted((v, bc) for bc, v in alive.items())
    finite.sort()
    return finite, essentials


def brute_force_wasserstein(pts1, pts2, p=1.0):
    """Exact p-Wasserstein by enumerating all partial matchings.

    Points are (birth, death) tuples; unmatched points pair with their
    orthogonal diagonal projection. Feasible only for tiny diagrams.
    """

    def ground(a, b):
        return math.hypot(a[0] - b[0], a[1] - b[1])

    def diag(a):
        return abs(a[1] - a[0]) / math.sqrt(2.0)

    n, m = len(pts1), len(pts2)
    best = math.inf
    for k in range(min(n, m) + 1):
        for sub1 in itertools.combinations(range(n), k):
            for sub2 in itertools.permutations(range(m), k):
                cost = 0.0
                for i, j in zip(sub1, sub2):
                    cost += ground(pts1[i], pts2[j]) ** p
                for i in range(n):
                    if i not in sub1:
                        cost += diag(pts1[i]) ** p
                matched2 = set(sub2)
                for j in range(m):
                    if j not in matched2:
                        cost += diag(pts2[j]) ** p
                best = min(best, cost)
    return best ** (1.0 / p)


def bilinear_at(grid2d, fx, fy):
    """Direct bilinear interpolation at fractional pixel coords (clamped)."""
    g = np.asarray(grid2d, dtype=float)
    ny, nx = g.shape
    fx = min(max(fx, 0.0), nx - 1.0)
    fy = min(max(fy, 0.0), ny - 1.0)
    x0, y0 = int(math.floor(fx)), int(math.floor(fy))
    x1, y1 = min(x0 + 1, nx - 1), min(y0 + 1, ny - 1)
    tx, ty = fx - x0, fy - y0
    top = g[y0, x0] * (1 - tx) + g[y0, x1] * tx
    bot = g[y1, x0] * (1 - tx) + g[y1, x1] * tx
    return top * (1 - ty) + bot * ty


def gaussian_mass_in_box(cx, cy, sigma, x0, x1, y0, y1):
    """Mass of an isotropic Gaussian inside a rectangle, via erf."""

    def cdf(t):
        return 0.5 * (1.0 + math.erf(t / math.sqrt(2.0)))

    mx = cdf((x1 - cx) / sigma) - cdf((x0 - cx) / sigma)
    my = cdf((y1 - cy) / sigma) - cdf((y0 - cy) / sigma)
    return mx * my
