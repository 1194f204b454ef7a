"""Independent reference implementations used only by the tests.

Each oracle is deliberately naive (explicit loops, full sorts, grid search) and
shares no code with the package under test.
"""

from __future__ import annotations

import math

import numpy as np


def pnorm_loop(x, p):
    return sum(abs(float(v)) ** p for v in x) ** (1.0 / p)


def distances_loop(panel, p):
    n = len(panel)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = pnorm_loop([a - b for a, b in zip(panel[i], panel[j])], p)
    return out


def krum_scores_bruteforce(panel, p, f):
    """Score of worker i: sum of the n-f-2 smallest squared distances to the others."""
    n = len(panel)
    k = n - f - 2
    scores = []
    for i in range(n):
        dists = []
        for j in range(n):
            if j == i:
                continue
            s = 0.0
            for a, b in zip(panel[i], panel[j]):
                s += abs(a - b) ** p
            dists.append(s ** (2.0 / p))
        dists.sort()
        scores.append(sum(dists[:k]))
    return scores


def krum_index_bruteforce(panel, p, f):
    scores = krum_scores_bruteforce(panel, p, f)
    best = min(scores)
    return scores.index(best), scores


def median_sort(panel):
    panel = np.asarray(panel, dtype=float)
    n, d = panel.shape
    out = []
    for c in range(d):
        col = sorted(panel[:, c])
        if n % 2:
            out.append(col[n // 2])
        else:
            out.append((col[n // 2 - 1] + col[n // 2]) / 2.0)
    return np.array(out)


def trimmed_mean_sort(panel, t):
    panel = np.asarray(panel, dtype=float)
    n, d = panel.shape
    out = []
    for c in range(d):
        col = sorted(panel[:, c])[t:n - t]
        out.append(sum(col) / len(col))
    return np.array(out)


def geomedian_grid_2d(points, levels=12, size=201):
    """Zooming grid search for argmin_z sum ||z - x_i||_2 in two dimensions.

    The objective is convex, so refining a square window around the best grid
    point converges to the minimiser; each level shrinks the window by 10x.
    """
    pts = np.asarray(points, dtype=float)

    def objective(z):  # z: (m, 2)
        return np.sqrt(((z[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)).sum(axis=1)

    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = (lo + hi) / 2.0
    half = max(float((hi - lo).max()) / 2.0, 1e-12)
    best = center
    for _ in range(levels):
        xs = np.linspace(center[0] - half, center[0] + half, size)
        ys = np.linspace(center[1] - half, center[1] + half, size)
        gx, gy = np.meshgrid(xs, ys)
        grid = np.column_stack([gx.ravel(), gy.ravel()])
        best = grid[int(np.argmin(objective(grid)))]
        center = best
        half /= 10.0
    return best


def geomedian_objective(points, z):
    pts = np.asarray(points, dtype=float)
    return float(np.sqrt(((pts - z) ** 2).sum(axis=1)).sum())


def norm_phi_inv(p):
    """Inverse standard normal CDF by bisection on erf (independent of statistics.NormalDist)."""
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0
