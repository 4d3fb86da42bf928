"""Non-dominated sorting and crowding distance (both objectives maximized)."""

from __future__ import annotations

import numpy as np

__all__ = ["dominates", "fast_nondominated_sort", "crowding_distance"]


def dominates(a, b) -> bool:
    """True if ``a`` is no worse than ``b`` everywhere and better somewhere."""
    a = np.asarray(a)
    b = np.asarray(b)
    return bool(np.all(a >= b) and np.any(a > b))


def fast_nondominated_sort(objectives) -> list[list[int]]:
    """Partition indices into Pareto fronts, best front first."""
    F = np.asarray(objectives, dtype=np.float64)
    if F.size == 0:
        return []
    if F.ndim != 2:
        raise ValueError("objectives must be a 2-D array (individuals x objectives)")
    ge = np.all(F[:, None, :] >= F[None, :, :], axis=2)
    gt = np.any(F[:, None, :] > F[None, :, :], axis=2)
    dom = ge & gt  # dom[i, j]: i dominates j
    counts = dom.sum(axis=0)
    fronts = []
    current = [int(i) for i in np.flatnonzero(counts == 0)]
    while current:
        fronts.append(current)
        nxt = []
        for p in current:
            for q in np.flatnonzero(dom[p]):
                counts[q] -= 1
                if counts[q] == 0:
                    nxt.append(int(q))
        current = sorted(nxt)
    return fronts


def crowding_distance(front_objectives) -> np.ndarray:
    """Crowding distance of each member of one front; boundary points get +inf."""
    F = np.asarray(front_objectives, dtype=np.float64)
    n = F.shape[0]
    if n == 0:
        return np.zeros(0)
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for m in range(F.shape[1]):
        order = np.argsort(F[:, m], kind="stable")
        values = F[order, m]
        dist[order[0]] = dist[order[-1]] = np.inf
        span = values[-1] - values[0]
        if span > 0:
            dist[order[1:-1]] += (values[2:] - values[:-2]) / span
    return dist
