"""First-order fast marching for ``|grad T| = s`` on uniform 1D/2D grids."""
from __future__ import annotations

import heapq
import math

import numpy as np

__all__ = ["fast_marching"]


def _neighbours_2d(n: int):
    out = []
    for k in range(n * n):
        i, j = divmod(k, n)
        xs = [k - n] if i > 0 else []
        if i < n - 1:
            xs.append(k + n)
        ys = [k - 1] if j > 0 else []
        if j < n - 1:
            ys.append(k + 1)
        out.append((xs, ys))
    return out


_NEIGHBOUR_CACHE: dict[int, list] = {}


def _source_ball(shape, src: int, radius: int):
    """Flat indices and distances (in cells) of nodes near the source."""
    if radius <= 0:
        return []
    if len(shape) == 1:
        n = shape[0]
        return [(k, float(abs(k - src))) for k in range(max(0, src - radius), min(n, src + radius + 1)) if k != src]
    n = shape[0]
    i0, j0 = divmod(src, n)
    out = []
    for i in range(max(0, i0 - radius), min(n, i0 + radius + 1)):
        for j in range(max(0, j0 - radius), min(n, j0 + radius + 1)):
            if (i, j) != (i0, j0):
                out.append((i * n + j, math.hypot(i - i0, j - j0)))
    return out


def fast_marching(
    slowness: np.ndarray,
    spacing: float,
    source,
    return_order: bool = False,
    init_radius: int = 2,
):
    """Travel times from a grid-node source.

    Parameters
    ----------
    slowness : ndarray
        Positive slowness on the full node grid, shape ``(n,)`` or ``(n, n)``.
    spacing : float
        Grid spacing ``h``.
    source : int or tuple of int
        Grid index of the source node ``x0``; ``T(x0) = 0``.
    return_order : bool
        Also return the travel times in acceptance order.
    init_radius : int
        Nodes within this many cells (max-norm) of the source start as trial
        values ``0.5 (s(x0) + s(x)) |x - x0|``. This removes the logarithmic
        error growth of first-order marching from a point source.

    Nodes are accepted in increasing ``T`` from a binary heap. Each trial value
    solves the Godunov upwind quadratic using accepted neighbours only, so
    boundary nodes use one-sided differences.
    """
    s = np.asarray(slowness, dtype=float)
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        bad = int(np.argmax(~np.isfinite(s.ravel()) | (s.ravel() <= 0)))
        raise ValueError(f"slowness must be positive and finite (node {bad})")
    if s.ndim == 1:
        n = s.size
        neighbours = [([k - 1] if k > 0 else []) + ([k + 1] if k < n - 1 else []) for k in range(n)]
        neighbours = [(nb, []) for nb in neighbours]
        src = int(np.ravel(source)[0]) if np.ndim(source) else int(source)
    elif s.ndim == 2 and s.shape[0] == s.shape[1]:
        n = s.shape[0]
        if n not in _NEIGHBOUR_CACHE:
            _NEIGHBOUR_CACHE[n] = _neighbours_2d(n)
        neighbours = _NEIGHBOUR_CACHE[n]
        i0, j0 = source
        src = int(i0) * n + int(j0)
    else:
        raise ValueError(f"unsupported slowness grid shape {s.shape}")

    sh = (s * spacing).ravel().tolist()
    size = len(sh)
    inf = math.inf
    T = [inf] * size
    accepted = [False] * size
    T[src] = 0.0
    heap = [(0.0, src)]
    for k, dist in _source_ball(s.shape, src, init_radius):
        T[k] = 0.5 * (sh[src] + sh[k]) * dist
        heap.append((T[k], k))
    heapq.heapify(heap)
    order = []
    while heap:
        t, k = heapq.heappop(heap)
        if accepted[k]:
            continue
        accepted[k] = True
        order.append(t)
        for axis_nb in neighbours[k]:
            for m in axis_nb:
                if accepted[m]:
                    continue
                a = inf
                b = inf
                xs, ys = neighbours[m]
                for q in xs:
                    if accepted[q] and T[q] < a:
                        a = T[q]
                for q in ys:
                    if accepted[q] and T[q] < b:
                        b = T[q]
                f = sh[m]
                if b == inf or a == inf or abs(a - b) >= f:
                    new = min(a, b) + f
                else:
                    new = 0.5 * (a + b + math.sqrt(2.0 * f * f - (a - b) ** 2))
                if new < T[m]:
                    T[m] = new
                    heapq.heappush(heap, (new, m))
    out = np.asarray(T).reshape(s.shape)
    if return_order:
        return out, np.asarray(order)
    return out
