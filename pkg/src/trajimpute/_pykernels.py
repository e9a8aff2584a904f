"""Pure-Python implementations of the hot kernels.

Semantics (and floating-point operation order) mirror ``_ckernels.pyx`` so the
two backends agree bit for bit on every output.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geo import haversine_coords

BACKEND = "python"
DAY_S = 86400.0


def stay_labels(t, lat, lon, radius: float, min_duration: float) -> np.ndarray:
    """Greedy stay clustering: label per fix (stay ordinal or -1 for track).

    A cluster grows while each next fix is within ``radius`` of the running
    arithmetic-mean centroid; it becomes a stay once its time span reaches
    ``min_duration``.
    """
    n = len(t)
    labels = np.full(n, -1, dtype=np.int64)
    t = [float(x) for x in t]
    lat = [float(x) for x in lat]
    lon = [float(x) for x in lon]
    i = 0
    k = 0
    while i < n:
        slat = lat[i]
        slon = lon[i]
        c = 1
        j = i + 1
        while j < n:
            if haversine_coords(slat / c, slon / c, lat[j], lon[j]) > radius:
                break
            slat += lat[j]
            slon += lon[j]
            c += 1
            j += 1
        if t[j - 1] - t[i] >= min_duration:
            labels[i:j] = k
            k += 1
            i = j
        else:
            i += 1
    return labels


def dtw_accumulate(cost, allowed, open_begin: bool, diagonal_only: bool) -> np.ndarray:
    """Accumulated-cost matrix; disallowed cells and unreachable cells are +inf."""
    cost = np.asarray(cost, dtype=float)
    allowed = np.asarray(allowed, dtype=bool)
    n, m = cost.shape
    inf = math.inf
    acc = np.full((n, m), inf)
    a = acc.tolist()
    c = cost.tolist()
    ok = allowed.tolist()
    for j in range(m):
        if not ok[0][j]:
            continue
        if open_begin or j == 0:
            a[0][j] = c[0][j]
        elif not diagonal_only and a[0][j - 1] != inf:
            a[0][j] = c[0][j] + a[0][j - 1]
    for i in range(1, n):
        prev = a[i - 1]
        row = a[i]
        crow = c[i]
        okrow = ok[i]
        for j in range(m):
            if not okrow[j]:
                continue
            best = prev[j - 1] if j > 0 else inf
            if not diagonal_only:
                if prev[j] < best:
                    best = prev[j]
                if j > 0 and row[j - 1] < best:
                    best = row[j - 1]
            if best != inf:
                row[j] = crow[j] + best
    return np.array(a, dtype=float)


def placement_scores(donor, dclock, qvals, qclock, n_pre: int, gap_len: int, window: float) -> np.ndarray:
    """One-to-one buffer dissimilarity for every placement of the query window.

    The query window is ``n_pre`` buffer elements, ``gap_len`` gap elements and
    the remaining post-buffer elements. A placement ``p`` aligns query element
    ``k`` with donor element ``p + k``. Infeasible placements score +inf: any
    non-finite donor value in the window, or (``window >= 0``) a circular
    time-of-day offset above ``window`` for any aligned pair.
    """
    donor = np.asarray(donor, dtype=float)
    dclock = np.asarray(dclock, dtype=float)
    qvals = np.asarray(qvals, dtype=float)
    qclock = np.asarray(qclock, dtype=float)
    length = len(qvals)
    n_place = len(donor) - length + 1
    if n_place <= 0 or length == 0:
        return np.full(max(n_place, 0), np.inf)
    feasible = sliding_window_view(np.isfinite(donor), length).all(axis=1)
    if window >= 0:
        for k in range(length):
            d = np.abs(dclock[k : k + n_place] - qclock[k]) % DAY_S
            feasible &= np.minimum(d, DAY_S - d) <= window
    pre = np.zeros(n_place)
    for k in range(n_pre):
        pre = pre + np.abs(qvals[k] - donor[k : k + n_place])
    post = np.zeros(n_place)
    for k in range(n_pre + gap_len, length):
        post = post + np.abs(qvals[k] - donor[k : k + n_place])
    with np.errstate(invalid="ignore"):
        score = pre + post
    return np.where(feasible, score, np.inf)
