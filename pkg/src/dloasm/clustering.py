"""Deterministic density-based clustering over 3D point sets."""
from __future__ import annotations

from collections import deque

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInput


def dbscan_labels(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN labels in first-touch order; -1 marks noise.

    Core points have >= min_pts neighbors within eps (self included).
    Border points join the first cluster whose expansion reaches them, so
    labeling is a pure function of point order.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if eps <= 0:
        raise DegenerateInput("eps must be positive")
    if min_pts < 1:
        raise DegenerateInput("min_pts must be >= 1")
    n = len(pts)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    tree = cKDTree(pts)
    neighborhoods = [sorted(nb) for nb in tree.query_ball_point(pts, r=eps)]
    core = [len(nb) >= min_pts for nb in neighborhoods]
    lab = [-1] * n
    cid = 0
    for i in range(n):
        if lab[i] != -1 or not core[i]:
            continue
        lab[i] = cid
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for k in neighborhoods[j]:
                if lab[k] == -1:
                    lab[k] = cid
                    if core[k]:
                        queue.append(k)
        cid += 1
    labels[:] = lab
    return labels


def dbscan(points: np.ndarray, eps: float, min_pts: int):
    """Cluster points; returns (clusters, noise, labels).

    Clusters are point arrays sorted by size descending, ties broken by the
    lexicographically smallest member point; labels are renumbered to match
    that order (-1 = noise).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    labels = dbscan_labels(pts, eps, min_pts)
    ids = [cid for cid in range(labels.max() + 1)] if labels.size else []
    def sort_key(cid):
        members = pts[labels == cid]
        first = min(map(tuple, members))
        return (-len(members), first)
    order = sorted(ids, key=sort_key)
    remap = {old: new for new, old in enumerate(order)}
    new_labels = np.array([remap.get(l, -1) for l in labels], dtype=int)
    clusters = [pts[new_labels == cid] for cid in range(len(order))]
    noise = pts[new_labels == -1]
    return clusters, noise, new_labels
