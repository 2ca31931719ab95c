"""Independent reference implementations used to cross-check the package.

These are deliberately written in the most literal way possible (quadratic
scans, textbook formulas) and must not import package internals beyond the
public data types.
"""
import numpy as np


def brute_force_dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Textbook DBSCAN over an O(n^2) distance matrix, expanding clusters in
    first-touch order exactly like the library contract describes."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    labels = [-1] * n
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    neighborhoods = [np.nonzero(dist[i] <= eps)[0].tolist() for i in range(n)]
    core = [len(nb) >= min_pts for nb in neighborhoods]
    cid = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cid
        frontier = [i]
        while frontier:
            j = frontier.pop(0)
            for k in sorted(neighborhoods[j]):
                if labels[k] == -1:
                    labels[k] = cid
                    if core[k]:
                        frontier.append(k)
        cid += 1
    return np.asarray(labels, dtype=int)


def labelings_equivalent(a: np.ndarray, b: np.ndarray) -> bool:
    """True when two labelings agree up to a renaming of cluster ids, with
    noise (-1) mapped to noise."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        return False
    if ((a == -1) != (b == -1)).any():
        return False
    mapping = {}
    reverse = {}
    for x, y in zip(a.tolist(), b.tolist()):
        if x == -1:
            continue
        if mapping.setdefault(x, y) != y:
            return False
        if reverse.setdefault(y, x) != x:
            return False
    return True


def disk_insertion_probability(tolerance: float, sigma: float) -> float:
    """P(|(X, Y)| <= tol) for X, Y iid N(0, sigma^2), from the Rayleigh CDF."""
    if sigma <= 0:
        return 1.0
    return 1.0 - float(np.exp(-(tolerance ** 2) / (2.0 * sigma ** 2)))


def directed_hausdorff(points_a: np.ndarray, polyline_b) -> float:
    """max over a in A of distance(a, B) with B a Polyline3D, measured against
    the continuous segments of B (independent of the library's nearest_arc)."""
    pts = np.asarray(points_a, dtype=float)
    b = np.asarray(polyline_b.points, dtype=float)
    seg_a = b[:-1]
    seg_d = b[1:] - b[:-1]
    len2 = np.einsum("ij,ij->i", seg_d, seg_d)
    worst = 0.0
    for p in pts:
        t = np.clip(np.einsum("ij,ij->i", p - seg_a, seg_d) / len2, 0.0, 1.0)
        proj = seg_a + t[:, None] * seg_d
        d = np.min(np.linalg.norm(proj - p, axis=1))
        worst = max(worst, float(d))
    return worst
