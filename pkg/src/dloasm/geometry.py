"""Core geometric primitives: polylines, tangents, poses, PCA, rigid translations.

All positions are meters in a fixed world frame (bin plane = X-Y, depth
axis = Z).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, DegenerateTangent

UP = np.array([0.0, 0.0, 1.0])

_EPS = 1e-9


def unit(v: np.ndarray, tol: float = _EPS) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < tol:
        raise DegenerateInput("cannot normalize near-zero vector")
    return v / n


class Polyline3D:
    """Ordered sequence of 3D points representing a DLO shape.

    Consecutive points must be distinct (> 1e-9 m apart) and finite.
    """

    __slots__ = ("points",)

    def __init__(self, points):
        pts = np.ascontiguousarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DegenerateInput(f"expected (N, 3) array, got {pts.shape}")
        if pts.shape[0] < 2:
            raise DegenerateInput("polyline needs at least 2 points")
        if not np.isfinite(pts).all():
            raise DegenerateInput("polyline contains non-finite values")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if (seg <= _EPS).any():
            raise DegenerateInput("consecutive polyline points coincide")
        pts.setflags(write=False)
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, Polyline3D) and np.array_equal(self.points, other.points)

    def to_json(self):
        return [[float(x), float(y), float(z)] for x, y, z in self.points]

    @classmethod
    def from_json(cls, data) -> "Polyline3D":
        return cls(np.asarray(data, dtype=float))


def dedupe_points(pts: np.ndarray, min_sep: float = 1e-8) -> np.ndarray:
    """Drop points closer than min_sep to their predecessor."""
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 2:
        return pts
    step = np.diff(pts, axis=0)
    thr = min_sep * min_sep
    if np.all(np.einsum("ij,ij->i", step, step) > thr):
        return pts
    keep = [0]
    rows = pts.tolist()
    lx, ly, lz = rows[0]
    for i in range(1, len(rows)):
        x, y, z = rows[i]
        if (x - lx) ** 2 + (y - ly) ** 2 + (z - lz) ** 2 > thr:
            keep.append(i)
            lx, ly, lz = x, y, z
    return pts[keep]


def tangent_at(poly: Polyline3D, i: int) -> np.ndarray:
    """Unit tangent at vertex i: central difference in the interior,
    one-sided at the endpoints."""
    pts = poly.points
    n = len(pts)
    if not 0 <= i < n:
        raise IndexError(i)
    if i == 0:
        chord = pts[1] - pts[0]
    elif i == n - 1:
        chord = pts[n - 1] - pts[n - 2]
    else:
        chord = pts[i + 1] - pts[i - 1]
    norm = np.linalg.norm(chord)
    if norm < _EPS:
        raise DegenerateTangent(f"zero chord at index {i}")
    return chord / norm


def normal_at(poly: Polyline3D, i: int) -> np.ndarray:
    """Unit normal at vertex i: world-up projected orthogonal to the tangent,
    falling back to +X when the tangent is (anti)parallel to up."""
    t = tangent_at(poly, i)
    return normal_for_tangent(t)


def normal_for_tangent(t: np.ndarray) -> np.ndarray:
    if abs(float(np.dot(UP, t))) > 1.0 - 1e-6:
        return np.array([1.0, 0.0, 0.0])
    n = UP - np.dot(UP, t) * t
    return n / np.linalg.norm(n)


def segment_lengths(poly: Polyline3D) -> np.ndarray:
    return np.linalg.norm(np.diff(poly.points, axis=0), axis=1)


def cumulative_arclength(poly: Polyline3D) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(segment_lengths(poly))])


def arc_length(poly: Polyline3D) -> float:
    return float(segment_lengths(poly).sum())


def resample_equidistant(poly: Polyline3D, m: int) -> Polyline3D:
    """Resample to m points with equal arc spacing; endpoints preserved."""
    if m < 2:
        raise DegenerateInput("need m >= 2")
    cum = cumulative_arclength(poly)
    s = np.linspace(0.0, cum[-1], m)
    out = np.column_stack([np.interp(s, cum, poly.points[:, d]) for d in range(3)])
    out[0] = poly.points[0]
    out[-1] = poly.points[-1]
    return Polyline3D(out)


def point_at_arc(poly: Polyline3D, s: float) -> np.ndarray:
    """Point at arc distance s from the start (clamped to [0, L])."""
    cum = cumulative_arclength(poly)
    s = float(np.clip(s, 0.0, cum[-1]))
    return np.array([np.interp(s, cum, poly.points[:, d]) for d in range(3)])


def tangent_at_arc(poly: Polyline3D, s: float) -> np.ndarray:
    """Unit tangent of the segment containing arc position s."""
    cum = cumulative_arclength(poly)
    s = float(np.clip(s, 0.0, cum[-1]))
    idx = int(np.searchsorted(cum, s, side="right")) - 1
    idx = min(max(idx, 0), len(poly) - 2)
    chord = poly.points[idx + 1] - poly.points[idx]
    norm = np.linalg.norm(chord)
    if norm < _EPS:
        raise DegenerateTangent(f"zero segment at arc {s}")
    return chord / norm


def nearest_arc(poly: Polyline3D, p: np.ndarray) -> tuple[float, np.ndarray]:
    """Arc position and point of the polyline closest to p."""
    p = np.asarray(p, dtype=float)
    a = poly.points[:-1]
    b = poly.points[1:]
    d = b - a
    len2 = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("ij,ij->i", p - a, d) / len2, 0.0, 1.0)
    proj = a + t[:, None] * d
    dist2 = np.einsum("ij,ij->i", proj - p, proj - p)
    k = int(np.argmin(dist2))
    cum = cumulative_arclength(poly)
    s = cum[k] + t[k] * np.sqrt(len2[k])
    return float(s), proj[k]


def apply_translation(poly: Polyline3D, delta: np.ndarray) -> Polyline3D:
    """Shift every point by delta; lengths and tangents are unchanged."""
    delta = np.asarray(delta, dtype=float)
    if not np.isfinite(delta).all():
        raise DegenerateInput("translation must be finite")
    return Polyline3D(poly.points + delta)


def pca_principal_axis(points: np.ndarray) -> np.ndarray:
    """Dominant eigenvector of the point covariance, sign-fixed so the
    largest-magnitude component is positive."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 2 or np.allclose(pts, pts[0], atol=1e-12):
        raise DegenerateInput("need at least 2 distinct points for PCA")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    vals, vecs = np.linalg.eigh(cov)
    axis = vecs[:, -1]
    k = int(np.argmax(np.abs(axis)))
    if axis[k] < 0:
        axis = -axis
    return axis / np.linalg.norm(axis)


def _check_rotation(r: np.ndarray, tol: float = 1e-9) -> None:
    if r.shape != (3, 3):
        raise DegenerateInput("rotation must be 3x3")
    if not np.allclose(r.T @ r, np.eye(3), atol=tol * 10):
        raise DegenerateInput("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > tol * 10:
        raise DegenerateInput("rotation determinant is not +1")


@dataclass(frozen=True)
class Pose:
    """Position plus orthonormal right-handed orientation (3x3, columns are
    the frame axes in world coordinates)."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        rot = np.asarray(self.orientation, dtype=float)
        if not np.isfinite(pos).all():
            raise DegenerateInput("pose position must be finite")
        _check_rotation(rot)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", rot)

    @classmethod
    def from_yaw(cls, position, yaw: float) -> "Pose":
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(np.asarray(position, dtype=float), rot)

    def transform(self, local: np.ndarray) -> np.ndarray:
        return self.orientation @ np.asarray(local, dtype=float) + self.position

    def to_json(self):
        return {
            "position": [float(v) for v in self.position],
            "orientation": [[float(v) for v in row] for row in self.orientation],
        }

    @classmethod
    def from_json(cls, data) -> "Pose":
        return cls(np.asarray(data["position"]), np.asarray(data["orientation"]))
