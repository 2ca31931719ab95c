"""Visual-tactile shape tracking: cluster / order / bridge reconstruction and
the tactile translation correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .clustering import dbscan_labels
from .errors import TrackingLost
from .fitting import polyfit_bridge
from .geometry import (Polyline3D, Pose, arc_length, dedupe_points,
                       pca_principal_axis, point_at_arc, resample_equidistant)
from .grid import GridImage
from .segmentation import mask_to_raw_shape


@dataclass
class TrackParams:
    eps: float = 0.015
    min_pts: int = 5
    degree: int = 3
    k_fit: int = 10
    resample_pitch: float = 0.005
    smooth_window: int = 5

    def __post_init__(self):
        if self.eps <= 0 or self.min_pts < 1:
            raise ValueError("eps must be positive and min_pts >= 1")


@dataclass
class ReconstructedShape:
    shape: Polyline3D                 # resampled estimate (then corrected)
    clusters: list                    # ordered (k, 3) arrays along the PCA axis
    bridges: list                     # (gap index, Polyline3D)
    axis: np.ndarray                  # principal axis used for ordering
    correction: np.ndarray = field(default_factory=lambda: np.zeros(3))
    corrected: bool = False


def _ordered_cluster_polylines(points: np.ndarray, labels: np.ndarray,
                               axis: np.ndarray):
    """Group points by cluster, order clusters by mean axis projection, and
    orient each cluster's own sequence to ascend along the axis."""
    groups = []
    for cid in range(labels.max() + 1):
        idx = np.nonzero(labels == cid)[0]
        pts = points[idx]  # original polyline order
        proj = pts @ axis
        if len(pts) > 1 and proj[-1] < proj[0]:
            pts = pts[::-1]
        groups.append((float((pts @ axis).mean()), pts))
    groups.sort(key=lambda g: g[0])
    return [pts for _, pts in groups]


def reconstruct(raw: Polyline3D, p: TrackParams) -> ReconstructedShape:
    """Denoise with DBSCAN, order clusters along the principal axis, bridge
    every inter-cluster gap, and resample to a uniform pitch."""
    points = raw.points
    labels = dbscan_labels(points, p.eps, p.min_pts)
    if labels.max() < 0:
        raise TrackingLost("every point was classified as noise")
    clustered = points[labels >= 0]
    axis = pca_principal_axis(clustered)
    clusters = _ordered_cluster_polylines(points, labels, axis)

    pieces = []
    bridges = []
    for i, pts in enumerate(clusters):
        pieces.append(pts)
        if i < len(clusters) - 1:
            bridge = polyfit_bridge(pts, clusters[i + 1], axis,
                                    degree=p.degree, k_fit=p.k_fit)
            bridges.append((i, bridge))
            pieces.append(bridge.points)

    concat = dedupe_points(np.vstack(pieces))
    if len(concat) < 2:
        raise TrackingLost("reconstruction collapsed to a point")
    if p.smooth_window > 1 and len(concat) > p.smooth_window:
        # per-point sensor jitter inflates the measured arc length, which
        # biases arc-offset grasp planning; a running mean at the native
        # point spacing restores it without cutting corners
        concat = dedupe_points(ndimage.uniform_filter1d(
            concat, size=p.smooth_window, axis=0, mode="nearest"))
        if len(concat) < 2:
            raise TrackingLost("reconstruction collapsed to a point")
    shape = Polyline3D(concat)
    length = arc_length(shape)
    m = max(2, int(round(length / p.resample_pitch)) + 1)
    shape = resample_equidistant(shape, m)
    return ReconstructedShape(shape, clusters, bridges, axis)


def grasp_center(tcp: Pose, in_hand) -> np.ndarray:
    """World position of the grasped DLO segment: rotate the in-hand offset
    into the world frame and add the TCP position.

    A 2-vector reading is interpreted as (along-jaw-x, along-jaw-z) in the
    sensing plane of the tactile image."""
    v = np.asarray(in_hand, dtype=float).ravel()
    if v.size == 2:
        v = np.array([v[0], 0.0, v[1]])
    return tcp.orientation @ v + tcp.position


def match_missing_center(rec: ReconstructedShape, p_c: np.ndarray) -> np.ndarray:
    """Estimated counterpart of the grasp center: the midpoint of the nearest
    interpolated bridge, or the nearest shape point when no gap exists."""
    p_c = np.asarray(p_c, dtype=float)
    if rec.bridges:
        mids = np.array([
            point_at_arc(b, arc_length(b) / 2.0) for _, b in rec.bridges
        ])
        k = int(np.argmin(np.linalg.norm(mids - p_c, axis=1)))
        return mids[k]
    if len(rec.shape) == 0:
        raise TrackingLost("empty shape")
    pts = rec.shape.points
    return pts[int(np.argmin(np.linalg.norm(pts - p_c, axis=1)))]


def correct(rec: ReconstructedShape, p_c: np.ndarray) -> ReconstructedShape:
    """Translate the estimate so the matched missing-segment center lands on
    the tactile grasp center (a pure translation, hence an isometry)."""
    p_c = np.asarray(p_c, dtype=float)
    p_tilde = match_missing_center(rec, p_c)
    delta = p_c - p_tilde
    return ReconstructedShape(
        shape=Polyline3D(rec.shape.points + delta),
        clusters=[pts + delta for pts in rec.clusters],
        bridges=[(i, Polyline3D(b.points + delta)) for i, b in rec.bridges],
        axis=rec.axis.copy(),
        correction=delta,
        corrected=True,
    )


def track_frame(depth: GridImage, mask: GridImage, tcp: Pose | None,
                vitac, p: TrackParams, z_offset: float = 0.0,
                prune_min: int = 10) -> ReconstructedShape:
    """One tracking frame: back-project, reconstruct, and (when a tactile
    reading is available) apply the grasp-center correction.

    Without a tactile contact the uncorrected estimate is returned with
    ``corrected`` left False so consumers can refuse low-confidence shapes."""
    raw = mask_to_raw_shape(mask, depth, prune_min, z_offset=z_offset)
    rec = reconstruct(raw, p)
    if tcp is None or vitac is None:
        return rec
    p_c = grasp_center(tcp, vitac)
    return correct(rec, p_c)
