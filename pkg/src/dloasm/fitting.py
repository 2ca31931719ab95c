"""Least-squares polynomial bridging of occlusion gaps between clusters."""
from __future__ import annotations

import numpy as np
from numpy.polynomial import Polynomial

from .errors import DegenerateInput
from .geometry import Polyline3D, dedupe_points

TOL_BRIDGE = 0.002  # m, endpoint continuity budget


def polyfit_bridge(
    c_a: np.ndarray,
    c_b: np.ndarray,
    axis: np.ndarray,
    degree: int = 3,
    k_fit: int = 10,
) -> Polyline3D:
    """Bridge the gap between two clusters with a per-coordinate polynomial.

    Points are parameterized by their projection onto ``axis``. The fit uses
    the k_fit points of each cluster nearest the gap; the degree is reduced
    when there are too few points. The bridge is sampled at a pitch matching
    the density of the fitted points.
    """
    a = np.asarray(c_a, dtype=float).reshape(-1, 3)
    b = np.asarray(c_b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise DegenerateInput("both clusters must be nonempty")
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)

    ta = a @ axis
    tb = b @ axis
    if ta.mean() > tb.mean():
        a, b, ta, tb = b, a, tb, ta

    # points of each cluster nearest the gap
    ia = np.argsort(ta)[-min(k_fit, len(a)):]
    ib = np.argsort(tb)[: min(k_fit, len(b))]
    t0 = float(ta.max())
    t1 = float(tb.min())

    if t1 - t0 < 1e-9:
        # clusters touch or overlap along the axis: straight 2-point join
        p0 = a[int(np.argmax(ta))]
        p1 = b[int(np.argmin(tb))]
        if np.linalg.norm(p1 - p0) < 1e-9:
            p1 = p1 + axis * 1e-6
        return Polyline3D(np.vstack([p0, p1]))

    ts = np.concatenate([ta[ia], tb[ib]])
    ps = np.vstack([a[ia], b[ib]])
    deg = max(0, min(degree, len(ts) - 1))
    fits = [Polynomial.fit(ts, ps[:, d], deg) for d in range(3)]

    spacing = np.diff(np.sort(ts))
    spacing = spacing[spacing > 1e-12]
    pitch = float(np.median(spacing)) if len(spacing) else (t1 - t0) / 4.0
    m = int(np.clip(round((t1 - t0) / max(pitch, 1e-9)) + 1, 2, 10000))
    tt = np.linspace(t0, t1, m)
    bridge = np.column_stack([f(tt) for f in fits])
    bridge = dedupe_points(bridge)
    if len(bridge) < 2:
        bridge = np.vstack([bridge[0], bridge[0] + axis * 1e-6])
    return Polyline3D(bridge)
