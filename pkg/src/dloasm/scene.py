"""Synthetic cluttered-bin worlds: DLO specs, pile generation, entanglement.

Pile formation is kinematic: centerlines are random smooth planar walks
draped over a height field in insertion order. Entanglement is an explicit
sampled graph over crossing instances; there is no dynamics.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.ndimage import uniform_filter1d

from .errors import CapacityError, DegenerateInput
from .geometry import Polyline3D

G = 9.81  # m/s^2


@dataclass(frozen=True)
class DloSpec:
    length: float
    diameter: float
    mass: float
    stiffness: float = 0.7
    has_connectors: bool = False

    def __post_init__(self):
        if self.length <= 0 or self.diameter <= 0 or self.mass <= 0:
            raise DegenerateInput("DLO length, diameter and mass must be positive")
        if not 0.0 <= self.stiffness <= 1.0:
            raise DegenerateInput("stiffness must lie in [0, 1]")

    @property
    def radius(self) -> float:
        return self.diameter / 2.0


@dataclass
class SensorNoise:
    depth_sigma: float = 0.002
    mask_boundary_px: int = 2
    spurious_mask_rate: float = 0.01
    confidence_sigma: float = 0.02
    ft_sigma: float = 0.05
    tcp_exec_sigma: float = 0.005
    vitac_sigma: float = 0.0003
    visual_drift_sigma: float = 0.015

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise DegenerateInput(f"noise field {name} must be >= 0")

    @classmethod
    def zero(cls) -> "SensorNoise":
        return cls(0.0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass
class DloInstance:
    uid: int
    spec: DloSpec
    centerline: Polyline3D
    layer: int


@dataclass
class Scene:
    bin_extents: tuple  # (x, y) footprint, meters
    wall_height: float
    instances: list
    entanglement: list  # (uid_i, uid_j, strength)
    seed: int

    def instance(self, uid: int) -> DloInstance:
        for inst in self.instances:
            if inst.uid == uid:
                return inst
        raise KeyError(uid)

    def to_json(self) -> dict:
        return {
            "bin_extents": [float(v) for v in self.bin_extents],
            "wall_height": float(self.wall_height),
            "seed": int(self.seed),
            "instances": [
                {
                    "uid": inst.uid,
                    "spec": asdict(inst.spec),
                    "layer": inst.layer,
                    "centerline": inst.centerline.to_json(),
                }
                for inst in self.instances
            ],
            "entanglement": [
                [int(i), int(j), float(s)] for i, j, s in self.entanglement
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Scene":
        instances = [
            DloInstance(
                uid=int(item["uid"]),
                spec=DloSpec(**item["spec"]),
                centerline=Polyline3D.from_json(item["centerline"]),
                layer=int(item["layer"]),
            )
            for item in data["instances"]
        ]
        return cls(
            bin_extents=tuple(data["bin_extents"]),
            wall_height=float(data["wall_height"]),
            instances=instances,
            entanglement=[tuple(e) for e in data["entanglement"]],
            seed=int(data["seed"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Scene":
        with open(path) as f:
            return cls.from_json(json.load(f))


class _HeightField:
    def __init__(self, extents, res=0.005):
        self.res = res
        self.nx = max(2, int(np.ceil(extents[0] / res)))
        self.ny = max(2, int(np.ceil(extents[1] / res)))
        self.h = np.zeros((self.ny, self.nx))

    def _cell(self, x, y):
        cx = np.clip((np.asarray(x) / self.res).astype(int), 0, self.nx - 1)
        cy = np.clip((np.asarray(y) / self.res).astype(int), 0, self.ny - 1)
        return cy, cx

    def support(self, x, y, radius):
        """Max field height within radius of each (x, y)."""
        k = max(1, int(np.ceil(radius / self.res)))
        cy, cx = self._cell(x, y)
        out = np.empty(len(np.atleast_1d(cx)))
        for i, (r, c) in enumerate(zip(np.atleast_1d(cy), np.atleast_1d(cx))):
            out[i] = self.h[max(0, r - k):r + k + 1, max(0, c - k):c + k + 1].max()
        return out

    def raise_disk(self, x, y, z_top, radius):
        k = max(1, int(np.ceil(radius / self.res)))
        cy, cx = self._cell(x, y)
        for r, c, z in zip(np.atleast_1d(cy), np.atleast_1d(cx), np.atleast_1d(z_top)):
            rs = slice(max(0, r - k), r + k + 1)
            cs = slice(max(0, c - k), c + k + 1)
            self.h[rs, cs] = np.maximum(self.h[rs, cs], z)


def _random_walk_2d(rng, length, bounds, stiffness, step=0.02):
    """Smooth random X-Y walk of the given arc length inside bounds."""
    xmin, xmax, ymin, ymax = bounds
    center = np.array([(xmin + xmax) / 2.0, (ymin + ymax) / 2.0])
    n = max(2, int(round(length / step)) + 1)
    curv_sigma = 0.15 + 0.55 * (1.0 - stiffness)
    pos = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
    heading = rng.uniform(0.0, 2.0 * np.pi)
    pts = [pos.copy()]
    for _ in range(n - 1):
        heading += rng.normal(0.0, curv_sigma)
        nxt = pos + step * np.array([np.cos(heading), np.sin(heading)])
        if not (xmin <= nxt[0] <= xmax and ymin <= nxt[1] <= ymax):
            # steer back toward the bin center
            heading = np.arctan2(center[1] - pos[1], center[0] - pos[0])
            heading += rng.normal(0.0, 0.3)
            nxt = pos + step * np.array([np.cos(heading), np.sin(heading)])
            nxt[0] = np.clip(nxt[0], xmin, xmax)
            nxt[1] = np.clip(nxt[1], ymin, ymax)
        if np.linalg.norm(nxt - pos) < step * 0.05:
            nxt = pos + step * 0.1 * (center - pos) / max(np.linalg.norm(center - pos), 1e-9)
        pos = nxt
        pts.append(pos.copy())
    return np.array(pts)


def _count_crossings(a: np.ndarray, b: np.ndarray) -> int:
    """Number of X-Y segment intersections between two polylines."""
    p, q = a[:-1], a[1:]
    r, s = b[:-1], b[1:]

    def cross(o, d, pt):
        return (d[..., 0]) * (pt[..., 1] - o[..., 1]) - (d[..., 1]) * (pt[..., 0] - o[..., 0])

    o1 = p[:, None, :]
    d1 = (q - p)[:, None, :]
    o2 = r[None, :, :]
    d2 = (s - r)[None, :, :]
    t1 = cross(o1, d1, o2)
    t2 = cross(o1, d1, o2 + d2)
    t3 = cross(o2, d2, o1)
    t4 = cross(o2, d2, o1 + d1)
    hits = (np.sign(t1) * np.sign(t2) < 0) & (np.sign(t3) * np.sign(t4) < 0)
    return int(hits.sum())


def crossing_pairs(scene: Scene) -> dict:
    """Crossing counts for every instance pair with at least one crossing."""
    out = {}
    for i in range(len(scene.instances)):
        for j in range(i + 1, len(scene.instances)):
            a = scene.instances[i].centerline.points[:, :2]
            b = scene.instances[j].centerline.points[:, :2]
            k = _count_crossings(a, b)
            if k > 0:
                out[(scene.instances[i].uid, scene.instances[j].uid)] = k
    return out


def gen_bin(
    n_dlos: int,
    spec: DloSpec,
    bin_dims=(0.6, 0.4, 0.25),
    seed: int = 0,
    edge_prob: float = 0.10,
    connector_edge_bonus: float = 0.10,
) -> Scene:
    """Deterministic cluttered bin of n_dlos identical DLOs."""
    if n_dlos < 1:
        raise DegenerateInput("need at least one DLO")
    ex, ey, wall = float(bin_dims[0]), float(bin_dims[1]), float(bin_dims[2])
    margin = spec.diameter
    if min(ex, ey) - 2 * margin < 4 * spec.diameter:
        raise CapacityError("bin footprint too small for the DLO diameter")
    if n_dlos * np.pi * spec.radius**2 * spec.length > 0.5 * ex * ey * wall:
        raise CapacityError("pile volume exceeds bin capacity")

    rng = np.random.default_rng(np.random.SeedSequence([0x5CE2E, seed]))
    bounds = (margin, ex - margin, margin, ey - margin)
    hf = _HeightField((ex, ey))

    instances = []
    for uid in range(n_dlos):
        xy = _random_walk_2d(rng, spec.length, bounds, spec.stiffness)
        support = hf.support(xy[:, 0], xy[:, 1], spec.radius)
        z = uniform_filter1d(support, size=5, mode="nearest") + spec.radius
        z = np.maximum(z, spec.radius)
        pts = np.column_stack([xy, z])
        instances.append(DloInstance(uid, spec, Polyline3D(pts), layer=uid))
        hf.raise_disk(xy[:, 0], xy[:, 1], z + spec.radius, spec.radius)

    scene = Scene((ex, ey), wall, instances, [], seed)
    p0 = edge_prob + (connector_edge_bonus if spec.has_connectors else 0.0)
    edges = []
    for (i, j), k in sorted(crossing_pairs(scene).items()):
        p_edge = 1.0 - (1.0 - p0) ** k
        if rng.uniform() < p_edge:
            strength = float(rng.uniform(0.4, 1.0))
            edges.append((i, j, strength))
    scene.entanglement = edges
    return scene
