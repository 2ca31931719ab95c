"""Deterministic bin simulator: depth rendering, oracle segmentation, and
gripper / force / tactile / TCP models with injectable noise.

All randomness flows through a single numpy Generator owned by the
simulator, so identical (scene, noise, seed) histories reproduce identical
readings.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

from .errors import WorkspaceError
from .geometry import Polyline3D, Pose, nearest_arc
from .grid import GridImage
from .scene import G, Scene, SensorNoise
from .segmentation import Mask, MaskSet

# gripper geometry (Robotiq-2F-85-like two-finger gripper)
MAX_OPENING = 0.085
CAPTURE_XY = 0.02     # m, half-span of the open jaws around the TCP
CAPTURE_Z = 0.02      # m, usable finger depth
DROP_VERTICAL = 0.012  # m, vertical in-hand offset beyond which the DLO slips
MULTI_GRASP_FACTOR = 1.0   # co-grasp radius in units of DLO diameter
MULTI_GRASP_BAND = 0.5     # vertical pinch band in units of DLO diameter
VITAC_FOV_HALF = 0.0093   # m, GelSight-like field of view bound
CAMERA_HEIGHT = 0.8       # m above the bin floor
WALL_BAND_M = 0.006       # rendered bin-wall rim thickness


@dataclass
class GripperState:
    closure_width: float = 0.0
    attached_instance: int | None = None
    in_hand_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    co_captured: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.closure_width <= MAX_OPENING:
            raise ValueError("closure width outside gripper range")


def _rasterize(instances, extents, pitch, wall_height):
    """Orthographic top-view z-buffer of DLO tubes plus bin walls.

    Returns (top-surface z grid, instance id map; -1 = background).
    """
    h = max(2, int(np.ceil(extents[1] / pitch)))
    w = max(2, int(np.ceil(extents[0] / pitch)))
    zbuf = np.zeros((h, w))
    idmap = np.full((h, w), -1, dtype=int)

    band = max(1, int(round(WALL_BAND_M / pitch)))
    zbuf[:band, :] = wall_height
    zbuf[-band:, :] = wall_height
    zbuf[:, :band] = wall_height
    zbuf[:, -band:] = wall_height

    for inst in instances:
        r = inst.spec.radius
        pts = inst.centerline.points
        for k in range(len(pts) - 1):
            p0, p1 = pts[k], pts[k + 1]
            cmin = int((min(p0[0], p1[0]) - r) / pitch) - 1
            cmax = int((max(p0[0], p1[0]) + r) / pitch) + 2
            rmin = int((min(p0[1], p1[1]) - r) / pitch) - 1
            rmax = int((max(p0[1], p1[1]) + r) / pitch) + 2
            cmin, cmax = max(cmin, 0), min(cmax, w)
            rmin, rmax = max(rmin, 0), min(rmax, h)
            if cmin >= cmax or rmin >= rmax:
                continue
            xs = (np.arange(cmin, cmax) + 0.5) * pitch
            ys = (np.arange(rmin, rmax) + 0.5) * pitch
            gx, gy = np.meshgrid(xs, ys)
            dx, dy = p1[0] - p0[0], p1[1] - p0[1]
            len2 = dx * dx + dy * dy
            if len2 < 1e-18:
                t = np.zeros_like(gx)
            else:
                t = np.clip(((gx - p0[0]) * dx + (gy - p0[1]) * dy) / len2, 0.0, 1.0)
            px = p0[0] + t * dx
            py = p0[1] + t * dy
            d2 = (gx - px) ** 2 + (gy - py) ** 2
            inside = d2 <= r * r
            if not inside.any():
                continue
            zc = p0[2] + t * (p1[2] - p0[2])
            zs = np.where(inside, zc + np.sqrt(np.maximum(r * r - d2, 0.0)), -np.inf)
            sub_z = zbuf[rmin:rmax, cmin:cmax]
            sub_id = idmap[rmin:rmax, cmin:cmax]
            better = zs > sub_z
            sub_z[better] = zs[better]
            sub_id[better] = inst.uid
    return zbuf, idmap


class Simulator:
    """Single-owner mutable world: one scene, one handling gripper."""

    def __init__(self, scene: Scene, noise: SensorNoise, seed: int = 0,
                 pitch: float = 0.002, camera_height: float = CAMERA_HEIGHT):
        self.scene = scene
        self.noise = noise
        self.pitch = pitch
        self.camera_height = camera_height
        self.rng = np.random.default_rng(np.random.SeedSequence([0x51B, scene.seed, seed]))
        self.pile = {inst.uid for inst in scene.instances}
        self.deposited: list[int] = []
        self.set_aside_ids: list[int] = []
        self.gripper = GripperState()
        self.edges = {(i, j): s for i, j, s in scene.entanglement}
        ex, ey = scene.bin_extents
        self.workspace = (np.array([-0.3, -0.3, -0.01]),
                          np.array([ex + 0.5, ey + 0.5, camera_height + 0.1]))
        self.tcp = Pose(np.array([ex / 2.0, ey / 2.0, 0.4]))
        self._gt_cache = None
        self._gt_version = -1
        self._version = 0
        self._footprints: dict[int, int] = {}

    # ---- bookkeeping -------------------------------------------------

    def _active_instances(self):
        return [inst for inst in self.scene.instances if inst.uid in self.pile]

    def mass_in_buckets(self) -> float:
        m = self.scene.instances[0].spec.mass if self.scene.instances else 0.0
        count = len(self.pile) + len(self.deposited) + len(self.set_aside_ids)
        count += 1 if self.gripper.attached_instance is not None else 0
        return count * m

    # ---- rendering & segmentation oracle -----------------------------

    def ground_truth(self):
        if self._gt_version != self._version:
            self._gt_cache = _rasterize(
                self._active_instances(), self.scene.bin_extents,
                self.pitch, self.scene.wall_height)
            self._gt_version = self._version
        return self._gt_cache

    def render_depth(self) -> GridImage:
        zbuf, _ = self.ground_truth()
        depth = self.camera_height - zbuf
        if self.noise.depth_sigma > 0:
            depth = depth + self.rng.normal(0.0, self.noise.depth_sigma, depth.shape)
            depth = np.maximum(depth, 1e-4)
        return GridImage(depth, self.pitch, np.array([0.0, 0.0, self.camera_height]))

    def segmentation_depth(self, depth: GridImage) -> GridImage:
        """Mask out the known bin floor and wall rim for top-layer search."""
        floor_depth = self.camera_height
        margin = max(0.008, 4.0 * self.noise.depth_sigma)
        values = depth.values.copy()
        values[values >= floor_depth - margin] = 0.0
        band = max(1, int(round(WALL_BAND_M / self.pitch))) + 1
        values[:band, :] = 0.0
        values[-band:, :] = 0.0
        values[:, :band] = 0.0
        values[:, -band:] = 0.0
        return depth.like(values)

    def _footprint(self, uid: int) -> int:
        if uid not in self._footprints:
            inst = self.scene.instance(uid)
            zbuf, idmap = _rasterize([inst], self.scene.bin_extents,
                                     self.pitch, self.scene.wall_height)
            self._footprints[uid] = int(np.count_nonzero(idmap == uid))
        return self._footprints[uid]

    def oracle_segment(self, prompts) -> MaskSet:
        """Ground-truth visible mask under each prompt pixel, with
        boundary / confidence / spurious-merge perturbations."""
        _, idmap = self.ground_truth()
        masks = []
        visible_uids = sorted(set(int(u) for u in np.unique(idmap) if u >= 0))
        for row, col in prompts:
            row, col = int(row), int(col)
            if not (0 <= row < idmap.shape[0] and 0 <= col < idmap.shape[1]):
                raise IndexError((row, col))
            uid = int(idmap[row, col])
            if uid < 0:
                masks.append(Mask(self._grid(np.zeros(idmap.shape)), 0.0))
                continue
            mask = idmap == uid
            visible = int(np.count_nonzero(mask))
            if self.noise.mask_boundary_px > 0:
                k = int(self.rng.integers(-self.noise.mask_boundary_px,
                                          self.noise.mask_boundary_px + 1))
                if k > 0:
                    mask = binary_erosion(mask, iterations=k)
                elif k < 0:
                    mask = binary_dilation(mask, iterations=-k)
            if self.noise.spurious_mask_rate > 0 and len(visible_uids) > 1:
                if self.rng.uniform() < self.noise.spurious_mask_rate:
                    other = [u for u in visible_uids if u != uid]
                    pick = other[int(self.rng.integers(len(other)))]
                    mask = mask | (idmap == pick)
            conf = visible / max(self._footprint(uid), 1)
            if self.noise.confidence_sigma > 0:
                conf += self.rng.normal(0.0, self.noise.confidence_sigma)
            masks.append(Mask(self._grid(mask.astype(float)),
                              float(np.clip(conf, 0.0, 1.0))))
        return MaskSet(masks)

    def _grid(self, values) -> GridImage:
        return GridImage(values, self.pitch, np.array([0.0, 0.0, self.camera_height]))

    # ---- actuation & sensing -----------------------------------------

    def move_tcp(self, target: Pose, sigma: float | None = None) -> Pose:
        lo, hi = self.workspace
        if ((target.position < lo) | (target.position > hi)).any():
            raise WorkspaceError(f"target {target.position} outside workspace")
        sigma = self.noise.tcp_exec_sigma if sigma is None else sigma
        pos = target.position
        if sigma > 0:
            pos = pos + self.rng.normal(0.0, sigma, 3)
        self.tcp = Pose(pos, target.orientation)
        return self.tcp

    def close_gripper(self, yaw: float) -> GripperState:
        """Close the jaws at the current TCP; capture is purely geometric."""
        p = self.tcp.position
        t_xy = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        best = None
        for inst in self._active_instances():
            s, q = nearest_arc(inst.centerline, p)
            dh = np.linalg.norm((q - p)[:2])
            dz = abs(q[2] - p[2])
            d3 = float(np.linalg.norm(q - p))
            if dh <= CAPTURE_XY and dz <= CAPTURE_Z:
                if best is None or d3 < best[1]:
                    best = (inst, d3, q)
        if best is None:
            self.gripper = GripperState(0.0, None)
            return self.gripper
        inst, _, q = best
        # a neighbor is co-grasped only when pinched alongside the target:
        # close in 3D and at jaw height, not merely resting above or below
        co_captured = []
        for other in self._active_instances():
            if other.uid == inst.uid:
                continue
            _, q2 = nearest_arc(other.centerline, q)
            if (np.linalg.norm(q2 - q) <= MULTI_GRASP_FACTOR * inst.spec.diameter
                    and abs(q2[2] - q[2]) <= MULTI_GRASP_BAND * inst.spec.diameter):
                co_captured.append(other.uid)
        offset = q - p
        a1 = float(np.dot(offset, t_xy))
        a2 = float(offset[2])
        closure = inst.spec.diameter
        if self.noise.tcp_exec_sigma > 0:
            closure += float(self.rng.normal(0.0, 0.05 * self.noise.tcp_exec_sigma))
        closure = float(np.clip(closure, 0.0, MAX_OPENING))
        self.gripper = GripperState(closure, inst.uid, np.array([a1, a2]), co_captured)
        return self.gripper

    def lift(self) -> bool:
        """Raise the gripper; removes the attached DLO from the pile.

        Returns False when the DLO slips out of the jaws (dropped)."""
        if self.gripper.attached_instance is None:
            return True
        if abs(self.gripper.in_hand_offset[1]) > DROP_VERTICAL:
            self.gripper = GripperState(0.0, None)
            return False
        self.pile.discard(self.gripper.attached_instance)
        self._version += 1
        return True

    def read_fz(self) -> float:
        uid = self.gripper.attached_instance
        fz = 0.0
        if uid is not None:
            fz = self.scene.instance(uid).spec.mass * G
            for (i, j), s in self.edges.items():
                if uid in (i, j):
                    other = j if i == uid else i
                    if other in self.pile:
                        fz += s * self.scene.instance(other).spec.mass * G
        if self.noise.ft_sigma > 0:
            fz += float(self.rng.normal(0.0, self.noise.ft_sigma))
        return float(fz)

    def vitac_read(self):
        """In-hand grasp center in the jaw plane, or None beyond the FOV."""
        if self.gripper.attached_instance is None:
            return None
        offset = self.gripper.in_hand_offset
        if np.linalg.norm(offset) > VITAC_FOV_HALF:
            return None
        reading = offset.astype(float).copy()
        if self.noise.vitac_sigma > 0:
            reading = reading + self.rng.normal(0.0, self.noise.vitac_sigma, 2)
        return reading

    def execute_disentangle(self) -> None:
        """One shake primitive: attachment strengths decay by 0.5."""
        uid = self.gripper.attached_instance
        if uid is None:
            return
        updated = {}
        for (i, j), s in self.edges.items():
            if uid in (i, j):
                s = s - 0.5
            if s > 0:
                updated[(i, j)] = s
        self.edges = updated

    def deposit(self) -> None:
        uid = self.gripper.attached_instance
        if uid is not None:
            self.deposited.append(uid)
        self.gripper = GripperState(0.0, None)

    def set_aside(self, uid: int) -> None:
        """Remove a failed DLO from further planning (kept for accounting)."""
        if uid == self.gripper.attached_instance:
            self.gripper = GripperState(0.0, None)
        elif uid in self.pile:
            self.pile.discard(uid)
            self._version += 1
        self.set_aside_ids.append(uid)

    def release_to_pile(self) -> None:
        uid = self.gripper.attached_instance
        if uid is not None and uid not in self.pile:
            self.pile.add(uid)
            self._version += 1
        self.gripper = GripperState(0.0, None)
