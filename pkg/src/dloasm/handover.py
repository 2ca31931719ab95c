"""Inter-robot handover: offset grasp frames, TCP-space RRT-Connect planning,
and the tactile local-correction retry loop."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, OffsetTooLarge, PlanFailure
from .geometry import (Polyline3D, Pose, cumulative_arclength, nearest_arc,
                       normal_for_tangent, point_at_arc, tangent_at_arc)

VITAC_FOV_HALF = 0.0093  # m, tactile sensing bound (shared with the bin sim)


@dataclass
class HandoverParams:
    l_g: float = 0.10
    max_retries: int = 3
    success_gap: float = 0.0093
    align_tol: float = 0.002
    gain: float = 1.0
    fine_sigma_factor: float = 0.1  # relative accuracy of small jog moves

    def __post_init__(self):
        if self.l_g <= 0 or self.success_gap <= 0:
            raise DegenerateInput("l_g and success_gap must be positive")


@dataclass
class World:
    boxes: list = field(default_factory=list)    # (min_corner, max_corner)
    spheres: list = field(default_factory=list)  # (center, radius)
    bounds: tuple = (np.array([-1.0, -1.0, -0.05]), np.array([1.5, 1.5, 1.2]))

    def point_clear(self, p: np.ndarray, clearance: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        lo, hi = self.bounds
        if ((p < lo) | (p > hi)).any():
            return False
        for bmin, bmax in self.boxes:
            closest = np.clip(p, bmin, bmax)
            if np.linalg.norm(p - closest) <= clearance:
                return False
        for center, radius in self.spheres:
            if np.linalg.norm(p - np.asarray(center)) <= radius + clearance:
                return False
        return True

    def segment_clear(self, a, b, clearance: float = 0.0, step: float = 0.005) -> bool:
        a, b = np.asarray(a, float), np.asarray(b, float)
        n = max(2, int(np.ceil(np.linalg.norm(b - a) / step)) + 1)
        for t in np.linspace(0.0, 1.0, n):
            if not self.point_clear(a + t * (b - a), clearance):
                return False
        return True


def second_grasp_pose(s: Polyline3D, p_first: np.ndarray, l_g: float) -> Pose:
    """Grasp frame at arc offset l_g from the first robot's grasp point,
    walking away from the held end; columns are (tangent, normal, t x n)."""
    s0, _ = nearest_arc(s, p_first)
    total = cumulative_arclength(s)[-1]
    toward_far = 1.0 if (total - s0) >= s0 else -1.0
    remaining = total - s0 if toward_far > 0 else s0
    if l_g > remaining + 1e-12:
        raise OffsetTooLarge(
            f"offset {l_g:.3f} m exceeds remaining {remaining:.3f} m")
    target_arc = s0 + toward_far * l_g
    p_g = point_at_arc(s, target_arc)
    t_g = tangent_at_arc(s, target_arc) * toward_far
    n_g = normal_for_tangent(t_g)
    rot = np.column_stack([t_g, n_g, np.cross(t_g, n_g)])
    return Pose(p_g, rot)


def _slerp_orientation(r0: np.ndarray, r1: np.ndarray, t: float) -> np.ndarray:
    from scipy.spatial.transform import Rotation, Slerp
    rot = Rotation.from_matrix(np.stack([r0, r1]))
    return Slerp([0.0, 1.0], rot)([t])[0].as_matrix()


def plan_path(start: Pose, goal: Pose, world: World, clearance: float = 0.01,
              step: float = 0.03, max_iter: int = 3000, restarts: int = 4,
              seed: int = 0):
    """RRT-Connect over TCP positions with goal-orientation blending.

    Returns a waypoint list of Poses; the shortest path over the configured
    restarts wins. Every returned segment is re-checkable against the world.
    """
    if not world.point_clear(start.position, clearance):
        raise PlanFailure("start pose is in collision")
    if not world.point_clear(goal.position, clearance):
        raise PlanFailure("goal pose is in collision")

    def finish(positions):
        total = np.concatenate([[0.0], np.cumsum(
            np.linalg.norm(np.diff(positions, axis=0), axis=1))])
        length = total[-1]
        poses = []
        for pos, s in zip(positions, total):
            frac = 1.0 if length <= 0 else s / length
            rot = _slerp_orientation(start.orientation, goal.orientation, frac)
            poses.append(Pose(pos, rot))
        return poses, length

    if world.segment_clear(start.position, goal.position, clearance):
        return finish(np.vstack([start.position, goal.position]))[0]

    lo, hi = world.bounds
    best = None
    for restart in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([0xA57, seed, restart]))
        trees = [
            {"nodes": [start.position.copy()], "parents": [-1]},
            {"nodes": [goal.position.copy()], "parents": [-1]},
        ]
        bridge = None
        for it in range(max_iter):
            a, b = trees[it % 2], trees[(it + 1) % 2]
            sample = rng.uniform(lo, hi)
            nodes = np.asarray(a["nodes"])
            near = int(np.argmin(np.linalg.norm(nodes - sample, axis=1)))
            direction = sample - nodes[near]
            dist = np.linalg.norm(direction)
            if dist < 1e-9:
                continue
            new = nodes[near] + direction / dist * min(step, dist)
            if not world.segment_clear(nodes[near], new, clearance):
                continue
            a["nodes"].append(new)
            a["parents"].append(near)
            # greedy connect from the other tree
            other_nodes = np.asarray(b["nodes"])
            near_b = int(np.argmin(np.linalg.norm(other_nodes - new, axis=1)))
            cur = other_nodes[near_b]
            cur_idx = near_b
            while True:
                gap = new - cur
                d = np.linalg.norm(gap)
                if d <= step:
                    if world.segment_clear(cur, new, clearance):
                        bridge = (len(a["nodes"]) - 1, cur_idx, it % 2)
                    break
                nxt = cur + gap / d * step
                if not world.segment_clear(cur, nxt, clearance):
                    break
                b["nodes"].append(nxt)
                b["parents"].append(cur_idx)
                cur_idx = len(b["nodes"]) - 1
                cur = nxt
            if bridge is not None:
                break
        if bridge is None:
            continue
        ia, ib, parity = bridge
        a, b = trees[parity], trees[(parity + 1) % 2]

        def backtrack(tree, idx):
            out = []
            while idx >= 0:
                out.append(tree["nodes"][idx])
                idx = tree["parents"][idx]
            return out

        half_a = backtrack(a, ia)[::-1]
        half_b = backtrack(b, ib)
        if parity == 1:
            half_a, half_b = half_b[::-1], half_a[::-1]
        positions = np.vstack(half_a + half_b)
        # deterministic shortcut smoothing
        changed = True
        while changed:
            changed = False
            i = 0
            while i + 2 < len(positions):
                if world.segment_clear(positions[i], positions[i + 2], clearance):
                    positions = np.delete(positions, i + 1, axis=0)
                    changed = True
                else:
                    i += 1
        poses, length = finish(positions)
        if best is None or length < best[1]:
            best = (poses, length)
    if best is None:
        raise PlanFailure("no collision-free path within the iteration budget")
    return best[0]


@dataclass
class HandoverResult:
    success: bool
    gaps: list
    attempts: int
    unrecoverable_miss: bool = False
    final_gap: float = float("nan")
    plan_waypoints: int = 0

    def to_json(self) -> dict:
        return {
            "success": self.success,
            "gaps": [float(g) for g in self.gaps],
            "attempts": self.attempts,
            "unrecoverable_miss": self.unrecoverable_miss,
            "final_gap": float(self.final_gap),
            "plan_waypoints": self.plan_waypoints,
        }


class HandoverSim:
    """Minimal two-arm regrasp world: the true DLO shape held by the first
    robot, plus execution / tactile noise for the second arm."""

    def __init__(self, true_shape: Polyline3D, true_grasp_arc: float,
                 exec_sigma: float, vitac_sigma: float, seed: int = 0):
        self.true_shape = true_shape
        self.true_grasp_arc = true_grasp_arc
        self.exec_sigma = exec_sigma
        self.vitac_sigma = vitac_sigma
        self.rng = np.random.default_rng(np.random.SeedSequence([0xA2D, seed]))
        self.tcp: Pose | None = None

    def target_point(self, l_g: float, direction: float) -> np.ndarray:
        return point_at_arc(self.true_shape, self.true_grasp_arc + direction * l_g)

    def move_tcp(self, target: Pose, sigma: float | None = None) -> Pose:
        sigma = self.exec_sigma if sigma is None else sigma
        pos = target.position
        if sigma > 0:
            pos = pos + self.rng.normal(0.0, sigma, 3)
        self.tcp = Pose(pos, target.orientation)
        return self.tcp

    def gap_vector(self, truth: np.ndarray) -> np.ndarray:
        """True offset from achieved TCP to the intended grasp point in the
        sensing plane (tangent and normal axes of the grasp frame)."""
        diff = truth - self.tcp.position
        e1 = self.tcp.orientation[:, 0]
        e2 = self.tcp.orientation[:, 1]
        return np.array([float(diff @ e1), float(diff @ e2)])

    def vitac_measure(self, truth: np.ndarray):
        gap = self.gap_vector(truth)
        if np.linalg.norm(gap) > VITAC_FOV_HALF:
            return None
        if self.vitac_sigma > 0:
            gap = gap + self.rng.normal(0.0, self.vitac_sigma, 2)
        return gap


def correction_loop(sim: HandoverSim, target: Pose, truth: np.ndarray,
                    p: HandoverParams) -> HandoverResult:
    """Grasp, measure the tactile gap, and jog toward the grasp point until
    aligned; a gap beyond the sensor FOV is an unrecoverable miss."""
    gaps = []
    tgt = target
    attempts = 0
    for attempt in range(1 + p.max_retries):
        sigma = None if attempt == 0 else p.fine_sigma_factor * sim.exec_sigma
        sim.move_tcp(tgt, sigma=sigma)
        attempts += 1
        true_gap = float(np.linalg.norm(sim.gap_vector(truth)))
        gaps.append(true_gap)
        meas = sim.vitac_measure(truth)
        if meas is None:
            return HandoverResult(False, gaps, attempts, unrecoverable_miss=True,
                                  final_gap=true_gap)
        if float(np.linalg.norm(meas)) <= p.align_tol:
            break
        if attempt == p.max_retries:
            break
        world_offset = (sim.tcp.orientation[:, 0] * meas[0]
                        + sim.tcp.orientation[:, 1] * meas[1])
        tgt = Pose(sim.tcp.position + p.gain * world_offset, tgt.orientation)
    final = gaps[-1]
    return HandoverResult(final <= p.success_gap, gaps, attempts, final_gap=final)


def run_handover(sim: HandoverSim, shape_estimate: Polyline3D,
                 p_first: np.ndarray, p: HandoverParams, world: World,
                 start: Pose | None = None, seed: int = 0) -> HandoverResult:
    """Plan and execute the second-robot grasp along the estimated shape.

    Propagates OffsetTooLarge / PlanFailure; otherwise failures are data."""
    target = second_grasp_pose(shape_estimate, p_first, p.l_g)
    if start is None:
        start = Pose(target.position + np.array([0.0, 0.0, 0.25]))
    path = plan_path(start, target, world, seed=seed)
    total = cumulative_arclength(sim.true_shape)[-1]
    direction = 1.0 if (total - sim.true_grasp_arc) >= sim.true_grasp_arc else -1.0
    truth = sim.target_point(p.l_g, direction)
    result = correction_loop(sim, target, truth, p)
    result.plan_waypoints = len(path)
    return result
