"""Fixture mounting: clip layout along the DLO, dual-arm co-grasp planning,
and insertion with lateral execution tolerance."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, PlanFailure
from .geometry import (Polyline3D, Pose, arc_length, nearest_arc,
                       normal_for_tangent, point_at_arc, tangent_at_arc)
from .handover import World, plan_path


@dataclass(frozen=True)
class Fixture:
    """One mounting clip: a pose whose X axis is the desired cable direction
    through the slot, and the lateral tolerance that still snaps in."""
    uid: int
    pose: Pose
    slot_width: float = 0.012
    tolerance: float = 0.003

    def __post_init__(self):
        if self.tolerance <= 0 or self.slot_width <= 0:
            raise DegenerateInput("slot width and tolerance must be positive")

    def to_json(self) -> dict:
        return {
            "uid": self.uid,
            "pose": self.pose.to_json(),
            "slot_width": float(self.slot_width),
            "tolerance": float(self.tolerance),
        }


@dataclass
class MountParams:
    end_margin: float = 0.015     # m of cable that must remain past a clip
    grasp_halfwidth: float = 0.015  # co-grasp segment half-length per arm
    grasp_clearance: float = 0.03   # arc separation between the two arm grasps
    tcp_exec_sigma: float = 0.005
    approach_height: float = 0.15

    def __post_init__(self):
        if self.end_margin < 0 or self.grasp_halfwidth <= 0:
            raise DegenerateInput("bad mount geometry parameters")


@dataclass
class FixturePlan:
    fixture: Fixture
    arc: float                    # arc position on the DLO pressed into the clip
    grasp_arcs: tuple             # (left arm arc, right arm arc)
    paths: list                   # per-arm waypoint lists


@dataclass
class MountPlan:
    shape: Polyline3D
    fixtures: list                # FixturePlan, in mounting order


@dataclass
class FixtureRecord:
    fixture_uid: int
    success: bool
    lateral_offset: float
    category: str | None = None

    def to_json(self) -> dict:
        return {
            "fixture_uid": self.fixture_uid,
            "success": self.success,
            "lateral_offset": float(self.lateral_offset),
            "category": self.category,
        }


@dataclass
class MountResult:
    records: list = field(default_factory=list)
    success: bool = False

    def to_json(self) -> dict:
        return {
            "records": [r.to_json() for r in self.records],
            "success": self.success,
        }


def _grasp_pose_at(shape: Polyline3D, arc: float) -> Pose:
    p = point_at_arc(shape, arc)
    t = tangent_at_arc(shape, arc)
    n = normal_for_tangent(t)
    return Pose(p, np.column_stack([t, n, np.cross(t, n)]))


def plan_mount(shape: Polyline3D, fixtures: list, params: MountParams,
               world: World | None = None, arm_starts=None,
               seed: int = 0) -> MountPlan:
    """Assign each fixture the nearest DLO arc position, choose flanking arm
    grasps, and plan both arm paths.

    Raises PlanFailure naming the fixture when its clip point would fall inside
    the end margin or when two fixtures claim overlapping cable."""
    if world is None:
        world = World()
    length = arc_length(shape)
    plans = []
    claimed = []
    for fx in fixtures:
        arc, _ = nearest_arc(shape, fx.pose.position)
        if arc < params.end_margin or arc > length - params.end_margin:
            raise PlanFailure(
                f"fixture {fx.uid}: insufficient space — clip point "
                f"{arc * 100:.1f} cm is within {params.end_margin * 100:.1f} cm "
                "of a cable end")
        for other_uid, other_arc in claimed:
            if abs(arc - other_arc) < fx.slot_width:
                raise PlanFailure(
                    f"fixture {fx.uid}: overlaps cable already claimed by "
                    f"fixture {other_uid}")
        claimed.append((fx.uid, arc))
        g_left = max(0.0, arc - params.grasp_clearance)
        g_right = min(length, arc + params.grasp_clearance)
        paths = []
        for k, g_arc in enumerate((g_left, g_right)):
            goal = _grasp_pose_at(shape, g_arc)
            if arm_starts is not None and k < len(arm_starts):
                start = arm_starts[k]
            else:
                start = Pose(goal.position
                             + np.array([0.0, 0.0, params.approach_height]))
            try:
                paths.append(plan_path(start, goal, world, seed=seed + k))
            except PlanFailure as exc:
                raise PlanFailure(f"fixture {fx.uid}: arm {k} path — {exc}")
        plans.append(FixturePlan(fx, arc, (g_left, g_right), paths))
    return MountPlan(shape, plans)


def execute_mount(plan: MountPlan, params: MountParams,
                  rng: np.random.Generator | None = None) -> MountResult:
    """Press the cable into each clip in order. The achieved lateral offset is
    an isotropic 2D execution error; insertion succeeds when it stays within
    the clip tolerance. Records are appended in fixture order and a completed
    record is never revised by later fixtures."""
    if rng is None:
        rng = np.random.default_rng(0)
    result = MountResult()
    length = arc_length(plan.shape)
    all_ok = True
    for fp in plan.fixtures:
        err = rng.normal(0.0, params.tcp_exec_sigma, 2)
        offset = float(np.linalg.norm(err))
        in_margin = params.end_margin <= fp.arc <= length - params.end_margin
        ok = offset <= fp.fixture.tolerance and in_margin
        category = None
        if not ok:
            category = "fixture_miss" if not in_margin else "insertion_miss"
            all_ok = False
        result.records.append(
            FixtureRecord(fp.fixture.uid, ok, offset, category))
    result.success = all_ok and len(plan.fixtures) > 0
    return result


def insertion_success_probability(tolerance: float, sigma: float) -> float:
    """Closed-form P(|N2(0, sigma^2 I)| <= tolerance) = 1 - exp(-tol^2/2s^2)."""
    if sigma <= 0:
        return 1.0
    return float(1.0 - np.exp(-(tolerance ** 2) / (2.0 * sigma ** 2)))
