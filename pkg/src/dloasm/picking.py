"""Grasp pose derivation, the force threshold, and the pick state machine."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (DegenerateInput, NoCandidate, NoDepthData, NoTopLayer,
                     ProtocolError, VerticalSegment)
from .geometry import (Polyline3D, Pose, arc_length, point_at_arc,
                       tangent_at_arc)
from .scene import G
from . import segmentation as seg
from .segmentation import SegParams


@dataclass(frozen=True)
class GraspPose:
    position: np.ndarray  # p_g
    yaw: float            # o_gz, radians about world Z

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        if not -np.pi < self.yaw <= np.pi:
            raise DegenerateInput("yaw must lie in (-pi, pi]")

    @property
    def frame(self) -> Pose:
        return Pose.from_yaw(self.position, self.yaw)


@dataclass
class PickParams:
    r: float = 0.5
    eta_fz: float = 1.175
    max_grasp_attempts: int = 2
    max_disentangle: int = 2
    pendulum_amplitude: float = 0.3
    pendulum_cycles: int = 2
    w_min_factor: float = 0.5  # fully-closed test, fraction of DLO diameter

    def __post_init__(self):
        if self.eta_fz < 1.0:
            raise DegenerateInput("safety factor must be >= 1")
        if not 0.0 <= self.r <= 1.0:
            raise DegenerateInput("R must lie in [0, 1]")


def fz_threshold(mass: float, eta: float) -> float:
    """Entanglement force threshold: m * g * eta."""
    if mass <= 0:
        raise DegenerateInput("mass must be positive")
    if eta < 1.0:
        raise DegenerateInput("safety factor must be >= 1")
    return mass * G * eta


def grasp_from_skeleton(s: Polyline3D, r: float) -> GraspPose:
    """Grasp at arc fraction r along the shape, yaw aligned with the tangent's
    X-Y projection so the jaw-closing axis is perpendicular to the DLO."""
    length = arc_length(s)
    if length <= 0:
        raise DegenerateInput("shape has zero length")
    arc = float(np.clip(r, 0.0, 1.0)) * length
    p = point_at_arc(s, arc)
    t = tangent_at_arc(s, arc)
    txy = np.linalg.norm(t[:2])
    if txy < 1e-3:
        raise VerticalSegment("tangent is vertical at the grasp point")
    yaw = float(np.arctan2(t[1], t[0]))
    if yaw <= -np.pi:
        yaw = np.pi
    return GraspPose(p, yaw)


class PickState(enum.Enum):
    HOME = "Home"
    APPROACH = "Approach"
    GRASP = "Grasp"
    CHECK_CLOSURE = "CheckClosure"
    LIFT = "Lift"
    STATIC_CHECK = "StaticCheck"
    DISENTANGLE = "Disentangle"
    RETAIN = "Retain"
    ABORT = "Abort"


TERMINAL_STATES = {PickState.RETAIN, PickState.ABORT}


class EventKind(enum.Enum):
    POSE_AVAILABLE = "pose_available"
    NO_POSE = "no_pose"
    ARRIVED = "arrived"
    CLOSED = "closed"
    CLOSURE = "closure"
    LIFTED = "lifted"
    DROPPED = "dropped"
    MULTI_GRASP = "multi_grasp"
    FORCE = "force"
    DISENTANGLE_DONE = "disentangle_done"


@dataclass
class Event:
    kind: EventKind
    closure_width: float = 0.0
    w_min: float = 0.0
    fz: float = 0.0
    threshold: float = 0.0


#: Documented transition table: (state, event) -> possible successor states.
TRANSITIONS = {
    (PickState.HOME, EventKind.POSE_AVAILABLE): {PickState.APPROACH},
    (PickState.HOME, EventKind.NO_POSE): {PickState.ABORT},
    (PickState.APPROACH, EventKind.ARRIVED): {PickState.GRASP},
    (PickState.GRASP, EventKind.CLOSED): {PickState.CHECK_CLOSURE},
    (PickState.CHECK_CLOSURE, EventKind.CLOSURE): {
        PickState.LIFT, PickState.HOME, PickState.ABORT},
    (PickState.LIFT, EventKind.LIFTED): {PickState.STATIC_CHECK},
    (PickState.LIFT, EventKind.DROPPED): {PickState.ABORT},
    (PickState.LIFT, EventKind.MULTI_GRASP): {PickState.ABORT},
    (PickState.STATIC_CHECK, EventKind.FORCE): {
        PickState.DISENTANGLE, PickState.RETAIN, PickState.ABORT},
    (PickState.DISENTANGLE, EventKind.DISENTANGLE_DONE): {PickState.STATIC_CHECK},
}


@dataclass
class PickCounters:
    grasp_attempts: int = 0
    disentangle_attempts: int = 0


def step(state: PickState, event: Event, params: PickParams,
         counters: PickCounters) -> PickState:
    """One state-machine transition; raises ProtocolError for invalid input."""
    if state in TERMINAL_STATES:
        raise ProtocolError(f"{state.value} is terminal")
    key = (state, event.kind)
    if key not in TRANSITIONS:
        raise ProtocolError(f"event {event.kind.value} invalid in {state.value}")

    if key == (PickState.CHECK_CLOSURE, EventKind.CLOSURE):
        if event.closure_width >= event.w_min:
            return PickState.LIFT
        counters.grasp_attempts += 1
        if counters.grasp_attempts < params.max_grasp_attempts:
            return PickState.HOME
        return PickState.ABORT

    if key == (PickState.STATIC_CHECK, EventKind.FORCE):
        if event.fz <= event.threshold:
            return PickState.RETAIN
        if counters.disentangle_attempts < params.max_disentangle:
            counters.disentangle_attempts += 1
            return PickState.DISENTANGLE
        return PickState.ABORT

    (successor,) = TRANSITIONS[key]
    return successor


def pendular_primitive(params: PickParams, grasp: Pose,
                       swing_radius: float = 0.1, points_per_cycle: int = 8):
    """TCP waypoints swinging +/- amplitude about the grasp point in a
    vertical plane; amplitude 0 degenerates to a single stationary waypoint."""
    if params.pendulum_amplitude == 0.0 or params.pendulum_cycles == 0:
        return [grasp]
    swing_dir = grasp.orientation[:, 1]  # jaw-closing axis, perpendicular to DLO
    waypoints = []
    n = points_per_cycle * params.pendulum_cycles
    for k in range(n + 1):
        theta = params.pendulum_amplitude * np.sin(2.0 * np.pi * k / points_per_cycle)
        offset = swing_radius * np.sin(theta) * swing_dir
        drop = swing_radius * (1.0 - np.cos(theta))
        pos = grasp.position + offset + np.array([0.0, 0.0, drop])
        waypoints.append(Pose(pos, grasp.orientation))
    return waypoints


@dataclass
class TrialOutcome:
    terminal: str
    success: bool
    failure_category: str | None = None
    entanglement_detections: int = 0
    grasp_attempts: int = 1
    target_uid: int | None = None
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "terminal": self.terminal,
            "success": self.success,
            "failure_category": self.failure_category,
            "entanglement_detections": self.entanglement_detections,
            "grasp_attempts": self.grasp_attempts,
            "target_uid": self.target_uid,
            "details": self.details,
        }


def _grasp_conflicts(depth, target_mask, position, diameter) -> int:
    """Count depth pixels near the grasp point that belong to another DLO at
    jaw height — candidates for an accidental two-cable pinch."""
    pitch = depth.pitch
    reach = 1.2 * diameter
    rad = int(np.ceil(reach / pitch))
    row = int(round(position[1] / pitch - 0.5))
    col = int(round(position[0] / pitch - 0.5))
    h, w = depth.values.shape
    r0, r1 = max(0, row - rad), min(h, row + rad + 1)
    c0, c1 = max(0, col - rad), min(w, col + rad + 1)
    if r0 >= r1 or c0 >= c1:
        return 0
    win = depth.values[r0:r1, c0:c1]
    tgt = target_mask.binary()[r0:r1, c0:c1]
    rr, cc = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
    near = ((rr - row) ** 2 + (cc - col) ** 2) <= rad * rad
    surface_z = position[2] + diameter / 2.0
    z = depth.origin[2] - win
    pinch = (win > 0) & ~tgt & near & (np.abs(z - surface_z) <= diameter)
    return int(np.count_nonzero(pinch))


def plan_grasp(sim, seg_params: SegParams, pick_params: PickParams):
    """Full perception chain: depth -> top layer -> prompts -> oracle masks ->
    post-processing -> target -> raw shape -> grasp pose.

    Returns (GraspPose, raw shape, target uid guess) or None when nothing is
    targetable."""
    depth = sim.render_depth()
    seg_depth = sim.segmentation_depth(depth)
    if not (seg_depth.values > 0).any():
        return None
    try:
        top, _ = seg.extract_top_layer(seg_depth, seg_params)
    except NoTopLayer:
        top = seg.largest_component(seg_depth)
    if not top.binary().any():
        return None
    skel = seg.skeletonize(top, seg_params.prune_min)
    if skel.total_length < 1:
        return None
    prompts = seg.sample_prompts(skel, seg_params.n_prompts)
    raw = sim.oracle_segment(prompts)
    nonempty = seg.MaskSet([m for m in raw.masks if m.area > 0])
    if len(nonempty) == 0:
        return None
    processed = seg.postprocess_masks(nonempty, seg_params)
    try:
        idx, _ = seg.select_target(processed, seg_params.prune_min)
    except NoCandidate:
        return None
    diameter = sim.scene.instances[0].spec.diameter
    try:
        shape = seg.mask_to_raw_shape(processed[idx].image, depth,
                                      seg_params.prune_min,
                                      z_offset=-diameter / 2.0)
    except NoDepthData:
        return None
    if len(shape) >= 5:
        # depth noise is per-pixel; the physical centerline height varies
        # slowly, so a running mean stabilizes the planned grasp height
        pts = shape.points.copy()
        pts[:, 2] = ndimage.uniform_filter1d(pts[:, 2], size=min(9, len(pts)),
                                             mode="nearest")
        shape = Polyline3D(pts)
    candidates = []
    for dr in (0.0, -0.05, 0.05, -0.1, 0.1, -0.15, 0.15, -0.2, 0.2,
               -0.25, 0.25, -0.3, 0.3):
        r = float(np.clip(pick_params.r + dr, 0.02, 0.98))
        try:
            grasp = grasp_from_skeleton(shape, r)
        except VerticalSegment:
            continue
        score = _grasp_conflicts(seg_depth, processed[idx].image,
                                 grasp.position, diameter)
        if score == 0:
            return grasp, shape
        candidates.append((score, grasp))
    if not candidates:
        return None
    candidates.sort(key=lambda c: c[0])
    return candidates[0][1], shape


def run_pick(sim, seg_params: SegParams, pick_params: PickParams) -> TrialOutcome:
    """Execute one singulation attempt against the simulator, driving the
    state machine to a terminal state. Failures are outcomes, not errors."""
    counters = PickCounters()
    state = PickState.HOME
    detections = 0
    target_uid = None
    category = None
    diameter = sim.scene.instances[0].spec.diameter
    mass = sim.scene.instances[0].spec.mass
    threshold = fz_threshold(mass, pick_params.eta_fz)
    w_min = pick_params.w_min_factor * diameter
    grasp = None

    while state not in TERMINAL_STATES:
        if state is PickState.HOME:
            plan = plan_grasp(sim, seg_params, pick_params)
            if plan is None:
                category = "no_pose"
                state = step(state, Event(EventKind.NO_POSE), pick_params, counters)
                continue
            grasp, _shape = plan
            state = step(state, Event(EventKind.POSE_AVAILABLE), pick_params, counters)
        elif state is PickState.APPROACH:
            sim.move_tcp(grasp.frame)
            state = step(state, Event(EventKind.ARRIVED), pick_params, counters)
        elif state is PickState.GRASP:
            sim.close_gripper(grasp.yaw)
            state = step(state, Event(EventKind.CLOSED), pick_params, counters)
        elif state is PickState.CHECK_CLOSURE:
            width = sim.gripper.closure_width
            state = step(state, Event(EventKind.CLOSURE, closure_width=width,
                                      w_min=w_min), pick_params, counters)
            if state is PickState.ABORT:
                category = "grasp_failed"
        elif state is PickState.LIFT:
            uid = sim.gripper.attached_instance
            co = list(sim.gripper.co_captured)
            held = sim.lift()
            target_uid = uid
            if not held:
                category = "dropped"
                state = step(state, Event(EventKind.DROPPED), pick_params, counters)
                sim.set_aside(uid)
            elif co:
                category = "multi_grasp"
                state = step(state, Event(EventKind.MULTI_GRASP), pick_params, counters)
                sim.set_aside(uid)
            else:
                state = step(state, Event(EventKind.LIFTED), pick_params, counters)
        elif state is PickState.STATIC_CHECK:
            fz = sim.read_fz()
            prev = state
            state = step(state, Event(EventKind.FORCE, fz=fz, threshold=threshold),
                         pick_params, counters)
            if prev is PickState.STATIC_CHECK and state is PickState.DISENTANGLE:
                detections += 1
            if state is PickState.ABORT:
                category = "entangled"
                sim.set_aside(sim.gripper.attached_instance)
        elif state is PickState.DISENTANGLE:
            pendular_primitive(pick_params, grasp.frame)
            sim.execute_disentangle()
            state = step(state, Event(EventKind.DISENTANGLE_DONE), pick_params, counters)

    if state is PickState.RETAIN:
        target_uid = sim.gripper.attached_instance
        sim.deposit()
        return TrialOutcome("Retain", True, None, detections,
                            counters.grasp_attempts + 1, target_uid)
    return TrialOutcome("Abort", False, category, detections,
                        counters.grasp_attempts + 1, target_uid)
