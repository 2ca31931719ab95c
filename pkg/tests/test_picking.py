import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dloasm.errors import (DegenerateInput, ProtocolError, VerticalSegment)
from dloasm.geometry import Polyline3D
from dloasm.picking import (Event, EventKind, PickCounters, PickParams,
                            PickState, TERMINAL_STATES, TRANSITIONS,
                            fz_threshold, grasp_from_skeleton,
                            pendular_primitive, run_pick, step)
from dloasm.scene import DloInstance, DloSpec, Scene, SensorNoise
from dloasm.segmentation import SegParams
from dloasm.sim import Simulator


SPEC = DloSpec(length=0.4, diameter=0.011, mass=0.13)


class TestForceThreshold:
    def test_frozen_values(self):
        # independently computed: m * 9.81 * eta
        assert np.isclose(fz_threshold(0.13, 1.175), 1.4984775)
        assert np.isclose(fz_threshold(0.10, 1.175), 1.1526750)
        assert np.isclose(0.13 * 9.81, 1.2753)  # lone weight sits below

    def test_lone_weight_below_threshold(self):
        assert 0.13 * 9.81 < fz_threshold(0.13, 1.175)

    def test_pair_weight_above_threshold(self):
        assert 2 * 0.13 * 9.81 > fz_threshold(0.13, 1.175)

    def test_validation(self):
        with pytest.raises(DegenerateInput):
            fz_threshold(0.0, 1.175)
        with pytest.raises(DegenerateInput):
            fz_threshold(0.13, 0.9)


class TestGraspPose:
    def curve(self):
        n = 41
        s = np.linspace(0.0, 0.4, n)
        return Polyline3D(np.column_stack([s, np.zeros(n), np.full(n, 0.01)]))

    def test_midpoint_grasp(self):
        g = grasp_from_skeleton(self.curve(), 0.5)
        assert np.allclose(g.position, [0.2, 0.0, 0.01])
        assert np.isclose(g.yaw, 0.0)

    def test_r_is_clamped(self):
        g = grasp_from_skeleton(self.curve(), 1.7)
        assert np.allclose(g.position, [0.4, 0.0, 0.01])

    def test_yaw_follows_tangent(self):
        pts = np.column_stack([np.zeros(11), np.linspace(0, 0.4, 11),
                               np.full(11, 0.01)])
        g = grasp_from_skeleton(Polyline3D(pts), 0.5)
        assert np.isclose(g.yaw, np.pi / 2)

    def test_vertical_segment_rejected(self):
        pts = np.column_stack([np.zeros(5), np.zeros(5), np.linspace(0, 0.2, 5)])
        with pytest.raises(VerticalSegment):
            grasp_from_skeleton(Polyline3D(pts), 0.5)

    def test_params_validation(self):
        with pytest.raises(DegenerateInput):
            PickParams(eta_fz=0.5)
        with pytest.raises(DegenerateInput):
            PickParams(r=1.5)


EVENTS_BY_KIND = {
    EventKind.CLOSURE: [Event(EventKind.CLOSURE, closure_width=w, w_min=0.005)
                        for w in (0.0, 0.006)],
    EventKind.FORCE: [Event(EventKind.FORCE, fz=f, threshold=1.4985)
                      for f in (1.27, 2.55)],
}


def events_for(kind):
    return EVENTS_BY_KIND.get(kind, [Event(kind)])


class TestStateMachine:
    def test_nominal_success_trace(self):
        p = PickParams()
        c = PickCounters()
        s = PickState.HOME
        trace = [
            Event(EventKind.POSE_AVAILABLE),
            Event(EventKind.ARRIVED),
            Event(EventKind.CLOSED),
            Event(EventKind.CLOSURE, closure_width=0.011, w_min=0.0055),
            Event(EventKind.LIFTED),
            Event(EventKind.FORCE, fz=1.2753, threshold=1.4985),
        ]
        for e in trace:
            s = step(s, e, p, c)
        assert s is PickState.RETAIN

    def test_low_force_retains_high_force_disentangles(self):
        p = PickParams()
        s = step(PickState.STATIC_CHECK,
                 Event(EventKind.FORCE, fz=1.2753, threshold=1.4985),
                 p, PickCounters())
        assert s is PickState.RETAIN
        s = step(PickState.STATIC_CHECK,
                 Event(EventKind.FORCE, fz=2.5506, threshold=1.4985),
                 p, PickCounters())
        assert s is PickState.DISENTANGLE

    def test_disentangle_attempts_bounded_then_abort(self):
        p = PickParams(max_disentangle=2)
        c = PickCounters()
        e = Event(EventKind.FORCE, fz=9.9, threshold=1.4985)
        assert step(PickState.STATIC_CHECK, e, p, c) is PickState.DISENTANGLE
        assert step(PickState.STATIC_CHECK, e, p, c) is PickState.DISENTANGLE
        assert step(PickState.STATIC_CHECK, e, p, c) is PickState.ABORT

    def test_failed_closure_retries_then_aborts(self):
        p = PickParams(max_grasp_attempts=2)
        c = PickCounters()
        e = Event(EventKind.CLOSURE, closure_width=0.0, w_min=0.0055)
        assert step(PickState.CHECK_CLOSURE, e, p, c) is PickState.HOME
        assert step(PickState.CHECK_CLOSURE, e, p, c) is PickState.ABORT

    def test_terminal_states_reject_events(self):
        for s in TERMINAL_STATES:
            with pytest.raises(ProtocolError):
                step(s, Event(EventKind.ARRIVED), PickParams(), PickCounters())

    def test_undocumented_pairs_rejected(self):
        for state in PickState:
            if state in TERMINAL_STATES:
                continue
            for kind in EventKind:
                if (state, kind) in TRANSITIONS:
                    continue
                with pytest.raises(ProtocolError):
                    step(state, Event(kind), PickParams(), PickCounters())

    def test_documented_pairs_stay_documented(self):
        for (state, kind), allowed in TRANSITIONS.items():
            for event in events_for(kind):
                out = step(state, event, PickParams(), PickCounters())
                assert out in allowed

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_random_walks_terminate_within_counter_bounds(self, seed):
        rng = np.random.default_rng(seed)
        p = PickParams()
        c = PickCounters()
        s = PickState.HOME
        hops = 0
        while s not in TERMINAL_STATES:
            kinds = [k for (st_, k) in TRANSITIONS if st_ is s]
            kind = kinds[int(rng.integers(len(kinds)))]
            choices = events_for(kind)
            s = step(s, choices[int(rng.integers(len(choices)))], p, c)
            hops += 1
            # every cycle through the graph consumes a bounded counter
            assert hops <= 6 + 3 * (p.max_grasp_attempts + p.max_disentangle)
        assert c.grasp_attempts <= p.max_grasp_attempts
        assert c.disentangle_attempts <= p.max_disentangle


class TestPendularPrimitive:
    def test_zero_amplitude_is_stationary(self):
        from dloasm.geometry import Pose
        grasp = Pose(np.array([0.3, 0.2, 0.1]))
        wps = pendular_primitive(PickParams(pendulum_amplitude=0.0), grasp)
        assert len(wps) == 1
        assert np.allclose(wps[0].position, grasp.position)

    def test_waypoint_count_and_return(self):
        from dloasm.geometry import Pose
        grasp = Pose(np.array([0.3, 0.2, 0.1]))
        p = PickParams(pendulum_cycles=2)
        wps = pendular_primitive(p, grasp, points_per_cycle=8)
        assert len(wps) == 17
        assert np.allclose(wps[-1].position, grasp.position, atol=1e-9)


class TestRunPick:
    def straight_scene(self, n=1, entangle=None):
        instances = []
        for k in range(n):
            pts = np.column_stack([np.linspace(0.1, 0.5, 41),
                                   np.full(41, 0.12 + 0.08 * k),
                                   np.full(41, SPEC.radius)])
            instances.append(DloInstance(k, SPEC, Polyline3D(pts), k))
        return Scene((0.6, 0.4), 0.25, instances, entangle or [], 0)

    def test_single_dlo_zero_noise_retained(self):
        sim = Simulator(self.straight_scene(), SensorNoise.zero())
        out = run_pick(sim, SegParams(), PickParams())
        assert out.success and out.terminal == "Retain"
        assert out.entanglement_detections == 0
        assert sim.deposited == [0]

    def test_entangled_pair_detected_and_resolved(self):
        scene = self.straight_scene(2, entangle=[(0, 1, 1.0)])
        sim = Simulator(scene, SensorNoise.zero())
        out = run_pick(sim, SegParams(), PickParams())
        assert out.success
        assert out.entanglement_detections >= 1

    def test_failure_reported_as_outcome_not_exception(self):
        # empty pile: planner finds nothing, trial aborts with no_pose
        scene = self.straight_scene()
        sim = Simulator(scene, SensorNoise.zero())
        sim.pile.clear()
        sim._version += 1
        out = run_pick(sim, SegParams(), PickParams())
        assert not out.success
        assert out.failure_category == "no_pose"
        assert out.target_uid is None
