import numpy as np
import pytest

from dloasm.errors import DegenerateInput, PlanFailure
from dloasm.geometry import (Polyline3D, Pose, normal_for_tangent,
                             point_at_arc, tangent_at_arc)
from dloasm.handover import World
from dloasm.mounting import (Fixture, FixtureRecord, MountParams, MountResult,
                             execute_mount, insertion_success_probability,
                             plan_mount)


def straight(length=0.6, n=121, z=0.05):
    s = np.linspace(0.0, length, n)
    return Polyline3D(np.column_stack([s, np.zeros(n), np.full(n, z)]))


def fixture_at(shape, arc, uid=0, tolerance=0.003):
    pos = point_at_arc(shape, arc)
    t = tangent_at_arc(shape, arc)
    n = normal_for_tangent(t)
    return Fixture(uid, Pose(pos, np.column_stack([t, n, np.cross(t, n)])),
                   tolerance=tolerance)


class TestFixture:
    def test_validation(self):
        with pytest.raises(DegenerateInput):
            Fixture(0, Pose(np.zeros(3)), tolerance=0.0)

    def test_serializes(self):
        fx = fixture_at(straight(), 0.3)
        data = fx.to_json()
        assert data["uid"] == 0 and data["tolerance"] == 0.003

    def test_params_validation(self):
        with pytest.raises(DegenerateInput):
            MountParams(grasp_halfwidth=0.0)


class TestPlanMount:
    def test_three_clip_plan(self):
        shape = straight()
        fixtures = [fixture_at(shape, a, uid=i)
                    for i, a in enumerate((0.2, 0.3, 0.4))]
        plan = plan_mount(shape, fixtures, MountParams())
        assert len(plan.fixtures) == 3
        for fp, arc in zip(plan.fixtures, (0.2, 0.3, 0.4)):
            assert abs(fp.arc - arc) < 1e-6
            assert len(fp.paths) == 2          # one path per arm
            assert fp.grasp_arcs[0] < fp.arc < fp.grasp_arcs[1]

    def test_clip_inside_end_margin_fails_with_fixture_name(self):
        shape = straight()
        fixtures = [fixture_at(shape, 0.005, uid=7)]
        with pytest.raises(PlanFailure, match="fixture 7.*insufficient space"):
            plan_mount(shape, fixtures, MountParams(end_margin=0.015))

    def test_overlapping_claims_fail(self):
        shape = straight()
        fixtures = [fixture_at(shape, 0.300, uid=0),
                    fixture_at(shape, 0.305, uid=1)]
        with pytest.raises(PlanFailure, match="fixture 1.*overlaps"):
            plan_mount(shape, fixtures, MountParams())

    def test_blocked_arm_path_fails(self):
        shape = straight()
        world = World(bounds=(np.array([-0.1, -0.1, 0.0]),
                              np.array([1.0, 1.0, 0.04])))
        # approach from above starts outside this flat world
        with pytest.raises(PlanFailure, match="arm"):
            plan_mount(shape, [fixture_at(shape, 0.3)], MountParams(),
                       world=world)


class TestExecuteMount:
    def plan(self, arcs=(0.2, 0.3, 0.4), tolerance=0.003):
        shape = straight()
        fixtures = [fixture_at(shape, a, uid=i, tolerance=tolerance)
                    for i, a in enumerate(arcs)]
        return plan_mount(shape, fixtures, MountParams())

    def test_zero_noise_all_insertions_succeed(self):
        plan = self.plan()
        res = execute_mount(plan, MountParams(tcp_exec_sigma=0.0))
        assert res.success
        assert [r.fixture_uid for r in res.records] == [0, 1, 2]
        assert all(r.success and r.category is None for r in res.records)

    def test_large_noise_flags_insertion_miss(self):
        plan = self.plan(tolerance=0.0001)
        rng = np.random.default_rng(0)
        res = execute_mount(plan, MountParams(tcp_exec_sigma=0.01), rng)
        assert not res.success
        assert any(r.category == "insertion_miss" for r in res.records)

    def test_records_are_ordered_and_immutable_counts(self):
        plan = self.plan()
        rng = np.random.default_rng(3)
        res = execute_mount(plan, MountParams(tcp_exec_sigma=0.002), rng)
        assert len(res.records) == len(plan.fixtures)

    def test_empty_plan_is_not_a_success(self):
        from dloasm.mounting import MountPlan
        res = execute_mount(MountPlan(straight(), []), MountParams())
        assert not res.success
        assert res.records == []

    def test_deterministic_given_rng_seed(self):
        plan = self.plan()
        a = execute_mount(plan, MountParams(tcp_exec_sigma=0.005),
                          np.random.default_rng(11))
        b = execute_mount(plan, MountParams(tcp_exec_sigma=0.005),
                          np.random.default_rng(11))
        assert a.to_json() == b.to_json()


class TestInsertionProbability:
    def test_zero_sigma_is_certain(self):
        assert insertion_success_probability(0.003, 0.0) == 1.0

    def test_closed_form_value(self):
        # Rayleigh CDF at tol=3 mm, sigma=5 mm: 1 - exp(-9/50)
        expect = 1.0 - np.exp(-9.0 / 50.0)
        assert np.isclose(insertion_success_probability(0.003, 0.005), expect)

    def test_monotone_in_tolerance(self):
        ps = [insertion_success_probability(t, 0.005)
              for t in (0.001, 0.003, 0.01)]
        assert ps == sorted(ps)

    def test_empirical_agreement(self):
        rng = np.random.default_rng(42)
        err = rng.normal(0.0, 0.005, (20000, 2))
        hit = (np.linalg.norm(err, axis=1) <= 0.003).mean()
        assert abs(hit - insertion_success_probability(0.003, 0.005)) < 0.01


def test_record_serialization():
    r = FixtureRecord(2, False, 0.004, "insertion_miss")
    assert r.to_json() == {"fixture_uid": 2, "success": False,
                           "lateral_offset": 0.004,
                           "category": "insertion_miss"}
    m = MountResult([r], False)
    assert m.to_json()["records"][0]["fixture_uid"] == 2
