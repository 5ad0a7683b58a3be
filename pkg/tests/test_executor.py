import numpy as np
import pytest

from demoskill import executor as ex
from demoskill import geometry as geo
from demoskill import simenv
from demoskill.adapter import failure_reason
from demoskill.config import PipelineConfig
from demoskill.errors import ExecutionError, ValidationError
from demoskill.geometry import PointCloud, Pose
from demoskill.learner import GraspRegionSet, Region
from demoskill.scripted import ScriptedReasoner

from conftest import homogeneous_oracle, random_pose_arrays
from test_programs import fit, make_line_traj, props_with_extents


def region(lo, hi, quat=(1, 0, 0, 0), cone=10.0):
    return Region(position_lo=np.asarray(lo, dtype=float),
                  position_hi=np.asarray(hi, dtype=float),
                  orientation_ref=np.asarray(quat, dtype=float),
                  orientation_cone_deg=cone)


def make_master(extents=(0.4, 0.3, 0.2), pose=None):
    props = props_with_extents(extents)
    return ex.WorldObject(object_id="obj", props=props,
                          base_pose=pose or Pose.identity())


class TestSampleGrasps:
    def test_point_region_all_at_center(self, rng):
        master = make_master()
        regions = GraspRegionSet([region([0.1, 0.2, 0.0], [0.1, 0.2, 0.0], cone=0)])
        samples = ex.sample_grasps(regions, master, 20, rng)
        expected = geo.denormalize_point([0.1, 0.2, 0.0], master.props)
        for s in samples:
            assert np.allclose(s.position, expected, atol=1e-12)

    def test_uniform_moments(self, rng):
        master = make_master(extents=(1.0, 1.0, 1.0))
        lo, hi = np.array([-0.5, -0.5, -0.5]), np.array([0.5, 0.5, 0.5])
        regions = GraspRegionSet([region(lo, hi)])
        n = 1000
        samples = ex.sample_grasps(regions, master, n, rng)
        pts = np.array([s.position for s in samples])
        center = geo.denormalize_point((lo + hi) / 2, master.props)
        widths = (hi - lo) * master.props.bbox_extents
        sigma_mean = widths / np.sqrt(12 * n)
        assert np.all(np.abs(pts.mean(axis=0) - center) < 3 * sigma_mean)
        for s in samples:
            norm = geo.normalize_point(s.position, master.props)
            assert np.all(norm >= lo - 1e-9) and np.all(norm <= hi + 1e-9)

    def test_rotation_equivariance(self, rng):
        lo, hi = [0.0, 0.3, 0.0], [0.2, 0.5, 0.1]
        regions = GraspRegionSet([region(lo, hi)])
        plain = make_master()
        rotated = make_master(pose=Pose.from_axis_angle([0, 0, 1], np.pi / 2))
        a = ex.sample_grasps(regions, plain, 50, np.random.default_rng(7))
        b = ex.sample_grasps(regions, rotated, 50, np.random.default_rng(7))
        rot = rotated.base_pose
        for pa, pb in zip(a, b):
            assert np.allclose(rot.transform_point(pa.position), pb.position, atol=1e-9)

    def test_volume_weighting(self, rng):
        master = make_master(extents=(1, 1, 1))
        big = region([-0.5, -0.5, -0.5], [0.4, 0.4, 0.4])
        tiny = region([0.45, 0.45, 0.45], [0.46, 0.46, 0.46])
        regions = GraspRegionSet([big, tiny])
        samples = ex.sample_grasps(regions, master, 500, rng)
        in_tiny = sum(1 for s in samples
                      if np.all(geo.normalize_point(s.position, master.props) > 0.44))
        assert in_tiny < 25  # tiny region has ~1e-6 of the volume

    def test_cone_respected(self, rng):
        master = make_master()
        ref = geo.quat_from_axis_angle([0, 1, 0], 0.4)
        regions = GraspRegionSet([region([0, 0, 0], [0, 0, 0], quat=ref, cone=15.0)])
        for s in ex.sample_grasps(regions, master, 200, rng):
            local = geo.relative_pose(master.base_pose, s)
            assert np.degrees(geo.quat_angle(local.quaternion, ref)) <= 15.0 + 1e-9

    def test_n_positive(self, rng):
        master = make_master()
        with pytest.raises(ValidationError):
            ex.sample_grasps(GraspRegionSet([region([0, 0, 0], [0, 0, 0])]),
                             master, 0, rng)


class TestInstantiate:
    def _line_program(self, master_props):
        traj = make_line_traj([0.0, -0.1, 0.0], [0, -1, 0], 0.15)
        return fit(traj, "line", master_props)

    def test_identity_master_identity_grasp(self):
        master = make_master()
        slave = make_master()
        prog = self._line_program(master.props)
        traj = ex.instantiate_world_trajectory(prog, master, slave, Pose.identity())
        from demoskill.programs import evaluate_program
        rel = evaluate_program(prog, master.props)
        for a, b in zip(traj, rel):
            assert np.allclose(a.position, b.position, atol=1e-12)

    def test_translated_master_translates_all(self):
        base = make_master()
        moved = make_master(pose=Pose([1.0, 0, 0]))
        prog = self._line_program(base.props)
        slave = make_master()
        ta = ex.instantiate_world_trajectory(prog, base, slave, Pose.identity())
        tb = ex.instantiate_world_trajectory(prog, moved, slave, Pose.identity())
        for a, b in zip(ta, tb):
            assert np.allclose(b.position - a.position, [1, 0, 0], atol=1e-12)

    def test_matches_matrix_chain_oracle(self, rng):
        for _ in range(50):
            mp, mq = random_pose_arrays(rng)
            gp, gq = random_pose_arrays(rng, scale=0.2)
            master = make_master(pose=Pose(mp, mq))
            slave = make_master()
            prog = self._line_program(master.props)
            grasp = Pose(gp, gq)
            traj = ex.instantiate_world_trajectory(prog, master, slave, grasp)
            from demoskill.programs import evaluate_program
            rel = evaluate_program(prog, master.props)
            m_master = homogeneous_oracle(mp, Pose(mp, mq).quaternion)
            m_grasp = homogeneous_oracle(gp, Pose(gp, gq).quaternion)
            for out, r in zip(traj, rel):
                expected = m_master @ homogeneous_oracle(r.position, r.quaternion) @ m_grasp
                assert np.allclose(out.matrix(), expected, atol=1e-9)


class TestScore:
    def _world(self, obstacles=()):
        return ex.WorldState(objects={}, gripper=ex.GripperState(pose=Pose.identity()),
                             obstacles=list(obstacles))

    def _traj(self, n=10):
        return [Pose([0.05 * k, 0, 0]) for k in range(n)]

    def test_no_obstacles_full_score(self):
        assert ex.score_trajectory(self._traj(), self._world()) == 1.0

    def test_wall_half_way(self):
        # waypoints at x = 0, 0.05, ..., 0.45; wall blocks the sweep into wp 5,
        # so exactly the leading 5 of 10 waypoints stay feasible
        wall = ex.Box(center=[0.225, 0, 0], extents=[0.02, 1, 1])
        score = ex.score_trajectory(self._traj(), self._world([wall]))
        assert score == 0.5
        # brute-force sweep oracle over fine samples agrees
        blocked = [any(abs(x - 0.225) <= 0.01 for x in
                       np.linspace(0.05 * max(k - 1, 0), 0.05 * k, 200))
                   for k in range(10)]
        expected = blocked.index(True) / 10
        assert score == expected

    def test_first_waypoint_blocked(self):
        wall = ex.Box(center=[0, 0, 0], extents=[0.05, 1, 1])
        assert ex.score_trajectory(self._traj(), self._world([wall])) == 0.0

    def test_monotone_in_obstacles(self, rng):
        for _ in range(20):
            traj = [Pose(p) for p in np.cumsum(rng.uniform(-0.05, 0.08, (12, 3)), axis=0)]
            world = self._world()
            prev = ex.score_trajectory(traj, world)
            for _ in range(4):
                world.obstacles.append(ex.Box(center=rng.uniform(-0.3, 0.6, 3),
                                              extents=rng.uniform(0.02, 0.2, 3)))
                cur = ex.score_trajectory(traj, world)
                assert cur <= prev + 1e-12
                prev = cur

    def test_joint_range_limits_score(self):
        world = simenv.build_world("drawer", seed=0)
        drawer = world.objects["drawer"]
        axis_world = geo.quat_rotate(drawer.base_pose.quaternion,
                                     np.asarray(drawer.kinematic["axis"]))
        # straight pull twice the range: only q = 0..0.15 of 0..0.30 is on-range
        traj = [Pose(drawer.pose.position + axis_world * (0.3 * k / 9))
                for k in range(10)]
        score = ex.score_trajectory(traj, world, slave=drawer,
                                    grasp_in_slave=Pose.identity())
        assert score == 0.5

    def test_empty_trajectory_rejected(self):
        with pytest.raises(ValidationError):
            ex.score_trajectory([], self._world())


class TestGraspValidity:
    def test_within_envelope(self):
        world = simenv.build_world("drawer", seed=0)
        drawer = world.objects["drawer"]
        marker = drawer.markers["grasp_site"]
        g_local = Pose(np.asarray(marker["position"]), np.asarray(marker["quaternion"]))
        g_world = geo.compose(drawer.pose, g_local)
        assert ex.grasp_is_valid(drawer, g_world, 0.01, 15.0)

    def test_far_pose_invalid(self):
        world = simenv.build_world("drawer", seed=0)
        drawer = world.objects["drawer"]
        g_world = geo.compose(drawer.pose, Pose([0.3, 0.3, 0.3]))
        assert not ex.grasp_is_valid(drawer, g_world, 0.01, 15.0)

    def test_wrong_approach_invalid(self):
        world = simenv.build_world("drawer", seed=0)
        drawer = world.objects["drawer"]
        marker = drawer.markers["grasp_site"]
        tipped = geo.quat_mul(geo.quat_from_axis_angle([1, 0, 0], np.radians(40)),
                              np.asarray(marker["quaternion"]))
        g_world = geo.compose(drawer.pose, Pose(np.asarray(marker["position"]), tipped))
        assert not ex.grasp_is_valid(drawer, g_world, 0.01, 15.0)


def drawer_setup(seed=0):
    """World plus an adapted subtask built from the sim ground truth."""
    world = simenv.build_world("drawer", seed=seed)
    drawer = world.objects["drawer"]
    cabinet = world.objects["cabinet"]
    marker = drawer.markers["grasp_site"]
    center = geo.normalize_point(np.asarray(marker["position"]), drawer.props)
    regions = GraspRegionSet([Region(position_lo=center - 0.01, position_hi=center + 0.01,
                                     orientation_ref=np.asarray(marker["quaternion"]),
                                     orientation_cone_deg=5.0)])
    rel0 = geo.relative_pose(cabinet.pose, drawer.pose)
    axis = np.asarray(drawer.kinematic["axis"])
    joint_range = drawer.kinematic["range"]
    waypoints = [(0.1 * k, Pose(rel0.position + axis * (joint_range * k / 9),
                                rel0.quaternion)) for k in range(10)]
    from demoskill.grounding import ManipulationInteraction
    prog = fit(ManipulationInteraction(waypoints), "line", cabinet.props)
    adapted = ex.AdaptedSkill(grasp_object="drawer", master_id="cabinet",
                              regions=regions, program=prog, subtask="pull the drawer")
    return world, adapted


class TestSelectAndExecute:
    def test_drawer_opens(self):
        cfg = PipelineConfig()
        world, adapted = drawer_setup()
        out = ex.select_and_execute(adapted, world, cfg,
                                    rng=np.random.default_rng(0),
                                    success_predicate=lambda w: simenv.judge(w, "drawer"))
        assert out.success
        drawer = world.objects["drawer"]
        assert drawer.q >= 0.9 * adapted.program.path_length(world.objects["cabinet"].props)

    def test_all_candidates_blocked(self):
        cfg = PipelineConfig()
        world, adapted = drawer_setup()
        drawer = world.objects["drawer"]
        marker = drawer.markers["grasp_site"]
        site_world = drawer.pose.transform_point(np.asarray(marker["position"]))
        world.obstacles.append(ex.Box(center=site_world, extents=[0.4, 0.4, 0.4]))
        with pytest.raises(ExecutionError, match="no feasible plan"):
            ex.select_and_execute(adapted, world, cfg, rng=np.random.default_rng(0))

    def test_injected_miss_recovered_with_failure_loop(self):
        # seed 1 at 50% fault rate: first grasp is faulted, the re-grasp lands
        cfg = PipelineConfig(fault_rate=0.5, failure_rounds=2)
        world, adapted = drawer_setup()
        reasoner = ScriptedReasoner()
        hook = lambda report: failure_reason(report, "pull", reasoner, max_rounds=2)
        out = ex.select_and_execute(adapted, world, cfg, failure_hook=hook,
                                    rng=np.random.default_rng(1),
                                    success_predicate=lambda w: simenv.judge(w, "drawer"))
        assert out.success
        assert out.rounds_used == 1
        assert out.events[0] == "grasp-miss (injected)"
        assert out.reports[0].classification == "grasp-miss"

    def test_abort_after_round_cap(self):
        cfg = PipelineConfig(fault_rate=1.0, failure_rounds=2)
        world, adapted = drawer_setup()
        reasoner = ScriptedReasoner()
        hook = lambda report: failure_reason(report, "pull", reasoner, max_rounds=2)
        out = ex.select_and_execute(adapted, world, cfg, failure_hook=hook,
                                    rng=np.random.default_rng(0))
        assert out.aborted and not out.success
        assert out.rounds_used == 3  # two corrective rounds, then the abort round

    def test_argmax_deterministic(self):
        cfg = PipelineConfig()
        world_a, adapted = drawer_setup()
        out_a = ex.select_and_execute(adapted, world_a, cfg, rng=np.random.default_rng(5),
                                      success_predicate=lambda w: True)
        world_b, adapted_b = drawer_setup()
        out_b = ex.select_and_execute(adapted_b, world_b, cfg, rng=np.random.default_rng(5),
                                      success_predicate=lambda w: True)
        assert np.allclose(out_a.plan.grasp.position, out_b.plan.grasp.position, atol=1e-12)

    def test_hinged_object_stays_on_manifold(self):
        cfg = PipelineConfig()
        world = simenv.build_world("hinged-door", seed=1)
        door = world.objects["door"]
        body = world.objects["body"]
        marker = door.markers["grasp_site"]
        center = geo.normalize_point(np.asarray(marker["position"]), door.props)
        regions = GraspRegionSet([Region(position_lo=center - 0.005,
                                         position_hi=center + 0.005,
                                         orientation_ref=np.asarray(marker["quaternion"]),
                                         orientation_cone_deg=3.0)])
        from demoskill.executor import joint_pose
        from demoskill.grounding import ManipulationInteraction
        waypoints = []
        for k in range(12):
            q = door.kinematic["range"] * k / 11
            pose = joint_pose(door.base_pose, door.kinematic, q)
            waypoints.append((0.1 * k, geo.relative_pose(body.pose, pose)))
        prog = fit(ManipulationInteraction(waypoints), "arc", body.props)
        adapted = ex.AdaptedSkill(grasp_object="door", master_id="body",
                                  regions=regions, program=prog, subtask="swing")
        origin_world = door.base_pose.transform_point(np.asarray(door.kinematic["origin"]))
        radius = np.linalg.norm(door.base_pose.position - origin_world)
        out = ex.select_and_execute(adapted, world, cfg, rng=np.random.default_rng(2),
                                    success_predicate=lambda w: simenv.judge(w, None))
        assert out.success
        assert np.linalg.norm(door.pose.position - origin_world) == pytest.approx(
            radius, abs=1e-9)
