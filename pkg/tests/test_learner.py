import numpy as np
import pytest

from demoskill import geometry as geo
from demoskill import grounding as gr
from demoskill import learner as ln
from demoskill import simenv
from demoskill.errors import ValidationError
from demoskill.geometry import Pose
from demoskill.reasoner import ReasonerResponse
from demoskill.scripted import ScriptedReasoner

from test_programs import make_arc_traj, props_with_extents


class StubReasoner:
    def __init__(self, payloads):
        self.payloads = payloads

    def query(self, q):
        payload = self.payloads[q.kind]
        return ReasonerResponse(kind=q.kind, payload=payload, raw="stub")


def grasp_at(norm_pos, master, quat=None):
    pos = geo.denormalize_point(norm_pos, master)
    return gr.GraspInteraction(grasp_poses=[Pose(pos, quat if quat is not None
                                                 else [1, 0, 0, 0])])


class TestRenderInteraction:
    def test_three_grasps_three_notations(self):
        master = props_with_extents([0.4, 0.3, 0.2])
        ias = [grasp_at([0, 0.4, 0.1], master), grasp_at([0.1, 0.4, 0], master),
               grasp_at([-0.1, 0.45, 0], master)]
        iv = ln.render_interaction(ias, master)
        labels = [n["label"] for n in iv.scene["notations"]]
        assert labels == ["1", "2", "3"]
        assert iv.images == []

    def test_two_waypoint_trajectory_keeps_both(self):
        master = props_with_extents([0.4, 0.3, 0.2])
        traj = gr.ManipulationInteraction([(0.0, Pose([0, 0, 0])), (0.1, Pose([0.1, 0, 0]))])
        iv = ln.render_interaction([traj], master)
        assert len(iv.scene["keypoints"]) == 2

    def test_long_arc_subsampled_to_ten(self):
        master = props_with_extents([0.5, 0.5, 0.5])
        traj = make_arc_traj([0, 0, 0], [0, 0, 1], [0.2, 0, 0], 1.5, n=100)
        iv = ln.render_interaction([traj], master)
        kps = iv.scene["keypoints"]
        assert len(kps) == 10
        assert np.allclose(kps[0]["position"], traj.trajectory[0][1].position)
        assert np.allclose(kps[-1]["position"], traj.trajectory[-1][1].position)

    def test_image_renderer_invoked(self):
        master = props_with_extents([0.4, 0.3, 0.2])
        calls = []

        def renderer(scene):
            calls.append(scene)
            return ["/tmp/fig.png"]

        iv = ln.render_interaction([grasp_at([0, 0.4, 0], master)], master,
                                   image_renderer=renderer)
        assert iv.images == ["/tmp/fig.png"]
        assert len(calls) == 1


class TestLearnSemantic:
    def test_single_pose_single_group(self):
        master = props_with_extents([0.4, 0.3, 0.2])
        iv = ln.render_interaction([grasp_at([0, -0.52, 0], master)], master)
        sem = ln.learn_semantic(iv, "grasp the obj", ScriptedReasoner())
        assert sem.grasp_groups == [[0]]
        assert sem.statements

    def test_two_faces_two_groups(self):
        master = props_with_extents([0.4, 0.3, 0.2])
        ias = [grasp_at([0, -0.52, 0.02], master), grasp_at([0.01, -0.53, 0], master),
               grasp_at([0, 0.1, 0.55], master)]
        iv = ln.render_interaction(ias, master)
        sem = ln.learn_semantic(iv, "grasp", ScriptedReasoner())
        assert len(sem.grasp_groups) == 2
        assert sorted(i for g in sem.grasp_groups for i in g) == [0, 1, 2]

    def test_invalid_indices_rejected(self):
        master = props_with_extents([0.4, 0.3, 0.2])
        iv = ln.render_interaction([grasp_at([0, -0.52, 0], master)], master)
        bad = StubReasoner({"GraspGrouping": {"statements": ["s"], "groups": [[0, 0]]}})
        with pytest.raises(ValidationError):
            ln.learn_semantic(iv, "grasp", bad)

    def test_incomplete_partition_rejected(self):
        master = props_with_extents([0.4, 0.3, 0.2])
        ias = [grasp_at([0, -0.52, 0], master), grasp_at([0, -0.53, 0], master)]
        iv = ln.render_interaction(ias, master)
        bad = StubReasoner({"GraspGrouping": {"statements": ["s"], "groups": [[0]]}})
        with pytest.raises(ValidationError):
            ln.learn_semantic(iv, "grasp", bad)

    def test_manipulation_class_set(self):
        master = props_with_extents([0.5, 0.5, 0.5])
        traj = make_arc_traj([0, 0, 0], [0, 0, 1], [0.2, 0, 0], 1.2)
        iv = ln.render_interaction([traj], master)
        sem = ln.learn_semantic(iv, "swing", ScriptedReasoner())
        assert sem.trajectory_class == "arc"


class TestLearnGraspGeometric:
    def test_singleton_region_inflated(self):
        master = props_with_extents([0.4, 0.3, 0.2])
        sem = ln.SemanticConstraints(statements=["s"], grasp_groups=[[0]])
        ias = [grasp_at([0.0, 0.45, 0.1], master)]
        regions = ln.learn_grasp_geometric(sem, ias, master, margin=0.02)
        r = regions.regions[0]
        assert np.allclose(r.position_lo, [-0.02, 0.43, 0.08], atol=1e-12)
        assert np.allclose(r.position_hi, [0.02, 0.47, 0.12], atol=1e-12)
        assert r.contains([0.0, 0.45, 0.1])

    def test_span_covers_pose_spread(self):
        master = props_with_extents([0.4, 0.3, 0.2])
        sem = ln.SemanticConstraints(statements=["s"], grasp_groups=[[0, 1]])
        ias = [grasp_at([-0.1, 0.45, 0], master), grasp_at([0.1, 0.45, 0], master)]
        r = ln.learn_grasp_geometric(sem, ias, master).regions[0]
        assert r.position_hi[0] - r.position_lo[0] >= 0.2

    def test_containment_of_all_demo_poses(self, rng):
        master = props_with_extents([0.4, 0.3, 0.2])
        quats = []
        ias = []
        for _ in range(5):
            n = np.array([0, -0.55, 0]) + rng.uniform(-0.02, 0.02, 3)
            q = geo.quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 0.05))
            quats.append(q)
            ias.append(grasp_at(n, master, q))
        sem = ln.SemanticConstraints(statements=["s"], grasp_groups=[[0, 1, 2, 3, 4]])
        r = ln.learn_grasp_geometric(sem, ias, master).regions[0]
        for ia, q in zip(ias, quats):
            n = geo.normalize_point(ia.grasp_poses[0].position, master)
            assert r.contains(n, quaternion=q)

    def test_empty_group_rejected(self):
        master = props_with_extents([0.4, 0.3, 0.2])
        sem = ln.SemanticConstraints(statements=["s"], grasp_groups=[[]])
        with pytest.raises(ValidationError):
            ln.learn_grasp_geometric(sem, [grasp_at([0, 0.45, 0], master)], master)

    def test_uniform_scale_equivariance(self, rng):
        base = props_with_extents([0.4, 0.3, 0.2])
        scaled = props_with_extents([0.8, 0.6, 0.4])
        sem = ln.SemanticConstraints(statements=["s"], grasp_groups=[[0, 1, 2]])
        norms = [rng.uniform(-0.5, 0.5, 3) for _ in range(3)]
        ias_a = [grasp_at(n, base) for n in norms]
        ias_b = [grasp_at(n, scaled) for n in norms]
        ra = ln.learn_grasp_geometric(sem, ias_a, base).regions[0]
        rb = ln.learn_grasp_geometric(sem, ias_b, scaled).regions[0]
        assert np.allclose(ra.position_lo, rb.position_lo, atol=1e-9)
        assert np.allclose(ra.position_hi, rb.position_hi, atol=1e-9)


class TestLearnSkill:
    def _demo_inputs(self, template, n_demos, phase):
        reasoner = ScriptedReasoner()
        segs, ias, masters = [], [], []
        for seed in range(n_demos):
            demo = simenv.generate_demo(template, seed=seed)
            parsed = [gr.classify_segment(s, demo.trace, reasoner)
                      for s in gr.parse_segments(demo.trace, 0.01, 0.05)]
            for s in parsed:
                if s.phase != phase:
                    continue
                segs.append(s)
                ias.append(gr.extract_interaction(s, demo.trace))
                frame = demo.trace.frames[0]
                local = geo.inverse(frame.object_poses[s.master_id]).transform_points(
                    frame.object_clouds[s.master_id].points)
                masters.append(geo.compute_bbox(
                    geo.PointCloud(local, "object"), s.master_id))
        return segs, ias, masters

    def test_five_demo_grasp_skill(self):
        segs, ias, masters = self._demo_inputs("drawer", 5, gr.GRASPING)
        skill = ln.learn_skill(segs, ias, masters, ScriptedReasoner())
        assert skill.phase == gr.GRASPING
        assert len(skill.geometric.regions) == 1
        assert len(skill.provenance) == 5
        for ia, m in zip(ias, masters):
            n = geo.normalize_point(ia.grasp_poses[0].position, m)
            assert skill.geometric.regions[0].contains(n)

    def test_single_demo_valid(self):
        segs, ias, masters = self._demo_inputs("drawer", 1, gr.MANIPULATION)
        skill = ln.learn_skill(segs, ias, masters, ScriptedReasoner())
        assert skill.phase == gr.MANIPULATION
        assert skill.geometric.primitive == "line"
        assert skill.provenance == ["drawer-0"]

    def test_zero_demos_rejected(self):
        with pytest.raises(ValidationError):
            ln.learn_skill([], [], [], ScriptedReasoner())

    def test_mixed_phase_rejected(self):
        ga, ia_g, ma = self._demo_inputs("drawer", 1, gr.GRASPING)
        gb, ia_m, mb = self._demo_inputs("drawer", 1, gr.MANIPULATION)
        with pytest.raises(ValidationError):
            ln.learn_skill(ga + gb, ia_g + ia_m, ma + mb, ScriptedReasoner())


class TestFaces:
    def test_face_names(self):
        assert ln.face_of([0.6, 0, 0]) == "right"
        assert ln.face_of([-0.6, 0.1, 0]) == "left"
        assert ln.face_of([0, 0.7, 0.1]) == "back"
        assert ln.face_of([0, -0.7, 0]) == "front"
        assert ln.face_of([0, 0.1, 0.9]) == "top"
        assert ln.face_of([0.1, 0, -0.9]) == "bottom"
