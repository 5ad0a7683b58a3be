"""End-to-end orchestration: ground demos, learn into the bank, run tasks."""

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .adapter import adapt_grasp, adapt_manipulation, failure_reason, plan_high_level
from .bank import KnowledgeBank, PlanRecord, SkillRecord
from .config import PipelineConfig
from .errors import DemoskillError, ValidationError
from .executor import AdaptedSkill, ExecutionOutcome, WorldState, select_and_execute
from .geometry import ObjectProperties, PointCloud, Pose
from .grounding import (GRASPING, PerceptionTrace, Segment, TaskRecognition,
                        classify_segment, extract_interaction, parse_segments,
                        recognize_task)
from .learner import learn_skill
from .simenv import judge


@dataclass
class GroundedDemo:
    demo_id: str
    task: TaskRecognition
    segments: list[Segment]
    interactions: list
    masters: list[ObjectProperties]


@dataclass
class TaskOutcome:
    success: bool
    steps: list[str] = field(default_factory=list)
    subtask_outcomes: list[ExecutionOutcome] = field(default_factory=list)
    adaptation_rounds: int = 0


def master_properties(trace: PerceptionTrace, object_id: str) -> ObjectProperties:
    """Local-frame bbox of an object from the first frame's cloud."""
    frame = trace.frames[0]
    local = geo.inverse(frame.object_poses[object_id]).transform_points(
        frame.object_clouds[object_id].points)
    return geo.compute_bbox(PointCloud(local, "object"), object_id)


def hand_to_gripper_pose(cfg: PipelineConfig) -> Pose | None:
    if cfg.hand_to_gripper is None:
        return None
    v = cfg.hand_to_gripper
    return Pose(np.asarray(v[:3]), np.asarray(v[3:]))


def ground_demo(trace: PerceptionTrace, reasoner, cfg: PipelineConfig) -> GroundedDemo:
    task = recognize_task(trace, reasoner)
    segments = parse_segments(trace, cfg.epsilon, cfg.gamma,
                              debounce_frames=cfg.debounce_frames,
                              motion_threshold=cfg.motion_threshold)
    classified = [classify_segment(s, trace, reasoner, epsilon=cfg.epsilon,
                                   motion_threshold=cfg.motion_threshold)
                  for s in segments]
    offset = hand_to_gripper_pose(cfg)
    interactions = [extract_interaction(s, trace, hand_to_gripper=offset,
                                        max_waypoints=cfg.max_waypoints)
                    for s in classified]
    masters = [master_properties(trace, s.master_id) for s in classified]
    return GroundedDemo(demo_id=trace.demo_id, task=task, segments=classified,
                        interactions=interactions, masters=masters)


def learn_from_demos(traces: list[PerceptionTrace], reasoner, cfg: PipelineConfig,
                     bank: KnowledgeBank, image_renderer=None) -> dict:
    """Ground every demo, learn one skill per subtask, store plan and skills."""
    grounded = [ground_demo(t, reasoner, cfg) for t in traces]
    first = grounded[0]
    n_subtasks = len(first.segments)
    for g in grounded[1:]:
        if len(g.segments) != n_subtasks:
            raise ValidationError(
                f"demo {g.demo_id} has {len(g.segments)} segments, expected {n_subtasks}")
        for a, b in zip(first.segments, g.segments):
            if a.description != b.description:
                raise ValidationError(
                    f"subtask mismatch across demos: {a.description!r} vs {b.description!r}")
    skill_ids = []
    steps = []
    for i in range(n_subtasks):
        segs = [g.segments[i] for g in grounded]
        ias = [g.interactions[i] for g in grounded]
        masters = [g.masters[i] for g in grounded]
        skill = learn_skill(segs, ias, masters, reasoner,
                            region_margin=cfg.region_margin,
                            orientation_margin_deg=cfg.orientation_margin_deg,
                            residual_warning=cfg.residual_warning,
                            max_keypoints=cfg.max_keypoints,
                            image_renderer=image_renderer)
        record = SkillRecord(
            key={"subtask_text": skill.description,
                 "object_signature": {"name": skill.object_id,
                                      "bbox_extents": skill.object_extents}},
            value=skill)
        skill_ids.append(bank.store_skill(record))
        steps.append(skill.description)
    plan_id = bank.store_plan(PlanRecord(key=first.task.task_text, value=steps))
    return {"plan_id": plan_id, "skill_ids": skill_ids,
            "task_text": first.task.task_text, "steps": steps}


def _grasp_annotations(world: WorldState, object_id: str) -> dict:
    obj = world.objects[object_id]
    marker = obj.markers.get("grasp_site")
    if marker is None:
        return {}
    norm = geo.normalize_point(np.asarray(marker["position"]), obj.props)
    return {"grasp_site": {"position_norm": norm.tolist(), "face": marker["face"]}}


def _kinematic_annotations(world: WorldState, master_id: str, slave_id: str) -> dict:
    master = world.objects[master_id]
    slave = world.objects[slave_id]
    out = {"slave_id": slave_id}
    kin = slave.kinematic
    if kin.get("type", "free") == "free":
        out["kinematic"] = {"type": "free"}
        return out
    rel = geo.relative_pose(master.pose, slave.pose)
    axis_master = geo.quat_rotate(rel.quaternion, np.asarray(kin["axis"], dtype=float))
    entry = {"type": kin["type"], "axis": axis_master.tolist(), "range": kin.get("range")}
    if kin["type"] == "hinged":
        origin_world = slave.pose.transform_point(np.asarray(kin["origin"], dtype=float))
        origin_master = geo.inverse(master.pose).transform_point(origin_world)
        entry["origin_norm"] = geo.normalize_point(origin_master, master.props).tolist()
    out["kinematic"] = entry
    return out


def _mentioned_objects(step: str, world: WorldState) -> list[str]:
    tokens = set(step.lower().replace(",", " ").split())
    return [oid for oid in sorted(world.objects) if oid in tokens]


def _retrieve_step_skill(bank: KnowledgeBank, step: str, world: WorldState):
    best = None
    for oid in _mentioned_objects(step, world):
        sig = {"name": oid, "bbox_extents": world.objects[oid].props.bbox_extents.tolist()}
        hits = bank.retrieve_skill(step, sig, k=1)
        if hits and (best is None or hits[0][1] > best[1]):
            best = hits[0]
    if best is None:
        raise ValidationError(f"no skill retrievable for step {step!r}")
    return best[0]


def adapt_task(world: WorldState, task_text: str, bank: KnowledgeBank, reasoner,
               cfg: PipelineConfig) -> tuple[list[str], list[AdaptedSkill], int]:
    """Plan, retrieve, and adapt every grasp+manipulation subtask pair."""
    steps, _objects = plan_high_level(task_text, world, bank, reasoner)
    pairs = []
    rounds = 0
    pending_grasp = None
    for step in steps:
        record = _retrieve_step_skill(bank, step, world)
        skill = record.value
        if skill.phase == GRASPING:
            target = world.objects[skill.object_id]
            regions, state = adapt_grasp(skill, target.props, reasoner, cfg,
                                         annotations=_grasp_annotations(world, skill.object_id))
            rounds = max(rounds, state.iteration)
            pending_grasp = (skill, regions, step)
            continue
        if pending_grasp is None:
            raise ValidationError(f"manipulation step {step!r} has no preceding grasp")
        grasp_skill, regions, grasp_step = pending_grasp
        master_id = skill.object_id
        slave_id = grasp_skill.object_id
        annotations = _kinematic_annotations(world, master_id, slave_id)
        task_delta = f"{step} fully"
        program, state = adapt_manipulation(skill, world.objects[master_id].props,
                                            task_delta, reasoner, cfg,
                                            annotations=annotations)
        rounds = max(rounds, state.iteration)
        pairs.append(AdaptedSkill(grasp_object=slave_id, master_id=master_id,
                                  regions=regions, program=program,
                                  subtask=f"{grasp_step} / {step}"))
        pending_grasp = None
    if pending_grasp is not None:
        grasp_skill, regions, grasp_step = pending_grasp
        pairs.append(AdaptedSkill(grasp_object=grasp_skill.object_id,
                                  master_id=grasp_skill.object_id,
                                  regions=regions, program=None, subtask=grasp_step))
    return steps, pairs, rounds


def evaluate_templates(templates: list[str], bank_factory, reasoner,
                       cfg: PipelineConfig, demo_count: int = 5,
                       eval_seeds: int = 10, configurations=("seen", "unseen"),
                       demo_noise=None) -> list[dict]:
    """Learn per template, then run eval seeds in each configuration.

    bank_factory(template) must yield a fresh KnowledgeBank. Returns one
    result row per (template, configuration).
    """
    from . import simenv

    rows = []
    for template in templates:
        bank = bank_factory(template)
        traces = [simenv.generate_demo(template, seed=s, noise=demo_noise).trace
                  for s in range(demo_count)]
        learn_from_demos(traces, reasoner, cfg, bank)
        for configuration in configurations:
            unseen = configuration == "unseen"
            successes = 0
            for i in range(eval_seeds):
                world = simenv.build_world(template, seed=100 + i, unseen=unseen)
                try:
                    outcome = run_task(world, world.meta["task_text"], bank, reasoner,
                                       cfg, rng=np.random.default_rng([cfg.seed, i]))
                    successes += bool(outcome.success)
                except DemoskillError:
                    pass  # an errored run counts as a failure
            rows.append({"template": template, "configuration": configuration,
                         "runs": eval_seeds, "successes": successes,
                         "success_rate": successes / eval_seeds})
    return rows


def run_task(world: WorldState, task_text: str, bank: KnowledgeBank, reasoner,
             cfg: PipelineConfig, rng=None, success_predicate=None) -> TaskOutcome:
    """Adapt and execute a full task in the given world."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    if success_predicate is None and "success" in world.meta:
        success_predicate = lambda w: judge(w, w.meta.get("template"))
    steps, pairs, rounds = adapt_task(world, task_text, bank, reasoner, cfg)
    outcome = TaskOutcome(success=False, steps=steps, adaptation_rounds=rounds)
    for adapted in pairs:
        skill_for_failures = adapted.subtask

        def hook(report, _subtask=skill_for_failures):
            return failure_reason(report, _subtask, reasoner,
                                  max_rounds=cfg.failure_rounds)

        sub = select_and_execute(adapted, world, cfg, failure_hook=hook, rng=rng,
                                 success_predicate=success_predicate)
        outcome.subtask_outcomes.append(sub)
        if sub.aborted or (not sub.success and adapted.program is not None):
            return outcome
    outcome.success = success_predicate(world) if success_predicate else True
    return outcome
