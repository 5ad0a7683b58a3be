"""World-frame execution: grasp sampling, trajectory instantiation, scoring,
and kinematic playback with the failure-reasoning loop.

The motion check is a desk-scale stand-in for a full planner: straight-line
sweeps between consecutive waypoints are tested against box obstacles, and
articulated objects must stay on their joint manifold within range.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .adapter import FailureReport
from .errors import ExecutionError, ValidationError
from .geometry import ObjectProperties, Pose
from .learner import GraspRegionSet
from .programs import TrajectoryProgram, evaluate_program

FREE = "free"
PRISMATIC = "prismatic"
HINGED = "hinged"

SWEEP_STEP = 0.005  # meters between swept collision samples
MAX_SWEEP_SAMPLES = 50


@dataclass
class Box:
    """Axis-aligned world-frame box obstacle."""

    center: np.ndarray
    extents: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.extents = np.asarray(self.extents, dtype=float)

    def contains(self, point, margin: float = 0.0) -> bool:
        return bool(np.all(np.abs(np.asarray(point) - self.center)
                           <= self.extents / 2 + margin))


def joint_pose(base: Pose, kinematic: dict, q: float) -> Pose:
    """World pose of an articulated object at joint coordinate q."""
    kind = kinematic.get("type", FREE)
    if kind == FREE:
        return base
    axis = np.asarray(kinematic["axis"], dtype=float)
    axis = axis / np.linalg.norm(axis)
    if kind == PRISMATIC:
        return geo.compose(base, Pose(axis * q))
    if kind == HINGED:
        origin = np.asarray(kinematic["origin"], dtype=float)
        rot = Pose.from_axis_angle(axis, q)
        shift = geo.compose(Pose(origin), geo.compose(rot, Pose(-origin)))
        return geo.compose(base, shift)
    raise ValidationError(f"unknown kinematic type {kind!r}")


def project_to_joint(base: Pose, kinematic: dict, world_pose: Pose,
                     joint_range: float | None = None) -> tuple[float, float]:
    """(q, position residual) of the nearest on-manifold pose to world_pose."""
    kind = kinematic.get("type", FREE)
    rel = geo.relative_pose(base, world_pose)
    if kind == FREE:
        return 0.0, 0.0
    axis = np.asarray(kinematic["axis"], dtype=float)
    axis = axis / np.linalg.norm(axis)
    if kind == PRISMATIC:
        q = float(np.dot(rel.position, axis))
    elif kind == HINGED:
        # twist of the relative rotation about the hinge axis
        qv = rel.quaternion[1:]
        proj = float(np.dot(qv, axis))
        q = 2.0 * np.arctan2(proj, rel.quaternion[0])
    else:
        raise ValidationError(f"unknown kinematic type {kind!r}")
    if joint_range is not None:
        lo, hi = (joint_range, 0.0) if joint_range < 0 else (0.0, joint_range)
        q = float(np.clip(q, lo, hi))
    constrained = joint_pose(base, kinematic, q)
    residual = float(np.linalg.norm(constrained.position - world_pose.position))
    return q, residual


@dataclass
class WorldObject:
    object_id: str
    props: ObjectProperties        # local-frame bbox + cloud
    base_pose: Pose                # world pose at q = 0
    kinematic: dict = field(default_factory=lambda: {"type": FREE})
    q: float = 0.0
    static: bool = False
    markers: dict = field(default_factory=dict)  # sim ground-truth annotations

    @property
    def pose(self) -> Pose:
        return joint_pose(self.base_pose, self.kinematic, self.q)

    def joint_range(self) -> float | None:
        return self.kinematic.get("range")


@dataclass
class GripperState:
    pose: Pose
    closed: bool = False
    held_object: str | None = None


@dataclass
class WorldState:
    objects: dict[str, WorldObject]
    gripper: GripperState
    obstacles: list[Box] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        held = self.gripper.held_object
        if held is not None and held not in self.objects:
            raise ValidationError(f"held object {held!r} not in world")


@dataclass
class ExecutionPlan:
    grasp: Pose
    ee_trajectory: list[Pose]
    score: float
    skill_id: str = ""


@dataclass
class AdaptedSkill:
    """Adapted constraints for one grasp+manipulation subtask pair."""

    grasp_object: str
    master_id: str
    regions: GraspRegionSet
    program: TrajectoryProgram | None = None
    skill_id: str = ""
    subtask: str = ""


@dataclass
class ExecutionOutcome:
    success: bool
    plan: ExecutionPlan | None = None
    rounds_used: int = 0
    aborted: bool = False
    reports: list[FailureReport] = field(default_factory=list)
    events: list[str] = field(default_factory=list)


def _sample_cone_quaternion(ref: np.ndarray, cone_deg: float, rng) -> np.ndarray:
    """Rotation within cone_deg of ref (rotation-vector ball sample)."""
    cone_rad = np.radians(cone_deg)
    if cone_rad <= 0:
        return ref.copy()
    direction = rng.normal(size=3)
    n = np.linalg.norm(direction)
    if n < 1e-12:
        return ref.copy()
    angle = cone_rad * rng.uniform() ** (1 / 3)
    perturb = geo.quat_from_axis_angle(direction / n, angle)
    return geo.quat_mul(ref, perturb)


def sample_grasps(regions: GraspRegionSet, master, n: int, rng=None) -> list[Pose]:
    """n world-frame grasp poses, uniform in the region boxes.

    Regions are weighted by box volume; a degenerate zero-volume region
    samples its center. `master` needs .pose and .props.
    """
    if n < 1:
        raise ValidationError("need n >= 1 samples")
    rng = rng if rng is not None else np.random.default_rng(0)
    spans = [np.maximum(r.position_hi - r.position_lo, 0.0) for r in regions.regions]
    volumes = np.array([float(np.prod(s)) for s in spans])
    if volumes.sum() <= 0:
        weights = np.ones(len(volumes)) / len(volumes)
    else:
        weights = volumes / volumes.sum()
    choices = rng.choice(len(regions.regions), size=n, p=weights)
    out = []
    for idx in choices:
        region = regions.regions[idx]
        u = rng.uniform(size=3)
        norm_pos = region.position_lo + u * spans[idx]
        local = Pose(geo.denormalize_point(norm_pos, master.props),
                     _sample_cone_quaternion(region.orientation_ref,
                                             region.orientation_cone_deg, rng))
        out.append(geo.compose(master.pose, local))
    return out


def instantiate_world_trajectory(prog: TrajectoryProgram, master, slave,
                                 grasp: Pose) -> list[Pose]:
    """End-effector waypoints: master_world * rel(t) * grasp_in_slave."""
    if not np.all(np.isfinite(grasp.position)):
        raise ValidationError("grasp pose must be finite")
    rel_poses = evaluate_program(prog, master.props)
    return [geo.compose(geo.compose(master.pose, rel), grasp) for rel in rel_poses]


def _sweep_points(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dist = float(np.linalg.norm(b - a))
    count = min(MAX_SWEEP_SAMPLES, max(2, int(dist / SWEEP_STEP) + 1))
    return np.linspace(a, b, count)


def score_trajectory(traj: list[Pose], world: WorldState, slave: WorldObject = None,
                     grasp_in_slave: Pose = None, deviation_tol: float = 0.02) -> float:
    """Fraction of leading waypoints whose sweep is collision-free and on-range."""
    if not traj:
        raise ValidationError("empty trajectory")
    feasible = 0
    grasp_inv = geo.inverse(grasp_in_slave) if grasp_in_slave is not None else None
    for i, wp in enumerate(traj):
        prev = traj[i - 1].position if i > 0 else wp.position
        swept = _sweep_points(prev, wp.position)
        if any(box.contains(p) for p in swept for box in world.obstacles):
            break
        if slave is not None and slave.kinematic.get("type", FREE) != FREE:
            implied = geo.compose(wp, grasp_inv) if grasp_inv is not None else wp
            q, residual = project_to_joint(slave.base_pose, slave.kinematic, implied)
            joint_range = slave.joint_range()
            if residual > deviation_tol:
                break
            if joint_range is not None:
                lo, hi = (joint_range, 0.0) if joint_range < 0 else (0.0, joint_range)
                if q < lo - 1e-6 or q > hi + 1e-6:
                    break
        feasible += 1
    return feasible / len(traj)


def grasp_is_valid(obj: WorldObject, grasp_world: Pose, position_tol: float,
                   angle_tol_deg: float) -> bool:
    """Ground-truth check against the object's marked valid grasp envelopes.

    Orientation compares approach axes only (roll about the approach is
    free): grasp orientation beyond the approach direction is the grasping
    model's concern, not this kinematic stand-in's.
    """
    local = geo.relative_pose(obj.pose, grasp_world)
    approach = geo.quat_rotate(local.quaternion, np.array([0.0, 0.0, 1.0]))
    for marker in obj.markers.values():
        center = np.asarray(marker["position"], dtype=float)
        half = np.asarray(marker.get("extents", [0.0, 0.0, 0.0]), dtype=float) / 2
        gap = np.maximum(np.abs(local.position - center) - half, 0.0)
        if float(np.linalg.norm(gap)) > position_tol:
            continue
        ref = np.asarray(marker["quaternion"], dtype=float)
        ref_approach = geo.quat_rotate(ref, np.array([0.0, 0.0, 1.0]))
        cosang = float(np.clip(np.dot(approach, ref_approach), -1.0, 1.0))
        if np.degrees(np.arccos(cosang)) <= angle_tol_deg:
            return True
    return False


def _rank_candidates(adapted: AdaptedSkill, world: WorldState, cfg, rng):
    master = world.objects[adapted.master_id]
    slave = world.objects[adapted.grasp_object]
    candidates = sample_grasps(adapted.regions, slave, cfg.grasp_candidates, rng)
    plans = []
    for g_world in candidates:
        if adapted.program is None:
            plans.append((1.0, g_world, [g_world], geo.Pose.identity()))
            continue
        g_in_slave = geo.relative_pose(slave.pose, g_world)
        traj = instantiate_world_trajectory(adapted.program, master, slave, g_in_slave)
        score = score_trajectory(traj, world, slave, g_in_slave,
                                 deviation_tol=cfg.deviation_tol)
        plans.append((score, g_world, traj, g_in_slave))
    best_idx = int(np.argmax([p[0] for p in plans]))  # argmax keeps the first of ties
    return plans[best_idx]


def _follow_trajectory(world: WorldState, slave: WorldObject, traj: list[Pose],
                       grasp_in_slave: Pose, cfg) -> str | None:
    """Kinematic playback; returns a failure classification or None."""
    grasp_inv = geo.inverse(grasp_in_slave)
    for i, wp in enumerate(traj):
        prev = world.gripper.pose.position
        swept = _sweep_points(prev, wp.position)
        if any(box.contains(p) for p in swept for box in world.obstacles):
            return "collision"
        implied = geo.compose(wp, grasp_inv)
        if slave.kinematic.get("type", FREE) == FREE:
            slave.base_pose = implied
        else:
            q, residual = project_to_joint(slave.base_pose, slave.kinematic, implied,
                                           joint_range=slave.joint_range())
            if residual > cfg.deviation_tol:
                return "trajectory-deviation"
            slave.q = q
        world.gripper.pose = wp
    return None


def select_and_execute(adapted: AdaptedSkill, world: WorldState, cfg,
                       failure_hook=None, rng=None,
                       success_predicate=None) -> ExecutionOutcome:
    """Pick the best-scoring candidate, play it out, loop through failures."""
    if adapted.grasp_object not in world.objects or adapted.master_id not in world.objects:
        raise ValidationError("adapted skill references objects missing from the world")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    slave = world.objects[adapted.grasp_object]
    outcome = ExecutionOutcome(success=False)
    rounds = 0
    while True:
        score, g_world, traj, g_in_slave = _rank_candidates(adapted, world, cfg, rng)
        if score <= 0:
            raise ExecutionError("no feasible plan")
        outcome.plan = ExecutionPlan(grasp=g_world, ee_trajectory=traj, score=score,
                                     skill_id=adapted.skill_id)
        world.gripper.pose = g_world
        world.gripper.closed = True
        injected_miss = cfg.fault_rate > 0 and rng.uniform() < cfg.fault_rate
        valid = grasp_is_valid(slave, g_world, cfg.grasp_position_tol,
                               cfg.grasp_angle_tol_deg) and not injected_miss
        if not valid:
            world.gripper.held_object = None
            outcome.events.append("grasp-miss" + (" (injected)" if injected_miss else ""))
            report = FailureReport(subtask=adapted.subtask, classification="grasp-miss",
                                   object_pose_deltas={}, round=rounds)
            outcome.reports.append(report)
            action = failure_hook(report) if failure_hook else "abort"
            rounds += 1
            outcome.rounds_used = rounds
            if action == "abort":
                outcome.aborted = True
                return outcome
            continue  # re-grasp with fresh samples
        world.gripper.held_object = adapted.grasp_object
        outcome.events.append("grasped")
        if adapted.program is None:
            outcome.success = success_predicate(world) if success_predicate else True
            return outcome
        failure = _follow_trajectory(world, slave, traj, g_in_slave, cfg)
        if failure is None:
            ok = success_predicate(world) if success_predicate else True
            if ok:
                outcome.success = True
                outcome.events.append("done")
                return outcome
            failure = "no-effect"
        outcome.events.append(failure)
        report = FailureReport(subtask=adapted.subtask, classification=failure,
                               object_pose_deltas={}, round=rounds)
        outcome.reports.append(report)
        action = failure_hook(report) if failure_hook else "abort"
        rounds += 1
        outcome.rounds_used = rounds
        if action == "abort":
            outcome.aborted = True
            return outcome
        # re-grasp, re-localize, and re-plan all restart from the current state
