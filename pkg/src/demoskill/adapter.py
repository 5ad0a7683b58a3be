"""High-level planning and the iterative-comparison skill adaptation loop.

Grasp regions are adapted by rendering the target with a two-perspective
grid, sampling K cell selections per perspective, keeping the majority
cell, and intersecting the perspectives along the shared axis. Each
iteration's grid zooms onto the previous region, so the normalized
parameter change contracts geometrically and convergence fires within the
iteration cap. Manipulation programs are revised by comparing the rendered
candidate trajectory against the reference and the task instruction.
"""

import copy
import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import (AdaptationError, PlanningError, ReasonerError, SchemaError,
                     ValidationError)
from .geometry import ObjectProperties
from .learner import FACE_NORMALS, GraspRegionSet, Region, SemanticConstraints, face_of
from .programs import TrajectoryProgram, fit_trajectory_program
from .reasoner import ReasonerQuery

PERSPECTIVES = {"front": ("x", "z"), "top": ("x", "y")}  # (column axis, row axis)
OVERLAP_AXIS = "x"
GRID_PAD_M = 0.06  # metric pad beyond the bbox so hovering grasps land on the grid

CORRECTIVE_ACTIONS = ("re-grasp", "re-plan-trajectory", "re-localize", "abort")
_DEFAULT_ACTION = {
    "grasp-miss": "re-grasp",
    "no-effect": "re-grasp",
    "trajectory-deviation": "re-plan-trajectory",
    "collision": "re-plan-trajectory",
}


@dataclass
class GraspGrid:
    """m x n discretization of two axis-aligned projections sharing one axis."""

    m: int
    n: int
    domain: dict  # world axis -> (lo, hi) in normalized bbox coordinates

    def __post_init__(self):
        if self.m < 2 or self.n < 2:
            raise ValidationError("grid needs m, n >= 2")
        if self.m > 26:
            raise ValidationError("row labels are single letters; m <= 26")

    def labels(self) -> list[str]:
        return [f"{string.ascii_uppercase[r]}{c + 1}"
                for r in range(self.m) for c in range(self.n)]

    def _axis_cell(self, axis: str, count: int, value: float) -> int:
        lo, hi = self.domain[axis]
        width = (hi - lo) / count
        return int(np.clip((value - lo) // width, 0, count - 1))

    def cell_of(self, perspective: str, norm_pos) -> str:
        col_axis, row_axis = PERSPECTIVES[perspective]
        p = np.asarray(norm_pos, dtype=float)
        idx = {"x": 0, "y": 1, "z": 2}
        col = self._axis_cell(col_axis, self.n, p[idx[col_axis]])
        row = self._axis_cell(row_axis, self.m, p[idx[row_axis]])
        return f"{string.ascii_uppercase[row]}{col + 1}"

    def cell_box(self, perspective: str, label: str) -> dict:
        row, col = parse_label(label)
        if row >= self.m or col >= self.n:
            raise ValidationError(f"cell {label!r} outside {self.m}x{self.n} grid")
        col_axis, row_axis = PERSPECTIVES[perspective]
        out = {}
        for axis, count, index in ((col_axis, self.n, col), (row_axis, self.m, row)):
            lo, hi = self.domain[axis]
            width = (hi - lo) / count
            out[axis] = (lo + index * width, lo + (index + 1) * width)
        return out

    def to_scene(self) -> dict:
        return {
            "m": self.m, "n": self.n,
            "perspectives": list(PERSPECTIVES),
            "axes": {p: list(a) for p, a in PERSPECTIVES.items()},
            "overlap_axis": OVERLAP_AXIS,
            "domain": {k: list(v) for k, v in self.domain.items()},
            "labels": self.labels(),
        }


def parse_label(label: str) -> tuple[int, int]:
    match = re.fullmatch(r"([A-Z])(\d+)", label)
    if not match:
        raise ValidationError(f"malformed cell label {label!r}")
    return string.ascii_uppercase.index(match.group(1)), int(match.group(2)) - 1


@dataclass
class AdaptationState:
    iteration: int
    semantic: SemanticConstraints
    geometric: GraspRegionSet | TrajectoryProgram
    reference_semantic: SemanticConstraints
    reference_geometric: GraspRegionSet | TrajectoryProgram
    reference_iv: object = None
    converged: bool = False
    transcripts: list = field(default_factory=list)


@dataclass
class FailureReport:
    subtask: str
    classification: str
    expected_trajectory: list = None
    observed_trajectory: list = None
    object_pose_deltas: dict = None
    round: int = 0

    def __post_init__(self):
        has_evidence = any(v is not None for v in (self.expected_trajectory,
                                                   self.observed_trajectory,
                                                   self.object_pose_deltas))
        if self.classification and not has_evidence:
            raise ValidationError("classification requires populated evidence fields")


def check_convergence(prev: AdaptationState, curr: AdaptationState, tol: float) -> bool:
    """Strict: normalized parameter change < tol AND unchanged statements."""
    if type(prev.geometric) is not type(curr.geometric):
        return False
    va = prev.geometric.parameter_vector()
    vb = curr.geometric.parameter_vector()
    if va.shape != vb.shape:
        return False
    change = float(np.max(np.abs(va - vb))) if len(va) else 0.0
    return change < tol and prev.semantic.statements == curr.semantic.statements


def _rotation_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Quaternion of the minimal rotation mapping unit vector u onto v."""
    u = u / np.linalg.norm(u)
    v = v / np.linalg.norm(v)
    c = float(np.dot(u, v))
    if c > 1 - 1e-12:
        return np.array([1.0, 0, 0, 0])
    if c < -1 + 1e-12:
        helper = np.array([1.0, 0, 0]) if abs(u[0]) < 0.9 else np.array([0, 1.0, 0])
        axis = np.cross(u, helper)
        return geo.quat_from_axis_angle(axis, np.pi)
    axis = np.cross(u, v)
    return geo.quat_from_axis_angle(axis, float(np.arccos(np.clip(c, -1, 1))))


def _realign_orientation(region: Region, ref_region: Region) -> Region:
    """Rotate the orientation constraint when the region lands on another face.

    Stand-in for a grasping model: the reference approach direction follows
    the face normal onto the new face.
    """
    if not ref_region.face or region.face == ref_region.face:
        return region
    rot = _rotation_between(FACE_NORMALS[ref_region.face], FACE_NORMALS[region.face])
    region.orientation_ref = geo.quat_mul(rot, ref_region.orientation_ref)
    return region


def _majority(cells: list[str]) -> str | None:
    counts = Counter(cells).most_common()
    if len(counts) > 1 and counts[0][1] == counts[1][1]:
        return None  # tie -> re-query
    return counts[0][0]


def _reference_summary(reference) -> str:
    region = reference.geometric.regions[0]
    return "reference:" + json.dumps({
        "extents": list(reference.object_extents),
        "center_norm": region.center().tolist(),
        "face": region.face,
        "statements": reference.semantic.statements,
    }, sort_keys=True)


def adapt_grasp(reference, target: ObjectProperties, reasoner, cfg,
                annotations: dict | None = None) -> tuple[GraspRegionSet, AdaptationState]:
    """Iteratively transfer the reference grasp regions to the target object."""
    if not isinstance(reference.geometric, GraspRegionSet):
        raise ValidationError("adapt_grasp needs a grasping skill")
    annotations = annotations or {}
    state = AdaptationState(
        iteration=0,
        semantic=copy.deepcopy(reference.semantic),
        geometric=reference.geometric.copy(),
        reference_semantic=reference.semantic,
        reference_geometric=reference.geometric,
    )
    adapted = []
    for ref_region in reference.geometric.regions:
        region, rounds, converged = _adapt_region(
            ref_region, reference, target, reasoner, cfg, annotations, state)
        adapted.append(region)
        state.iteration = max(state.iteration, rounds)
        state.converged = converged
    result = GraspRegionSet(regions=adapted)
    state.geometric = result
    return result, state


def _adapt_region(ref_region: Region, reference, target: ObjectProperties,
                  reasoner, cfg, annotations: dict, state: AdaptationState):
    pads = GRID_PAD_M / target.bbox_extents
    domain = {ax: (-0.5 - pads[i], 0.5 + pads[i]) for i, ax in enumerate("xyz")}
    context = [_reference_summary(reference)]
    prev = AdaptationState(0, copy.deepcopy(reference.semantic),
                           GraspRegionSet([copy.deepcopy(ref_region)]),
                           reference.semantic, reference.geometric)
    region = copy.deepcopy(ref_region)
    rounds = 0
    converged = False
    for it in range(1, cfg.adapter_iterations + 1):
        grid = GraspGrid(cfg.grid_m, cfg.grid_n, domain)
        scene = {
            "object": {"id": target.object_id, "extents": target.bbox_extents.tolist()},
            "grid": grid.to_scene(),
            "annotations": annotations,
            "iteration": it,
        }
        outcome = None
        for _ in range(3):  # first query plus at most 2 re-queries
            resp = reasoner.query(ReasonerQuery(
                kind="GraspRegionSelection", scene=scene, context=context,
                sample_count=cfg.region_samples))
            state.transcripts.append(resp.raw)
            rounds = it
            outcome = _interpret_selection(resp.payload, grid, ref_region,
                                           reference.semantic.statements)
            if outcome is not None:
                break
        if outcome is None:
            raise AdaptationError(
                "grasp region selections stayed inconsistent after re-queries",
                transcripts=state.transcripts)
        region, statements = outcome
        curr = AdaptationState(it, SemanticConstraints(statements=statements),
                               GraspRegionSet([region]),
                               reference.semantic, reference.geometric)
        if check_convergence(prev, curr, cfg.convergence_tol):
            converged = True
            prev = curr
            break
        prev = curr
        domain = _zoom_domain(region, grid)
    state.semantic = SemanticConstraints(statements=list(prev.semantic.statements))
    return region, rounds, converged


def _interpret_selection(payload: dict, grid: GraspGrid, ref_region: Region,
                         ref_statements: list[str]):
    """Majority cells -> 3-D region, or None when a re-query is needed."""
    if payload.get("unchanged"):
        return copy.deepcopy(ref_region), list(payload.get("statements") or ref_statements)
    majorities = {}
    for persp in PERSPECTIVES:
        cell = _majority(payload["selections"][persp])
        if cell is None:
            return None
        majorities[persp] = cell
    front_col = parse_label(majorities["front"])[1]
    top_col = parse_label(majorities["top"])[1]
    if abs(front_col - top_col) > 1:
        return None  # perspectives disagree on the overlap axis
    fbox = grid.cell_box("front", majorities["front"])
    tbox = grid.cell_box("top", majorities["top"])
    x_lo = max(fbox["x"][0], tbox["x"][0])
    x_hi = min(fbox["x"][1], tbox["x"][1])
    if x_lo > x_hi:  # adjacent columns: collapse to the shared boundary
        x_lo = x_hi = 0.5 * (x_lo + x_hi)
    lo = np.array([x_lo, tbox["y"][0], fbox["z"][0]])
    hi = np.array([x_hi, tbox["y"][1], fbox["z"][1]])
    region = Region(position_lo=lo, position_hi=hi,
                    orientation_ref=ref_region.orientation_ref.copy(),
                    orientation_cone_deg=ref_region.orientation_cone_deg,
                    face=face_of(0.5 * (lo + hi)))
    region = _realign_orientation(region, ref_region)
    return region, list(payload.get("statements", []))


def _zoom_domain(region: Region, grid: GraspGrid) -> dict:
    widths = {
        "x": (grid.domain["x"][1] - grid.domain["x"][0]) / grid.n,
        "y": (grid.domain["y"][1] - grid.domain["y"][0]) / grid.m,
        "z": (grid.domain["z"][1] - grid.domain["z"][0]) / grid.m,
    }
    idx = {"x": 0, "y": 1, "z": 2}
    return {ax: (float(region.position_lo[idx[ax]]) - widths[ax],
                 float(region.position_hi[idx[ax]]) + widths[ax]) for ax in "xyz"}


def _program_summary(prog: TrajectoryProgram, props: ObjectProperties) -> dict:
    return {
        "primitive": prog.primitive,
        "params": prog.params,
        "anchor": prog.anchor,
        "path_length_m": prog.path_length(props),
    }


def adapt_manipulation(reference, target: ObjectProperties, task_delta: str,
                       reasoner, cfg,
                       annotations: dict | None = None) -> tuple[TrajectoryProgram, AdaptationState]:
    """Iteratively revise the trajectory program for the target scene."""
    from .programs import evaluate_program  # local to avoid import noise at top

    if not isinstance(reference.geometric, TrajectoryProgram):
        raise ValidationError("adapt_manipulation needs a manipulation skill")
    annotations = annotations or {}
    prog = reference.geometric.copy()
    context = ["reference:" + json.dumps(_program_summary(prog, target), sort_keys=True,
                                         default=float)]
    prev = AdaptationState(0, copy.deepcopy(reference.semantic), prog.copy(),
                           reference.semantic, reference.geometric)
    state = prev
    for it in range(1, cfg.adapter_iterations + 1):
        waypoints = evaluate_program(prog, target)
        step = max(1, len(waypoints) // 10)
        scene = {
            "master": {"id": target.object_id, "extents": target.bbox_extents.tolist()},
            "slave": {"id": annotations.get("slave_id", "")},
            "kinematic": annotations.get("kinematic"),
            "instruction": task_delta,
            "program": _program_summary(prog, target),
            "keypoints": [{"label": f"k{i + 1}", "position": w.position.tolist()}
                          for i, w in enumerate(waypoints[::step])],
            "iteration": it,
        }
        resp = reasoner.query(ReasonerQuery(kind="ManipulationComparison",
                                            scene=scene, context=context))
        try:
            new_prog = _apply_program_updates(prog, resp.payload, target)
        except ValidationError:
            resp = reasoner.query(ReasonerQuery(kind="ManipulationComparison",
                                                scene=scene, context=context))
            new_prog = _apply_program_updates(prog, resp.payload, target)
        # a converged reply leaves the semantic layer untouched
        statements = (list(prev.semantic.statements) if resp.payload.get("converged")
                      else list(resp.payload["statements"]))
        curr = AdaptationState(it, SemanticConstraints(statements=statements),
                               new_prog, reference.semantic, reference.geometric,
                               transcripts=state.transcripts + [resp.raw])
        if check_convergence(prev, curr, cfg.convergence_tol):
            curr.converged = True
            state = curr
            break
        prog = new_prog
        prev = curr
        state = curr
    return prog, state


def _apply_program_updates(prog: TrajectoryProgram, payload: dict,
                           target: ObjectProperties) -> TrajectoryProgram:
    from .grounding import ManipulationInteraction
    from .programs import evaluate_program

    out = prog.copy()
    if "mirror" in payload:
        out = out.mirrored(payload["mirror"])
    for key, value in payload.get("param_updates", {}).items():
        if key not in out.params:
            raise ValidationError(f"update targets unknown parameter {key!r}")
        old = out.params[key]
        if isinstance(old, (int, float)) and not isinstance(old, bool):
            if not np.isfinite(value):
                raise ValidationError(f"non-finite value for {key!r}")
            out.params[key] = float(value)
        elif isinstance(old, list):
            arr = np.asarray(value, dtype=float)
            if arr.shape != np.asarray(old, dtype=float).shape or not np.all(np.isfinite(arr)):
                raise ValidationError(f"bad shape or non-finite value for {key!r}")
            out.params[key] = arr.tolist()
        else:
            raise ValidationError(f"parameter {key!r} is not numerically updatable")
    if payload.get("class_change"):
        waypoints = evaluate_program(out, target)
        traj = ManipulationInteraction(trajectory=[(float(i), p) for i, p in enumerate(waypoints)])
        sem = SemanticConstraints(statements=list(payload.get("statements", ["reclassified"])),
                                  trajectory_class=payload["class_change"])
        out = fit_trajectory_program(sem, traj, target)
    evaluate_program(out, target)  # surfaces invariant violations before acceptance
    return out


_WORD = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> set[str]:
    return set(_WORD.findall(text.lower()))


def plan_high_level(task_text: str, world, bank, reasoner) -> tuple[list[str], list[dict]]:
    """Retrieve the closest stored plan, pass it in-context, validate the output."""
    if not world.objects:
        raise ValidationError("scene contains no objects")
    hits = bank.retrieve_plan(task_text, k=1)
    context = []
    if hits:
        record, _ = hits[0]
        context = ["plan:" + json.dumps({"task": record.key, "steps": record.value},
                                        sort_keys=True)]
    scene = {
        "objects": [{"id": oid, "extents": obj.props.bbox_extents.tolist()}
                    for oid, obj in sorted(world.objects.items())],
        "task_text": task_text,
    }
    try:
        resp = reasoner.query(ReasonerQuery(kind="HighLevelPlanning",
                                            scene=scene, context=context))
    except (ReasonerError, SchemaError) as exc:
        if not hits:
            raise PlanningError(f"no stored plan and reasoner failed: {exc}") from exc
        raise
    steps = list(resp.payload["steps"])
    objects = list(resp.payload.get("objects", []))
    scene_ids = set(world.objects)
    for step in steps:
        if not (_tokens(step) & scene_ids):
            raise ValidationError(f"plan step references no scene object: {step!r}")
    return steps, objects


def failure_reason(report: FailureReport, skill, reasoner, max_rounds: int = 2) -> str:
    """Corrective action for a classified failure; abort once rounds are exhausted."""
    if report.round >= max_rounds:
        return "abort"
    scene = {
        "classification": report.classification,
        "subtask": report.subtask,
        "object_pose_deltas": report.object_pose_deltas or {},
        "round": report.round,
        "max_rounds": max_rounds,
    }
    resp = reasoner.query(ReasonerQuery(kind="FailureReasoning", scene=scene))
    action = resp.payload["action"]
    if action == "abort":
        # the cap alone decides termination; fall back to the class default
        action = _DEFAULT_ACTION.get(report.classification, "re-grasp")
    return action
