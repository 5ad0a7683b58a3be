"""Compile interactions into hierarchical skill constraints.

Semantic constraints (text) come from the reasoner over a rendered,
annotated scene; geometric constraints are bounded grasp regions or
fitted trajectory programs, both normalized against the master object's
bounding box so they transfer across object sizes.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import ValidationError
from .geometry import ObjectProperties
from .grounding import GRASPING, MANIPULATION, GraspInteraction, ManipulationInteraction, downsample_indices
from .programs import TrajectoryProgram, average_programs, fit_trajectory_program

FACE_NAMES = {
    (0, 1): "right", (0, -1): "left",
    (1, 1): "back", (1, -1): "front",
    (2, 1): "top", (2, -1): "bottom",
}
FACE_NORMALS = {name: np.eye(3)[axis] * sign for (axis, sign), name in FACE_NAMES.items()}


def face_of(norm_pos) -> str:
    """Name of the bbox face a normalized position is closest to."""
    n = np.asarray(norm_pos, dtype=float)
    axis = int(np.argmax(np.abs(n)))
    sign = 1 if n[axis] >= 0 else -1
    return FACE_NAMES[(axis, sign)]


@dataclass
class VisualizedInteraction:
    scene: dict
    images: list[str] = field(default_factory=list)
    keypoints: list[tuple[str, np.ndarray]] = field(default_factory=list)


@dataclass
class SemanticConstraints:
    statements: list[str]
    grasp_groups: list[list[int]] | None = None
    trajectory_class: str | None = None

    def __post_init__(self):
        if self.grasp_groups is not None:
            flat = [i for g in self.grasp_groups for i in g]
            if len(flat) != len(set(flat)):
                raise ValidationError("grasp groups must be disjoint")


@dataclass
class Region:
    """Bounded grasp region in normalized bbox coordinates plus orientation cone."""

    position_lo: np.ndarray
    position_hi: np.ndarray
    orientation_ref: np.ndarray
    orientation_cone_deg: float
    face: str = ""

    def __post_init__(self):
        self.position_lo = np.asarray(self.position_lo, dtype=float)
        self.position_hi = np.asarray(self.position_hi, dtype=float)
        self.orientation_ref = np.asarray(self.orientation_ref, dtype=float)
        if np.any(self.position_lo > self.position_hi + 1e-12):
            raise ValidationError("region lo must not exceed hi")
        if not 0 <= self.orientation_cone_deg <= 180:
            raise ValidationError("cone must be within [0, 180] degrees")

    def center(self) -> np.ndarray:
        return 0.5 * (self.position_lo + self.position_hi)

    def contains(self, norm_pos, quaternion=None, tol=1e-9) -> bool:
        p = np.asarray(norm_pos, dtype=float)
        inside = bool(np.all(p >= self.position_lo - tol) and np.all(p <= self.position_hi + tol))
        if quaternion is None or not inside:
            return inside
        ang = np.degrees(geo.quat_angle(np.asarray(quaternion), self.orientation_ref))
        return ang <= self.orientation_cone_deg + tol


@dataclass
class GraspRegionSet:
    regions: list[Region]

    def __post_init__(self):
        if not self.regions:
            raise ValidationError("grasp region set needs at least one region")

    def parameter_vector(self) -> np.ndarray:
        parts = []
        for r in self.regions:
            parts.extend([r.position_lo, r.position_hi, r.orientation_ref,
                          [r.orientation_cone_deg]])
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])

    def copy(self) -> "GraspRegionSet":
        return copy.deepcopy(self)


@dataclass
class Skill:
    description: str
    phase: str
    semantic: SemanticConstraints
    geometric: GraspRegionSet | TrajectoryProgram
    provenance: list[str]
    object_id: str = ""
    object_extents: list = field(default_factory=list)

    def __post_init__(self):
        grasping = isinstance(self.geometric, GraspRegionSet)
        if grasping != (self.phase == GRASPING):
            raise ValidationError("skill phase inconsistent with geometric variant")


def render_interaction(interactions: list, master: ObjectProperties,
                       image_renderer=None, max_keypoints: int = 10) -> VisualizedInteraction:
    """Annotated structured scene for the reasoner; images only if a renderer is set."""
    scene = {
        "object": {"id": master.object_id, "extents": master.bbox_extents.tolist()},
    }
    keypoints = []
    grasps = [ia for ia in interactions if isinstance(ia, GraspInteraction)]
    manips = [ia for ia in interactions if isinstance(ia, ManipulationInteraction)]
    if grasps:
        notations = []
        index = 1
        for ia in grasps:
            for pose in ia.grasp_poses:
                n = geo.normalize_point(pose.position, master)
                label = str(index)
                notations.append({
                    "label": label,
                    "position_norm": n.tolist(),
                    "quaternion": pose.quaternion.tolist(),
                    "face": face_of(n),
                })
                keypoints.append((label, pose.position.copy()))
                index += 1
        scene["kind"] = "grasp"
        scene["notations"] = notations
    if manips:
        traj = manips[0].trajectory
        idx = downsample_indices(len(traj), max_keypoints)
        kp_entries = []
        for j, i in enumerate(idx):
            t, pose = traj[i]
            label = f"k{j + 1}"
            kp_entries.append({
                "label": label,
                "position": pose.position.tolist(),
                "position_norm": geo.normalize_point(pose.position, master).tolist(),
                "quaternion": pose.quaternion.tolist(),
                "s": i / (len(traj) - 1),
            })
            keypoints.append((label, pose.position.copy()))
        scene["kind"] = "trajectory"
        scene["keypoints"] = kp_entries
        scene["trajectory_count"] = len(manips)
    images = list(image_renderer(scene)) if image_renderer is not None else []
    return VisualizedInteraction(scene=scene, images=images, keypoints=keypoints)


def learn_semantic(iv: VisualizedInteraction, description: str, reasoner) -> SemanticConstraints:
    """Reasoner pass over the visualized interaction (grouping or class selection)."""
    from .reasoner import ReasonerQuery

    scene = dict(iv.scene)
    scene["description"] = description
    if scene.get("kind") == "grasp":
        resp = reasoner.query(ReasonerQuery(kind="GraspGrouping", scene=scene))
        groups = [list(map(int, g)) for g in resp.payload["groups"]]
        n = len(scene["notations"])
        flat = sorted(i for g in groups for i in g)
        if flat != list(range(n)):
            raise ValidationError(f"groups must partition pose indices 0..{n - 1}, got {flat}")
        return SemanticConstraints(statements=list(resp.payload["statements"]),
                                   grasp_groups=groups)
    resp = reasoner.query(ReasonerQuery(kind="SemanticLearning", scene=scene))
    cls = resp.payload["trajectory_class"]
    return SemanticConstraints(statements=list(resp.payload["statements"]),
                               trajectory_class=cls)


def learn_grasp_geometric(sem: SemanticConstraints, interactions: list,
                          master: ObjectProperties, margin: float = 0.02,
                          angle_margin_deg: float = 10.0) -> GraspRegionSet:
    """One bounded region per semantic group: min/max pose range plus margins."""
    if sem.grasp_groups is None:
        raise ValidationError("semantic constraints carry no grasp groups")
    poses = [p for ia in interactions for p in ia.grasp_poses]
    regions = []
    for group in sem.grasp_groups:
        if not group:
            raise ValidationError("empty grasp group")
        group_poses = [poses[i] for i in group]
        norms = np.array([geo.normalize_point(p.position, master) for p in group_poses])
        q_ref = geo.quat_mean([p.quaternion for p in group_poses])
        max_dev = max(np.degrees(geo.quat_angle(p.quaternion, q_ref)) for p in group_poses)
        regions.append(Region(
            position_lo=norms.min(axis=0) - margin,
            position_hi=norms.max(axis=0) + margin,
            orientation_ref=q_ref,
            orientation_cone_deg=min(180.0, max_dev + angle_margin_deg),
            face=face_of(norms.mean(axis=0)),
        ))
    return GraspRegionSet(regions=regions)


def learn_skill(segments: list, interactions: list, masters: list[ObjectProperties],
                reasoner, *, region_margin: float = 0.02,
                orientation_margin_deg: float = 10.0,
                residual_warning: float = 0.02,
                max_keypoints: int = 10,
                image_renderer=None) -> Skill:
    """Full per-subtask pipeline: render, learn semantics, compile geometry.

    One entry per demo in each list; demos of one subtask share nominal
    object dimensions, so the first demo's properties anchor normalization.
    """
    if not segments:
        raise ValidationError("learn_skill needs at least one demo")
    if not (len(segments) == len(interactions) == len(masters)):
        raise ValidationError("segments, interactions, masters must align")
    phases = {s.phase for s in segments}
    if len(phases) != 1 or None in phases:
        raise ValidationError("all segments must share one classified phase")
    phase = segments[0].phase
    description = segments[0].description
    iv = render_interaction(interactions, masters[0],
                            image_renderer=image_renderer, max_keypoints=max_keypoints)
    sem = learn_semantic(iv, description, reasoner)
    if phase == GRASPING:
        geometric = learn_grasp_geometric(sem, interactions, masters[0],
                                          margin=region_margin,
                                          angle_margin_deg=orientation_margin_deg)
    else:
        fits = [fit_trajectory_program(sem, ia, m, residual_warning=residual_warning)
                for ia, m in zip(interactions, masters)]
        geometric = average_programs(fits)
    assert phase in (GRASPING, MANIPULATION)
    return Skill(
        description=description,
        phase=phase,
        semantic=sem,
        geometric=geometric,
        provenance=[s.demo_id for s in segments],
        object_id=segments[0].master_id or "",
        object_extents=masters[0].bbox_extents.tolist(),
    )
