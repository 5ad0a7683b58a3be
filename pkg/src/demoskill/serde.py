"""JSON-able conversion for domain objects (bank records, trace files)."""

import numpy as np

from .errors import TraceParseError
from .geometry import Pose
from .grounding import GraspInteraction, ManipulationInteraction, Segment
from .learner import GraspRegionSet, Region, SemanticConstraints, Skill
from .programs import TrajectoryProgram


def pose_to_json(p: Pose) -> dict:
    return {"position": p.position.tolist(), "quaternion": p.quaternion.tolist()}


def pose_from_json(d: dict) -> Pose:
    return Pose(np.asarray(d["position"]), np.asarray(d["quaternion"]))


def semantic_to_json(s: SemanticConstraints) -> dict:
    return {"statements": list(s.statements), "grasp_groups": s.grasp_groups,
            "trajectory_class": s.trajectory_class}


def semantic_from_json(d: dict) -> SemanticConstraints:
    return SemanticConstraints(statements=list(d["statements"]),
                               grasp_groups=d.get("grasp_groups"),
                               trajectory_class=d.get("trajectory_class"))


def region_to_json(r: Region) -> dict:
    return {"position_lo": r.position_lo.tolist(), "position_hi": r.position_hi.tolist(),
            "orientation_ref": r.orientation_ref.tolist(),
            "orientation_cone_deg": r.orientation_cone_deg, "face": r.face}


def region_from_json(d: dict) -> Region:
    return Region(position_lo=np.asarray(d["position_lo"]),
                  position_hi=np.asarray(d["position_hi"]),
                  orientation_ref=np.asarray(d["orientation_ref"]),
                  orientation_cone_deg=d["orientation_cone_deg"],
                  face=d.get("face", ""))


def geometric_to_json(g) -> dict:
    if isinstance(g, GraspRegionSet):
        return {"type": "grasp_regions", "regions": [region_to_json(r) for r in g.regions]}
    if isinstance(g, TrajectoryProgram):
        return {"type": "trajectory_program", "primitive": g.primitive,
                "params": g.params, "waypoint_count": g.waypoint_count,
                "anchor": g.anchor, "residual_rms": g.residual_rms,
                "fit_warning": g.fit_warning}
    raise TraceParseError(f"unknown geometric constraint {type(g).__name__}")


def geometric_from_json(d: dict):
    if d["type"] == "grasp_regions":
        return GraspRegionSet(regions=[region_from_json(r) for r in d["regions"]])
    if d["type"] == "trajectory_program":
        return TrajectoryProgram(primitive=d["primitive"], params=d["params"],
                                 waypoint_count=d["waypoint_count"], anchor=d["anchor"],
                                 residual_rms=d.get("residual_rms", 0.0),
                                 fit_warning=d.get("fit_warning", False))
    raise TraceParseError(f"unknown geometric type {d['type']!r}")


def skill_to_json(s: Skill) -> dict:
    return {"description": s.description, "phase": s.phase,
            "semantic": semantic_to_json(s.semantic),
            "geometric": geometric_to_json(s.geometric),
            "provenance": list(s.provenance), "object_id": s.object_id,
            "object_extents": list(s.object_extents)}


def skill_from_json(d: dict) -> Skill:
    return Skill(description=d["description"], phase=d["phase"],
                 semantic=semantic_from_json(d["semantic"]),
                 geometric=geometric_from_json(d["geometric"]),
                 provenance=list(d["provenance"]), object_id=d.get("object_id", ""),
                 object_extents=list(d.get("object_extents", [])))


def segment_to_json(s: Segment) -> dict:
    return {"demo_id": s.demo_id, "t_start": s.t_start, "t_end": s.t_end,
            "phase": s.phase, "master_id": s.master_id, "slave_id": s.slave_id,
            "description": s.description, "contact_id": s.contact_id,
            "start_index": s.start_index, "end_index": s.end_index}


def segment_from_json(d: dict) -> Segment:
    return Segment(**d)


def interaction_to_json(ia) -> dict:
    if isinstance(ia, GraspInteraction):
        return {"kind": "grasp", "grasp_poses": [pose_to_json(p) for p in ia.grasp_poses]}
    return {"kind": "manipulation",
            "trajectory": [{"t": t, **pose_to_json(p)} for t, p in ia.trajectory]}


def interaction_from_json(d: dict):
    if d["kind"] == "grasp":
        return GraspInteraction(grasp_poses=[pose_from_json(p) for p in d["grasp_poses"]])
    if d["kind"] == "manipulation":
        return ManipulationInteraction(
            trajectory=[(w["t"], pose_from_json(w)) for w in d["trajectory"]])
    raise TraceParseError(f"unknown interaction kind {d['kind']!r}")
