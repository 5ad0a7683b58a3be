"""Parse perception traces into subtask segments and object-centric interactions.

A contact window opens when the hand-to-object cloud distance drops below
epsilon and closes when it rises back above. Each surviving window is split
at the contacted object's motion onset: the still prefix is the grasping
segment, the moving part the manipulation segment. Windows whose object
never moves stay single grasping segments.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import AmbiguityError, GapError, ValidationError
from .geometry import Pose, PointCloud

GRASPING = "grasping"
MANIPULATION = "manipulation"
HAND = "hand"


@dataclass
class Frame:
    t: float
    hand_pose: Pose
    hand_cloud: PointCloud
    object_poses: dict[str, Pose]
    object_clouds: dict[str, PointCloud]

    def __post_init__(self):
        missing = set(self.object_poses) - set(self.object_clouds)
        if missing:
            raise ValidationError(f"objects missing clouds: {sorted(missing)}")


@dataclass
class PerceptionTrace:
    frames: list[Frame]
    fps: float
    demo_id: str

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValidationError("trace needs at least 2 frames")
        ts = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("timestamps must be strictly increasing")

    def object_ids(self) -> list[str]:
        return sorted(self.frames[0].object_poses)

    def index_of_time(self, t: float) -> int:
        ts = np.array([f.t for f in self.frames])
        idx = int(np.argmin(np.abs(ts - t)))
        if abs(ts[idx] - t) > 0.5 / self.fps:
            raise ValidationError(f"no frame near t={t}")
        return idx


@dataclass
class Segment:
    demo_id: str
    t_start: float
    t_end: float
    phase: str | None = None     # GRASPING | MANIPULATION, filled by classify_segment
    master_id: str | None = None
    slave_id: str | None = None
    description: str = ""
    contact_id: str = ""         # object whose contact window produced this segment
    start_index: int = 0
    end_index: int = 0

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise ValidationError("segment needs t_start < t_end")
        if self.phase == GRASPING and self.slave_id not in (None, HAND):
            raise ValidationError("grasping segments have the hand as slave")


@dataclass
class GraspInteraction:
    """Grasp poses expressed in the master object's frame (gripper convention)."""

    grasp_poses: list[Pose]

    def __post_init__(self):
        if not self.grasp_poses:
            raise ValidationError("grasp interaction needs at least one pose")


@dataclass
class ManipulationInteraction:
    """Time-stamped poses of the slave relative to the master."""

    trajectory: list[tuple[float, Pose]]

    def __post_init__(self):
        if len(self.trajectory) < 2:
            raise ValidationError("trajectory needs at least 2 waypoints")
        ts = [t for t, _ in self.trajectory]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("trajectory must be time-ordered")


Interaction = GraspInteraction | ManipulationInteraction


@dataclass
class TaskRecognition:
    task_text: str
    objects: list[dict] = field(default_factory=list)  # {"name", "spatial_relation"}


def recognize_task(trace: PerceptionTrace, reasoner) -> TaskRecognition:
    """Ask the reasoner for the task text and involved objects, then validate."""
    from .reasoner import ReasonerQuery  # late import to keep layering shallow

    ids = trace.object_ids()
    if not ids:
        raise ValidationError("trace contains no detected objects")
    first = trace.frames[0]
    scene = {
        "objects": [
            {
                "id": oid,
                "position": first.object_poses[oid].position.tolist(),
                "extents": _object_extents(trace, oid).tolist(),
            }
            for oid in ids
        ],
    }
    resp = reasoner.query(ReasonerQuery(kind="TaskRecognition", scene=scene))
    task_text = resp.payload["task_text"]
    objects = resp.payload.get("objects", [])
    unknown = [o["name"] for o in objects if o["name"] not in ids]
    if unknown:
        raise ValidationError(f"reasoner referenced unknown objects: {unknown}")
    if not task_text.strip():
        raise ValidationError("reasoner produced empty task text")
    return TaskRecognition(task_text=task_text, objects=objects)


def _object_extents(trace: PerceptionTrace, object_id: str) -> np.ndarray:
    cloud = trace.frames[0].object_clouds[object_id]
    pose = trace.frames[0].object_poses[object_id]
    local = geo.inverse(pose).transform_points(cloud.points)
    return geo.compute_bbox(PointCloud(local, "object"), object_id).bbox_extents


def interaction_distance_series(trace: PerceptionTrace, candidate_id: str) -> list[tuple[float, float]]:
    """Hand-to-candidate minimum cloud distance, one sample per frame."""
    series = []
    for i, frame in enumerate(trace.frames):
        if candidate_id not in frame.object_clouds:
            raise GapError(f"object {candidate_id!r} missing at frame {i}", frame_index=i)
        d = geo.cloud_distance(frame.hand_cloud, frame.object_clouds[candidate_id])
        series.append((frame.t, d))
    return series


def detect_markers(series: list[float], epsilon: float) -> list[tuple[int, int]]:
    """Threshold-crossing contact windows, paired in order.

    A window opens at t where d[t-1] > eps and d[t] < eps, closes where
    d[t-1] < eps and d[t] > eps. An unclosed window is closed at the final
    index; a close with no open window is dropped.
    """
    if len(series) < 2:
        raise ValidationError("series needs at least 2 samples")
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    pairs = []
    open_start = None
    for t in range(1, len(series)):
        prev, cur = series[t - 1], series[t]
        if prev > epsilon and cur < epsilon and open_start is None:
            open_start = t
        elif prev < epsilon and cur > epsilon and open_start is not None:
            pairs.append((open_start, t))
            open_start = None
    if open_start is not None:
        pairs.append((open_start, len(series) - 1))
    return pairs


def _hand_path_length(trace: PerceptionTrace, start: int, end: int) -> float:
    pos = np.array([trace.frames[k].hand_pose.position for k in range(start, end + 1)])
    if len(pos) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1)))


def _motion_bounds(trace: PerceptionTrace, object_id: str, start: int, end: int,
                   threshold: float) -> tuple[int, int] | None:
    """(last still frame, first settled frame) of the object inside the window."""
    pos = np.array([trace.frames[k].object_poses[object_id].position
                    for k in range(start, end + 1)])
    disp_from_start = np.linalg.norm(pos - pos[0], axis=1)
    if np.max(disp_from_start) <= threshold:
        return None
    first_moved = int(np.argmax(disp_from_start > threshold))
    disp_from_end = np.linalg.norm(pos - pos[-1], axis=1)
    moved_idx = np.nonzero(disp_from_end > threshold)[0]
    last_moving = int(moved_idx[-1]) if len(moved_idx) else len(pos) - 1
    onset = start + max(first_moved - 1, 0)
    settled = start + min(last_moving + 1, len(pos) - 1)
    return onset, settled


def _bridge_windows(pairs: list[tuple[int, int]], max_gap: int) -> list[tuple[int, int]]:
    """Merge same-object windows separated by jitter-scale gaps."""
    merged: list[tuple[int, int]] = []
    for start, end in pairs:
        if merged and start - merged[-1][1] <= max_gap:
            merged[-1] = (merged[-1][0], end)
        else:
            merged.append((start, end))
    return merged


def parse_segments(trace: PerceptionTrace, epsilon: float, gamma: float,
                   debounce_frames: int = 3,
                   motion_threshold: float = 0.012) -> list[Segment]:
    """Contact windows per object, filtered and split into phase segments."""
    if epsilon <= 0 or gamma <= 0:
        raise ValidationError("epsilon and gamma must be positive")
    segments = []
    for oid in trace.object_ids():
        if any(oid not in f.object_poses for f in trace.frames):
            continue
        series = [d for _, d in interaction_distance_series(trace, oid)]
        windows = _bridge_windows(detect_markers(series, epsilon), debounce_frames)
        for start, end in windows:
            if end - start < debounce_frames:
                continue
            if _hand_path_length(trace, start, end) < gamma:
                continue
            bounds = _motion_bounds(trace, oid, start, end, motion_threshold)
            if bounds is None:
                segments.append(_make_segment(trace, oid, start, end))
                continue
            onset, settled = bounds
            if onset > start:
                segments.append(_make_segment(trace, oid, start, onset))
            if settled > onset:
                segments.append(_make_segment(trace, oid, onset, settled))
    segments.sort(key=lambda s: (s.t_start, s.contact_id))
    for a, b in zip(segments, segments[1:]):
        if b.t_start < a.t_end - 1e-9:
            raise ValidationError(
                f"overlapping segments on {a.contact_id!r} and {b.contact_id!r}")
    return segments


def _make_segment(trace: PerceptionTrace, contact_id: str, start: int, end: int) -> Segment:
    return Segment(
        demo_id=trace.demo_id,
        t_start=trace.frames[start].t,
        t_end=trace.frames[end].t,
        contact_id=contact_id,
        start_index=start,
        end_index=end,
    )


def _held_object(trace: PerceptionTrace, start: int, end: int) -> str:
    """Object whose pose varies least relative to the hand over the window."""
    best, best_var = None, np.inf
    for oid in trace.object_ids():
        rel = []
        for k in range(start, end + 1):
            frame = trace.frames[k]
            rel.append(geo.relative_pose(frame.hand_pose, frame.object_poses[oid]).position)
        rel = np.array(rel)
        var = float(np.mean(np.sum((rel - rel.mean(axis=0)) ** 2, axis=1)))
        if var < best_var:
            best, best_var = oid, var
    return best


def _nearest_other(trace: PerceptionTrace, slave_id: str, index: int) -> str | None:
    frame = trace.frames[index]
    best, best_d = None, np.inf
    for oid, cloud in frame.object_clouds.items():
        if oid == slave_id:
            continue
        d = geo.cloud_distance(frame.object_clouds[slave_id], cloud)
        if d < best_d:
            best, best_d = oid, d
    return best


def classify_segment(segment: Segment, trace: PerceptionTrace, reasoner,
                     epsilon: float = 0.01,
                     motion_threshold: float = 0.012) -> Segment:
    """Fill phase, master/slave ids, and description, cross-checking the reasoner."""
    from .reasoner import ReasonerQuery

    start, end = segment.start_index, segment.end_index
    frame = trace.frames[start]
    contact = segment.contact_id
    if not contact:
        dists = {oid: geo.cloud_distance(frame.hand_cloud, frame.object_clouds[oid])
                 for oid in frame.object_clouds}
        if not dists:
            raise AmbiguityError("no objects present at segment start")
        contact = min(dists, key=dists.get)
        if dists[contact] > 2 * epsilon:
            raise AmbiguityError("hand is not in contact with any object")

    bounds = _motion_bounds(trace, contact, start, end, motion_threshold)
    moving = bounds is not None and bounds[0] < end
    if moving:
        kin_phase = MANIPULATION
        slave = _held_object(trace, start, end)
        master = _nearest_other(trace, slave, end)
        if master is None:
            raise AmbiguityError("manipulation segment has no candidate master")
    else:
        kin_phase = GRASPING
        master, slave = contact, HAND

    scene = {
        "objects": [{"id": oid} for oid in trace.object_ids()],
        "contact_id": contact,
        "evidence": {"object_moving": moving, "held_id": slave if moving else None,
                     "master_id": master},
    }
    resp = reasoner.query(ReasonerQuery(kind="SubtaskRecognition", scene=scene))
    if resp.payload["phase"] != kin_phase:
        raise AmbiguityError("reasoner phase disagrees with kinematic evidence",
                             kinematic_label=kin_phase,
                             reasoner_label=resp.payload["phase"])
    description = resp.payload["description"]
    if not description.strip():
        raise ValidationError("reasoner produced empty subtask description")
    return Segment(
        demo_id=segment.demo_id, t_start=segment.t_start, t_end=segment.t_end,
        phase=kin_phase, master_id=master, slave_id=slave, description=description,
        contact_id=contact, start_index=start, end_index=end,
    )


def downsample_indices(n: int, cap: int) -> list[int]:
    """Uniform-in-time subsample keeping first and last indices."""
    if n <= cap:
        return list(range(n))
    idx = np.round(np.linspace(0, n - 1, cap)).astype(int)
    return sorted(set(int(i) for i in idx))


def extract_interaction(segment: Segment, trace: PerceptionTrace,
                        hand_to_gripper: Pose | None = None,
                        max_waypoints: int = 100) -> Interaction:
    """Object-centric interaction for a classified segment."""
    if segment.phase is None:
        raise ValidationError("segment must be classified first")
    start, end = segment.start_index, segment.end_index
    for k in range(start, end + 1):
        frame = trace.frames[k]
        if segment.master_id not in frame.object_poses:
            raise GapError(f"master missing at frame {k}", frame_index=k)
    if segment.phase == GRASPING:
        frame = trace.frames[start]
        grasp = geo.relative_pose(frame.object_poses[segment.master_id], frame.hand_pose)
        if hand_to_gripper is not None:
            grasp = geo.compose(grasp, hand_to_gripper)
        return GraspInteraction(grasp_poses=[grasp])
    traj = []
    for k in downsample_indices(end - start + 1, max_waypoints):
        frame = trace.frames[start + k]
        if segment.slave_id not in frame.object_poses:
            raise GapError(f"slave missing at frame {start + k}", frame_index=start + k)
        rel = geo.relative_pose(frame.object_poses[segment.master_id],
                                frame.object_poses[segment.slave_id])
        traj.append((frame.t, rel))
    return ManipulationInteraction(trajectory=traj)
