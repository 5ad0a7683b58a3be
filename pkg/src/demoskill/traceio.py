"""On-disk formats: trace files (JSON lines) and grounding output files.

Trace file: one header record then one record per frame. All clouds are
world-frame. Grounding file: single JSON document with task, segments,
and interactions for one demo. Both carry schema_version 1.
"""

import json
from pathlib import Path

import numpy as np

from .errors import TraceParseError
from .grounding import Frame, PerceptionTrace, TaskRecognition
from .geometry import PointCloud
from .serde import (interaction_from_json, interaction_to_json, pose_from_json,
                    pose_to_json, segment_from_json, segment_to_json)

SCHEMA_VERSION = 1


def write_trace(trace: PerceptionTrace, path):
    path = Path(path)
    with path.open("w") as fh:
        header = {"schema_version": SCHEMA_VERSION, "kind": "header",
                  "demo_id": trace.demo_id, "fps": trace.fps,
                  "objects": trace.object_ids()}
        fh.write(json.dumps(header) + "\n")
        for frame in trace.frames:
            record = {
                "kind": "frame",
                "t": frame.t,
                "hand_pose": pose_to_json(frame.hand_pose),
                "hand_cloud": frame.hand_cloud.points.tolist(),
                "objects": {oid: {"pose": pose_to_json(frame.object_poses[oid]),
                                  "cloud": frame.object_clouds[oid].points.tolist()}
                            for oid in sorted(frame.object_poses)},
            }
            fh.write(json.dumps(record) + "\n")


def read_trace(path) -> PerceptionTrace:
    path = Path(path)
    frames = []
    header = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceParseError(f"{path}:{lineno}: invalid JSON: {exc}",
                                      path=str(path), record=lineno)
            kind = record.get("kind")
            if kind == "header":
                if record.get("schema_version") != SCHEMA_VERSION:
                    raise TraceParseError(
                        f"{path}:{lineno}: unsupported schema_version "
                        f"{record.get('schema_version')}", path=str(path), record=lineno)
                header = record
            elif kind == "frame":
                try:
                    frames.append(Frame(
                        t=record["t"],
                        hand_pose=pose_from_json(record["hand_pose"]),
                        hand_cloud=PointCloud(np.asarray(record["hand_cloud"]), "world"),
                        object_poses={oid: pose_from_json(o["pose"])
                                      for oid, o in record["objects"].items()},
                        object_clouds={oid: PointCloud(np.asarray(o["cloud"]), "world")
                                       for oid, o in record["objects"].items()},
                    ))
                except (KeyError, TypeError, ValueError) as exc:
                    raise TraceParseError(f"{path}:{lineno}: bad frame record: {exc}",
                                          path=str(path), record=lineno)
            else:
                raise TraceParseError(f"{path}:{lineno}: unknown record kind {kind!r}",
                                      path=str(path), record=lineno)
    if header is None:
        raise TraceParseError(f"{path}: missing header record", path=str(path))
    return PerceptionTrace(frames=frames, fps=header["fps"], demo_id=header["demo_id"])


def write_grounding(path, demo_id: str, task: TaskRecognition,
                    segments: list, interactions: list):
    payload = {
        "schema_version": SCHEMA_VERSION,
        "demo_id": demo_id,
        "task": {"task_text": task.task_text, "objects": task.objects},
        "segments": [segment_to_json(s) for s in segments],
        "interactions": [interaction_to_json(i) for i in interactions],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_grounding(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"{path}: invalid JSON: {exc}", path=str(path))
    if data.get("schema_version") != SCHEMA_VERSION:
        raise TraceParseError(f"{path}: unsupported schema_version "
                              f"{data.get('schema_version')}", path=str(path))
    return {
        "demo_id": data["demo_id"],
        "task": TaskRecognition(task_text=data["task"]["task_text"],
                                objects=data["task"]["objects"]),
        "segments": [segment_from_json(s) for s in data["segments"]],
        "interactions": [interaction_from_json(i) for i in data["interactions"]],
    }
