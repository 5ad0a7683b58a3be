"""Typed reasoner contract: query/response schemas plus the remote HTTP backend.

Every VLM call site goes through query(handle, q). Responses are validated
against the query kind's schema, including cross-checks that referenced
labels exist in the query scene. The scripted backend lives in scripted.py.
"""

import json
import threading
from dataclasses import dataclass, field

import requests

from .errors import ReasonerError, SchemaError, ValidationError

QUERY_KINDS = (
    "TaskRecognition",
    "SubtaskRecognition",
    "SemanticLearning",
    "GraspGrouping",
    "GraspRegionSelection",
    "ManipulationComparison",
    "HighLevelPlanning",
    "FailureReasoning",
)

FAILURE_ACTIONS = ("re-grasp", "re-plan-trajectory", "re-localize", "abort")

PROMPT_VERSION = 1

# system prompt per query kind; the user message is the serialized scene+context
PROMPTS = {
    "TaskRecognition": (
        "You watch a tabletop manipulation demonstration. Given the detected objects, "
        "reply with JSON {\"task_text\": str, \"objects\": [{\"name\": str, "
        "\"spatial_relation\": str}]}. Use only listed object ids."),
    "SubtaskRecognition": (
        "Classify one demonstration segment. Reply with JSON {\"description\": str, "
        "\"phase\": \"grasping\"|\"manipulation\"}."),
    "SemanticLearning": (
        "Summarize the shown object-relative trajectory. Reply with JSON "
        "{\"statements\": [str], \"trajectory_class\": str} where trajectory_class "
        "is one of line, arc, screw, piecewise-line."),
    "GraspGrouping": (
        "Group the numbered grasp poses that share a placement intent. Reply with JSON "
        "{\"statements\": [str], \"groups\": [[int]]} using 0-based notation indices."),
    "GraspRegionSelection": (
        "Select grid cells containing the correct grasp location, one list per "
        "perspective, sample_count entries each. Reply with JSON {\"statements\": [str], "
        "\"selections\": {\"front\": [cell], \"top\": [cell]}} or {\"unchanged\": true} "
        "when the target matches the reference exactly."),
    "ManipulationComparison": (
        "Compare the rendered trajectory against the reference and the instruction. "
        "Reply with JSON {\"converged\": bool, \"statements\": [str], "
        "\"param_updates\": {name: value}, \"mirror\": [sx, sy, sz]?}."),
    "HighLevelPlanning": (
        "Plan the task as an ordered list of subtask descriptions, using the retrieved "
        "plan as an example. Reply with JSON {\"steps\": [str], \"objects\": "
        "[{\"name\": str, \"spatial_relation\": str}]}."),
    "FailureReasoning": (
        "Given the execution failure evidence, pick one corrective action. Reply with "
        "JSON {\"action\": \"re-grasp\"|\"re-plan-trajectory\"|\"re-localize\"|\"abort\"}."),
}


@dataclass
class ReasonerQuery:
    kind: str
    scene: dict
    images: list[str] = field(default_factory=list)
    context: list[str] = field(default_factory=list)
    sample_count: int = 1

    def __post_init__(self):
        if self.kind not in QUERY_KINDS:
            raise ValidationError(f"unsupported query kind {self.kind!r}")
        if self.sample_count < 1:
            raise ValidationError("sample_count must be >= 1")


@dataclass
class ReasonerResponse:
    kind: str
    payload: dict
    raw: str = ""


def _require(cond, message, raw=None):
    if not cond:
        raise SchemaError(message, raw=raw)


def _check_str_list(payload, key, raw, allow_empty=False):
    value = payload.get(key)
    _require(isinstance(value, list), f"{key} must be a list", raw)
    _require(all(isinstance(s, str) and s.strip() for s in value),
             f"{key} entries must be non-empty strings", raw)
    if not allow_empty:
        _require(len(value) > 0, f"{key} must not be empty", raw)


def validate_response(query: ReasonerQuery, payload: dict, raw: str = ""):
    """Schema check per kind, rejecting references absent from the query scene."""
    _require(isinstance(payload, dict), "payload must be a JSON object", raw)
    kind = query.kind
    scene = query.scene
    if kind == "TaskRecognition":
        _require(isinstance(payload.get("task_text"), str) and payload["task_text"].strip(),
                 "task_text must be a non-empty string", raw)
        objects = payload.get("objects", [])
        _require(isinstance(objects, list), "objects must be a list", raw)
        known = {o["id"] for o in scene.get("objects", [])}
        for entry in objects:
            _require(isinstance(entry, dict) and "name" in entry,
                     "objects entries need a name", raw)
            _require(entry["name"] in known,
                     f"unknown object {entry['name']!r} referenced", raw)
    elif kind == "SubtaskRecognition":
        _require(isinstance(payload.get("description"), str) and payload["description"].strip(),
                 "description must be a non-empty string", raw)
        _require(payload.get("phase") in ("grasping", "manipulation"),
                 "phase must be grasping or manipulation", raw)
    elif kind == "SemanticLearning":
        _check_str_list(payload, "statements", raw)
        _require(isinstance(payload.get("trajectory_class"), str),
                 "trajectory_class must be a string", raw)
    elif kind == "GraspGrouping":
        _check_str_list(payload, "statements", raw)
        groups = payload.get("groups")
        _require(isinstance(groups, list) and groups, "groups must be a non-empty list", raw)
        n = len(scene.get("notations", []))
        for g in groups:
            _require(isinstance(g, list) and g, "each group must be a non-empty list", raw)
            _require(all(isinstance(i, int) and 0 <= i < n for i in g),
                     f"group indices must be ints within 0..{n - 1}", raw)
    elif kind == "GraspRegionSelection":
        if payload.get("unchanged"):
            return
        selections = payload.get("selections")
        _require(isinstance(selections, dict), "selections must be a dict", raw)
        grid = scene.get("grid", {})
        labels = set(grid.get("labels", []))
        perspectives = set(grid.get("perspectives", []))
        _require(set(selections) == perspectives,
                 f"selections must cover perspectives {sorted(perspectives)}", raw)
        for persp, cells in selections.items():
            _require(isinstance(cells, list) and len(cells) == query.sample_count,
                     f"{persp} needs exactly {query.sample_count} cell selections", raw)
            for cell in cells:
                _require(cell in labels, f"cell {cell!r} not on the grid", raw)
    elif kind == "ManipulationComparison":
        _require(isinstance(payload.get("converged"), bool), "converged must be a bool", raw)
        _check_str_list(payload, "statements", raw)
        updates = payload.get("param_updates", {})
        _require(isinstance(updates, dict), "param_updates must be a dict", raw)
        known = set(scene.get("program", {}).get("params", {}))
        for key in updates:
            _require(key in known, f"unknown parameter {key!r}", raw)
        if "mirror" in payload:
            m = payload["mirror"]
            _require(isinstance(m, list) and len(m) == 3 and all(v in (-1, 1) for v in m),
                     "mirror must be three +-1 entries", raw)
    elif kind == "HighLevelPlanning":
        _check_str_list(payload, "steps", raw)
        objects = payload.get("objects", [])
        known = {o["id"] for o in scene.get("objects", [])}
        for entry in objects:
            _require(entry.get("name") in known,
                     f"unknown object {entry.get('name')!r} referenced", raw)
    elif kind == "FailureReasoning":
        _require(payload.get("action") in FAILURE_ACTIONS,
                 f"action must be one of {FAILURE_ACTIONS}", raw)


def build_prompt(query: ReasonerQuery) -> list[dict]:
    """Chat messages for the remote backend (scene serialized to text)."""
    body = {
        "scene": query.scene,
        "context": query.context,
        "sample_count": query.sample_count,
    }
    messages = [
        {"role": "system", "content": f"[v{PROMPT_VERSION}] {PROMPTS[query.kind]}"},
        {"role": "user", "content": json.dumps(body, sort_keys=True)},
    ]
    return messages


class RemoteReasoner:
    """Chat-completion-style HTTP backend.

    Retries up to max_retries on transport failure and re-prompts once when
    the reply fails schema validation.
    """

    def __init__(self, base_url: str, model: str, api_key: str | None = None,
                 timeout: float = 60.0, max_in_flight: int = 4, max_retries: int = 3):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self._gate = threading.Semaphore(max_in_flight)
        self.calls = 0

    def _post(self, messages):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc = None
        for _ in range(self.max_retries):
            try:
                resp = requests.post(self.base_url, timeout=self.timeout, headers=headers,
                                     json={"model": self.model, "messages": messages})
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_exc = exc
        raise ReasonerError(f"remote reasoner unreachable: {last_exc}")

    def query(self, q: ReasonerQuery) -> ReasonerResponse:
        with self._gate:
            self.calls += 1
            messages = build_prompt(q)
            raw = self._post(messages)
            try:
                payload = _parse_payload(raw)
                validate_response(q, payload, raw)
            except SchemaError as first_error:
                messages = messages + [
                    {"role": "assistant", "content": raw},
                    {"role": "user", "content": f"Invalid reply ({first_error}); "
                                                "answer again with valid JSON only."},
                ]
                raw = self._post(messages)
                payload = _parse_payload(raw)
                validate_response(q, payload, raw)
            return ReasonerResponse(kind=q.kind, payload=payload, raw=raw)


def _parse_payload(raw: str) -> dict:
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"reply is not valid JSON: {exc}", raw=raw)
