"""Persistent knowledge bank with similarity retrieval.

Layout: root/plans/<id>.json and root/skills/<id>.json plus a rebuildable
root/index.json. Record ids are content hashes, so identical stores are
idempotent. Writes are temp-then-rename; the loader skips corrupt records
with a warning instead of corrupting the index. Concurrency contract:
many readers or one writer.
"""

import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import StorageError, ValidationError
from .learner import Skill
from .serde import skill_from_json, skill_to_json

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TEXT_WEIGHT = 0.7
OBJECT_WEIGHT = 0.3

_WORD = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> frozenset:
    return frozenset(_WORD.findall(text.lower()))


def text_similarity(a: str, b: str) -> float:
    """Token-set Jaccard similarity in [0, 1]."""
    ta, tb = _tokens(a), _tokens(b)
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def object_similarity(sig_a: dict, sig_b: dict) -> float:
    """Half name equality, half per-axis extent ratio."""
    name = 1.0 if sig_a.get("name") == sig_b.get("name") else 0.0
    ea = np.asarray(sig_a["bbox_extents"], dtype=float)
    eb = np.asarray(sig_b["bbox_extents"], dtype=float)
    ratio = float(np.mean(np.minimum(ea, eb) / np.maximum(ea, eb)))
    return 0.5 * name + 0.5 * ratio


@dataclass
class PlanRecord:
    key: str
    value: list[str]

    def __post_init__(self):
        if not self.value:
            raise ValidationError("plan record needs at least one subtask")


@dataclass
class SkillRecord:
    key: dict  # {"subtask_text": str, "object_signature": {"name", "bbox_extents"}}
    value: Skill

    def __post_init__(self):
        if not self.key.get("subtask_text"):
            raise ValidationError("skill record needs subtask text")
        sig = self.key.get("object_signature", {})
        if not sig.get("name") or "bbox_extents" not in sig:
            raise ValidationError("skill record needs an object signature")


def _record_id(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


class KnowledgeBank:
    def __init__(self, root):
        self.root = Path(root)
        self._lock = threading.RLock()
        self._plans: dict[str, PlanRecord] = {}
        self._skills: dict[str, SkillRecord] = {}
        try:
            (self.root / "plans").mkdir(parents=True, exist_ok=True)
            (self.root / "skills").mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create bank at {self.root}: {exc}")
        self._load()

    def _load(self):
        for kind, store in (("plans", self._plans), ("skills", self._skills)):
            store.clear()
            for path in sorted((self.root / kind).glob("*.json")):
                try:
                    data = json.loads(path.read_text())
                    if data.get("schema_version") != SCHEMA_VERSION:
                        raise ValueError(f"schema {data.get('schema_version')}")
                    if kind == "plans":
                        store[path.stem] = PlanRecord(key=data["key"], value=data["value"])
                    else:
                        store[path.stem] = SkillRecord(
                            key=data["key"], value=skill_from_json(data["value"]))
                except (ValueError, KeyError, ValidationError) as exc:
                    log.warning("skipping unreadable bank record %s: %s", path, exc)
        self._write_index()

    def _atomic_write(self, path: Path, payload: dict):
        tmp = path.with_suffix(".tmp")
        try:
            tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
            os.replace(tmp, path)
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}")

    def _write_index(self):
        index = {
            "schema_version": SCHEMA_VERSION,
            "plans": {rid: {"key": rec.key} for rid, rec in sorted(self._plans.items())},
            "skills": {rid: {"subtask_text": rec.key["subtask_text"],
                             "object_signature": rec.key["object_signature"]}
                       for rid, rec in sorted(self._skills.items())},
        }
        self._atomic_write(self.root / "index.json", index)

    def store_plan(self, record: PlanRecord) -> str:
        payload = {"schema_version": SCHEMA_VERSION, "key": record.key,
                   "value": list(record.value)}
        rid = _record_id(payload)
        with self._lock:
            self._atomic_write(self.root / "plans" / f"{rid}.json", payload)
            self._plans[rid] = record
            self._write_index()
        return rid

    def store_skill(self, record: SkillRecord) -> str:
        payload = {"schema_version": SCHEMA_VERSION, "key": record.key,
                   "value": skill_to_json(record.value)}
        rid = _record_id(payload)
        with self._lock:
            self._atomic_write(self.root / "skills" / f"{rid}.json", payload)
            self._skills[rid] = record
            self._write_index()
        return rid

    def retrieve_plan(self, query_text: str, k: int = 1) -> list[tuple[PlanRecord, float]]:
        if k < 1:
            raise ValidationError("k must be >= 1")
        with self._lock:
            scored = [(text_similarity(query_text, rec.key), rid, rec)
                      for rid, rec in self._plans.items()]
        scored.sort(key=lambda x: (-x[0], x[1]))
        return [(rec, score) for score, _, rec in scored[:k]]

    def retrieve_skill(self, subtask_text: str, object_sig: dict,
                       k: int = 1) -> list[tuple[SkillRecord, float]]:
        if k < 1:
            raise ValidationError("k must be >= 1")
        with self._lock:
            scored = []
            for rid, rec in self._skills.items():
                score = (TEXT_WEIGHT * text_similarity(subtask_text, rec.key["subtask_text"])
                         + OBJECT_WEIGHT * object_similarity(object_sig,
                                                             rec.key["object_signature"]))
                scored.append((score, rid, rec))
        scored.sort(key=lambda x: (-x[0], x[1]))
        return [(rec, score) for score, _, rec in scored[:k]]

    def counts(self) -> dict:
        with self._lock:
            return {"plans": len(self._plans), "skills": len(self._skills)}

    def entries(self) -> dict:
        """Record summaries for inspection (CLI `bank list`)."""
        with self._lock:
            return {
                "plans": {rid: rec.key for rid, rec in sorted(self._plans.items())},
                "skills": {rid: rec.key["subtask_text"]
                           for rid, rec in sorted(self._skills.items())},
            }

    def get_plan(self, rid: str) -> PlanRecord:
        return self._plans[rid]

    def get_skill(self, rid: str) -> SkillRecord:
        return self._skills[rid]
