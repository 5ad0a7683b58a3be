import json

import numpy as np
import pytest

from demoskill import bank as bk
from demoskill.errors import ValidationError
from demoskill.grounding import GRASPING
from demoskill.learner import GraspRegionSet, Region, SemanticConstraints, Skill


def make_skill(text="grasp the drawer", extents=(0.36, 0.30, 0.10), offset=0.0):
    region = Region(position_lo=np.array([-0.1 + offset, -0.6, -0.1]),
                    position_hi=np.array([0.1 + offset, -0.5, 0.1]),
                    orientation_ref=np.array([1.0, 0, 0, 0]),
                    orientation_cone_deg=12.0, face="front")
    return Skill(description=text, phase=GRASPING,
                 semantic=SemanticConstraints(statements=[text]),
                 geometric=GraspRegionSet(regions=[region]),
                 provenance=["demo-0"], object_id="drawer",
                 object_extents=list(extents))


def skill_record(text="grasp the drawer", extents=(0.36, 0.30, 0.10), offset=0.0):
    return bk.SkillRecord(
        key={"subtask_text": text,
             "object_signature": {"name": "drawer", "bbox_extents": list(extents)}},
        value=make_skill(text, extents, offset))


class TestStore:
    def test_store_retrieve_round_trip(self, tmp_path):
        bank = bk.KnowledgeBank(tmp_path)
        bank.store_plan(bk.PlanRecord(key="open the drawer", value=["a", "b"]))
        hits = bank.retrieve_plan("open the drawer", k=1)
        assert hits[0][0].value == ["a", "b"]
        assert hits[0][1] == 1.0

    def test_idempotent_store(self, tmp_path):
        bank = bk.KnowledgeBank(tmp_path)
        r1 = bank.store_plan(bk.PlanRecord(key="open the drawer", value=["a"]))
        r2 = bank.store_plan(bk.PlanRecord(key="open the drawer", value=["a"]))
        assert r1 == r2
        assert bank.counts()["plans"] == 1

    def test_store_hundred_skills(self, tmp_path):
        bank = bk.KnowledgeBank(tmp_path)
        for i in range(100):
            bank.store_skill(skill_record(text=f"grasp handle {i}"))
        assert bank.counts()["skills"] == 100

    def test_persistence_across_instances(self, tmp_path):
        bank = bk.KnowledgeBank(tmp_path)
        rid = bank.store_skill(skill_record())
        reread = bk.KnowledgeBank(tmp_path)
        rec = reread.get_skill(rid)
        assert rec.key["subtask_text"] == "grasp the drawer"
        assert rec.value.object_id == "drawer"

    def test_round_trip_byte_identical(self, tmp_path):
        bank = bk.KnowledgeBank(tmp_path)
        rid = bank.store_skill(skill_record())
        raw1 = (tmp_path / "skills" / f"{rid}.json").read_bytes()
        rid2 = bk.KnowledgeBank(tmp_path).store_skill(skill_record())
        raw2 = (tmp_path / "skills" / f"{rid2}.json").read_bytes()
        assert rid == rid2 and raw1 == raw2

    def test_empty_plan_rejected(self):
        with pytest.raises(ValidationError):
            bk.PlanRecord(key="x", value=[])


class TestRetrieve:
    def test_empty_bank(self, tmp_path):
        bank = bk.KnowledgeBank(tmp_path)
        assert bank.retrieve_plan("anything", k=3) == []

    def test_ranking_matches_exhaustive_oracle(self, tmp_path, rng):
        vocab = "open close pull push drawer door oven box lid cup block table".split()
        bank = bk.KnowledgeBank(tmp_path)
        keys = []
        for i in range(20):
            words = list(rng.choice(vocab, size=4, replace=False))
            key = " ".join(words) + f" v{i}"
            keys.append(key)
            bank.store_plan(bk.PlanRecord(key=key, value=[f"step {i}"]))
        query = "open the drawer"
        hits = bank.retrieve_plan(query, k=20)
        # independent oracle: exhaustive jaccard over token sets
        def jac(a, b):
            ta = {t.strip(".,") for t in a.lower().split()}
            tb = {t.strip(".,") for t in b.lower().split()}
            return len(ta & tb) / len(ta | tb)
        oracle = sorted(keys, key=lambda k: -jac(query, k))
        got_scores = [round(score, 9) for _, score in hits]
        oracle_scores = sorted((round(jac(query, k), 9) for k in keys), reverse=True)
        assert got_scores == oracle_scores

    def test_skill_score_identical_is_one(self, tmp_path):
        bank = bk.KnowledgeBank(tmp_path)
        bank.store_skill(skill_record())
        sig = {"name": "drawer", "bbox_extents": [0.36, 0.30, 0.10]}
        hits = bank.retrieve_skill("grasp the drawer", sig, k=1)
        assert hits[0][1] == pytest.approx(1.0)

    def test_scaled_extents_still_top_one(self, tmp_path):
        bank = bk.KnowledgeBank(tmp_path)
        bank.store_skill(skill_record())
        bank.store_skill(skill_record(text="wipe the table"))
        bank.store_skill(skill_record(text="pour from the kettle"))
        sig = {"name": "drawer", "bbox_extents": [0.54, 0.45, 0.15]}  # x1.5
        hits = bank.retrieve_skill("grasp the drawer", sig, k=3)
        assert hits[0][0].key["subtask_text"] == "grasp the drawer"
        assert hits[0][1] < 1.0

    def test_k_larger_than_bank(self, tmp_path):
        bank = bk.KnowledgeBank(tmp_path)
        bank.store_plan(bk.PlanRecord(key="a b", value=["s"]))
        bank.store_plan(bk.PlanRecord(key="c d", value=["s"]))
        assert len(bank.retrieve_plan("a", k=50)) == 2

    def test_deterministic_tie_break(self, tmp_path):
        bank = bk.KnowledgeBank(tmp_path)
        bank.store_plan(bk.PlanRecord(key="alpha beta", value=["1"]))
        bank.store_plan(bk.PlanRecord(key="alpha gamma", value=["2"]))
        first = bank.retrieve_plan("alpha", k=2)
        for _ in range(5):
            again = bank.retrieve_plan("alpha", k=2)
            assert [r.key for r, _ in again] == [r.key for r, _ in first]


class TestCrashConsistency:
    def test_truncated_record_skipped(self, tmp_path):
        bank = bk.KnowledgeBank(tmp_path)
        rid = bank.store_skill(skill_record())
        bank.store_skill(skill_record(text="wipe the table"))
        path = tmp_path / "skills" / f"{rid}.json"
        raw = path.read_text()
        path.write_text(raw[: len(raw) // 2])  # simulate a torn write
        reread = bk.KnowledgeBank(tmp_path)
        assert reread.counts()["skills"] == 1
        hits = reread.retrieve_skill(
            "wipe the table", {"name": "drawer", "bbox_extents": [0.36, 0.30, 0.10]}, k=5)
        assert len(hits) == 1

    def test_index_rebuilt_after_corruption(self, tmp_path):
        bank = bk.KnowledgeBank(tmp_path)
        bank.store_plan(bk.PlanRecord(key="open the drawer", value=["a"]))
        (tmp_path / "index.json").write_text("{broken")
        reread = bk.KnowledgeBank(tmp_path)
        assert reread.counts()["plans"] == 1
        index = json.loads((tmp_path / "index.json").read_text())
        assert index["schema_version"] == 1

    def test_no_temp_files_left(self, tmp_path):
        bank = bk.KnowledgeBank(tmp_path)
        for i in range(5):
            bank.store_plan(bk.PlanRecord(key=f"task {i}", value=["s"]))
        assert not list(tmp_path.rglob("*.tmp"))


class TestSimilarity:
    def test_jaccard_range(self):
        assert bk.text_similarity("a b c", "a b c") == 1.0
        assert bk.text_similarity("a b", "c d") == 0.0
        assert 0 < bk.text_similarity("open the drawer", "open the door") < 1

    def test_object_similarity(self):
        sig = {"name": "drawer", "bbox_extents": [0.4, 0.3, 0.1]}
        assert bk.object_similarity(sig, sig) == 1.0
        other = {"name": "drawer", "bbox_extents": [0.8, 0.6, 0.2]}
        assert bk.object_similarity(sig, other) == pytest.approx(0.75)
        renamed = {"name": "door", "bbox_extents": [0.4, 0.3, 0.1]}
        assert bk.object_similarity(sig, renamed) == pytest.approx(0.5)
