import json

import pytest
from fastapi.testclient import TestClient

from phrasecap import corpus
from phrasecap.config import DatasetSettings
from phrasecap.fbn import load_fbn_dataset
from phrasecap.hub.service import HubState, Task, create_app, load_record_schema
from phrasecap.hub.store import FeedbackStore


class FakeClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


@pytest.fixture()
def hub(tmp_path):
    scene = corpus.gen_scene(1, DatasetSettings(), scene_id=0)
    scene2 = corpus.gen_scene(2, DatasetSettings(), scene_id=1)
    clock = FakeClock()
    state = HubState(
        scenes={0: scene, 1: scene2},
        store=FeedbackStore(tmp_path / "feedback.jsonl"),
        clock=clock,
        lease_seconds=600,
    )
    state.add_snapshot_caption(0, corpus.caption(
        ("NP", "a cat"), ("VP", "sitting"), ("PP", "on a sidewalk"),
        ("PP", "next to a street .")))
    state.add_snapshot_caption(1, corpus.caption(("NP", "a dog"), ("PP", "on a mat")))
    app = create_app(state)
    return TestClient(app), state, clock, tmp_path


def round2_body(**kw):
    body = {
        "error_type": "replace",
        "feedback_text": "There is a dog on a sidewalk, not a cat.",
        "mistake_category": "object",
        "span": {"phrase_index": 0, "word_start": 1, "word_end": 1},
        "correction": ["dog"],
        "post_quality": "perfect",
    }
    body.update(kw)
    return body


class TestTaskFlow:
    def test_round1_perfect_closes_task(self, hub):
        client, state, _, _ = hub
        task = client.get("/tasks/next", params={"round": 1}).json()
        r = client.post(f"/tasks/{task['task_id']}/round1", json={"quality": "perfect"})
        assert r.status_code == 200 and r.json()["status"] == "closed"
        # never appears in the round-2 queue
        r2 = client.get("/tasks/next", params={"round": 2})
        assert r2.status_code == 404
        records = state.store.load()
        assert len(records) == 1 and records[0].rounds == []

    def test_round2_reissues_with_corrected_caption(self, hub):
        client, state, _, _ = hub
        task = client.get("/tasks/next", params={"round": 1}).json()
        client.post(f"/tasks/{task['task_id']}/round1", json={"quality": "major"})
        t2 = client.get("/tasks/next", params={"round": 2}).json()
        assert t2["task_id"] == task["task_id"]
        r = client.post(f"/tasks/{t2['task_id']}/round2",
                        json=round2_body(post_quality="minor"))
        assert r.status_code == 200 and r.json()["status"] == "reissued"
        t3 = client.get("/tasks/next", params={"round": 2}).json()
        assert t3["caption"]["phrases"][0]["words"] == ["a", "dog"]
        # closing the loop stores a two-round record
        r = client.post(f"/tasks/{t3['task_id']}/round2", json=round2_body(
            feedback_text="there is a bird , not a dog .",
            correction=["bird"], post_quality="perfect"))
        assert r.json()["status"] == "closed"
        rec = state.store.load()[0]
        assert len(rec.rounds) == 2
        assert rec.reference.phrases[0].words == ("a", "cat")

    def test_fig1_flow_and_fbn_export(self, hub):
        client, state, _, tmp_path = hub
        task = client.get("/tasks/next", params={"round": 1}).json()
        client.post(f"/tasks/{task['task_id']}/round1", json={"quality": "major"})
        r = client.post(f"/tasks/{task['task_id']}/round2", json=round2_body())
        assert r.json()["status"] == "closed"
        rec = state.store.load()[0]
        assert rec.rounds[0].feedback_text == "there is a dog on a sidewalk , not a cat ."
        out = tmp_path / "fbn.jsonl"
        resp = client.post("/export/fbn-dataset", json={"out": str(out)}).json()
        # 4 phrases in both captions: 1 wrong + 1 correct + 6 not-relevant
        assert resp["by_label"] == {"wrong": 1, "correct": 1, "not-relevant": 6}
        examples = load_fbn_dataset(out)
        assert len(examples) == 8

    def test_lease_gives_distinct_tasks_to_concurrent_clients(self, hub):
        client, _, _, _ = hub
        a = client.get("/tasks/next", params={"round": 1}).json()
        b = client.get("/tasks/next", params={"round": 1}).json()
        assert a["task_id"] != b["task_id"]

    def test_lease_expiry_reissues_task(self, hub):
        client, _, clock, _ = hub
        a = client.get("/tasks/next", params={"round": 1}).json()
        b = client.get("/tasks/next", params={"round": 1}).json()
        assert client.get("/tasks/next", params={"round": 1}).status_code == 404
        clock.t += 601
        c = client.get("/tasks/next", params={"round": 1}).json()
        assert c["task_id"] in (a["task_id"], b["task_id"])

    def test_idempotency_key_deduplicates(self, hub):
        client, state, _, _ = hub
        task = client.get("/tasks/next", params={"round": 1}).json()
        client.post(f"/tasks/{task['task_id']}/round1", json={"quality": "major"})
        body = round2_body(post_quality="minor", idempotency_key="k1")
        r1 = client.post(f"/tasks/{task['task_id']}/round2", json=body)
        r2 = client.post(f"/tasks/{task['task_id']}/round2", json=body)
        assert r1.json() == r2.json()
        # only one round recorded on the task
        assert len(state.tasks[task["task_id"]].rounds) == 1


class TestErrors:
    def test_unknown_task_404(self, hub):
        client, _, _, _ = hub
        assert client.post("/tasks/999/round1", json={"quality": "perfect"}).status_code == 404

    def test_round2_on_closed_task_409(self, hub):
        client, _, _, _ = hub
        task = client.get("/tasks/next", params={"round": 1}).json()
        client.post(f"/tasks/{task['task_id']}/round1", json={"quality": "perfect"})
        r = client.post(f"/tasks/{task['task_id']}/round2", json=round2_body())
        assert r.status_code == 409

    def test_schema_violation_400(self, hub):
        client, _, _, _ = hub
        task = client.get("/tasks/next", params={"round": 1}).json()
        client.post(f"/tasks/{task['task_id']}/round1", json={"quality": "major"})
        bad = round2_body(mistake_category="vibes")
        r = client.post(f"/tasks/{task['task_id']}/round2", json=bad)
        assert r.status_code == 400

    def test_bad_quality_400(self, hub):
        client, _, _, _ = hub
        task = client.get("/tasks/next", params={"round": 1}).json()
        r = client.post(f"/tasks/{task['task_id']}/round1", json={"quality": "stellar"})
        assert r.status_code == 400

    def test_span_outside_caption_400(self, hub):
        client, _, _, _ = hub
        task = client.get("/tasks/next", params={"round": 1}).json()
        client.post(f"/tasks/{task['task_id']}/round1", json={"quality": "major"})
        bad = round2_body(span={"phrase_index": 9, "word_start": 0, "word_end": 0})
        r = client.post(f"/tasks/{task['task_id']}/round2", json=bad)
        assert r.status_code == 400


class TestAuxEndpoints:
    def test_scene_served_as_json(self, hub):
        client, state, _, _ = hub
        r = client.get("/images/0/scene")
        assert r.status_code == 200
        doc = r.json()
        assert doc["rows"] == 3 and "cells" in doc and "relation" in doc

    def test_progress_counts(self, hub):
        client, _, _, _ = hub
        task = client.get("/tasks/next", params={"round": 1}).json()
        client.post(f"/tasks/{task['task_id']}/round1", json={"quality": "perfect"})
        p = client.get("/progress").json()
        assert p["tasks"]["closed"] == 1
        assert p["records_stored"] == 1

    def test_schema_endpoint_matches_packaged_schema(self, hub):
        client, _, _, _ = hub
        assert client.get("/schema/feedback-record").json() == load_record_schema()

    def test_stored_records_validate_against_json_schema(self, hub):
        import jsonschema

        client, state, _, _ = hub
        task = client.get("/tasks/next", params={"round": 1}).json()
        client.post(f"/tasks/{task['task_id']}/round1", json={"quality": "major"})
        client.post(f"/tasks/{task['task_id']}/round2", json=round2_body())
        schema = load_record_schema()
        for rec in state.store.load():
            jsonschema.validate(rec.to_json(), schema)
