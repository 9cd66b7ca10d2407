"""HTTP annotation service: serves snapshot captions as tasks, runs the
two-round feedback protocol, and exports the FBN training set.

Round 1 rates a caption; perfect/acceptable closes the task. Otherwise the
task moves to round 2 where detailed feedback rounds accumulate; while the
post-correction quality still marks errors the task is re-issued with the
corrected caption as current. Task leases (default 10 min) keep two clients
from annotating the same caption at once.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..corpus import PhrasedCaption, Scene, tokenize
from ..errors import ValidationError
from ..fbn import build_fbn_dataset, save_fbn_dataset
from .store import (
    GOOD_QUALITIES,
    QUALITIES,
    FeedbackRecord,
    FeedbackStore,
    RoundEntry,
    Span,
    validate_record,
)

LEASE_SECONDS = 600


def load_record_schema() -> dict:
    with resources.files("phrasecap.hub").joinpath(
        "schema/feedback_record.schema.json"
    ).open(encoding="utf-8") as fh:
        return json.load(fh)


@dataclass
class Task:
    id: int
    image_id: int
    caption: PhrasedCaption            # current caption (advances with corrections)
    original: PhrasedCaption = None    # the snapshot caption feedback refers to
    round: int = 1
    status: str = "open"  # open | leased | closed
    lease_until: float = 0.0
    round1_quality: str | None = None
    rounds: list = field(default_factory=list)
    seen_keys: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.original is None:
            self.original = self.caption

    def view(self) -> dict:
        return {
            "task_id": self.id,
            "image_id": self.image_id,
            "round": self.round,
            "caption": self.caption.to_json(),
            "rendered": self.caption.render(),
            "status": self.status,
        }


class Round1Body(BaseModel):
    quality: str


class Round2Body(BaseModel):
    error_type: str
    feedback_text: str
    mistake_category: str
    span: dict
    correction: list
    post_quality: str
    idempotency_key: str | None = None


class ExportBody(BaseModel):
    out: str


@dataclass
class HubState:
    scenes: dict                 # image id -> Scene
    store: FeedbackStore
    max_rounds: int = 3
    lease_seconds: float = LEASE_SECONDS
    clock: callable = time.monotonic
    tasks: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    next_task_id: int = 0

    def add_snapshot_caption(self, image_id: int, caption: PhrasedCaption):
        task = Task(self.next_task_id, image_id, caption)
        self.tasks[task.id] = task
        self.next_task_id += 1
        return task

    def progress(self) -> dict:
        counts = {"open": 0, "leased": 0, "closed": 0}
        now = self.clock()
        for t in self.tasks.values():
            status = t.status
            if status == "leased" and t.lease_until <= now:
                status = "open"
            counts[status] += 1
        stats = self.store.stats()
        return {"tasks": counts, "records_stored": stats["records"],
                "avg_rounds": stats["avg_rounds"]}


def load_snapshot_captions(path):
    """Snapshot captions file: one {image_id, phrases[]} JSON object per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            if not ln.strip():
                continue
            doc = json.loads(ln)
            out.append((doc["image_id"], PhrasedCaption.from_json(doc)))
    return out


def create_app(state: HubState, ui_dir=None) -> FastAPI:
    app = FastAPI(title="phrasecap feedback hub")
    schema = load_record_schema()
    round_schema = {"definitions": schema["definitions"],
                    **schema["definitions"]["round"]}

    def _get_task(task_id: int) -> Task:
        task = state.tasks.get(task_id)
        if task is None:
            raise HTTPException(404, detail=f"unknown task {task_id}")
        return task

    @app.get("/tasks/next")
    def next_task(round: int = 1):
        with state.lock:
            now = state.clock()
            for task in sorted(state.tasks.values(), key=lambda t: t.id):
                free = task.status == "open" or (
                    task.status == "leased" and task.lease_until <= now
                )
                if task.round == round and free:
                    task.status = "leased"
                    task.lease_until = now + state.lease_seconds
                    return task.view()
        raise HTTPException(404, detail="no open tasks for this round")

    @app.post("/tasks/{task_id}/round1")
    def submit_round1(task_id: int, body: Round1Body):
        if body.quality not in QUALITIES:
            raise HTTPException(400, detail=f"quality must be one of {QUALITIES}")
        with state.lock:
            task = _get_task(task_id)
            if task.status == "closed" or task.round != 1:
                raise HTTPException(409, detail="task is not awaiting round 1")
            task.round1_quality = body.quality
            if body.quality in GOOD_QUALITIES:
                task.status = "closed"
                _store_record(state, task)
                return {"task_id": task.id, "status": "closed"}
            task.round = 2
            task.status = "open"
            task.lease_until = 0.0
            return {"task_id": task.id, "status": "awaiting round 2"}

    @app.post("/tasks/{task_id}/round2")
    def submit_round2(task_id: int, body: Round2Body):
        doc = body.model_dump(exclude_none=True)
        key = doc.pop("idempotency_key", None)
        try:
            jsonschema.validate(doc, round_schema)
        except jsonschema.ValidationError as exc:
            raise HTTPException(400, detail=f"round entry schema: {exc.message}")
        with state.lock:
            task = _get_task(task_id)
            if task.status == "closed":
                raise HTTPException(409, detail="task already closed")
            if task.round != 2:
                raise HTTPException(409, detail="task is awaiting round 1")
            if key is not None and key in task.seen_keys:
                return task.seen_keys[key]
            entry = RoundEntry(
                error_type=doc["error_type"],
                feedback_text=" ".join(tokenize(doc["feedback_text"])),
                mistake_category=doc["mistake_category"],
                span=Span.from_json(doc["span"]),
                correction=tuple(tokenize(" ".join(doc["correction"]))),
                post_quality=doc["post_quality"],
            )
            try:
                corrected = entry.apply_to(task.caption)
            except ValidationError as exc:
                raise HTTPException(400, detail=str(exc))
            task.rounds.append(entry)
            if entry.post_quality in GOOD_QUALITIES or len(task.rounds) >= state.max_rounds:
                task.status = "closed"
                _store_record(state, task)
                response = {"task_id": task.id, "status": "closed"}
            else:
                # still erroneous: re-issue with the correction as current
                task.caption = corrected
                task.status = "open"
                task.lease_until = 0.0
                response = {
                    "task_id": task.id,
                    "status": "reissued",
                    "caption": corrected.to_json(),
                }
            if key is not None:
                task.seen_keys[key] = response
            return response

    @app.get("/images/{image_id}/scene")
    def get_scene(image_id: int):
        scene = state.scenes.get(image_id)
        if scene is None:
            raise HTTPException(404, detail=f"unknown image {image_id}")
        return scene.to_json()

    @app.get("/progress")
    def progress():
        with state.lock:
            return state.progress()

    @app.get("/schema/feedback-record")
    def get_schema():
        return JSONResponse(schema)

    @app.post("/export/fbn-dataset")
    def export_fbn(body: ExportBody):
        with state.lock:
            records = state.store.load()
            examples = build_fbn_dataset([r for r in records if r.rounds])
            save_fbn_dataset(examples, body.out)
        by_label = {}
        for ex in examples:
            by_label[ex.label] = by_label.get(ex.label, 0) + 1
        return {"examples": len(examples), "by_label": by_label, "out": body.out}

    if ui_dir:
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def _store_record(state: HubState, task: Task):
    rec = FeedbackRecord(
        image_id=task.image_id,
        reference=task.original,
        round1_quality=task.round1_quality,
        rounds=list(task.rounds),
        provenance="human",
    )
    validate_record(rec)
    state.store.append(rec)
