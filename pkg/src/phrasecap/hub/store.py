"""Feedback records and the append-only JSONL feedback store."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from ..corpus import PhrasedCaption, apply_span
from ..errors import ValidationError

QUALITIES = ("perfect", "acceptable", "grammar-only", "minor", "major")
QUALITY_RANK = {q: r for r, q in enumerate(reversed(QUALITIES))}  # major=0 .. perfect=4
GOOD_QUALITIES = ("perfect", "acceptable")
ERROR_TYPES = ("replace", "missing", "remove")
MISTAKE_CATEGORIES = ("object", "action", "attribute", "preposition", "counting", "grammar")
PROVENANCES = ("human", "scripted")


@dataclass(frozen=True)
class Span:
    phrase_index: int
    word_start: int
    word_end: int  # inclusive

    def to_json(self):
        return {"phrase_index": self.phrase_index, "word_start": self.word_start,
                "word_end": self.word_end}

    @staticmethod
    def from_json(doc):
        return Span(doc["phrase_index"], doc["word_start"], doc["word_end"])


@dataclass(frozen=True)
class RoundEntry:
    error_type: str
    feedback_text: str
    mistake_category: str
    span: Span
    correction: tuple  # replacement words; empty = delete the span
    post_quality: str

    def apply_to(self, caption: PhrasedCaption) -> PhrasedCaption:
        return apply_span(caption, self.span.phrase_index, self.span.word_start,
                          self.span.word_end, self.correction)

    def to_json(self):
        return {
            "error_type": self.error_type,
            "feedback_text": self.feedback_text,
            "mistake_category": self.mistake_category,
            "span": self.span.to_json(),
            "correction": list(self.correction),
            "post_quality": self.post_quality,
        }

    @staticmethod
    def from_json(doc):
        return RoundEntry(
            error_type=doc["error_type"],
            feedback_text=doc["feedback_text"],
            mistake_category=doc["mistake_category"],
            span=Span.from_json(doc["span"]),
            correction=tuple(doc["correction"]),
            post_quality=doc["post_quality"],
        )


@dataclass
class FeedbackRecord:
    image_id: int
    reference: PhrasedCaption
    round1_quality: str
    rounds: list = field(default_factory=list)
    provenance: str = "scripted"

    def corrected_captions(self):
        """Chain of captions after each round's correction."""
        out = []
        cap = self.reference
        for rnd in self.rounds:
            cap = rnd.apply_to(cap)
            out.append(cap)
        return out

    def final_caption(self) -> PhrasedCaption:
        chain = self.corrected_captions()
        return chain[-1] if chain else self.reference

    def final_quality(self) -> str:
        return self.rounds[-1].post_quality if self.rounds else self.round1_quality

    def to_json(self):
        return {
            "image_id": self.image_id,
            "reference": self.reference.to_json(),
            "round1_quality": self.round1_quality,
            "rounds": [r.to_json() for r in self.rounds],
            "provenance": self.provenance,
        }

    @staticmethod
    def from_json(doc):
        return FeedbackRecord(
            image_id=doc["image_id"],
            reference=PhrasedCaption.from_json(doc["reference"]),
            round1_quality=doc["round1_quality"],
            rounds=[RoundEntry.from_json(r) for r in doc["rounds"]],
            provenance=doc["provenance"],
        )


def validate_record(rec: FeedbackRecord):
    """Full invariant check; raises ValidationError naming the field path."""
    if rec.round1_quality not in QUALITIES:
        raise ValidationError(f"round1_quality: {rec.round1_quality!r} not in {QUALITIES}")
    if rec.provenance not in PROVENANCES:
        raise ValidationError(f"provenance: {rec.provenance!r}")
    if not rec.reference.phrases:
        raise ValidationError("reference: empty caption")
    needs_rounds = rec.round1_quality not in GOOD_QUALITIES
    if needs_rounds and not rec.rounds:
        raise ValidationError("rounds: required when round-1 quality marks errors")
    if not needs_rounds and rec.rounds:
        raise ValidationError("rounds: present despite a perfect/acceptable round-1 quality")
    cap = rec.reference
    for i, rnd in enumerate(rec.rounds):
        path = f"rounds[{i}]"
        if rnd.error_type not in ERROR_TYPES:
            raise ValidationError(f"{path}.error_type: {rnd.error_type!r}")
        if rnd.mistake_category not in MISTAKE_CATEGORIES:
            raise ValidationError(f"{path}.mistake_category: {rnd.mistake_category!r}")
        if rnd.post_quality not in QUALITIES:
            raise ValidationError(f"{path}.post_quality: {rnd.post_quality!r}")
        if not rnd.feedback_text.strip():
            raise ValidationError(f"{path}.feedback_text: empty")
        span = rnd.span
        if not (0 <= span.phrase_index < len(cap.phrases)):
            raise ValidationError(f"{path}.span.phrase_index: {span.phrase_index} "
                                  f"outside caption of {len(cap.phrases)} phrases")
        phrase_len = len(cap.phrases[span.phrase_index].words)
        if span.word_start > span.word_end:
            raise ValidationError(f"{path}.span: word_start > word_end")
        if not (0 <= span.word_start and span.word_end < phrase_len):
            raise ValidationError(f"{path}.span: [{span.word_start}, {span.word_end}] "
                                  f"outside phrase of {phrase_len} words")
        try:
            cap = rnd.apply_to(cap)
        except ValidationError as exc:
            raise ValidationError(f"{path}.correction: {exc}") from exc


class FeedbackStore:
    """Append-only JSONL store; one validated record per line."""

    def __init__(self, path):
        self.path = os.fspath(path)

    def append(self, rec: FeedbackRecord):
        validate_record(rec)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")

    def load(self, image_id=None, provenance=None):
        if not os.path.exists(self.path):
            return []
        out = []
        with open(self.path, encoding="utf-8") as fh:
            for ln in fh:
                if not ln.strip():
                    continue
                rec = FeedbackRecord.from_json(json.loads(ln))
                if image_id is not None and rec.image_id != image_id:
                    continue
                if provenance is not None and rec.provenance != provenance:
                    continue
                out.append(rec)
        return out

    def stats(self) -> dict:
        records = self.load()
        n = len(records)
        rounds = [len(r.rounds) for r in records]
        by_quality = {}
        for r in records:
            by_quality[r.round1_quality] = by_quality.get(r.round1_quality, 0) + 1
        return {
            "records": n,
            "with_rounds": sum(1 for k in rounds if k > 0),
            "avg_rounds": (sum(rounds) / max(1, sum(1 for k in rounds if k > 0))),
            "by_round1_quality": by_quality,
        }
