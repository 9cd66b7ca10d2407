"""Scripted teacher: deterministic ratings, feedback sentences, spans and
corrections derived from ground-truth scenes; the stand-in for AMT workers.

Rating scale: perfect (semantically exact), acceptable (exactly one attribute
omitted), grammar-only (right content, wrong word order), minor (wrong
attribute/preposition), major (wrong object/action). Critique locates the
first erroneous phrase left-to-right and describes a single mistake per
round, mirroring the two-round annotation protocol.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..config import DatasetSettings
from ..corpus import (
    ACTIONS,
    ATTRIBUTES,
    OBJECTS,
    RELATION_TOKENS,
    Grammar,
    Phrase,
    PhrasedCaption,
    Scene,
)
from .store import (
    GOOD_QUALITIES,
    QUALITY_RANK,
    FeedbackRecord,
    RoundEntry,
    Span,
)

TEMPLATE_WORDS = (
    "there", "is", "a", "the", "not", "no", ",", ".",
    "words", "are", "in", "wrong", "order", "missing",
)


@dataclass
class ScriptedTeacher:
    settings: DatasetSettings
    grammar: Grammar

    def __post_init__(self):
        self._objects = set(OBJECTS[: self.settings.n_objects])
        self._attributes = set(ATTRIBUTES[: self.settings.n_attributes])
        self._actions = set(ACTIONS[: self.settings.n_actions])

    # -- rating ------------------------------------------------------------

    def _fulls(self, scene: Scene):
        return self.grammar.enumerate_realizations(scene)

    def _reduced_token_sets(self, scene: Scene):
        """Full realizations with exactly one attribute token dropped."""
        out = []
        for real in self._fulls(scene):
            toks = list(real.tokens())
            for i, w in enumerate(toks):
                if w in self._attributes:
                    out.append(tuple(toks[:i] + toks[i + 1 :]))
        return out

    def rate(self, scene: Scene, caption: PhrasedCaption) -> str:
        if not caption.phrases:
            raise ValueError("cannot rate an empty caption")
        flat = caption.tokens()
        fulls = [r.tokens() for r in self._fulls(scene)]
        if flat in fulls:
            return "perfect"
        if flat in self._reduced_token_sets(scene):
            return "acceptable"
        # content checks decide severity; structurally-off-but-true content
        # falls through to grammar-only
        return self._semantic_severity(scene, flat)

    def _semantic_severity(self, scene: Scene, flat) -> str:
        subj = scene.subject_cell()
        land = scene.landmark_cell()
        truth_objs = {OBJECTS[subj.obj], OBJECTS[land.obj]}
        saction = ACTIONS[subj.action]
        tokens = set(flat)
        objs = tokens & self._objects
        actions = tokens & self._actions
        major = (
            bool(objs - truth_objs)                # hallucinated object
            or OBJECTS[subj.obj] not in objs       # subject object missing/misnamed
            or OBJECTS[land.obj] not in objs       # landmark missing/misnamed
            or bool(actions - {saction})           # wrong action named
            or saction not in actions              # action missing
        )
        if major:
            return "major"
        if self._attribute_mismatch(scene, flat):
            return "minor"
        if not self._relation_matches(scene, flat):
            return "minor"
        # content is right; something structural is off
        return "grammar-only"

    def _attribute_mismatch(self, scene: Scene, flat) -> bool:
        """Positional check: each attribute word must match the object it
        modifies (the next object token, else the nearest preceding one)."""
        subj = scene.subject_cell()
        land = scene.landmark_cell()
        expected = {OBJECTS[subj.obj]: ATTRIBUTES[subj.attr],
                    OBJECTS[land.obj]: ATTRIBUTES[land.attr]}
        for k, word in enumerate(flat):
            if word not in self._attributes:
                continue
            target = None
            for later in flat[k + 1 :]:
                if later in self._objects:
                    target = later
                    break
            if target is None:
                for earlier in reversed(flat[:k]):
                    if earlier in self._objects:
                        target = earlier
                        break
            if target is not None and expected.get(target) != word:
                return True
        return False

    def _relation_matches(self, scene: Scene, flat) -> bool:
        want = RELATION_TOKENS[scene.relation]
        for other, toks in RELATION_TOKENS.items():
            if _contains_run(flat, toks) and other != scene.relation:
                return False
        return _contains_run(flat, want)

    # -- critique ------------------------------------------------------------

    def critique(self, scene: Scene, caption: PhrasedCaption) -> RoundEntry | None:
        """One round entry for the first erroneous phrase, or None when the
        caption is already perfect/acceptable."""
        quality = self.rate(scene, caption)
        if quality in GOOD_QUALITIES:
            return None
        target = self._closest_realization(scene, caption)
        entry = self._first_difference(scene, caption, target)
        corrected = entry.apply_to(caption)
        post = self.rate(scene, corrected)
        return RoundEntry(
            error_type=entry.error_type,
            feedback_text=entry.feedback_text,
            mistake_category=entry.mistake_category,
            span=entry.span,
            correction=entry.correction,
            post_quality=post,
        )

    def annotate(self, scene: Scene, caption: PhrasedCaption,
                 max_rounds: int = 3, provenance: str = "scripted") -> FeedbackRecord:
        """Full two-round protocol: rate, then critique round by round just as
        the web annotators do ("replace the caption with the correction")."""
        q1 = self.rate(scene, caption)
        rec = FeedbackRecord(scene.id, caption, q1, [], provenance)
        if q1 in GOOD_QUALITIES:
            return rec
        current = caption
        for _ in range(max_rounds):
            entry = self.critique(scene, current)
            if entry is None:
                break
            rec.rounds.append(entry)
            current = entry.apply_to(current)
            if entry.post_quality in GOOD_QUALITIES:
                break
        return rec

    def _closest_realization(self, scene: Scene, caption: PhrasedCaption) -> PhrasedCaption:
        flat = caption.tokens()
        best, best_score = None, -1.0
        for real in self._fulls(scene):
            score = _token_overlap(flat, real.tokens())
            if score > best_score:
                best, best_score = real, score
        return best

    def _first_difference(self, scene, caption, target) -> RoundEntry:
        cp, tp = caption.phrases, target.phrases
        for i in range(min(len(cp), len(tp))):
            if cp[i].words == tp[i].words:
                continue
            return self._phrase_difference(scene, i, cp[i], tp[i])
        if len(cp) > len(tp):
            i = len(tp)
            word = _first_content_word(cp[i].words, self._objects, self._attributes,
                                       self._actions) or cp[i].words[0]
            return RoundEntry(
                error_type="remove",
                feedback_text=f"there is no {word} .",
                mistake_category=self._word_category(word),
                span=Span(i, 0, len(cp[i].words) - 1),
                correction=(),
                post_quality="perfect",
            )
        # caption too short: missing phrase appended into the last phrase
        i = len(cp) - 1
        missing = tp[len(cp)].words
        return RoundEntry(
            error_type="missing",
            feedback_text=f"the words {' '.join(missing)} are missing .",
            mistake_category=self._words_category(missing),
            span=Span(i, len(cp[i].words) - 1, len(cp[i].words) - 1),
            correction=(cp[i].words[-1],) + tuple(missing),
            post_quality="perfect",
        )

    def _phrase_difference(self, scene, i: int, cphr: Phrase, tphr: Phrase) -> RoundEntry:
        c, t = list(cphr.words), list(tphr.words)
        if Counter(c) == Counter(t):
            return RoundEntry(
                error_type="replace",
                feedback_text="the words are in the wrong order .",
                mistake_category="grammar",
                span=Span(i, 0, len(c) - 1),
                correction=tuple(t),
                post_quality="perfect",
            )
        f = 0
        while f < min(len(c), len(t)) and c[f] == t[f]:
            f += 1
        s = 0
        while (s < min(len(c), len(t)) - f
               and c[len(c) - 1 - s] == t[len(t) - 1 - s]):
            s += 1
        c_mid = c[f : len(c) - s]
        t_mid = t[f : len(t) - s]
        if not c_mid:  # words missing inside the phrase
            if f < len(c):
                span, correction = Span(i, f, f), tuple(t_mid) + (c[f],)
            else:
                span, correction = Span(i, f - 1, f - 1), (c[f - 1],) + tuple(t_mid)
            return RoundEntry(
                error_type="missing",
                feedback_text=f"the words {' '.join(t_mid)} are missing .",
                mistake_category=self._words_category(t_mid),
                span=span,
                correction=correction,
                post_quality="perfect",
            )
        if not t_mid:  # extra words in the phrase
            word = _first_content_word(c_mid, self._objects, self._attributes,
                                       self._actions) or c_mid[0]
            return RoundEntry(
                error_type="remove",
                feedback_text=f"there is no {word} .",
                mistake_category=self._word_category(word),
                span=Span(i, f, len(c) - s - 1),
                correction=(),
                post_quality="perfect",
            )
        category = self._words_category(t_mid)
        wrong = _first_content_word(c_mid, self._objects, self._attributes,
                                    self._actions) or c_mid[0]
        right = _first_content_word(t_mid, self._objects, self._attributes,
                                    self._actions) or t_mid[0]
        feedback = self._replace_feedback(scene, category, wrong, right, c_mid, t_mid)
        return RoundEntry(
            error_type="replace",
            feedback_text=feedback,
            mistake_category=category,
            span=Span(i, f, len(c) - s - 1),
            correction=tuple(t_mid),
            post_quality="perfect",
        )

    def _replace_feedback(self, scene, category, wrong, right, c_mid, t_mid) -> str:
        sobj = OBJECTS[scene.subject_cell().obj]
        lobj = OBJECTS[scene.landmark_cell().obj]
        if category == "object":
            return f"there is a {right} , not a {wrong} ."
        if category == "attribute":
            return f"the {sobj} is {right} , not {wrong} ."
        if category == "action":
            return f"the {sobj} is {right} , not {wrong} ."
        if category == "preposition":
            return (f"the {sobj} is {' '.join(t_mid)} the {lobj} , "
                    f"not {' '.join(c_mid)} .")
        return "the words are in the wrong order ."

    def _word_category(self, word: str) -> str:
        if word in self._objects:
            return "object"
        if word in self._attributes:
            return "attribute"
        if word in self._actions:
            return "action"
        rel_words = {w for toks in RELATION_TOKENS.values() for w in toks}
        if word in rel_words:
            return "preposition"
        return "grammar"

    def _words_category(self, words) -> str:
        for w in words:
            cat = self._word_category(w)
            if cat != "grammar":
                return cat
        return "grammar"


def _contains_run(tokens, run) -> bool:
    run = tuple(run)
    for i in range(len(tokens) - len(run) + 1):
        if tuple(tokens[i : i + len(run)]) == run:
            return True
    return False


def _token_overlap(a, b) -> float:
    ca, cb = Counter(a), Counter(b)
    inter = sum((ca & cb).values())
    return 2.0 * inter / max(1, len(a) + len(b))


def _first_content_word(words, objects, attributes, actions):
    for w in words:
        if w in objects or w in attributes or w in actions:
            return w
    return None


# ---------------------------------------------------------------------------
# corruption source for benchmark feedback corpora
# ---------------------------------------------------------------------------


def perturb_caption(caption: PhrasedCaption, scene: Scene, cfg: DatasetSettings,
                    rng: np.random.Generator) -> PhrasedCaption:
    """Seeded single-error corruption of a gold caption (object/action/
    attribute/relation swap or a hallucinated phrase)."""
    kind = rng.choice(
        ["object", "action", "attribute", "relation", "extra"],
        p=[0.3, 0.2, 0.2, 0.2, 0.1],
    )
    objects = OBJECTS[: cfg.n_objects]
    attributes = ATTRIBUTES[: cfg.n_attributes]
    actions = ACTIONS[: cfg.n_actions]
    phrases = [list(p.words) for p in caption.phrases]
    labels = [p.label for p in caption.phrases]

    def swap_word(pool):
        spots = [
            (i, j) for i, ws in enumerate(phrases) for j, w in enumerate(ws) if w in pool
        ]
        if not spots:
            return False
        i, j = spots[int(rng.integers(len(spots)))]
        current = phrases[i][j]
        options = [w for w in pool if w != current]
        phrases[i][j] = options[int(rng.integers(len(options)))]
        return True

    done = False
    if kind == "object":
        done = swap_word(objects)
    elif kind == "action":
        done = swap_word(actions)
    elif kind == "attribute":
        done = swap_word(attributes)
    elif kind == "relation":
        flat_rels = list(RELATION_TOKENS.items())
        for i, ws in enumerate(phrases):
            for name, toks in flat_rels:
                k = _run_index(ws, toks)
                if k >= 0:
                    others = [t for n, t in flat_rels if n != name]
                    new = list(others[int(rng.integers(len(others)))])
                    phrases[i] = ws[:k] + new + ws[k + len(toks):]
                    done = True
                    break
            if done:
                break
    if kind == "extra" or not done:
        wrong_obj = [
            w for w in objects
            if w not in (OBJECTS[scene.subject_cell().obj], OBJECTS[scene.landmark_cell().obj])
        ]
        obj = wrong_obj[int(rng.integers(len(wrong_obj)))]
        phrases.append(["on", "a", obj])
        labels.append("PP")
    return PhrasedCaption(tuple(
        Phrase(lbl, tuple(ws)) for lbl, ws in zip(labels, phrases)
    ))


def _run_index(tokens, run) -> int:
    run = tuple(run)
    for i in range(len(tokens) - len(run) + 1):
        if tuple(tokens[i : i + len(run)]) == run:
            return i
    return -1
