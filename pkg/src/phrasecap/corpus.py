"""Synthetic scene/caption corpus.

A scene is a small grid with one acting subject cell and one landmark cell;
the spatial relation between them follows from their geometry, so captions
are fully predictable from the feature grid. The grammar realizes truthful
captions already segmented into labeled phrases (the stand-in for parsing
real captions), and `chunk_merge` applies the NP-merge normalization to
externally chunked input.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .config import DatasetSettings
from .errors import ConfigError, ContractError, FormatError, ValidationError

OBJECTS = (
    "cat", "dog", "bird", "horse", "duck", "sheep",
    "ball", "mat", "bench", "box", "tree", "lamp",
)
ATTRIBUTES = ("red", "blue", "green", "yellow", "small", "big", "old", "shiny")
ACTIONS = ("sitting", "standing", "running", "sleeping", "jumping", "eating")
RELATIONS = ("on", "next to", "under", "in front of")
RELATION_TOKENS = {
    "on": ("on",),
    "next to": ("next", "to"),
    "under": ("under",),
    "in front of": ("in", "front", "of"),
}

PHRASE_LABELS = ("NP", "PP", "VP", "CP")

DATASET_SCHEMA_VERSION = 1

_TOKEN_RE = re.compile(r"[a-z<>]+|[.,:;!?]")


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase, punctuation-separated tokens; the corpus-wide tokenizer."""
    return tuple(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class Phrase:
    label: str
    words: tuple[str, ...]

    def __post_init__(self):
        if self.label not in PHRASE_LABELS:
            raise ValidationError(f"phrase label {self.label!r} not in {PHRASE_LABELS}")
        if not self.words:
            raise ValidationError("phrase has no words")


@dataclass(frozen=True)
class PhrasedCaption:
    phrases: tuple[Phrase, ...]

    def tokens(self) -> tuple[str, ...]:
        return tuple(w for p in self.phrases for w in p.words)

    def render(self) -> str:
        return " ".join("( " + " ".join(p.words) + " )" for p in self.phrases)

    def to_json(self):
        return {"phrases": [{"label": p.label, "words": list(p.words)} for p in self.phrases]}

    @staticmethod
    def from_json(doc) -> "PhrasedCaption":
        return PhrasedCaption(
            tuple(Phrase(p["label"], tuple(p["words"])) for p in doc["phrases"])
        )


def caption(*phrases) -> PhrasedCaption:
    """Shorthand: caption(("NP", "a red cat"), ("VP", "is sitting"), ...)."""
    return PhrasedCaption(
        tuple(Phrase(label, tokenize(words) if isinstance(words, str) else tuple(words))
              for label, words in phrases)
    )


@dataclass(frozen=True)
class Cell:
    obj: int
    attr: int
    action: int | None = None


@dataclass(frozen=True)
class Scene:
    id: int
    rows: int
    cols: int
    cells: tuple[tuple[tuple[int, int], Cell], ...]  # ((r, c), cell) for occupied cells
    subject: tuple[int, int]
    landmark: tuple[int, int]
    relation: str

    def cell_at(self, rc) -> Cell | None:
        for pos, cell in self.cells:
            if pos == tuple(rc):
                return cell
        return None

    def subject_cell(self) -> Cell:
        return self.cell_at(self.subject)

    def landmark_cell(self) -> Cell:
        return self.cell_at(self.landmark)

    def to_json(self):
        return {
            "id": self.id,
            "rows": self.rows,
            "cols": self.cols,
            "cells": [
                {"r": pos[0], "c": pos[1], "object": cell.obj, "attribute": cell.attr,
                 "action": cell.action}
                for pos, cell in self.cells
            ],
            "subject": list(self.subject),
            "landmark": list(self.landmark),
            "relation": self.relation,
        }

    @staticmethod
    def from_json(doc) -> "Scene":
        return Scene(
            id=doc["id"],
            rows=doc["rows"],
            cols=doc["cols"],
            cells=tuple(
                ((c["r"], c["c"]), Cell(c["object"], c["attribute"], c["action"]))
                for c in doc["cells"]
            ),
            subject=tuple(doc["subject"]),
            landmark=tuple(doc["landmark"]),
            relation=doc["relation"],
        )


def relation_between(subject, landmark) -> str:
    sr, sc = subject
    lr, lc = landmark
    if sc == lc and lr == sr + 1:
        return "on"
    if sc == lc and lr == sr - 1:
        return "under"
    if sr == lr and abs(sc - lc) == 1:
        return "next to"
    return "in front of"


def validate_scene(scene: Scene, cfg: DatasetSettings):
    occupied = {pos for pos, _ in scene.cells}
    if len(occupied) != len(scene.cells):
        raise ValidationError("duplicate cell positions")
    if scene.subject == scene.landmark:
        raise ValidationError("landmark equals subject")
    if scene.subject not in occupied or scene.landmark not in occupied:
        raise ValidationError("subject/landmark cell unoccupied")
    subjects = [cell for _, cell in scene.cells if cell.action is not None]
    if len(subjects) != 1 or scene.subject_cell().action is None:
        raise ValidationError("exactly one cell (the subject) carries an action")
    if scene.relation != relation_between(scene.subject, scene.landmark):
        raise ValidationError("relation does not match the geometry")
    for pos, cell in scene.cells:
        if not (0 <= pos[0] < scene.rows and 0 <= pos[1] < scene.cols):
            raise ValidationError(f"cell {pos} outside grid")
        if not (0 <= cell.obj < cfg.n_objects and 0 <= cell.attr < cfg.n_attributes):
            raise ValidationError(f"cell {pos} ids outside vocabularies")
        if cell.action is not None and not (0 <= cell.action < cfg.n_actions):
            raise ValidationError(f"cell {pos} action id outside vocabulary")


def gen_scene(seed, cfg: DatasetSettings, scene_id: int | None = None) -> Scene:
    """Deterministic scene for a seed; subject + landmark (+ distractors)."""
    if cfg.rows * cfg.cols < 2:
        raise ConfigError("grid needs at least two cells")
    if cfg.n_objects < 2 or cfg.n_objects > len(OBJECTS):
        raise ConfigError(f"n_objects must be in [2, {len(OBJECTS)}]")
    if cfg.n_attributes > len(ATTRIBUTES) or cfg.n_actions > len(ACTIONS):
        raise ConfigError("attribute/action vocabulary too large")
    rng = np.random.default_rng(seed)
    n = cfg.rows * cfg.cols
    picks = rng.choice(n, size=min(2 + cfg.distractors, n), replace=False)
    positions = [(int(p) // cfg.cols, int(p) % cfg.cols) for p in picks]
    subject, landmark = positions[0], positions[1]
    sobj = int(rng.integers(cfg.n_objects))
    lobj = int(rng.integers(cfg.n_objects - 1))
    if lobj >= sobj:
        lobj += 1  # landmark object differs from the subject's
    cells = [
        (subject, Cell(sobj, int(rng.integers(cfg.n_attributes)), int(rng.integers(cfg.n_actions)))),
        (landmark, Cell(lobj, int(rng.integers(cfg.n_attributes)))),
    ]
    for pos in positions[2:]:
        obj = int(rng.integers(cfg.n_objects))
        cells.append((pos, Cell(obj, int(rng.integers(cfg.n_attributes)))))
    scene = Scene(
        id=scene_id if scene_id is not None else (seed if isinstance(seed, int) else 0),
        rows=cfg.rows,
        cols=cfg.cols,
        cells=tuple(cells),
        subject=subject,
        landmark=landmark,
        relation=relation_between(subject, landmark),
    )
    validate_scene(scene, cfg)
    return scene


@dataclass(frozen=True)
class FeatureGrid:
    rows: int
    cols: int
    array: np.ndarray  # (rows*cols, dim) float64, row-major cells

    @property
    def n(self):
        return self.array.shape[0]

    @property
    def dim(self):
        return self.array.shape[1]

    def index(self, rc) -> int:
        return rc[0] * self.cols + rc[1]


def feature_dim(cfg: DatasetSettings) -> int:
    return cfg.n_objects + cfg.n_attributes + cfg.n_actions + 2 + cfg.noise_dims


def scene_features(scene: Scene, seed, cfg: DatasetSettings) -> FeatureGrid:
    """Per-cell one-hot blocks + normalized position + noise dims."""
    dim = feature_dim(cfg)
    rng = np.random.default_rng([_as_seed(seed), scene.id, 7919])
    arr = np.zeros((scene.rows * scene.cols, dim))
    by_pos = dict(scene.cells)
    for r in range(scene.rows):
        for c in range(scene.cols):
            j = r * scene.cols + c
            cell = by_pos.get((r, c))
            if cell is not None:
                arr[j, cell.obj] = 1.0
                arr[j, cfg.n_objects + cell.attr] = 1.0
                if cell.action is not None:
                    arr[j, cfg.n_objects + cfg.n_attributes + cell.action] = 1.0
            off = cfg.n_objects + cfg.n_attributes + cfg.n_actions
            arr[j, off] = r / (scene.rows - 1) if scene.rows > 1 else 0.0
            arr[j, off + 1] = c / (scene.cols - 1) if scene.cols > 1 else 0.0
            if cfg.noise_dims and cfg.noise_sigma > 0:
                arr[j, off + 2 :] = rng.normal(0.0, cfg.noise_sigma, cfg.noise_dims)
    return FeatureGrid(scene.rows, scene.cols, arr)


def _as_seed(seed) -> int:
    return seed if isinstance(seed, int) else abs(hash(tuple(seed))) % (2**31)


# ---------------------------------------------------------------------------
# grammar
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grammar:
    """Truthful caption templates over scenes.

    Each template is a list of (label, slot-pattern) phrases; weights bias the
    per-seed template choice. Slots: sattr sobj saction rel lobj lattr.
    """

    templates: tuple = (
        (("NP", "a {sattr} {sobj}"), ("VP", "is {saction}"), ("PP", "{rel} a {lobj} .")),
        (("NP", "a {sattr} {sobj}"), ("VP", "is {saction}"), ("PP", "{rel} a {lattr} {lobj} .")),
        (
            ("NP", "a {sattr} {sobj}"),
            ("VP", "is {saction}"),
            ("PP", "{rel} a {lobj}"),
            ("CP", "and"),
            ("NP", "the {lobj}"),
            ("VP", "is {lattr} ."),
        ),
    )
    weights: tuple = (0.7, 0.2, 0.1)

    def slots(self, scene: Scene) -> dict:
        subj = scene.subject_cell()
        land = scene.landmark_cell()
        if scene.relation not in RELATION_TOKENS:
            raise ConfigError(f"no template covers relation {scene.relation!r}")
        return {
            "sobj": OBJECTS[subj.obj],
            "sattr": ATTRIBUTES[subj.attr],
            "saction": ACTIONS[subj.action],
            "rel": " ".join(RELATION_TOKENS[scene.relation]),
            "lobj": OBJECTS[land.obj],
            "lattr": ATTRIBUTES[land.attr],
        }

    def realize_template(self, scene: Scene, index: int) -> PhrasedCaption:
        slots = self.slots(scene)
        phrases = []
        for label, pattern in self.templates[index]:
            words = tokenize(pattern.format(**slots))
            phrases.append(Phrase(label, words))
        return PhrasedCaption(tuple(phrases))

    def enumerate_realizations(self, scene: Scene) -> list[PhrasedCaption]:
        return [self.realize_template(scene, i) for i in range(len(self.templates))]


def realize_caption(scene: Scene, grammar: Grammar, seed) -> PhrasedCaption:
    rng = np.random.default_rng(seed)
    probs = np.asarray(grammar.weights, dtype=float)
    idx = int(rng.choice(len(grammar.templates), p=probs / probs.sum()))
    return grammar.realize_template(scene, idx)


def chunk_merge(raw_phrases) -> PhrasedCaption:
    """Merge NPs whose (original) predecessor is a non-NP into that predecessor.

    One left-to-right pass; the merge target keeps its label. Matches the
    normalization applied to parsed captions ("riding" + "a motorcycle" ->
    one VP).
    """
    raw = [(label, tuple(words)) for label, words in raw_phrases]
    if not raw:
        raise ContractError("chunk_merge of an empty phrase list")
    out: list[Phrase] = []
    for i, (label, words) in enumerate(raw):
        if label == "NP" and i > 0 and raw[i - 1][0] != "NP":
            prev = out[-1]
            out[-1] = Phrase(prev.label, prev.words + words)
        else:
            out.append(Phrase(label, words))
    return PhrasedCaption(tuple(out))


def apply_span(cap: PhrasedCaption, phrase_index: int, word_start: int, word_end: int,
               replacement) -> PhrasedCaption:
    """Replace the inclusive word span inside one phrase; empty phrases drop."""
    if not (0 <= phrase_index < len(cap.phrases)):
        raise ValidationError(f"span.phrase_index {phrase_index} outside caption")
    phrase = cap.phrases[phrase_index]
    if not (0 <= word_start <= word_end < len(phrase.words)):
        raise ValidationError(
            f"span words [{word_start}, {word_end}] outside phrase of {len(phrase.words)}"
        )
    words = phrase.words[:word_start] + tuple(replacement) + phrase.words[word_end + 1 :]
    phrases = list(cap.phrases)
    if words:
        phrases[phrase_index] = Phrase(phrase.label, words)
    else:
        del phrases[phrase_index]
    if not phrases:
        raise ValidationError("correction removed the whole caption")
    return PhrasedCaption(tuple(phrases))


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------

EOP, BOS, UNK = "<EOP>", "<BOS>", "<UNK>"
RESERVED = (EOP, BOS, UNK)


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]  # id order; reserved tokens first
    word_to_id: dict = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if tuple(self.words[:3]) != RESERVED:
            raise ValidationError("reserved tokens must occupy ids 0..2")
        if len(set(self.words)) != len(self.words):
            raise ValidationError("vocabulary words not unique")
        object.__setattr__(self, "word_to_id", {w: i for i, w in enumerate(self.words)})

    def __len__(self):
        return len(self.words)

    @property
    def eop(self):
        return 0

    @property
    def bos(self):
        return 1

    @property
    def unk(self):
        return 2

    def encode(self, word: str, strict: bool = False) -> int:
        wid = self.word_to_id.get(word)
        if wid is None:
            if strict:
                raise FormatError(f"unknown word {word!r} in strict mode")
            return self.unk
        return wid

    def encode_all(self, words, strict: bool = False) -> tuple[int, ...]:
        return tuple(self.encode(w, strict) for w in words)

    def decode(self, wid: int) -> str:
        return self.words[wid]


def build_vocab(captions, extra_words=()) -> Vocabulary:
    if not captions:
        raise ContractError("build_vocab needs at least one caption")
    seen = set()
    for cap in captions:
        seen.update(cap.tokens())
    seen.update(extra_words)
    return Vocabulary(RESERVED + tuple(sorted(seen)))


def grammar_words(grammar: Grammar, cfg: DatasetSettings) -> set[str]:
    """All terminals the grammar can emit under the configured vocabularies."""
    words = {"a", "the", "is", "and", "."}
    words.update(OBJECTS[: cfg.n_objects])
    words.update(ATTRIBUTES[: cfg.n_attributes])
    words.update(ACTIONS[: cfg.n_actions])
    for rel in RELATION_TOKENS.values():
        words.update(rel)
    return words


# ---------------------------------------------------------------------------
# dataset persistence
# ---------------------------------------------------------------------------


@dataclass
class SceneRecord:
    scene: Scene
    captions: list  # (PhrasedCaption, seed)


@dataclass
class Dataset:
    settings: DatasetSettings
    seed: int
    config_hash: str
    vocab: Vocabulary
    records: list

    def train_records(self):
        return self.records[: self.settings.n_train]

    def heldout_records(self):
        return self.records[self.settings.n_train :]

    def features_for(self, scene: Scene) -> FeatureGrid:
        return scene_features(scene, self.seed, self.settings)


def gen_dataset(cfg: DatasetSettings, seed: int, config_hash: str = "",
                grammar: Grammar | None = None, extra_vocab=()) -> Dataset:
    grammar = grammar or Grammar()
    records = []
    total = cfg.n_train + cfg.n_heldout
    for i in range(total):
        scene = gen_scene([seed, i], cfg, scene_id=i)
        caps = []
        for j in range(cfg.captions_per_scene):
            caps.append((realize_caption(scene, grammar, [seed, i, 101 + j]), j))
        records.append(SceneRecord(scene, caps))
    all_caps = [cap for rec in records for cap, _ in rec.captions]
    vocab = build_vocab(all_caps, extra_words=extra_vocab)
    return Dataset(cfg, seed, config_hash, vocab, records)


def save_dataset(ds: Dataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "type": "header",
            "schema_version": DATASET_SCHEMA_VERSION,
            "seed": ds.seed,
            "config_hash": ds.config_hash,
            "settings": ds.settings.__dict__,
            "vocab": list(ds.vocab.words),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in ds.records:
            doc = {
                "type": "scene",
                "id": rec.scene.id,
                "scene": rec.scene.to_json(),
                "captions": [
                    {"phrases": cap.to_json()["phrases"], "seed": s} for cap, s in rec.captions
                ],
            }
            fh.write(json.dumps(doc, sort_keys=True) + "\n")


def load_dataset(path, strict: bool = True) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise FormatError(f"{path} is empty")
    header = json.loads(lines[0])
    if header.get("type") != "header" or header.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise FormatError(
            f"{path}: expected dataset header with schema_version {DATASET_SCHEMA_VERSION}"
        )
    settings = DatasetSettings(**header["settings"])
    vocab = Vocabulary(tuple(header["vocab"]))
    records = []
    for ln in lines[1:]:
        doc = json.loads(ln)
        scene = Scene.from_json(doc["scene"])
        caps = []
        for c in doc["captions"]:
            cap = PhrasedCaption.from_json(c)
            if strict:
                for w in cap.tokens():
                    vocab.encode(w, strict=True)
            caps.append((cap, c["seed"]))
        records.append(SceneRecord(scene, caps))
    return Dataset(settings, header["seed"], header.get("config_hash", ""), vocab, records)


def import_chunked_captions(path, vocab: Vocabulary | None = None, strict: bool = True):
    """Load externally pre-chunked captions ({phrases: [{label, words[]}]} per
    line) and apply the NP-merge normalization; the substitution point for
    real parsed data."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            if not ln.strip():
                continue
            doc = json.loads(ln)
            raw = [(p["label"], tuple(p["words"])) for p in doc["phrases"]]
            cap = chunk_merge(raw)
            if vocab is not None and strict:
                for w in cap.tokens():
                    vocab.encode(w, strict=True)
            out.append(cap)
    return out
