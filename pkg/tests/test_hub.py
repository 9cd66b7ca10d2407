import numpy as np
import pytest

from phrasecap import corpus
from phrasecap.config import DatasetSettings
from phrasecap.errors import ValidationError
from phrasecap.hub.store import (
    QUALITY_RANK,
    FeedbackRecord,
    FeedbackStore,
    RoundEntry,
    Span,
    validate_record,
)
from phrasecap.hub.teacher import ScriptedTeacher, perturb_caption

CFG = DatasetSettings()
GRAMMAR = corpus.Grammar()
TEACHER = ScriptedTeacher(CFG, GRAMMAR)


def cat_scene():
    cells = (
        ((0, 0), corpus.Cell(corpus.OBJECTS.index("cat"),
                             corpus.ATTRIBUTES.index("red"),
                             corpus.ACTIONS.index("sitting"))),
        ((1, 0), corpus.Cell(corpus.OBJECTS.index("mat"),
                             corpus.ATTRIBUTES.index("blue"))),
    )
    return corpus.Scene(id=0, rows=3, cols=3, cells=cells,
                        subject=(0, 0), landmark=(1, 0), relation="on")


def gold():
    return corpus.caption(("NP", "a red cat"), ("VP", "is sitting"), ("PP", "on a mat ."))


class TestTeacherRate:
    def test_gold_caption_rates_perfect(self):
        assert TEACHER.rate(cat_scene(), gold()) == "perfect"

    def test_wrong_object_is_major(self):
        cap = corpus.caption(("NP", "a red dog"), ("VP", "is sitting"), ("PP", "on a mat ."))
        assert TEACHER.rate(cat_scene(), cap) == "major"

    def test_wrong_action_is_major(self):
        cap = corpus.caption(("NP", "a red cat"), ("VP", "is running"), ("PP", "on a mat ."))
        assert TEACHER.rate(cat_scene(), cap) == "major"

    def test_wrong_attribute_is_minor(self):
        cap = corpus.caption(("NP", "a blue cat"), ("VP", "is sitting"), ("PP", "on a mat ."))
        assert TEACHER.rate(cat_scene(), cap) == "minor"

    def test_wrong_preposition_is_minor(self):
        cap = corpus.caption(("NP", "a red cat"), ("VP", "is sitting"), ("PP", "under a mat ."))
        assert TEACHER.rate(cat_scene(), cap) == "minor"

    def test_omitted_attribute_is_acceptable(self):
        cap = corpus.caption(("NP", "a cat"), ("VP", "is sitting"), ("PP", "on a mat ."))
        assert TEACHER.rate(cat_scene(), cap) == "acceptable"

    def test_scrambled_words_are_grammar_only(self):
        cap = corpus.caption(("NP", "red a cat"), ("VP", "is sitting"), ("PP", "on a mat ."))
        assert TEACHER.rate(cat_scene(), cap) == "grammar-only"


class TestTeacherCritique:
    def test_object_replacement_entry(self):
        cap = corpus.caption(("NP", "a red dog"), ("VP", "is sitting"), ("PP", "on a mat ."))
        entry = TEACHER.critique(cat_scene(), cap)
        assert entry.error_type == "replace"
        assert entry.mistake_category == "object"
        assert entry.feedback_text == "there is a cat , not a dog ."
        assert entry.span == Span(0, 2, 2)
        assert entry.correction == ("cat",)
        assert entry.apply_to(cap).tokens() == gold().tokens()

    def test_hallucinated_phrase_removed(self):
        cap = corpus.caption(("NP", "a red cat"), ("VP", "is sitting"),
                             ("PP", "on a mat ."), ("PP", "under a tree"))
        entry = TEACHER.critique(cat_scene(), cap)
        assert entry.error_type == "remove"
        assert entry.correction == ()
        assert entry.span.phrase_index == 3
        assert "no tree" in entry.feedback_text

    def test_perfect_caption_yields_none(self):
        assert TEACHER.critique(cat_scene(), gold()) is None

    def test_correction_strictly_improves_rating(self):
        rng = np.random.default_rng(0)
        scene_cfg = CFG
        for i in range(40):
            scene = corpus.gen_scene([21, i], scene_cfg, scene_id=i)
            cap = corpus.realize_caption(scene, GRAMMAR, [21, i, 101])
            bad = perturb_caption(cap, scene, scene_cfg, rng)
            before = TEACHER.rate(scene, bad)
            entry = TEACHER.critique(scene, bad)
            if entry is None:
                continue
            after = entry.post_quality
            assert QUALITY_RANK[after] > QUALITY_RANK[before]

    def test_annotate_emits_validating_records(self):
        rng = np.random.default_rng(1)
        for i in range(40):
            scene = corpus.gen_scene([22, i], CFG, scene_id=i)
            cap = corpus.realize_caption(scene, GRAMMAR, [22, i, 101])
            bad = perturb_caption(cap, scene, CFG, rng)
            rec = TEACHER.annotate(scene, bad)
            validate_record(rec)

    def test_chain_consistency(self):
        # every round's correction applied to its caption gives the next round's caption
        rng = np.random.default_rng(3)
        scene = corpus.gen_scene([23, 5], CFG, scene_id=5)
        cap = corpus.realize_caption(scene, GRAMMAR, [23, 5, 101])
        bad = perturb_caption(perturb_caption(cap, scene, CFG, rng), scene, CFG, rng)
        rec = TEACHER.annotate(scene, bad)
        current = rec.reference
        for rnd in rec.rounds:
            current = rnd.apply_to(current)
        assert current == rec.final_caption()


class TestStore:
    def record(self):
        entry = RoundEntry("replace", "there is a dog , not a cat .", "object",
                           Span(0, 1, 1), ("dog",), "perfect")
        return FeedbackRecord(3, corpus.caption(("NP", "a cat"), ("PP", "on a mat")),
                              "major", [entry], "scripted")

    def test_append_then_load_round_trips(self, tmp_path):
        store = FeedbackStore(tmp_path / "fb.jsonl")
        rec = self.record()
        store.append(rec)
        loaded = store.load()
        assert len(loaded) == 1
        assert loaded[0].to_json() == rec.to_json()

    def test_span_crossing_phrase_boundary_rejected(self, tmp_path):
        entry = RoundEntry("replace", "x .", "object", Span(0, 1, 5), ("dog",), "perfect")
        rec = FeedbackRecord(3, corpus.caption(("NP", "a cat"), ("PP", "on a mat")),
                             "major", [entry], "scripted")
        store = FeedbackStore(tmp_path / "fb.jsonl")
        with pytest.raises(ValidationError, match=r"rounds\[0\].span"):
            store.append(rec)

    def test_rounds_required_iff_erroneous(self):
        rec = self.record()
        rec.round1_quality = "perfect"
        with pytest.raises(ValidationError, match="rounds"):
            validate_record(rec)
        rec2 = self.record()
        rec2.rounds = []
        with pytest.raises(ValidationError, match="rounds"):
            validate_record(rec2)

    def test_stats_average_rounds(self, tmp_path):
        store = FeedbackStore(tmp_path / "fb.jsonl")
        entry = self.record().rounds[0]
        two_round = FeedbackRecord(
            1,
            corpus.caption(("NP", "a cat"), ("PP", "on a mat")),
            "major",
            [entry,
             RoundEntry("replace", "there is a bird , not a dog .", "object",
                        Span(0, 1, 1), ("bird",), "perfect")],
            "scripted",
        )
        store.append(two_round)
        stats = store.stats()
        assert stats["records"] == 1
        assert stats["avg_rounds"] == pytest.approx(2.0)

    def test_load_filters(self, tmp_path):
        store = FeedbackStore(tmp_path / "fb.jsonl")
        store.append(self.record())
        human = self.record()
        human.image_id = 9
        human.provenance = "human"
        store.append(human)
        assert len(store.load(image_id=9)) == 1
        assert len(store.load(provenance="scripted")) == 1
        assert len(store.load()) == 2
