"""Feedback network: classifies each phrase of a caption as correct / wrong /
not relevant conditioned on a feedback sentence, plus construction of its
training set from feedback records.

The network is text-only: a shared LSTM encodes both the caption and the
feedback sentence, phrases are mean-pooled word embeddings, and a 3-layer
dropout MLP over (caption, feedback, phrase, mistake-type) emits the 3-way
distribution.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .config import FBNSettings
from .corpus import PhrasedCaption, Vocabulary, tokenize
from .errors import ConfigError, ContractError, ValidationError
from .numerics import Adam, MLPSpec, ParamStore, clip_global_norm, lstm_register, mlp_register
from .numerics import tape
from .numerics.tape import Var

MISTAKE_TYPES = ("object", "action", "attribute", "preposition", "counting", "grammar", "none")
CLASSES = ("correct", "wrong", "not-relevant")


@dataclass(frozen=True)
class FBNConfig:
    vocab_size: int
    hidden: int = 64
    embed: int = 32
    mlp_hidden: int = 64
    dropout: float = 0.5

    @staticmethod
    def from_settings(fs: FBNSettings, vocab_size: int) -> "FBNConfig":
        return FBNConfig(
            vocab_size=vocab_size,
            hidden=fs.hidden,
            embed=fs.embed,
            mlp_hidden=fs.mlp_hidden,
            dropout=fs.dropout,
        )


@dataclass(frozen=True)
class FBNExample:
    caption_phrases: tuple  # tuple of word-token tuples
    feedback: tuple         # feedback sentence tokens
    phrase_index: int
    mistake_type: str
    label: str
    record_id: int = -1

    def __post_init__(self):
        if not (0 <= self.phrase_index < len(self.caption_phrases)):
            raise ValidationError(f"phrase_index {self.phrase_index} outside caption")
        if self.mistake_type not in MISTAKE_TYPES:
            raise ValidationError(f"unknown mistake type {self.mistake_type!r}")
        if self.label not in CLASSES:
            raise ValidationError(f"unknown label {self.label!r}")

    def to_json(self):
        return {
            "caption": [" ".join(p) for p in self.caption_phrases],
            "feedback": " ".join(self.feedback),
            "phrase_index": self.phrase_index,
            "mistake_type": self.mistake_type,
            "label": self.label,
            "record_id": self.record_id,
        }

    @staticmethod
    def from_json(doc) -> "FBNExample":
        return FBNExample(
            caption_phrases=tuple(tokenize(p) for p in doc["caption"]),
            feedback=tokenize(doc["feedback"]),
            phrase_index=doc["phrase_index"],
            mistake_type=doc["mistake_type"],
            label=doc["label"],
            record_id=doc.get("record_id", -1),
        )


def _mlp_spec(cfg: FBNConfig) -> MLPSpec:
    return MLPSpec((cfg.mlp_hidden, cfg.mlp_hidden, len(CLASSES)), ("relu", "relu", "identity"))


def build_params(cfg: FBNConfig, rng: np.random.Generator) -> ParamStore:
    store = ParamStore()
    store.register("embed", (cfg.vocab_size, cfg.embed), rng, fan_in=cfg.embed)
    lstm_register(store, "sent", cfg.embed, cfg.hidden, rng)
    in_dim = 2 * cfg.hidden + cfg.embed + len(MISTAKE_TYPES)
    mlp_register(store, "cls", in_dim, _mlp_spec(cfg), rng)
    return store


def _encode_seq(pvars, cfg: FBNConfig, token_ids):
    return tape.lstm_encode(pvars["sent.w"], pvars["sent.b"], pvars["embed"],
                            token_ids, np.zeros(cfg.hidden), np.zeros(cfg.hidden))


def mistake_onehot(mistake_type: str) -> np.ndarray:
    m = np.zeros(len(MISTAKE_TYPES))
    m[MISTAKE_TYPES.index(mistake_type)] = 1.0
    return m


def fbn_logits(pvars, cfg: FBNConfig, caption_ids, phrase_ids, feedback_ids,
               m_onehot: np.ndarray, dropout_masks=None):
    """3-way logits over correct/wrong/not-relevant for one phrase.

    caption_ids: the full caption's word ids (flattened); phrase_ids: the
    queried phrase's word ids; dropout masks (on the two hidden layers)
    only during training.
    """
    if len(feedback_ids) == 0:
        raise ContractError("empty feedback; route no-feedback captions around the FBN")
    if len(caption_ids) == 0 or len(phrase_ids) == 0:
        raise ContractError("empty caption or phrase")
    h_c = _encode_seq(pvars, cfg, caption_ids)
    h_f = _encode_seq(pvars, cfg, feedback_ids)
    q = tape.embed_mean(pvars["embed"], phrase_ids)
    h = tape.concat([h_c, h_f, q, m_onehot])
    spec = _mlp_spec(cfg)
    for k, act in enumerate(spec.activations):
        h = tape.affine(pvars[f"cls.w{k}"], pvars[f"cls.b{k}"], h)
        if act == "relu":
            h = tape.relu(h)
        if dropout_masks is not None and k < len(dropout_masks):
            h = tape.mul_const(h, dropout_masks[k])
    return h


def fbn_forward(pvars, cfg: FBNConfig, caption_ids, phrase_ids, feedback_ids,
                m_onehot: np.ndarray, dropout_masks=None):
    """Proper 3-way distribution (softmax over fbn_logits)."""
    return tape.softmax(fbn_logits(pvars, cfg, caption_ids, phrase_ids,
                                   feedback_ids, m_onehot, dropout_masks))


def classify_phrase(store: ParamStore, cfg: FBNConfig, vocab: Vocabulary,
                    caption: PhrasedCaption, feedback_tokens, phrase_index: int,
                    mistake_type: str) -> str:
    """Inference-time argmax class; ties break by fixed class order."""
    with tape.no_grad():
        dist = fbn_forward(
            store.as_vars(), cfg,
            vocab.encode_all(caption.tokens()),
            vocab.encode_all(caption.phrases[phrase_index].words),
            vocab.encode_all(feedback_tokens),
            mistake_onehot(mistake_type),
        )
    return CLASSES[int(np.argmax(dist.data))]


def make_classifier(store: ParamStore, cfg: FBNConfig, vocab: Vocabulary):
    def classify(caption, feedback_tokens, phrase_index, mistake_type):
        return classify_phrase(store, cfg, vocab, caption, feedback_tokens,
                               phrase_index, mistake_type)
    return classify


# ---------------------------------------------------------------------------
# dataset construction from feedback records
# ---------------------------------------------------------------------------


def build_fbn_dataset(records) -> list:
    """Per feedback round: marked phrase of the critiqued caption -> wrong,
    marked phrase of the corrected caption -> correct, every other phrase of
    both captions -> not-relevant. Rounds are independent examples."""
    examples = []
    for rec in records:
        base = rec.reference
        for rnd in rec.rounds:
            feedback = tokenize(rnd.feedback_text)
            span = rnd.span
            if not (0 <= span.phrase_index < len(base.phrases)):
                raise ValidationError(
                    f"record {rec.image_id}: span phrase {span.phrase_index} outside caption"
                )
            corrected = rnd.apply_to(base)
            m = rnd.mistake_category
            base_phrases = tuple(p.words for p in base.phrases)
            corr_phrases = tuple(p.words for p in corrected.phrases)
            for i in range(len(base_phrases)):
                label = "wrong" if i == span.phrase_index else "not-relevant"
                examples.append(FBNExample(base_phrases, feedback, i, m, label, rec.image_id))
            for i in range(len(corr_phrases)):
                marked = i == span.phrase_index and span.phrase_index < len(corr_phrases)
                label = "correct" if marked else "not-relevant"
                examples.append(FBNExample(corr_phrases, feedback, i, m, label, rec.image_id))
            base = corrected
    return examples


def save_fbn_dataset(examples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json(), sort_keys=True) + "\n")


def load_fbn_dataset(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            if ln.strip():
                out.append(FBNExample.from_json(json.loads(ln)))
    return out


# ---------------------------------------------------------------------------
# training / evaluation
# ---------------------------------------------------------------------------


def split_by_record(examples, seed: int, train_fraction: float = 0.9):
    """9/10-1/10 split at the record level so no record leaks across."""
    ids = sorted({ex.record_id for ex in examples})
    rng = np.random.default_rng([seed, 29])
    order = rng.permutation(len(ids))
    cut = int(len(ids) * train_fraction)
    train_ids = {ids[i] for i in order[:cut]}
    train = [ex for ex in examples if ex.record_id in train_ids]
    test = [ex for ex in examples if ex.record_id not in train_ids]
    return train, test


def _example_loss(pvars, cfg, vocab, ex: FBNExample, rng):
    masks = None
    if cfg.dropout > 0.0 and rng is not None:
        keep = 1.0 - cfg.dropout
        masks = [
            (rng.random(cfg.mlp_hidden) < keep).astype(float) / keep,
            (rng.random(cfg.mlp_hidden) < keep).astype(float) / keep,
        ]
    caption_ids = vocab.encode_all(w for p in ex.caption_phrases for w in p)
    phrase_ids = vocab.encode_all(ex.caption_phrases[ex.phrase_index])
    feedback_ids = vocab.encode_all(ex.feedback)
    logits = fbn_logits(pvars, cfg, caption_ids, phrase_ids, feedback_ids,
                        mistake_onehot(ex.mistake_type), dropout_masks=masks)
    return tape.logprob(logits, CLASSES.index(ex.label))


def train_fbn(examples, vocab: Vocabulary, cfg: FBNConfig, lr: float, batch: int,
              epochs: int, seed: int, progress=None, mask_mistake_type: bool = False):
    """Cross-entropy training; returns (store, log, (train, heldout)) with a
    record-level 9/10-1/10 split and per-epoch held-out accuracy."""
    present = {ex.label for ex in examples}
    if present != set(CLASSES):
        raise ConfigError(f"dataset must contain all three classes, has {sorted(present)}")
    if mask_mistake_type:
        examples = [
            FBNExample(ex.caption_phrases, ex.feedback, ex.phrase_index, "none",
                       ex.label, ex.record_id)
            for ex in examples
        ]
    train, heldout = split_by_record(examples, seed)
    store = build_params(cfg, np.random.default_rng([seed, 31]))
    opt = Adam(store, lr=lr)
    rng = np.random.default_rng([seed, 37])
    log = []
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), batch):
            idx = order[start : start + batch]
            pvars = store.as_vars()
            for j in idx:
                lp = _example_loss(pvars, cfg, vocab, train[j], rng)
                loss = tape.scale_shift(lp, -1.0)
                tape.backward(loss)
                losses.append(loss.item())
            grads = {n: g / len(idx) for n, g in store.grads_from(pvars).items()}
            grads, _ = clip_global_norm(grads)
            opt.step(grads)
        acc = eval_fbn(store, cfg, vocab, heldout)["accuracy"] if heldout else float("nan")
        log.append({"epoch": epoch, "loss": float(np.mean(losses)), "heldout_accuracy": acc})
        if progress:
            progress(epoch, log[-1])
    return store, log, (train, heldout)


def eval_fbn(store: ParamStore, cfg: FBNConfig, vocab: Vocabulary, examples) -> dict:
    """Accuracy, 3x3 confusion matrix (rows = true class) and the
    majority-class baseline."""
    if not examples:
        raise ContractError("empty evaluation dataset")
    confusion = np.zeros((len(CLASSES), len(CLASSES)), dtype=int)
    with tape.no_grad():
        pvars = store.as_vars()
        for ex in examples:
            caption_ids = vocab.encode_all(w for p in ex.caption_phrases for w in p)
            phrase_ids = vocab.encode_all(ex.caption_phrases[ex.phrase_index])
            dist = fbn_forward(pvars, cfg, caption_ids, phrase_ids,
                               vocab.encode_all(ex.feedback),
                               mistake_onehot(ex.mistake_type))
            pred = int(np.argmax(dist.data))
            confusion[CLASSES.index(ex.label), pred] += 1
    counts = confusion.sum(axis=1)
    accuracy = float(np.trace(confusion)) / len(examples)
    majority = float(counts.max()) / len(examples)
    return {
        "accuracy": accuracy,
        "confusion": confusion.tolist(),
        "majority_baseline": majority,
        "n": len(examples),
    }


def checkpoint_meta(cfg: FBNConfig, **extra) -> dict:
    meta = {"kind": "fbn", "fbn_config": asdict(cfg)}
    meta.update(extra)
    return meta


def config_from_meta(meta: dict) -> FBNConfig:
    return FBNConfig(**meta["fbn_config"])
