"""Hierarchical phrase-RNN / word-RNN caption decoder with attention.

The phrase RNN emits a label distribution (NP/PP/VP/CP/EOS) and a topic for
each phrase; the word RNN emits that phrase's words, closing on <EOP>. Two
attention heads produce separate context vectors for the phrase and word
levels. One decode engine drives teacher forcing, greedy decoding, sampling
and mixed prefix-forcing, so recorded log-probs always match a teacher-forced
recomputation bit for bit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .config import ModelSettings
from .corpus import Dataset, Phrase, PhrasedCaption, Vocabulary
from .errors import ContractError, NumericError
from .numerics import (
    Adam,
    MLPSpec,
    ParamStore,
    clip_global_norm,
    lstm_register,
    mlp_apply,
    mlp_register,
)
from .numerics import tape
from .numerics.kernels import softmax_fwd
from .numerics.tape import Var

LABELS = ("NP", "PP", "VP", "CP", "EOS")
EOS_ID = LABELS.index("EOS")
NEG = -1e9


@dataclass(frozen=True)
class CaptionerConfig:
    vocab_size: int
    feature_dim: int
    hidden: int = 64
    embed: int = 32
    label_embed: int = 8
    att_hidden: int = 32
    deep_dim: int = 64
    mlp_hidden: int = 64
    max_phrases: int = 8
    max_words: int = 6
    lambda_att: float = 0.01

    @staticmethod
    def from_settings(ms: ModelSettings, vocab_size: int, feature_dim: int) -> "CaptionerConfig":
        return CaptionerConfig(
            vocab_size=vocab_size,
            feature_dim=feature_dim,
            hidden=ms.hidden,
            embed=ms.embed,
            label_embed=ms.label_embed,
            att_hidden=ms.att_hidden,
            deep_dim=ms.deep_dim,
            mlp_hidden=ms.mlp_hidden,
            max_phrases=ms.max_phrases,
            max_words=ms.max_words,
            lambda_att=ms.lambda_att,
        )


def _label_spec(cfg) -> MLPSpec:
    return MLPSpec((cfg.mlp_hidden, cfg.mlp_hidden, len(LABELS)), ("relu", "relu", "identity"))


def _topic_spec(cfg) -> MLPSpec:
    return MLPSpec((cfg.mlp_hidden, cfg.mlp_hidden, cfg.hidden), ("relu", "relu", "identity"))


def _phrase_enc_spec(cfg) -> MLPSpec:
    return MLPSpec((cfg.mlp_hidden, cfg.mlp_hidden, cfg.embed), ("relu", "relu", "identity"))


def build_params(cfg: CaptionerConfig, rng: np.random.Generator) -> ParamStore:
    store = ParamStore()
    store.register("word_embed", (cfg.vocab_size, cfg.embed), rng, fan_in=cfg.embed)
    store.register("label_embed", (len(LABELS), cfg.label_embed), rng, fan_in=cfg.label_embed)
    phrase_in = cfg.label_embed + cfg.feature_dim + cfg.embed
    lstm_register(store, "phrase_rnn", phrase_in, cfg.hidden, rng)
    store.register("phrase_init.h", (cfg.hidden,), rng, fan_in=cfg.hidden)
    store.register("phrase_init.c", (cfg.hidden,), rng, fan_in=cfg.hidden)
    mlp_register(store, "label_head", cfg.hidden, _label_spec(cfg), rng)
    for head in ("att_phrase", "att_word"):
        store.register(f"{head}.wh", (cfg.att_hidden, cfg.hidden), rng, fan_in=cfg.hidden)
        store.register(f"{head}.wl", (cfg.att_hidden, cfg.label_embed), rng, fan_in=cfg.label_embed)
        store.register(f"{head}.wa", (cfg.att_hidden, cfg.feature_dim), rng, fan_in=cfg.feature_dim)
        store.register(f"{head}.b0", (cfg.att_hidden,), rng, fan_in=cfg.feature_dim)
        store.register(f"{head}.v", (cfg.att_hidden,), rng, fan_in=cfg.att_hidden)
    mlp_register(store, "topic", cfg.hidden + cfg.label_embed + cfg.feature_dim, _topic_spec(cfg), rng)
    lstm_register(store, "word_rnn", cfg.embed + cfg.feature_dim, cfg.hidden, rng)
    store.register("out.uh", (cfg.deep_dim, cfg.hidden), rng, fan_in=cfg.hidden)
    store.register("out.uc", (cfg.deep_dim, cfg.feature_dim), rng, fan_in=cfg.feature_dim)
    store.register("out.uw", (cfg.deep_dim, cfg.embed), rng, fan_in=cfg.embed)
    store.register("out.bd", (cfg.deep_dim,), rng, fan_in=cfg.hidden)
    store.register("out.w", (cfg.vocab_size, cfg.deep_dim), rng, fan_in=cfg.deep_dim)
    store.register("out.b", (cfg.vocab_size,), rng, fan_in=cfg.deep_dim)
    mlp_register(store, "phrase_enc", cfg.embed, _phrase_enc_spec(cfg), rng)
    return store


def attend(pvars, cfg: CaptionerConfig, h, l_emb, feats: np.ndarray, which: str):
    """Score each location with a 2-layer ReLU MLP on (h, l, a_j); returns
    (context = sum_j alpha_j a_j, alpha)."""
    prefix = "att_phrase" if which == "phrase" else "att_word"
    zero = np.zeros(cfg.att_hidden)
    rows = tape.rows_affine(feats, pvars[f"{prefix}.wa"], pvars[f"{prefix}.b0"])
    hl = tape.add(
        tape.affine(pvars[f"{prefix}.wh"], zero, h),
        tape.affine(pvars[f"{prefix}.wl"], zero, l_emb),
    )
    scores = tape.matvec(tape.relu(tape.brows_add(rows, hl)), pvars[f"{prefix}.v"])
    alpha = tape.softmax(scores)
    return tape.wsum(feats, alpha), alpha


# ---------------------------------------------------------------------------
# decode strategies
# ---------------------------------------------------------------------------


class Greedy:
    def next_label(self, probs, t):
        return int(np.argmax(probs))

    def next_word(self, probs, t, i):
        return int(np.argmax(probs))


class Sampler:
    """Ancestral sampling; temperature 0 degenerates to greedy."""

    def __init__(self, rng: np.random.Generator, temperature: float = 1.0):
        self.rng = rng
        self.temperature = temperature

    def _draw(self, probs):
        if self.temperature == 0.0:
            return int(np.argmax(probs))
        if self.temperature != 1.0:
            p = probs ** (1.0 / self.temperature)
            probs = p / p.sum()
        return int(self.rng.choice(len(probs), p=probs / probs.sum()))

    def next_label(self, probs, t):
        return self._draw(probs)

    def next_word(self, probs, t, i):
        return self._draw(probs)


class Teacher:
    """Replays a gold sequence [(label_id, word_ids)], then EOS."""

    def __init__(self, gold):
        self.gold = list(gold)

    def next_label(self, probs, t):
        return self.gold[t][0] if t < len(self.gold) else EOS_ID

    def next_word(self, probs, t, i):
        words = self.gold[t][1]
        return words[i] if i < len(words) else 0  # <EOP> closes the phrase


class MixedPrefix:
    """Teacher-forces the first `prefix` gold phrases, then hands over."""

    def __init__(self, gold, prefix: int, inner):
        self.gold = list(gold)
        self.prefix = prefix
        self.inner = inner

    def next_label(self, probs, t):
        if t < self.prefix:
            return self.gold[t][0]
        return self.inner.next_label(probs, t)

    def next_word(self, probs, t, i):
        if t < self.prefix:
            words = self.gold[t][1]
            return words[i] if i < len(words) else 0
        return self.inner.next_word(probs, t, i)


# ---------------------------------------------------------------------------
# decode engine
# ---------------------------------------------------------------------------


@dataclass
class PhraseTrace:
    label: int
    label_lp: Var
    words: list
    word_lps: list


@dataclass
class DecodeTrace:
    phrases: list
    eos_lp: Var
    att_penalty: Var

    def logprob_vars(self):
        out = []
        for p in self.phrases:
            out.append(p.label_lp)
            out.extend(p.word_lps)
        out.append(self.eos_lp)
        return out

    def total_logprob(self) -> float:
        return float(sum(v.item() for v in self.logprob_vars()))

    def phrase_groups(self):
        """Per-phrase log-prob Vars (label + words + <EOP>), then the EOS group."""
        groups = [[p.label_lp, *p.word_lps] for p in self.phrases]
        return groups, [self.eos_lp]

    def gold_seq(self):
        return [(p.label, list(p.words)) for p in self.phrases]

    def to_caption(self, vocab: Vocabulary) -> PhrasedCaption:
        phrases = [
            Phrase(LABELS[p.label], tuple(vocab.decode(w) for w in p.words))
            for p in self.phrases
            if p.words
        ]
        return PhrasedCaption(tuple(phrases))

    def token_ids(self):
        return [w for p in self.phrases for w in p.words]


def _masked(logits, mask_vec):
    return tape.add_const(logits, mask_vec) if mask_vec is not None else logits


def run_decoder(pvars, cfg: CaptionerConfig, feats: np.ndarray, strategy,
                temperature: float = 1.0) -> DecodeTrace:
    """Drive the decoder with a choice strategy; records one log-prob Var per
    decision. Forced decisions at the phrase/word caps contribute log 1 = 0."""
    label_spec = _label_spec(cfg)
    topic_spec = _topic_spec(cfg)
    enc_spec = _phrase_enc_spec(cfg)
    zero_label = np.zeros(cfg.label_embed)
    zero_ctx = np.zeros(cfg.feature_dim)
    zero_enc = np.zeros(cfg.embed)
    zero_cell = np.zeros(cfg.hidden)
    eos_mask = np.full(len(LABELS), NEG)
    eos_mask[EOS_ID] = 0.0
    eop_mask = np.full(cfg.vocab_size, NEG)
    eop_mask[0] = 0.0

    h_p, c_p = pvars["phrase_init.h"], pvars["phrase_init.c"]
    l_prev, ctx_prev, enc_prev = zero_label, zero_ctx, zero_enc
    phrases = []
    alpha_sums = [None, None]
    eos_lp = None

    for t in range(cfg.max_phrases + 1):
        x = tape.concat([l_prev, ctx_prev, enc_prev])
        h_p, c_p = tape.lstm(pvars["phrase_rnn.w"], pvars["phrase_rnn.b"], x, h_p, c_p)
        logits = mlp_apply(pvars, h_p, label_spec, "label_head")
        logits = _masked(logits, eos_mask if t == cfg.max_phrases else None)
        if temperature not in (0.0, 1.0):
            logits = tape.scale_shift(logits, 1.0 / temperature)
        probs = softmax_fwd(logits.data)
        label = strategy.next_label(probs, t)
        lp = tape.logprob(logits, label)
        if label == EOS_ID:
            eos_lp = lp
            break
        l_emb = tape.embed(pvars["label_embed"], label)
        ctx_phrase, a_p = attend(pvars, cfg, h_p, l_emb, feats, "phrase")
        ctx_word, a_w = attend(pvars, cfg, h_p, l_emb, feats, "word")
        for k, a in enumerate((a_p, a_w)):
            alpha_sums[k] = a if alpha_sums[k] is None else tape.add(alpha_sums[k], a)
        h_w = mlp_apply(pvars, tape.concat([h_p, l_emb, ctx_word]), topic_spec, "topic")
        c_w = zero_cell
        w_prev = 1  # <BOS>
        words, word_lps = [], []
        for i in range(cfg.max_words + 1):
            prev_emb = tape.embed(pvars["word_embed"], w_prev)
            xw = tape.concat([prev_emb, ctx_word])
            h_w, c_w = tape.lstm(pvars["word_rnn.w"], pvars["word_rnn.b"], xw, h_w, c_w)
            pre = tape.add(
                tape.affine(pvars["out.uh"], pvars["out.bd"], h_w),
                tape.add(
                    tape.affine(pvars["out.uc"], np.zeros(cfg.deep_dim), ctx_word),
                    tape.affine(pvars["out.uw"], np.zeros(cfg.deep_dim), prev_emb),
                ),
            )
            wlogits = tape.affine(pvars["out.w"], pvars["out.b"], tape.tanh(pre))
            wlogits = _masked(wlogits, eop_mask if i == cfg.max_words else None)
            if temperature not in (0.0, 1.0):
                wlogits = tape.scale_shift(wlogits, 1.0 / temperature)
            wprobs = softmax_fwd(wlogits.data)
            wid = strategy.next_word(wprobs, t, i)
            word_lps.append(tape.logprob(wlogits, wid))
            if wid == 0:  # <EOP>
                break
            words.append(wid)
            w_prev = wid
        if words:
            mean_emb = tape.mean_stack([tape.embed(pvars["word_embed"], w) for w in words])
            enc_prev = mlp_apply(pvars, mean_emb, enc_spec, "phrase_enc")
        else:
            enc_prev = zero_enc
        phrases.append(PhraseTrace(label, lp, words, word_lps))
        l_prev, ctx_prev = l_emb, ctx_phrase

    penalty = Var(np.asarray(0.0))
    if alpha_sums[0] is not None:
        for s in alpha_sums:
            d = tape.scale_shift(s, -1.0, 1.0)
            penalty = tape.add(penalty, tape.vsum(tape.mul(d, d)))
    return DecodeTrace(phrases, eos_lp, penalty)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def encode_gold(cap: PhrasedCaption, vocab: Vocabulary, cfg: CaptionerConfig):
    if not cap.phrases:
        raise ContractError("empty gold caption")
    if len(cap.phrases) > cfg.max_phrases:
        raise ContractError(f"gold caption has {len(cap.phrases)} phrases > cap")
    gold = []
    for p in cap.phrases:
        if len(p.words) > cfg.max_words:
            raise ContractError(f"gold phrase {p.words} longer than max words")
        gold.append((LABELS.index(p.label), [vocab.encode(w) for w in p.words]))
    return gold


def mle_loss(pvars, cfg: CaptionerConfig, feats, gold_seq) -> tuple:
    """Teacher-forced cross-entropy (labels incl. EOS, words incl. <EOP>)
    plus the doubly-stochastic attention penalty. Returns (loss, trace)."""
    if not gold_seq:
        raise ContractError("empty gold caption")
    trace = run_decoder(pvars, cfg, feats, Teacher(gold_seq))
    nll = tape.scale_shift(tape.asum(trace.logprob_vars()), -1.0)
    loss = tape.add(nll, tape.scale_shift(trace.att_penalty, cfg.lambda_att))
    return loss, trace


def greedy(store: ParamStore, cfg: CaptionerConfig, feats) -> DecodeTrace:
    with tape.no_grad():
        return run_decoder(store.as_vars(), cfg, feats, Greedy())


def sample(store: ParamStore, cfg: CaptionerConfig, feats, rng,
           temperature: float = 1.0, record_grad: bool = False):
    strategy = Sampler(rng, temperature)
    if record_grad:
        pvars = store.as_vars()
        return run_decoder(pvars, cfg, feats, strategy, temperature), pvars
    with tape.no_grad():
        return run_decoder(store.as_vars(), cfg, feats, strategy, temperature), None


def recompute_logprob(store: ParamStore, cfg: CaptionerConfig, feats, trace: DecodeTrace) -> float:
    """Teacher-forced replay of a raw decode trace (empty phrases included)."""
    with tape.no_grad():
        replay = run_decoder(store.as_vars(), cfg, feats, Teacher(trace.gold_seq()))
    return replay.total_logprob()


def pretrain(dataset: Dataset, cfg: CaptionerConfig, lr: float, batch: int, epochs: int,
             seed: int, snapshot_epoch: int = 0, progress=None):
    """MLE training over the train split; returns (store, log, snapshot store)."""
    records = dataset.train_records()
    if not records:
        raise ContractError("empty dataset")
    rng = np.random.default_rng([seed, 17])
    store = build_params(cfg, np.random.default_rng([seed, 23]))
    opt = Adam(store, lr=lr)
    feats = [dataset.features_for(r.scene).array for r in records]
    examples = [
        (i, encode_gold(cap, dataset.vocab, cfg))
        for i, rec in enumerate(records)
        for cap, _ in rec.captions
    ]
    log = []
    snapshot = None
    for epoch in range(epochs):
        order = rng.permutation(len(examples))
        losses = []
        for start in range(0, len(order), batch):
            idx = order[start : start + batch]
            pvars = store.as_vars()
            for j in idx:
                rec_i, gold = examples[j]
                loss, _ = mle_loss(pvars, cfg, feats[rec_i], gold)
                tape.backward(loss)
                losses.append(loss.item())
            grads = {n: g / len(idx) for n, g in store.grads_from(pvars).items()}
            grads, _ = clip_global_norm(grads)
            opt.step(grads)
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss):
            raise NumericError(f"pretraining diverged at epoch {epoch}: loss={mean_loss}")
        log.append({"epoch": epoch, "loss": mean_loss})
        if progress:
            progress(epoch, mean_loss)
        if snapshot_epoch and epoch + 1 == snapshot_epoch:
            snapshot = store.copy()
    return store, log, snapshot


def checkpoint_meta(cfg: CaptionerConfig, **extra) -> dict:
    meta = {"kind": "captioner", "captioner_config": asdict(cfg)}
    meta.update(extra)
    return meta


def config_from_meta(meta: dict) -> CaptionerConfig:
    return CaptionerConfig(**meta["captioner_config"])
