"""Policy-gradient training with the greedy-decode baseline, per-phrase
credit assignment, MIXER-style annealing and RL dataset modes.

One Monte-Carlo sample per image per step; the per-phrase advantage
(r(w^p) - r(w-hat^p)) scales that phrase's summed log-probs (label + words),
and the final EOS decision is scaled by the sentence-level advantage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import captioner as cap_mod
from .captioner import CaptionerConfig, MixedPrefix, Sampler, run_decoder
from .config import RLSettings
from .corpus import Dataset, Vocabulary, tokenize
from .errors import ConfigError, ContractError, NumericError
from .numerics import Adam, ParamStore, clip_global_norm
from .numerics import tape
from .rewards import RewardConfig, bleu_n, phrase_reward, rouge_l, sentence_reward, weighted_metric

GOOD_FOR_POOLS = ("perfect", "acceptable", "grammar-only")


@dataclass(frozen=True)
class AnnealSchedule:
    """K pure cross-entropy epochs, then T annealed epochs; every m epochs one
    more trailing phrase moves from cross-entropy to policy gradient."""

    mle_epochs: int
    annealed_epochs: int
    phrase_period: int = 5

    def __post_init__(self):
        if self.mle_epochs < 0 or self.annealed_epochs < 0:
            raise ConfigError("schedule epochs must be >= 0")
        if self.phrase_period < 1:
            raise ConfigError("phrase period m must be >= 1")

    @property
    def total_epochs(self):
        return self.mle_epochs + self.annealed_epochs

    def pg_phrases(self, epoch: int, max_phrases: int) -> int:
        """floor((t - K) / m) trailing phrases under policy gradient."""
        if epoch < self.mle_epochs:
            return 0
        return min((epoch - self.mle_epochs) // self.phrase_period, max_phrases)

    @staticmethod
    def from_settings(rl: RLSettings) -> "AnnealSchedule":
        return AnnealSchedule(rl.mle_epochs, rl.epochs, rl.phrase_period)


# ---------------------------------------------------------------------------
# reference pools / dataset modes
# ---------------------------------------------------------------------------


def parse_mode(mode: str):
    """'GT:k' | 'C' | 'A' with optional '+FB'. Returns (base, k, use_fbn)."""
    use_fbn = mode.endswith("+FB")
    base = mode[: -3] if use_fbn else mode
    k = 1
    if base.startswith("GT"):
        if ":" in base:
            base, _, ks = base.partition(":")
            k = int(ks)
        base = "GT"
    if base not in ("GT", "C", "A"):
        raise ConfigError(f"unknown dataset mode {mode!r}")
    return base, k, use_fbn


def build_reference_pools(dataset: Dataset, mode: str, feedback_records=None) -> dict:
    """image id -> list of (tokens, quality tag) reward references.

    C: annotator-corrected captions without minor/major errors, GT elsewhere.
    A: corrected captions plus reference captions rated without minor/major
    errors, GT elsewhere.
    """
    base, k, _ = parse_mode(mode)
    by_image = {}
    for rec in feedback_records or []:
        by_image.setdefault(rec.image_id, []).append(rec)
    pools = {}
    for rec in dataset.records:
        gold = [(cap.tokens(), "GT") for cap, _ in rec.captions]
        image_records = by_image.get(rec.scene.id, [])
        if base == "GT":
            pool = gold[:k] if k > 0 else gold
        else:
            pool = []
            for frec in image_records:
                if frec.rounds:
                    quality = frec.final_quality()
                    if quality in GOOD_FOR_POOLS:
                        pool.append((frec.final_caption().tokens(), quality))
                if base == "A" and frec.round1_quality in GOOD_FOR_POOLS:
                    pool.append((frec.reference.tokens(), frec.round1_quality))
            if not pool:
                pool = gold[:1]
        if not pool:
            raise ConfigError(f"image {rec.scene.id} has no reward reference")
        pools[rec.scene.id] = pool
    return pools


def feedback_sentences(feedback_records) -> dict:
    """image id -> [(feedback tokens, mistake category)] across all rounds."""
    out = {}
    for rec in feedback_records or []:
        entries = [(tokenize(r.feedback_text), r.mistake_category) for r in rec.rounds]
        if entries:
            out.setdefault(rec.image_id, []).extend(entries)
    return out


# ---------------------------------------------------------------------------
# per-example policy-gradient step
# ---------------------------------------------------------------------------


def _phrase_scores(classify, trace, vocab: Vocabulary, sentences, rcfg: RewardConfig):
    """FBN reward per raw trace phrase (0 for empty phrases / no feedback)."""
    scores = {}
    if not sentences or classify is None:
        return scores
    caption = trace.to_caption(vocab)
    if not caption.phrases:
        return scores
    cap_index = {}
    k = 0
    for t, p in enumerate(trace.phrases):
        if p.words:
            cap_index[t] = k
            k += 1
    for t, ci in cap_index.items():
        total = 0
        for fb_tokens, category in sentences:
            cls = classify(caption, fb_tokens, ci, category)
            total += rcfg.class_values[cls]
        scores[t] = total
    return scores


def mixed_example(pvars, ccfg: CaptionerConfig, feats, gold_seq, k_pg: int,
                  vocab: Vocabulary, reference, rcfg: RewardConfig, rng,
                  sentences=None, classify=None):
    """One training example under the annealing split.

    Teacher-forces the first P - k_pg gold phrases (cross-entropy terms) and
    samples the rest; sampled phrases are scored with the per-phrase advantage
    against a greedy continuation from the same prefix. Returns (loss Var or
    None, stats).
    """
    P = len(gold_seq)
    xe_n = max(P - k_pg, 0)
    if k_pg <= 0:
        loss, _ = cap_mod.mle_loss(pvars, ccfg, feats, gold_seq)
        return loss, {"xe_phrases": P, "pg_phrases": 0}
    trace = run_decoder(pvars, ccfg, feats, MixedPrefix(gold_seq, xe_n, Sampler(rng)))
    with tape.no_grad():
        baseline = run_decoder(pvars, ccfg, feats,
                               MixedPrefix(gold_seq, xe_n, cap_mod.Greedy()))
    ref_tokens, quality = reference
    sample_tokens = [vocab.decode(w) for w in trace.token_ids()]
    greedy_tokens = [vocab.decode(w) for w in baseline.token_ids()]
    if not sample_tokens:
        return None, {"skipped": "empty sample"}
    r_s = sentence_reward(sample_tokens, ref_tokens, quality, rcfg)
    r_g = sentence_reward(greedy_tokens, ref_tokens, quality, rcfg) if greedy_tokens else 0.0
    if not (np.isfinite(r_s) and np.isfinite(r_g)):
        raise NumericError(f"non-finite reward: sampled={r_s} greedy={r_g}")
    fbn_s = _phrase_scores(classify, trace, vocab, sentences, rcfg)
    fbn_g = _phrase_scores(classify, baseline, vocab, sentences, rcfg)
    groups, eos_group = trace.phrase_groups()
    terms, weights = [], []
    raw_adv, raw_reward = [], []
    for t in range(len(trace.phrases)):
        lp_sum = tape.asum(groups[t])
        if t < xe_n:
            terms.append(lp_sum)
            weights.append(1.0)  # cross-entropy on the teacher-forced prefix
            continue
        r_p = phrase_reward(r_s, fbn_s.get(t, 0), rcfg)
        if t < len(baseline.phrases):
            b_p = phrase_reward(r_g, fbn_g.get(t, 0), rcfg)
        else:
            b_p = r_g  # unmatched trailing phrase: greedy sentence reward only
        adv = r_p - b_p
        terms.append(lp_sum)
        weights.append(adv)
        raw_adv.append(adv)
        raw_reward.append(r_p)
    # the EOS decision is always in the sampled region here (k_pg >= 1)
    sent_adv = r_s - r_g
    terms.append(eos_group[0])
    weights.append(sent_adv)
    loss = tape.scale_shift(tape.wadd(terms, weights), -1.0)
    stats = {
        "xe_phrases": xe_n,
        "pg_phrases": max(len(trace.phrases) - xe_n, 0),
        "reward": r_s,
        "baseline": r_g,
        "adv_mean_with_baseline": float(np.mean(raw_adv)) if raw_adv else 0.0,
        "adv_mean_without_baseline": float(np.mean(raw_reward)) if raw_reward else 0.0,
    }
    return loss, stats


def pg_gradient(store: ParamStore, ccfg: CaptionerConfig, feats, vocab: Vocabulary,
                gold_seq, reference, rcfg: RewardConfig, rng,
                sentences=None, classify=None):
    """Pure-PG gradient for one image (all phrases sampled). Returns
    (grads, stats)."""
    pvars = store.as_vars()
    loss, stats = mixed_example(pvars, ccfg, feats, gold_seq, ccfg.max_phrases + 1,
                                vocab, reference, rcfg, rng,
                                sentences=sentences, classify=classify)
    if loss is None:
        return None, stats
    tape.backward(loss)
    return store.grads_from(pvars), stats


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def train_rl(store: ParamStore, ccfg: CaptionerConfig, dataset: Dataset, mode: str,
             rcfg: RewardConfig, rl: RLSettings, seed: int,
             classify=None, feedback_records=None, progress=None):
    """SCST-style training under a dataset mode; returns (store, train log).

    The log records, per epoch, the scheduled XE/PG phrase split, mean
    sampled/baseline rewards, gradient norm, and the advantage-variance probe
    (with vs without the greedy baseline) over up to 5 probe batches.
    """
    base, k, use_fbn = parse_mode(mode)
    if use_fbn and classify is None:
        raise ConfigError(f"mode {mode} needs a trained feedback network")
    if base in ("C", "A") and not feedback_records:
        raise ConfigError(f"mode {mode} needs a feedback store")
    pools = build_reference_pools(dataset, mode, feedback_records)
    sentences = feedback_sentences(feedback_records) if use_fbn else {}
    schedule = AnnealSchedule.from_settings(rl)
    records = dataset.train_records()
    if rl.n_images:
        records = records[: rl.n_images]
    feats = {r.scene.id: dataset.features_for(r.scene).array for r in records}
    golds = {
        r.scene.id: cap_mod.encode_gold(r.captions[0][0], dataset.vocab, ccfg)
        for r in records
    }
    ids = [r.scene.id for r in records]
    opt = Adam(store, lr=rl.lr)
    rng = np.random.default_rng([seed, 41])
    log = []
    for epoch in range(schedule.total_epochs):
        k_pg = schedule.pg_phrases(epoch, ccfg.max_phrases)
        order = rng.permutation(len(ids))
        rewards, baselines, norms, skipped = [], [], [], 0
        probe = []
        for start in range(0, len(order), rl.batch):
            batch = [ids[j] for j in order[start : start + rl.batch]]
            pvars = store.as_vars()
            batch_adv_with, batch_adv_without = [], []
            n_used = 0
            for image_id in batch:
                pool = pools[image_id]
                ref = pool[int(rng.integers(len(pool)))]
                loss, stats = mixed_example(
                    pvars, ccfg, feats[image_id], golds[image_id], k_pg,
                    dataset.vocab, ref, rcfg, rng,
                    sentences=sentences.get(image_id), classify=classify,
                )
                if loss is None:
                    skipped += 1
                    continue
                tape.backward(loss)
                n_used += 1
                if "reward" in stats:
                    rewards.append(stats["reward"])
                    baselines.append(stats["baseline"])
                    batch_adv_with.append(stats["adv_mean_with_baseline"])
                    batch_adv_without.append(stats["adv_mean_without_baseline"])
            if n_used == 0:
                continue
            grads = {n: g / n_used for n, g in store.grads_from(pvars).items()}
            grads, norm = clip_global_norm(grads)
            norms.append(norm)
            opt.step(grads)
            if len(probe) < 5 and len(batch_adv_with) >= 2:
                probe.append({
                    "var_with_baseline": float(np.var(batch_adv_with)),
                    "var_without_baseline": float(np.var(batch_adv_without)),
                })
        row = {
            "epoch": epoch,
            "pg_phrases": k_pg,
            "xe_phrases_rule": f"P-{k_pg}",
            "mean_reward": float(np.mean(rewards)) if rewards else None,
            "mean_baseline": float(np.mean(baselines)) if baselines else None,
            "mean_grad_norm": float(np.mean(norms)) if norms else 0.0,
            "probe": probe,
            "skipped": skipped,
        }
        log.append(row)
        if progress:
            progress(epoch, row)
    return store, log


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(store: ParamStore, ccfg: CaptionerConfig, dataset: Dataset, records,
             rcfg: RewardConfig) -> dict:
    """Greedy decoding scored against the GT references; metric report in the
    {bleu1..bleu4, rougeL, weighted} layout (means of sentence-level scores)."""
    if not records:
        raise ContractError("empty evaluation split")
    records = sorted(records, key=lambda r: r.scene.id)  # order-fixed reduction
    bleus = np.zeros(5)
    rouge = 0.0
    for rec in records:
        feats = dataset.features_for(rec.scene).array
        trace = cap_mod.greedy(store, ccfg, feats)
        cand = [dataset.vocab.decode(w) for w in trace.token_ids()]
        refs = [list(cap.tokens()) for cap, _ in rec.captions]
        if cand:
            for i in range(5):
                bleus[i] += bleu_n(cand, refs, i + 1)
            rouge += rouge_l(cand, refs)
    n = len(records)
    bleus /= n
    report = {f"bleu{i+1}": float(bleus[i]) for i in range(4)}
    report["rougeL"] = float(rouge / n)
    report["weighted"] = float(weighted_metric(bleus, rcfg))
    report["n"] = n
    return report


def exact_match(store: ParamStore, ccfg: CaptionerConfig, dataset: Dataset, records) -> float:
    """Fraction of scenes whose greedy caption equals one of the gold captions."""
    hits = 0
    for rec in records:
        feats = dataset.features_for(rec.scene).array
        trace = cap_mod.greedy(store, ccfg, feats)
        cand = tuple(dataset.vocab.decode(w) for w in trace.token_ids())
        if any(cand == cap.tokens() for cap, _ in rec.captions):
            hits += 1
    return hits / len(records)
