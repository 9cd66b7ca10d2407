"""Sentence- and phrase-level rewards: BLEU-n, ROUGE-L, the quality-weighted
lambda-sum sentence reward, and the feedback-network reward conversion."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .errors import ContractError

QUALITY_TAGS = ("GT", "perfect", "acceptable", "grammar-only")
FBN_CLASS_VALUES = {"correct": 1, "wrong": -1, "not-relevant": 0}


@dataclass(frozen=True)
class RewardConfig:
    lambdas: tuple = (0.5, 0.5, 1.0, 1.0, 0.3)
    beta: dict = field(default_factory=lambda: {
        "GT": 1.0, "perfect": 1.0, "acceptable": 0.8, "grammar-only": 0.6,
    })
    lambda_f: float = 0.3
    class_values: dict = field(default_factory=lambda: dict(FBN_CLASS_VALUES))

    def __post_init__(self):
        if any(l < 0 for l in self.lambdas):
            raise ContractError("lambda weights must be non-negative")
        if any(not (0.0 < b <= 1.0) for b in self.beta.values()):
            raise ContractError("beta values must lie in (0, 1]")


def _ngrams(tokens, k) -> Counter:
    return Counter(tuple(tokens[i : i + k]) for i in range(len(tokens) - k + 1))


def bleu_n(candidate, references, n: int, smooth: bool = True) -> float:
    """Sentence-level cumulative BLEU of order n.

    Geometric mean of modified k-gram precisions for k = 1..n with add-1
    smoothing on the counts for k >= 2, times the brevity penalty
    exp(1 - r/c) when the candidate is shorter than the closest reference.
    """
    if not (1 <= n <= 5):
        raise ContractError(f"bleu order {n} outside [1, 5]")
    candidate = list(candidate)
    references = [list(r) for r in references]
    if not candidate:
        raise ContractError("empty candidate")
    if not references or any(not r for r in references):
        raise ContractError("empty reference set")
    log_sum = 0.0
    for k in range(1, n + 1):
        cand = _ngrams(candidate, k)
        clipped = 0
        for gram, cnt in cand.items():
            best = max(_ngrams(ref, k)[gram] for ref in references)
            clipped += min(cnt, best)
        total = sum(cand.values())
        if k >= 2 and smooth:
            p = (clipped + 1.0) / (total + 1.0)
        else:
            p = clipped / total if total else 0.0
        if p == 0.0:
            return 0.0
        log_sum += math.log(p)
    c = len(candidate)
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    bp = math.exp(1.0 - r / c) if c < r else 1.0
    return bp * math.exp(log_sum / n)


def _lcs_len(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(candidate, references, beta: float = 1.2) -> float:
    """LCS F-measure, max over references."""
    candidate = list(candidate)
    references = [list(r) for r in references]
    if not candidate:
        raise ContractError("empty candidate")
    if not references or any(not r for r in references):
        raise ContractError("empty reference set")
    best = 0.0
    for ref in references:
        lcs = _lcs_len(candidate, ref)
        if lcs == 0:
            continue
        rec = lcs / len(ref)
        prec = lcs / len(candidate)
        score = (1 + beta * beta) * rec * prec / (rec + beta * beta * prec)
        best = max(best, score)
    return best


def sentence_reward(candidate, reference, quality: str, cfg: RewardConfig) -> float:
    """beta(quality) * sum_i lambda_i * BLEU_i(candidate, reference)."""
    if quality not in cfg.beta:
        raise ContractError(f"unknown quality tag {quality!r}")
    beta = cfg.beta[quality]
    total = 0.0
    for i, lam in enumerate(cfg.lambdas, start=1):
        if lam:
            total += lam * bleu_n(candidate, [reference], i)
    return beta * total


def fbn_phrase_score(classify, caption, feedback_sentences, phrase_index: int,
                     cfg: RewardConfig) -> int:
    """Sum over the image's feedback sentences of value(argmax class).

    `classify(caption, feedback_tokens, phrase_index, mistake_category)`
    returns one of correct/wrong/not-relevant. Zero when no feedback exists.
    """
    if not feedback_sentences:
        return 0
    total = 0
    for feedback_tokens, category in feedback_sentences:
        cls = classify(caption, feedback_tokens, phrase_index, category)
        total += cfg.class_values[cls]
    return total


def phrase_reward(sentence_r: float, fbn_score: int, cfg: RewardConfig) -> float:
    return sentence_r + cfg.lambda_f * fbn_score


def weighted_metric(bleus, cfg: RewardConfig) -> float:
    """The artifact's weighted metric: sum_i lambda_i * BLEU_i at beta = 1."""
    return sum(lam * b for lam, b in zip(cfg.lambdas, bleus))
