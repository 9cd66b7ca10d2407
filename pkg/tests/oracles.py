"""Independent brute-force oracles used by the test suite.

These are written straight from the metric definitions with naive list
scans / recursion, deliberately sharing no code with the package
implementations they check.
"""

import math
from functools import lru_cache


def ngram_list(tokens, k):
    return [tuple(tokens[i : i + k]) for i in range(len(tokens) - k + 1)]


def count_occurrences(grams, gram):
    n = 0
    for g in grams:
        if g == gram:
            n += 1
    return n


def brute_bleu(candidate, references, n, smooth=True):
    """Sentence BLEU of order n by explicit scanning.

    Modified k-gram precision with clipping by the max reference count,
    add-1 smoothing on numerator and denominator for k >= 2, geometric mean
    over k = 1..n, brevity penalty exp(1 - r/c) for c < r with the closest
    reference length r (ties resolved toward the shorter reference).
    """
    assert candidate and references
    precisions = []
    for k in range(1, n + 1):
        cand_grams = ngram_list(candidate, k)
        matched = 0
        for gram in set(cand_grams):
            best = 0
            for ref in references:
                cnt = count_occurrences(ngram_list(ref, k), gram)
                if cnt > best:
                    best = cnt
            matched += min(count_occurrences(cand_grams, gram), best)
        total = len(cand_grams)
        if k >= 2 and smooth:
            precisions.append((matched + 1.0) / (total + 1.0))
        else:
            precisions.append(matched / total if total > 0 else 0.0)
    if any(p == 0.0 for p in precisions):
        return 0.0
    geo = math.exp(sum(math.log(p) for p in precisions) / n)
    c = len(candidate)
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    bp = math.exp(1.0 - r / c) if c < r else 1.0
    return bp * geo


def brute_lcs(a, b):
    """LCS length by plain memoized recursion."""

    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    return rec(0, 0)


def brute_rouge_l(candidate, references, beta=1.2):
    best = 0.0
    for ref in references:
        lcs = brute_lcs(tuple(candidate), tuple(ref))
        if lcs == 0:
            continue
        rec = lcs / len(ref)
        prec = lcs / len(candidate)
        score = (1 + beta * beta) * rec * prec / (rec + beta * beta * prec)
        best = max(best, score)
    return best
