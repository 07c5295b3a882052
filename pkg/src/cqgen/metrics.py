"""Automatic evaluation: Distinct-3, corpus BLEU, simplified METEOR,
Pairwise/Avg BLEU, P@5 helpers, Response Rate. All scores that the reports
show as percentages are returned in [0, 100]."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .textproc import lemma

Tokens = Sequence[str]


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def distinct_n(questions: list[Tokens], n: int = 3) -> float:
    """Unique n-grams across all questions / total n-gram tokens."""
    if not questions:
        raise ValueError("distinct_n needs a nonempty question list")
    seen: set[tuple] = set()
    total = 0
    for q in questions:
        grams = [tuple(q[i : i + n]) for i in range(len(q) - n + 1)]
        total += len(grams)
        seen.update(grams)
    if total == 0:
        warnings.warn(f"all questions shorter than n={n}; distinct_n is 0")
        return 0.0
    return len(seen) / total


def _closest_ref_len(hyp_len: int, ref_lens: list[int]) -> int:
    """Reference length closest to the hypothesis; ties go to the shorter."""
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


def corpus_bleu(hyps: list[Tokens], refs: list[list[Tokens]], max_n: int = 4) -> float:
    """Corpus-level BLEU with multi-reference clipping and brevity penalty.

    Uniform 1..4-gram weights, no smoothing: the score is zero as soon as any
    order with observed n-grams has zero matches. Orders where the whole
    corpus has no n-grams at all (every hypothesis shorter than n) drop out
    of the geometric mean instead of zeroing it.
    """
    if len(hyps) != len(refs):
        raise ValueError(f"got {len(hyps)} hypotheses but {len(refs)} reference lists")
    if not hyps:
        raise ValueError("empty corpus")
    matched = [0] * (max_n + 1)
    total = [0] * (max_n + 1)
    hyp_len_sum = 0
    ref_len_sum = 0
    for hyp, ref_list in zip(hyps, refs):
        if not ref_list:
            raise ValueError("hypothesis without references")
        hyp_len_sum += len(hyp)
        ref_len_sum += _closest_ref_len(len(hyp), [len(r) for r in ref_list])
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp, n)
            if not hyp_counts:
                continue
            max_ref = Counter()
            for ref in ref_list:
                for gram, c in _ngrams(ref, n).items():
                    if c > max_ref[gram]:
                        max_ref[gram] = c
            total[n] += sum(hyp_counts.values())
            matched[n] += sum(min(c, max_ref[g]) for g, c in hyp_counts.items())
    log_sum = 0.0
    for n in range(1, max_n + 1):
        if total[n] == 0:
            continue
        if matched[n] == 0:
            return 0.0
        log_sum += math.log(matched[n] / total[n]) / max_n
    if hyp_len_sum == 0:
        return 0.0
    bp = 1.0 if hyp_len_sum > ref_len_sum else math.exp(1.0 - ref_len_sum / hyp_len_sum)
    return 100.0 * bp * math.exp(log_sum)


def sentence_bleu(hyp: Tokens, refs: list[Tokens], max_n: int = 4) -> float:
    """Sentence-level BLEU with +1 smoothing on orders above unigram, so a
    single missing higher-order match does not zero the score."""
    if not refs:
        raise ValueError("sentence_bleu needs at least one reference")
    log_sum = 0.0
    for n in range(1, max_n + 1):
        hyp_counts = _ngrams(hyp, n)
        total = sum(hyp_counts.values())
        max_ref = Counter()
        for ref in refs:
            for gram, c in _ngrams(ref, n).items():
                if c > max_ref[gram]:
                    max_ref[gram] = c
        match = sum(min(c, max_ref[g]) for g, c in hyp_counts.items())
        if n == 1:
            if total == 0 or match == 0:
                return 0.0
            p = match / total
        else:
            p = (match + 1.0) / (total + 1.0)
        log_sum += math.log(p) / max_n
    hyp_len = len(hyp)
    ref_len = _closest_ref_len(hyp_len, [len(r) for r in refs])
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / max(hyp_len, 1))
    return 100.0 * bp * math.exp(log_sum)


def pairwise_bleu(group: list[Tokens]) -> float:
    """Mean sentence BLEU over ordered pairs; low means a diverse group."""
    if len(group) < 2:
        raise ValueError("pairwise_bleu needs a group of at least 2")
    scores = []
    for i, hyp in enumerate(group):
        for j, ref in enumerate(group):
            if i != j:
                scores.append(sentence_bleu(hyp, [ref]))
    return sum(scores) / len(scores)


def avg_bleu(group: list[Tokens], refs: list[Tokens]) -> float:
    """Mean sentence BLEU of each group member against the full reference set."""
    if not group:
        raise ValueError("avg_bleu needs a nonempty group")
    return sum(sentence_bleu(h, refs) for h in group) / len(group)


# -- METEOR (simplified: exact + stem matching, no synonym resources) -----------


def _align(hyp: Tokens, ref: Tokens) -> list[tuple[int, int]]:
    """Greedy unigram alignment: exact matches first, then stem matches among
    the leftovers; each token used at most once."""
    pairs: list[tuple[int, int]] = []
    used_ref: set[int] = set()
    matched_hyp: set[int] = set()
    for i, h in enumerate(hyp):
        for j, r in enumerate(ref):
            if j in used_ref:
                continue
            if h == r:
                pairs.append((i, j))
                used_ref.add(j)
                matched_hyp.add(i)
                break
    for i, h in enumerate(hyp):
        if i in matched_hyp:
            continue
        hl = lemma(h)
        for j, r in enumerate(ref):
            if j in used_ref:
                continue
            if hl == lemma(r):
                pairs.append((i, j))
                used_ref.add(j)
                matched_hyp.add(i)
                break
    pairs.sort()
    return pairs


def _chunks(pairs: list[tuple[int, int]]) -> int:
    """Number of maximal runs contiguous in both hypothesis and reference."""
    if not pairs:
        return 0
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if i1 != i0 + 1 or j1 != j0 + 1:
            chunks += 1
    return chunks


def _meteor_pair(hyp: Tokens, ref: Tokens) -> float:
    pairs = _align(hyp, ref)
    m = len(pairs)
    if m == 0 or not hyp or not ref:
        return 0.0
    precision = m / len(hyp)
    recall = m / len(ref)
    f_mean = 10.0 * precision * recall / (recall + 9.0 * precision)
    penalty = 0.5 * (_chunks(pairs) / m) ** 3
    return f_mean * (1.0 - penalty)


def meteor_simplified(hyps: list[Tokens], refs: list[list[Tokens]]) -> float:
    """Corpus mean of the best per-reference METEOR score, as a percentage."""
    if len(hyps) != len(refs):
        raise ValueError(f"got {len(hyps)} hypotheses but {len(refs)} reference lists")
    if not hyps:
        raise ValueError("empty corpus")
    total = 0.0
    for hyp, ref_list in zip(hyps, refs):
        if not ref_list:
            raise ValueError("hypothesis without references")
        total += max(_meteor_pair(hyp, ref) for ref in ref_list)
    return 100.0 * total / len(hyps)


# -- keyword-conditioning metrics ----------------------------------------------


def response_rate(items: list[tuple[Iterable[str], Tokens]]) -> float:
    """Macro-average over records of the fraction of conditioned keywords whose
    lemma matches the lemma of some generated token. Records with an empty
    keyword set are skipped."""
    if not items:
        raise ValueError("response_rate needs a nonempty list")
    fractions = []
    for keywords, generated in items:
        kws = set(keywords)
        if not kws:
            continue
        lemmas = {lemma(tok) for tok in generated}
        hit = sum(1 for k in kws if k in lemmas)
        fractions.append(hit / len(kws))
    if not fractions:
        raise ValueError("all records had empty keyword sets")
    return sum(fractions) / len(fractions)


@dataclass
class MetricReport:
    distinct_3: Optional[float] = None
    bleu: Optional[float] = None
    meteor_simplified: Optional[float] = None
    pairwise_bleu: Optional[float] = None
    avg_bleu: Optional[float] = None
    p_at_5: Optional[float] = None
    response_rate: Optional[float] = None
    mean_length: Optional[float] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}
