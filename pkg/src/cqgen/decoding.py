"""Decoding strategies over a step-model protocol.

A decode session exposes initial() -> (log-probs, state) and
step(state, token) -> (log-probs, state); anything implementing that shape
(the generator's DecodeSession, toy test models) plugs in here. Scores are
length-normalized sums of true token log-probs; decoding constraints are
enforced by vetoing candidate tokens before expansion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from .nn.rng import Rng

_NEG_INF = -1e30


class StepModel(Protocol):
    eos_id: int

    def initial(self) -> tuple[np.ndarray, Any]: ...

    def step(self, state: Any, token: int) -> tuple[np.ndarray, Any]: ...


@dataclass
class DecodeConstraints:
    block_repeat_bigrams: bool = True
    min_same_token_gap: int = 3

    def __post_init__(self):
        if self.min_same_token_gap < 1:
            raise ValueError("min_same_token_gap must be >= 1")


@dataclass
class BeamConfig:
    beam_size: int = 6
    diverse_groups: int = 3
    diversity_strength: float = 0.5
    top_k: int = 20
    top_p: float = 0.9
    max_len: int = 20

    def __post_init__(self):
        if self.beam_size < self.diverse_groups:
            raise ValueError("beam_size must be >= diverse_groups")
        if self.beam_size % self.diverse_groups != 0:
            raise ValueError("beam_size must be divisible by diverse_groups")


@dataclass
class Hypothesis:
    tokens: list[int]  # EOS-terminated or cut at max length; EOS excluded
    score: float  # sum of log-probs / emitted token count (EOS included)
    logprob_sum: float
    ended: bool
    keyword_set: frozenset[str] = frozenset()
    origin: str = ""
    group: int = 0

    def text_tokens(self, vocab) -> list[str]:
        return vocab.decode(self.tokens)


def vetoed(tokens: list[int], candidate: int, constraints: DecodeConstraints, eos_id: int) -> bool:
    """Would appending `candidate` violate a constraint? EOS is never vetoed."""
    if candidate == eos_id:
        return False
    gap = constraints.min_same_token_gap
    if gap > 1 and candidate in tokens[-(gap - 1):]:
        return True
    if constraints.block_repeat_bigrams and tokens:
        bigram = (tokens[-1], candidate)
        for i in range(len(tokens) - 1):
            if (tokens[i], tokens[i + 1]) == bigram:
                return True
    return False


def constraint_mask(tokens: list[int], logprobs: np.ndarray, constraints: DecodeConstraints,
                    eos_id: int) -> np.ndarray:
    """Log-probs with vetoed continuations pushed to -inf; if everything but
    EOS is vetoed the mask forces EOS."""
    masked = logprobs.copy()
    gap = constraints.min_same_token_gap
    if gap > 1 and tokens:
        recent = set(tokens[-(gap - 1):])
        recent.discard(eos_id)
        if recent:
            masked[list(recent)] = _NEG_INF
    if constraints.block_repeat_bigrams and tokens:
        last = tokens[-1]
        blocked = {tokens[i + 1] for i in range(len(tokens) - 1) if tokens[i] == last}
        blocked.discard(eos_id)
        if blocked:
            masked[list(blocked)] = _NEG_INF
    if np.all(masked[np.arange(len(masked)) != eos_id] <= _NEG_INF):
        masked[eos_id] = max(masked[eos_id], -1e9)  # force EOS when all else vetoed
    return masked


@dataclass
class _Beam:
    tokens: list[int]
    logprob_sum: float
    state: Any
    group: int = 0

    @property
    def mean_logprob(self) -> float:
        return self.logprob_sum / max(len(self.tokens), 1)


def _finish(beam: _Beam, ended: bool, origin: str) -> Hypothesis:
    tokens = beam.tokens[:-1] if ended else beam.tokens
    return Hypothesis(tokens=tokens, score=beam.mean_logprob, logprob_sum=beam.logprob_sum,
                      ended=ended, origin=origin, group=beam.group)


def beam_search(model: StepModel, cfg: BeamConfig, constraints: DecodeConstraints,
                origin: str = "beam") -> list[Hypothesis]:
    """Length-normalized beam search with repeat constraints.

    Candidate selection and the final ranking both use mean log-prob per
    emitted token. Completed hypotheses leave the beam.
    """
    logprobs, state = model.initial()
    finished: list[Hypothesis] = []
    masked = constraint_mask([], logprobs, constraints, model.eos_id)
    order = np.argsort(-masked)[: cfg.beam_size]
    beams = []
    for tok in order:
        if masked[tok] <= _NEG_INF:
            continue
        b = _Beam([int(tok)], float(logprobs[tok]), state)
        if b.tokens[-1] == model.eos_id:
            finished.append(_finish(b, ended=True, origin=origin))
        else:
            beams.append(b)

    for _ in range(1, cfg.max_len):
        if not beams:
            break
        candidates: list[tuple[float, _Beam, int, float, Any]] = []
        for b in beams:
            lp, new_state = model.step(b.state, b.tokens[-1])
            masked = constraint_mask(b.tokens, lp, constraints, model.eos_id)
            top = np.argsort(-masked)[: cfg.beam_size]
            for tok in top:
                if masked[tok] <= _NEG_INF:
                    continue
                total = b.logprob_sum + float(lp[tok])
                norm = total / (len(b.tokens) + 1)
                candidates.append((norm, b, int(tok), total, new_state))
        if not candidates:
            break
        candidates.sort(key=lambda c: -c[0])
        next_beams = []
        for norm, b, tok, total, new_state in candidates[: cfg.beam_size]:
            nb = _Beam(b.tokens + [tok], total, new_state, group=b.group)
            if tok == model.eos_id:
                finished.append(_finish(nb, ended=True, origin=origin))
            else:
                next_beams.append(nb)
        beams = next_beams

    for b in beams:  # ran out of length
        finished.append(_finish(b, ended=False, origin=origin))
    finished.sort(key=lambda h: -h.score)
    return finished


def diverse_beam_search(model: StepModel, cfg: BeamConfig, constraints: DecodeConstraints,
                        origin: str = "divbeam") -> list[Hypothesis]:
    """Hamming-diversity beam search: groups advance together step by step;
    a later group's token log-probs are penalized by diversity_strength times
    the count of that token at the same step in earlier groups.

    The penalty steers candidate selection only; reported scores are true
    log-probs. With diversity_strength=0 every group reproduces the plain
    beam search of width beam_size / diverse_groups.
    """
    G = cfg.diverse_groups
    width = cfg.beam_size // G
    lam = cfg.diversity_strength

    logprobs0, state0 = model.initial()
    groups: list[list[_Beam]] = []
    finished: list[Hypothesis] = []
    step0_counts = np.zeros_like(logprobs0)
    for gi in range(G):
        masked = constraint_mask([], logprobs0, constraints, model.eos_id)
        penalized = masked - lam * step0_counts
        order = np.argsort(-penalized)[:width]
        beams = []
        for tok in order:
            if masked[tok] <= _NEG_INF:
                continue
            step0_counts[tok] += 1
            beams.append(_Beam([int(tok)], float(logprobs0[tok]), state0, group=gi))
        alive = []
        for b in beams:
            if b.tokens[-1] == model.eos_id:
                finished.append(_finish(b, ended=True, origin=origin))
            else:
                alive.append(b)
        groups.append(alive)

    for _ in range(1, cfg.max_len):
        if not any(groups):
            break
        step_counts = np.zeros_like(logprobs0)
        for gi in range(G):
            beams = groups[gi]
            if not beams:
                continue
            candidates = []
            for b in beams:
                lp, new_state = model.step(b.state, b.tokens[-1])
                masked = constraint_mask(b.tokens, lp, constraints, model.eos_id)
                penalized = masked - lam * step_counts
                top = np.argsort(-penalized)[:width]
                for tok in top:
                    if masked[tok] <= _NEG_INF:
                        continue
                    total = b.logprob_sum + float(lp[tok])
                    sel = (b.logprob_sum + penalized[tok]) / (len(b.tokens) + 1)
                    candidates.append((sel, b, int(tok), total, new_state))
            candidates.sort(key=lambda c: -c[0])
            next_beams = []
            for sel, b, tok, total, new_state in candidates[:width]:
                step_counts[tok] += 1
                nb = _Beam(b.tokens + [tok], total, new_state, group=gi)
                if tok == model.eos_id:
                    finished.append(_finish(nb, ended=True, origin=origin))
                else:
                    next_beams.append(nb)
            groups[gi] = next_beams

    for beams in groups:
        for b in beams:
            finished.append(_finish(b, ended=False, origin=origin))
    finished.sort(key=lambda h: (h.group, -h.score))
    return finished


def sample_decode(model: StepModel, cfg: BeamConfig, rng: Rng, constraints: DecodeConstraints,
                  n_draws: int = 1, origin: str = "sample") -> list[Hypothesis]:
    """Ancestral sampling with per-step top-k then top-p truncation.

    Constraints are applied by masking before truncation, so the truncated
    distribution never contains vetoed tokens.
    """
    out = []
    for _ in range(n_draws):
        tokens: list[int] = []
        total = 0.0
        logprobs, state = model.initial()
        ended = False
        while len(tokens) < cfg.max_len:
            masked = constraint_mask(tokens, logprobs, constraints, model.eos_id)
            probs = np.exp(masked - masked.max())
            probs[masked <= _NEG_INF] = 0.0
            ranked = np.argsort(-probs)
            keep = ranked[: cfg.top_k]
            keep_probs = probs[keep]
            if keep_probs.sum() <= 0.0:
                tok = model.eos_id
            else:
                keep_probs = keep_probs / keep_probs.sum()
                cum = np.cumsum(keep_probs)
                nucleus = min(int(np.searchsorted(cum, cfg.top_p)) + 1, len(keep))
                sub = keep[:nucleus]
                sub_p = keep_probs[:nucleus] / keep_probs[:nucleus].sum()
                tok = int(rng.choice(sub, p=sub_p))
            total += float(logprobs[tok])
            if tok == model.eos_id:
                ended = True
                break
            tokens.append(tok)
            logprobs, state = model.step(state, tok)
        count = len(tokens) + (1 if ended else 0)
        out.append(Hypothesis(tokens=tokens, score=total / max(count, 1), logprob_sum=total,
                              ended=ended, origin=origin))
    out.sort(key=lambda h: -h.score)
    return out
