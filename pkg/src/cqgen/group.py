"""Strategy orchestration: keyword sets -> decodes -> merged candidate pool ->
deduplicated display group."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import textproc
from .corpus import MAX_CONTEXT_LEN
from .decoding import (BeamConfig, DecodeConstraints, Hypothesis, beam_search,
                       diverse_beam_search, sample_decode)
from .generator import DecodeSession, GeneratorModel, mask_logits
from .nn.checkpoint import params_digest
from .nn.rng import Rng
from .predictor import KeywordLogits, PredictorModel
from .selection import (Blacklist, CooccurrenceGraph, SelectionConfig, cluster_keywords,
                        exclude_keywords, filter_keywords, select_sampling, select_threshold)
from .vocab import KeywordVocab, TokenVocab

STRATEGIES = ("mle", "beam", "divbeam", "bsp", "sample", "cluster", "truth")


class GenerationError(ValueError):
    pass


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


@dataclass
class GenerationGroup:
    selected: list[Hypothesis]
    discarded: list[tuple[Hypothesis, str]]
    strategy: str
    predicted_keywords: list[tuple[str, float]] = field(default_factory=list)
    filtered_keywords: dict[str, str] = field(default_factory=dict)
    excluded_keywords: list[str] = field(default_factory=list)
    keyword_sets: list[list[str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _content_token_set(tokens: list[str]) -> set[str]:
    # stopwords stay in; punctuation-only tokens do not
    return {t for t in tokens if any(ch.isalnum() for ch in t)}


def dedup_select(candidates: list[Hypothesis], slots: int, threshold: float = 0.5,
                 tokens_of: Optional[Callable[[Hypothesis], list[str]]] = None) -> GenerationGroup:
    """Greedy dedup: walk candidates in rank order, admit one iff its token-set
    Jaccard with every admitted candidate stays below the threshold."""
    if tokens_of is None:
        tokens_of = lambda h: [str(t) for t in h.tokens]
    selected: list[Hypothesis] = []
    selected_sets: list[set[str]] = []
    discarded: list[tuple[Hypothesis, str]] = []
    for h in candidates:
        if len(selected) >= slots:
            discarded.append((h, "slots full"))
            continue
        tset = _content_token_set(tokens_of(h))
        clash = next((i for i, s in enumerate(selected_sets) if jaccard(tset, s) >= threshold), None)
        if clash is None:
            selected.append(h)
            selected_sets.append(tset)
        else:
            discarded.append((h, f"jaccard >= {threshold} with selected #{clash}"))
    return GenerationGroup(selected=selected, discarded=discarded, strategy="")


@dataclass
class GenerateOptions:
    slots: int = 3
    candidate_budget: int = 6
    exclude: frozenset[str] = frozenset()
    truth_keywords: Optional[list[str]] = None
    seed: int = 0
    dedup_threshold: float = 0.5

    def __post_init__(self):
        if self.slots < 1:
            raise GenerationError("slots must be >= 1")
        if self.candidate_budget < self.slots:
            raise GenerationError("candidate budget must be >= slots")


@dataclass
class ModelBundle:
    predictor: PredictorModel
    generator: GeneratorModel
    token_vocab: TokenVocab
    keyword_vocab: KeywordVocab
    graph: CooccurrenceGraph
    blacklist: Blacklist
    selection: SelectionConfig
    beam: BeamConfig
    constraints: DecodeConstraints
    version: str = ""

    def __post_init__(self):
        if not self.version:
            digest = params_digest({**{f"p.{k}": v for k, v in self.predictor.store.state().items()},
                                    **{f"g.{k}": v for k, v in self.generator.store.state().items()}})
            self.version = digest

    def save(self, dir_path: str | Path) -> None:
        d = Path(dir_path)
        d.mkdir(parents=True, exist_ok=True)
        self.token_vocab.save(d / "tokens.tsv")
        self.keyword_vocab.save(d / "keywords.tsv")
        self.predictor.save(d / "predictor.npz")
        self.generator.save(d / "generator.npz")
        self.graph.save(d / "cooccurrence.json")
        self.blacklist.save(d / "blacklist.json")
        import json

        with open(d / "config.json", "w", encoding="utf-8") as f:
            json.dump({"selection": self.selection.to_dict(),
                       "beam": self.beam.__dict__,
                       "constraints": self.constraints.__dict__}, f, indent=1)

    @staticmethod
    def load(dir_path: str | Path) -> "ModelBundle":
        import json

        d = Path(dir_path)
        token_vocab = TokenVocab.load(d / "tokens.tsv")
        keyword_vocab = KeywordVocab.load(d / "keywords.tsv")
        predictor = PredictorModel.load(d / "predictor.npz", token_vocab, keyword_vocab)
        generator = GeneratorModel.load(d / "generator.npz", token_vocab, keyword_vocab)
        graph = CooccurrenceGraph.load(d / "cooccurrence.json")
        blacklist_path = d / "blacklist.json"
        blacklist = Blacklist.load(blacklist_path) if blacklist_path.exists() else Blacklist.empty()
        cfg_path = d / "config.json"
        if cfg_path.exists():
            with open(cfg_path, encoding="utf-8") as f:
                cfg = json.load(f)
            selection = SelectionConfig.from_dict(cfg.get("selection", {}))
            beam = BeamConfig(**cfg.get("beam", {}))
            constraints = DecodeConstraints(**cfg.get("constraints", {}))
        else:
            selection, beam, constraints = SelectionConfig(), BeamConfig(), DecodeConstraints()
        return ModelBundle(predictor, generator, token_vocab, keyword_vocab, graph,
                           blacklist, selection, beam, constraints)


def _interleave_by_rank(per_set: list[list[Hypothesis]], budget: int) -> list[Hypothesis]:
    """Round-robin by per-set rank so every keyword set reaches the top of the
    pool; within a rank tier, higher score first."""
    merged: list[Hypothesis] = []
    rank = 0
    while len(merged) < budget and any(rank < len(s) for s in per_set):
        tier = [s[rank] for s in per_set if rank < len(s)]
        tier.sort(key=lambda h: -h.score)
        merged.extend(tier)
        rank += 1
    return merged[:budget]


def generate_group(bundle: ModelBundle, context_text: str, strategy: str,
                   options: GenerateOptions) -> GenerationGroup:
    """Full pipeline for one request: clean, predict keywords, select keyword
    sets per strategy, filter/exclude, decode per set, merge, dedup."""
    if strategy not in STRATEGIES:
        raise GenerationError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    ctx_tokens = textproc.tokenize(textproc.clean_context(context_text))[:MAX_CONTEXT_LEN]
    if not ctx_tokens:
        raise GenerationError("empty context")
    kv = bundle.keyword_vocab
    warnings_list: list[str] = []
    klogits: KeywordLogits = bundle.predictor.predict(ctx_tokens)
    ranked = klogits.ranked()
    predicted = [(kv.entries[i], float(klogits.probs[i])) for i in ranked[:20]]

    if strategy == "truth":
        if not options.truth_keywords:
            raise GenerationError("strategy 'truth' needs truth_keywords")
        known = [k for k in options.truth_keywords if k in kv]
        dropped = sorted(set(options.truth_keywords) - set(known))
        if dropped:
            warnings_list.append(f"ignored out-of-vocabulary truth keywords: {dropped}")
        if not known:
            raise GenerationError("no truth keyword is in the keyword vocabulary")
        raw_sets: list[list[int]] = [[kv.index[k] for k in known]]
    elif strategy == "mle":
        raw_sets = [[]]
    elif strategy in ("beam", "divbeam", "bsp"):
        raw_sets = [select_threshold(klogits.probs, bundle.selection.threshold)]
    elif strategy == "sample":
        rng = Rng(options.seed).derive("keyword-sampling")
        raw_sets = select_sampling(klogits.logits, bundle.selection, rng)
    else:  # cluster
        top = ranked[: min(bundle.selection.cluster_top_k, len(kv))]
        g = min(bundle.selection.n_clusters, len(top))
        if g < bundle.selection.n_clusters:
            warnings_list.append(f"reduced cluster count to {g}: only {len(top)} keywords available")
        raw_sets = cluster_keywords(bundle.graph, top, g, rng=Rng(options.seed).derive("cluster"))

    # filtering + exclusion per keyword set (audit retains reasons)
    final_sets: list[frozenset[str]] = []
    filtered_all: dict[str, str] = {}
    for ids in raw_sets:
        names = {kv.entries[i] for i in ids}
        kept, removed = filter_keywords(names, ctx_tokens, bundle.blacklist)
        filtered_all.update(removed)
        kept = exclude_keywords(kept, options.exclude)
        final_sets.append(frozenset(kept))
    if strategy != "mle" and all(not s for s in final_sets):
        warnings_list.append("all keyword sets empty after filtering; decoding with zero bridge input")
        final_sets = [frozenset()]

    n_sets = max(len(final_sets), 1)
    quota = -(-options.candidate_budget // n_sets)  # ceil division
    per_set: list[list[Hypothesis]] = []
    for set_idx, kws in enumerate(final_sets):
        if strategy == "mle":
            session = DecodeSession(bundle.generator, bundle.token_vocab.encode(ctx_tokens),
                                    None, use_bridge=False)
        else:
            masked = mask_logits(klogits.logits, kws, kv,
                                 hard_label=bundle.generator.config.hard_label_bridge)
            session = DecodeSession(bundle.generator, bundle.token_vocab.encode(ctx_tokens),
                                    masked.values)
        if strategy == "divbeam":
            hyps = diverse_beam_search(session, bundle.beam, bundle.constraints, origin=strategy)
        elif strategy == "bsp":
            rng = Rng(options.seed).derive(f"bsp-{set_idx}")
            hyps = sample_decode(session, bundle.beam, rng, bundle.constraints,
                                 n_draws=options.candidate_budget, origin=strategy)
        else:
            hyps = beam_search(session, bundle.beam, bundle.constraints, origin=strategy)
        for h in hyps:
            h.keyword_set = kws
        per_set.append(hyps[:quota] if strategy not in ("divbeam", "bsp") else hyps)

    if strategy in ("divbeam", "bsp"):
        merged = per_set[0][: options.candidate_budget]
        if strategy == "divbeam":
            by_group: dict[int, list[Hypothesis]] = {}
            for h in per_set[0]:
                by_group.setdefault(h.group, []).append(h)
            merged = _interleave_by_rank(list(by_group.values()), options.candidate_budget)
    else:
        merged = _interleave_by_rank(per_set, options.candidate_budget)

    group = dedup_select(merged, options.slots, options.dedup_threshold,
                         tokens_of=lambda h: h.text_tokens(bundle.token_vocab))
    group.strategy = strategy
    group.predicted_keywords = predicted
    group.filtered_keywords = filtered_all
    group.excluded_keywords = sorted(options.exclude)
    group.keyword_sets = [sorted(s) for s in final_sets]
    group.warnings = warnings_list
    return group
