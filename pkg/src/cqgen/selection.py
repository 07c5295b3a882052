"""Conditioning keyword set selection: threshold, top-K/top-p sampling, and
normalized-cut spectral clustering over the keyword co-occurrence graph, plus
context-aware keyword filtering."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import ContextRecord
from .nn.rng import Rng
from .vocab import KeywordVocab

_EPS_SELF_WEIGHT = 1e-6


@dataclass
class SelectionConfig:
    threshold: float = 0.07
    top_k: int = 6
    top_p: float = 0.9
    sample_size: int = 3  # keywords drawn per sampled set
    n_samples: int = 2  # sampled sets per request
    n_clusters: int = 2
    cluster_top_k: int = 6  # subgraph size for clustering

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0,1), got {self.threshold}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p must be in (0,1], got {self.top_p}")
        if self.sample_size > self.top_k:
            raise ValueError("sample_size cannot exceed top_k")
        if self.n_clusters > self.cluster_top_k:
            raise ValueError("n_clusters cannot exceed cluster_top_k")

    def to_dict(self) -> dict:
        return self.__dict__.copy()

    @staticmethod
    def from_dict(d: dict) -> "SelectionConfig":
        return SelectionConfig(**d)


def select_threshold(probs: np.ndarray, threshold: float) -> list[int]:
    """All keyword ids whose probability exceeds the threshold; may be empty."""
    return [int(i) for i in np.nonzero(np.asarray(probs) > threshold)[0]]


def _ranked_ids(values: np.ndarray) -> list[int]:
    return sorted(range(len(values)), key=lambda i: (-values[i], i))


def select_sampling(logits: np.ndarray, cfg: SelectionConfig, rng: Rng) -> list[list[int]]:
    """Draw cfg.n_samples keyword id sets of size cfg.sample_size from the
    softmax distribution after top-K then top-p (nucleus) filtering."""
    logits = np.asarray(logits, dtype=np.float64)
    if len(logits) < cfg.top_k:
        raise ValueError(f"need at least top_k={cfg.top_k} keywords, got {len(logits)}")
    z = logits - logits.max()
    probs = np.exp(z) / np.exp(z).sum()
    top = _ranked_ids(probs)[: cfg.top_k]
    masses = np.array([probs[i] for i in top])
    cum = np.cumsum(masses)
    # smallest prefix of the top-K whose cumulative softmax mass reaches top_p
    nucleus_end = min(int(np.searchsorted(cum, cfg.top_p)) + 1, len(top))
    survivors = top[:nucleus_end]
    weights = masses[:nucleus_end] / masses[:nucleus_end].sum()
    out = []
    for _ in range(cfg.n_samples):
        if len(survivors) <= cfg.sample_size:
            out.append(list(survivors))
        else:
            pick = rng.choice(len(survivors), size=cfg.sample_size, replace=False, p=weights)
            out.append(sorted(int(survivors[i]) for i in pick))
    return out


# -- co-occurrence graph ------------------------------------------------------


@dataclass
class CooccurrenceGraph:
    """Symmetric keyword graph; w(i,j) counts training questions containing
    both keywords. Self-weights are zero in storage."""

    n_nodes: int
    weights: dict[tuple[int, int], float] = field(default_factory=dict)

    def _key(self, i: int, j: int) -> tuple[int, int]:
        return (i, j) if i <= j else (j, i)

    def add(self, i: int, j: int, w: float = 1.0) -> None:
        if i == j:
            return
        k = self._key(i, j)
        self.weights[k] = self.weights.get(k, 0.0) + w

    def weight(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        return self.weights.get(self._key(i, j), 0.0)

    def subgraph_matrix(self, nodes: Sequence[int]) -> np.ndarray:
        n = len(nodes)
        w = np.zeros((n, n))
        for a in range(n):
            for b in range(a + 1, n):
                w[a, b] = w[b, a] = self.weight(nodes[a], nodes[b])
        return w

    def save(self, path: str | Path) -> None:
        edges = [[i, j, w] for (i, j), w in sorted(self.weights.items())]
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"n_nodes": self.n_nodes, "edges": edges}, f)

    @staticmethod
    def load(path: str | Path) -> "CooccurrenceGraph":
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
        g = CooccurrenceGraph(n_nodes=int(d["n_nodes"]))
        for i, j, w in d["edges"]:
            g.weights[(int(i), int(j))] = float(w)
        return g


def build_cooccurrence(records: list[ContextRecord], keyword_vocab: KeywordVocab) -> CooccurrenceGraph:
    g = CooccurrenceGraph(n_nodes=len(keyword_vocab))
    for rec in records:
        for q in rec.questions:
            ids = sorted(keyword_vocab.index[k] for k in q.keywords if k in keyword_vocab.index)
            for a in range(len(ids)):
                for b in range(a + 1, len(ids)):
                    g.add(ids[a], ids[b])
    return g


# -- spectral clustering -------------------------------------------------------


def _fix_empty_clusters(labels: np.ndarray, d2: np.ndarray, g: int) -> np.ndarray:
    """Reassign one point into each empty cluster, never emptying another.

    Candidates come only from clusters with more than one member; we pick the
    one farthest from its current centroid.
    """
    labels = labels.copy()
    for c in range(g):
        if (labels == c).any():
            continue
        counts = np.bincount(labels, minlength=g)
        movable = counts[labels] > 1
        dist_to_own = d2[np.arange(len(labels)), labels]
        dist_to_own = np.where(movable, dist_to_own, -np.inf)
        labels[int(np.argmax(dist_to_own))] = c
    return labels


def _kmeans(points: np.ndarray, g: int, rng: Rng, restarts: int = 10, iters: int = 50) -> np.ndarray:
    """Seeded k-means, best of `restarts` by within-cluster sum of squares.

    Init is greedy farthest-point after a random first centroid, which makes
    well-separated embeddings (e.g. disconnected components) split exactly.
    """
    n = points.shape[0]
    best_labels, best_cost = None, np.inf
    for _ in range(restarts):
        centroids = np.empty((g, points.shape[1]))
        centroids[0] = points[int(rng.integers(0, n))]
        for c in range(1, g):
            d2 = np.min(((points[:, None, :] - centroids[None, :c, :]) ** 2).sum(axis=2), axis=1)
            centroids[c] = points[int(np.argmax(d2))]
        labels = np.full(n, -1, dtype=np.int64)
        for _ in range(iters):
            d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            new_labels = _fix_empty_clusters(d2.argmin(axis=1), d2, g)
            if (new_labels == labels).all():
                break
            labels = new_labels
            for c in range(g):
                centroids[c] = points[labels == c].mean(axis=0)
        cost = float(((points - centroids[labels]) ** 2).sum())
        if cost < best_cost - 1e-12:
            best_cost = cost
            best_labels = labels.copy()
    return best_labels


def _ncut_of_labels(w_aug: np.ndarray, labels: np.ndarray, g: int) -> float:
    degrees = w_aug.sum(axis=1)
    total = 0.0
    for c in range(g):
        inside = labels == c
        vol = degrees[inside].sum()
        if vol <= 0.0:
            return np.inf
        total += w_aug[np.ix_(inside, ~inside)].sum() / vol
    return float(total)


def _refine_ncut(w_aug: np.ndarray, labels: np.ndarray, g: int) -> np.ndarray:
    """Greedy single-node moves while the normalized cut improves.

    The spectral embedding is a relaxation; this discretization step closes
    the gap on small subgraphs without touching determinism (no randomness,
    first best move wins each round).
    """
    labels = labels.copy()
    n = len(labels)
    current = _ncut_of_labels(w_aug, labels, g)
    improved = True
    while improved:
        improved = False
        best = (0.0, None, None)
        for i in range(n):
            src = labels[i]
            if (labels == src).sum() <= 1:
                continue
            for dst in range(g):
                if dst == src:
                    continue
                labels[i] = dst
                cand = _ncut_of_labels(w_aug, labels, g)
                labels[i] = src
                gain = current - cand
                if gain > best[0] + 1e-12:
                    best = (gain, i, dst)
        if best[1] is not None:
            labels[best[1]] = best[2]
            current -= best[0]
            improved = True
    return labels


def cluster_keywords(graph: CooccurrenceGraph, top_keywords: Sequence[int], g: int,
                     rng: Rng | None = None) -> list[list[int]]:
    """Partition `top_keywords` into g groups by normalized-cut spectral
    clustering on the induced subgraph.

    L_sym = I - D^{-1/2} W D^{-1/2} with a tiny self-weight for isolated
    nodes; embed with the g smallest eigenvectors, row-normalize, k-means,
    then greedy single-move ncut refinement.
    """
    nodes = list(top_keywords)
    n = len(nodes)
    if g > n:
        raise ValueError(f"cannot make {g} clusters from {n} keywords")
    if g == n:
        return [[v] for v in nodes]
    rng = rng or Rng(0)
    w = graph.subgraph_matrix(nodes)
    if w.sum() == 0.0:
        # no edges at all: round-robin fallback
        groups = [[] for _ in range(g)]
        for i, v in enumerate(nodes):
            groups[i % g].append(v)
        return groups
    w = w + np.eye(n) * _EPS_SELF_WEIGHT
    d = w.sum(axis=1)
    d_isqrt = 1.0 / np.sqrt(d)
    l_sym = np.eye(n) - d_isqrt[:, None] * w * d_isqrt[None, :]
    eigvals, eigvecs = np.linalg.eigh(l_sym)
    embed = eigvecs[:, :g]
    norms = np.linalg.norm(embed, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    embed = embed / norms
    labels = _kmeans(embed, g, rng.derive("kmeans"))
    labels = _refine_ncut(w, labels, g)
    groups = [[] for _ in range(g)]
    for i, v in enumerate(nodes):
        groups[labels[i]].append(v)
    return groups


def normalized_cut_value(w: np.ndarray, groups: list[list[int]]) -> float:
    """Ncut objective on an adjacency matrix (with the same self-weight
    regularizer clustering uses); shared by the brute-force test oracle."""
    n = w.shape[0]
    w = w + np.eye(n) * _EPS_SELF_WEIGHT
    degrees = w.sum(axis=1)
    total = 0.0
    for grp in groups:
        inside = np.zeros(n, dtype=bool)
        inside[list(grp)] = True
        vol = degrees[inside].sum()
        cut = w[np.ix_(inside, ~inside)].sum()
        total += cut / vol
    return float(total)


# -- keyword filtering ------------------------------------------------------------


@dataclass
class Blacklist:
    """keyword -> trigger patterns; a keyword is dropped when any of its
    patterns matches the context. Patterns are case-insensitive substrings,
    or regexes when prefixed with 're:'."""

    patterns: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        for kw, pats in self.patterns.items():
            for p in pats:
                if not p:
                    raise ValueError(f"empty pattern for keyword {kw!r}")

    def matches(self, keyword: str, context_text: str) -> str | None:
        """Return the first matching pattern, or None."""
        for pat in self.patterns.get(keyword, ()):
            if pat.startswith("re:"):
                if re.search(pat[3:], context_text, flags=re.IGNORECASE):
                    return pat
            elif pat.lower() in context_text.lower():
                return pat
        return None

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.patterns, f, indent=1, sort_keys=True)

    @staticmethod
    def load(path: str | Path) -> "Blacklist":
        with open(path, encoding="utf-8") as f:
            return Blacklist(patterns=json.load(f))

    @staticmethod
    def empty() -> "Blacklist":
        return Blacklist(patterns={})


def filter_keywords(keywords: Iterable[str], context: Sequence[str],
                    blacklist: Blacklist) -> tuple[set[str], dict[str, str]]:
    """Split keywords into (kept, removed); removed maps keyword -> the
    pattern that matched the context."""
    context_text = " ".join(context)
    kept: set[str] = set()
    removed: dict[str, str] = {}
    for kw in keywords:
        pat = blacklist.matches(kw, context_text)
        if pat is None:
            kept.add(kw)
        else:
            removed[kw] = pat
    return kept, removed


def exclude_keywords(keywords: Iterable[str], user_excluded: Iterable[str]) -> set[str]:
    """Drop keywords the user has already covered (iterative regeneration)."""
    return set(keywords) - set(user_excluded)
