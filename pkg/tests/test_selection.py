import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cqgen.nn.rng import Rng
from cqgen.selection import (Blacklist, CooccurrenceGraph, SelectionConfig, build_cooccurrence,
                             cluster_keywords, exclude_keywords, filter_keywords,
                             normalized_cut_value, select_sampling, select_threshold)


def test_select_threshold_cases():
    probs = np.array([0.9, 0.05, 0.30])
    assert select_threshold(probs, 0.07) == [0, 2]
    assert select_threshold(probs, 0.95) == []
    assert select_threshold(probs, 1e-9) == [0, 1, 2]


@given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=30),
       st.floats(min_value=0.01, max_value=0.99), st.floats(min_value=0.01, max_value=0.99))
@settings(max_examples=200)
def test_threshold_monotone(probs, a1, a2):
    lo, hi = min(a1, a2), max(a1, a2)
    p = np.array(probs)
    assert set(select_threshold(p, hi)) <= set(select_threshold(p, lo))


def test_sampling_nucleus_prefix():
    # softmax of these logits is exactly [0.5, 0.3, 0.15, 0.05]
    probs = np.array([0.5, 0.3, 0.15, 0.05])
    logits = np.log(probs)
    cfg = SelectionConfig(top_k=4, top_p=0.9, sample_size=3, n_samples=50)
    rng = Rng(0)
    draws = select_sampling(logits, cfg, rng)
    seen = set()
    for d in draws:
        seen.update(d)
    assert seen == {0, 1, 2}  # nucleus = first three; index 3 never sampled


def test_sampling_returns_survivors_when_k_equals_count():
    logits = np.log(np.array([0.5, 0.3, 0.15, 0.05]))
    cfg = SelectionConfig(top_k=4, top_p=0.9, sample_size=3, n_samples=2)
    out = select_sampling(logits, cfg, Rng(1))
    for d in out:
        assert sorted(d) == [0, 1, 2]


def test_sampling_deterministic_under_seed():
    rng_logits = Rng(2).uniform(-2, 2, 12)
    cfg = SelectionConfig(top_k=6, top_p=0.9, sample_size=3, n_samples=4)
    a = select_sampling(rng_logits, cfg, Rng(5))
    b = select_sampling(rng_logits, cfg, Rng(5))
    assert a == b


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=50)
def test_sampling_subset_of_topk(seed):
    logits = Rng(seed).uniform(-3, 3, 15)
    cfg = SelectionConfig(top_k=6, top_p=0.9, sample_size=3, n_samples=2)
    top = set(sorted(range(15), key=lambda i: -logits[i])[:8])  # generous superset
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    topk = set(sorted(range(15), key=lambda i: (-probs[i], i))[:6])
    for group in select_sampling(logits, cfg, Rng(seed + 1)):
        assert set(group) <= topk


def test_selection_config_validation():
    with pytest.raises(ValueError):
        SelectionConfig(threshold=0.0)
    with pytest.raises(ValueError):
        SelectionConfig(sample_size=10, top_k=5)
    with pytest.raises(ValueError):
        SelectionConfig(n_clusters=7, cluster_top_k=6)


def test_build_cooccurrence_counts(tiny_vocabs):
    from cqgen.corpus import ContextRecord, QuestionRecord

    _, kv = tiny_vocabs
    a, b, c = kv.entries[0], kv.entries[1], kv.entries[2]
    recs = [ContextRecord(id="1", context=("x",), questions=(
        QuestionRecord(question=("q",), keywords=frozenset({a, b})),
        QuestionRecord(question=("q",), keywords=frozenset({a, b})),
        QuestionRecord(question=("q",), keywords=frozenset({a, b, c})),
    ))]
    g = build_cooccurrence(recs, kv)
    ia, ib, ic = kv.index[a], kv.index[b], kv.index[c]
    assert g.weight(ia, ib) == 3
    assert g.weight(ia, ic) == 1
    assert g.weight(ib, ic) == 1
    assert g.weight(ia, ia) == 0
    assert g.weight(ib, ia) == 3  # symmetric


def test_graph_roundtrip(tmp_path):
    g = CooccurrenceGraph(n_nodes=5)
    g.add(0, 1, 2.0)
    g.add(3, 4)
    g.save(tmp_path / "g.json")
    g2 = CooccurrenceGraph.load(tmp_path / "g.json")
    assert g2.n_nodes == 5
    assert g2.weight(1, 0) == 2.0
    assert g2.weight(4, 3) == 1.0


def test_cluster_disconnected_components():
    g = CooccurrenceGraph(n_nodes=4)
    g.add(0, 1, 3.0)
    g.add(2, 3, 5.0)
    groups = cluster_keywords(g, [0, 1, 2, 3], 2, rng=Rng(0))
    assert sorted(sorted(x) for x in groups) == [[0, 1], [2, 3]]


def test_cluster_singletons_when_g_equals_n():
    g = CooccurrenceGraph(n_nodes=3)
    groups = cluster_keywords(g, [0, 1, 2], 3, rng=Rng(0))
    assert sorted(groups) == [[0], [1], [2]]


def test_cluster_errors_when_g_exceeds_nodes():
    g = CooccurrenceGraph(n_nodes=3)
    with pytest.raises(ValueError):
        cluster_keywords(g, [0, 1], 3)


def test_cluster_isolated_fallback_round_robin():
    g = CooccurrenceGraph(n_nodes=4)  # no edges at all
    groups = cluster_keywords(g, [7, 8, 9, 10][:4], 2, rng=Rng(0))
    assert sorted(sorted(x) for x in groups) == [[7, 9], [8, 10]]


def test_cluster_partition_property():
    rng = Rng(13)
    for trial in range(20):
        n = int(rng.integers(3, 9))
        g = CooccurrenceGraph(n_nodes=n)
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.6:
                    g.add(i, j, float(rng.integers(1, 10)))
        nodes = list(range(n))
        k = int(rng.integers(2, min(n, 4) + 1))
        groups = cluster_keywords(g, nodes, k, rng=Rng(trial))
        assert all(grp for grp in groups)
        flat = sorted(x for grp in groups for x in grp)
        assert flat == nodes


def test_cluster_scale_invariance():
    rng = Rng(29)
    g1 = CooccurrenceGraph(n_nodes=6)
    g2 = CooccurrenceGraph(n_nodes=6)
    for i in range(6):
        for j in range(i + 1, 6):
            w = float(rng.integers(0, 5))
            if w:
                g1.add(i, j, w)
                g2.add(i, j, w * 37.0)
    a = cluster_keywords(g1, list(range(6)), 2, rng=Rng(0))
    b = cluster_keywords(g2, list(range(6)), 2, rng=Rng(0))
    va = normalized_cut_value(g1.subgraph_matrix(range(6)), [[i for i in grp] for grp in a])
    vb = normalized_cut_value(g1.subgraph_matrix(range(6)), [[i for i in grp] for grp in b])
    assert va == pytest.approx(vb)


def test_filter_keywords_table_example():
    bl = Blacklist(patterns={"size": ["inch"]})
    context = "iliving organic buckwheat pillow with authentic japanese pillow cover , 14 by 20 - inch , green".split()
    kept, removed = filter_keywords({"size", "cover", "pillow", "wash", "zipper"}, context, bl)
    assert set(removed) == {"size"}
    assert kept == {"cover", "pillow", "wash", "zipper"}


def test_filter_keywords_empty_blacklist():
    kept, removed = filter_keywords({"a", "b"}, ["any", "context"], Blacklist.empty())
    assert kept == {"a", "b"} and removed == {}


def test_filter_keywords_height_width_example():
    bl = Blacklist(patterns={"height": ["height", "width"]})
    kept, removed = filter_keywords({"height"}, "the width 30 cm frame".split(), bl)
    assert set(removed) == {"height"}


def test_filter_keywords_partition_and_idempotence():
    bl = Blacklist(patterns={"color": ["blue"], "size": ["inch"]})
    kws = {"color", "size", "zipper"}
    ctx = "a blue chair".split()
    kept, removed = filter_keywords(kws, ctx, bl)
    assert kept | set(removed) == kws
    assert kept & set(removed.keys()) == set()
    kept2, removed2 = filter_keywords(kept, ctx, bl)
    assert kept2 == kept and removed2 == {}


def test_filter_keywords_regex_pattern():
    bl = Blacklist(patterns={"voltage": ["re:\\b(110|220)\\s*v(olts?)?\\b"]})
    kept, removed = filter_keywords({"voltage"}, "uses 110 volts at home".split(), bl)
    assert set(removed) == {"voltage"}


def test_exclude_keywords_cases():
    assert exclude_keywords({"a", "b", "c"}, set()) == {"a", "b", "c"}
    assert exclude_keywords({"a", "b"}, {"a", "b", "c"}) == set()
    assert exclude_keywords({"a", "b", "c"}, {"b"}) == {"a", "c"}


def test_blacklist_roundtrip(tmp_path):
    bl = Blacklist(patterns={"size": ["inch", "cm"], "color": ["blue"]})
    bl.save(tmp_path / "bl.json")
    assert Blacklist.load(tmp_path / "bl.json").patterns == bl.patterns


def test_blacklist_rejects_empty_pattern():
    with pytest.raises(ValueError):
        Blacklist(patterns={"size": [""]})
