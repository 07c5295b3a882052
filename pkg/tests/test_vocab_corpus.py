import json

import pytest

from cqgen.corpus import (MAX_CONTEXT_LEN, MAX_QUESTION_LEN, build_vocabs, clean_corpus_file,
                          load_corpus, prepare_record)
from cqgen.textproc import extract_keywords
from cqgen.vocab import (EOS_ID, KeywordVocab, PAD_ID, SOS_ID, TokenVocab, UNK_ID, VocabError)


def test_token_vocab_reserved_positions():
    v = TokenVocab.build([["a", "a", "b", "b"]], min_freq=2)
    assert v.tokens[:4] == ["<pad>", "<unk>", "<sos>", "<eos>"]
    assert PAD_ID == 0 and UNK_ID == 1 and SOS_ID == 2 and EOS_ID == 3


def test_token_vocab_oov_maps_to_unk():
    v = TokenVocab.build([["a", "a", "b"]], min_freq=2)
    assert v.encode(["a", "zzz"]) == [v.index["a"], UNK_ID]


def test_token_vocab_roundtrip(tmp_path):
    v = TokenVocab.build([["a", "a", "b", "b", "c"]], min_freq=1)
    path = tmp_path / "tokens.tsv"
    v.save(path)
    v2 = TokenVocab.load(path)
    assert v2.tokens == v.tokens
    assert v2.freqs == v.freqs
    assert v2.digest() == v.digest()


def test_keyword_vocab_threshold_and_order():
    sets = [{"size"}] * 10 + [{"blorp"}] + [{"cover"}] * 10
    kv = KeywordVocab.build(sets, min_freq=2)
    assert "size" in kv and "cover" in kv
    assert "blorp" not in kv
    # tie on doc_freq 10 -> lexicographic
    assert kv.entries == ["cover", "size"]


def test_keyword_vocab_min_freq_one():
    kv = KeywordVocab.build([{"a"}, {"b"}, {"c"}], min_freq=1)
    assert len(kv) == 3


def test_keyword_vocab_empty_errors():
    with pytest.raises(VocabError, match="empty keyword vocabulary"):
        KeywordVocab.build([{"once"}], min_freq=2)


def test_keyword_targets_binary():
    kv = KeywordVocab.build([{"a", "b"}, {"a", "b"}], min_freq=1)
    t = kv.targets({"a", "nope"})
    assert t.tolist() == [1.0, 0.0] or t.tolist() == [0.0, 1.0]
    assert set(t.tolist()) <= {0.0, 1.0}


def test_prepare_record_truncation_and_keywords():
    long_ctx = " ".join(["word"] * 300)
    long_q = " ".join(["token"] * 50) + " ?"
    rec = prepare_record({"id": "x", "context": long_ctx, "questions": [long_q]})
    assert len(rec.context) == MAX_CONTEXT_LEN
    assert len(rec.questions[0].question) <= MAX_QUESTION_LEN
    for q in rec.questions:
        assert set(q.keywords) == extract_keywords(list(q.question))


def test_prepare_record_requires_questions():
    assert prepare_record({"id": "x", "context": "a chair", "questions": ["no question mark"]}) is None
    rec = prepare_record({"id": "x", "context": "a chair", "questions": []}, require_questions=False)
    assert rec is not None and rec.questions == ()


def test_clean_corpus_file_reproduces_printed_examples(tmp_path):
    src = tmp_path / "raw.jsonl"
    dst = tmp_path / "clean.jsonl"
    rows = [{
        "id": "1",
        "context": "does it slice like zucchini & amp ; cucumbers?",
        "questions": [
            "where is this product made ? i contacted customer service and the "
            "representative was uninformed and could not offer any information .",
            "great product",
        ],
    }]
    src.write_text("\n".join(json.dumps(r) for r in rows))
    stats = clean_corpus_file(src, dst)
    out = [json.loads(line) for line in dst.read_text().splitlines()]
    assert out[0]["context"] == "does it slice like zucchini & cucumbers?"
    assert out[0]["questions"] == ["where is this product made ?"]
    assert stats.questions_kept == 1


def test_corpus_invariants_on_synthetic(tiny_records):
    for split in tiny_records.values():
        for rec in split:
            assert len(rec.context) <= MAX_CONTEXT_LEN
            assert rec.questions
            for q in rec.questions:
                assert len(q.question) <= MAX_QUESTION_LEN
                assert set(q.keywords) == extract_keywords(list(q.question))


def test_build_vocabs(tiny_records):
    tv, kv = build_vocabs(tiny_records["train"])
    assert len(tv) > 4
    assert len(kv) >= 5
    # doc_freq ordering is non-increasing
    freqs = [kv.doc_freq[k] for k in kv.entries]
    assert freqs == sorted(freqs, reverse=True)
