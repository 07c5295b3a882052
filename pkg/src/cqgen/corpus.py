"""Corpus records and the JSON Lines ingestion pipeline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

from . import textproc
from .textproc import TokenSequence
from .vocab import KeywordVocab, TokenVocab

MAX_CONTEXT_LEN = 100
MAX_QUESTION_LEN = 20


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class QuestionRecord:
    question: tuple[str, ...]  # tokenized, truncated
    keywords: frozenset[str]


@dataclass(frozen=True)
class ContextRecord:
    id: str
    context: tuple[str, ...]  # tokenized, truncated
    questions: tuple[QuestionRecord, ...]

    def keyword_union(self) -> frozenset[str]:
        out: set[str] = set()
        for q in self.questions:
            out |= q.keywords
        return frozenset(out)


@dataclass
class CleanStats:
    records_in: int = 0
    records_kept: int = 0
    questions_in: int = 0
    questions_kept: int = 0


def _prepare_question(raw: str, content_lexicon: Optional[set[str]],
                      max_question_len: int) -> Optional[QuestionRecord]:
    cleaned = textproc.clean_context(raw)
    q = textproc.clean_question(cleaned)
    if q is None:
        return None
    toks = textproc.tokenize(q)[:max_question_len]
    if not toks:
        return None
    return QuestionRecord(
        question=tuple(toks),
        keywords=frozenset(textproc.extract_keywords(toks, content_lexicon=content_lexicon)),
    )


def prepare_record(raw: dict, content_lexicon: Optional[set[str]] = None,
                   max_context_len: int = MAX_CONTEXT_LEN,
                   max_question_len: int = MAX_QUESTION_LEN,
                   require_questions: bool = True) -> Optional[ContextRecord]:
    ctx = textproc.tokenize(textproc.clean_context(raw.get("context", "")))[:max_context_len]
    if not ctx:
        return None
    questions = []
    for raw_q in raw.get("questions", []):
        q = _prepare_question(raw_q, content_lexicon, max_question_len)
        if q is not None:
            questions.append(q)
    if require_questions and not questions:
        return None
    return ContextRecord(id=str(raw.get("id", "")), context=tuple(ctx), questions=tuple(questions))


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {e}") from e


def write_jsonl(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_corpus(path: str | Path, content_lexicon: Optional[set[str]] = None,
                require_questions: bool = True,
                max_context_len: int = MAX_CONTEXT_LEN,
                max_question_len: int = MAX_QUESTION_LEN) -> list[ContextRecord]:
    records = []
    for raw in read_jsonl(path):
        rec = prepare_record(raw, content_lexicon, max_context_len, max_question_len, require_questions)
        if rec is not None:
            records.append(rec)
    return records


def clean_corpus_file(src: str | Path, dst: str | Path) -> CleanStats:
    """Rewrite a raw corpus file with cleaned contexts and filtered questions.

    Output keeps the input schema ({"id", "context", "questions"}), so the
    command is idempotent.
    """
    stats = CleanStats()
    rows_out = []
    for raw in read_jsonl(src):
        stats.records_in += 1
        ctx = textproc.clean_context(raw.get("context", ""))
        questions_out = []
        for raw_q in raw.get("questions", []):
            stats.questions_in += 1
            q = textproc.clean_question(textproc.clean_context(raw_q))
            if q is not None:
                questions_out.append(q)
                stats.questions_kept += 1
        if ctx and questions_out:
            stats.records_kept += 1
            rows_out.append({"id": raw.get("id", ""), "context": ctx, "questions": questions_out})
    write_jsonl(dst, rows_out)
    return stats


def build_vocabs(records: list[ContextRecord], min_token_freq: int = 2,
                 min_keyword_freq: int = 2) -> tuple[TokenVocab, KeywordVocab]:
    token_lists: list[list[str]] = []
    keyword_sets: list[set[str]] = []
    for rec in records:
        token_lists.append(list(rec.context))
        for q in rec.questions:
            token_lists.append(list(q.question))
            keyword_sets.append(set(q.keywords))
    token_vocab = TokenVocab.build(token_lists, min_freq=min_token_freq)
    keyword_vocab = KeywordVocab.build(keyword_sets, min_freq=min_keyword_freq)
    return token_vocab, keyword_vocab


@dataclass
class TrainingPair:
    """One (context, question) teacher-forcing example."""

    record_id: str
    context_ids: list[int]
    question_ids: list[int]  # without SOS/EOS
    keywords: frozenset[str]

    @staticmethod
    def from_corpus(records: list[ContextRecord], token_vocab: TokenVocab) -> list["TrainingPair"]:
        pairs = []
        for rec in records:
            ctx_ids = token_vocab.encode(list(rec.context))
            for q in rec.questions:
                pairs.append(TrainingPair(
                    record_id=rec.id,
                    context_ids=ctx_ids,
                    question_ids=token_vocab.encode(list(q.question)),
                    keywords=q.keywords,
                ))
        return pairs
