"""Token and keyword vocabularies with tab-separated text serialization."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD, UNK, SOS, EOS = "<pad>", "<unk>", "<sos>", "<eos>"
RESERVED = (PAD, UNK, SOS, EOS)
PAD_ID, UNK_ID, SOS_ID, EOS_ID = 0, 1, 2, 3


class VocabError(ValueError):
    pass


def _ordered_by_freq(freqs: Counter, min_freq: int) -> list[str]:
    kept = [w for w, c in freqs.items() if c >= min_freq]
    kept.sort(key=lambda w: (-freqs[w], w))
    return kept


@dataclass
class TokenVocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False)
    freqs: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED:
            raise VocabError(f"first four tokens must be {RESERVED}")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise VocabError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, toks: list[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in toks]

    def decode(self, ids: list[int], strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            t = self.tokens[i]
            if strip_special and t in RESERVED:
                continue
            out.append(t)
        return out

    @staticmethod
    def build(token_lists: list[list[str]], min_freq: int = 2) -> "TokenVocab":
        freqs = Counter()
        for toks in token_lists:
            freqs.update(toks)
        entries = _ordered_by_freq(freqs, min_freq)
        vocab = TokenVocab(list(RESERVED) + entries)
        vocab.freqs = {t: freqs.get(t, 0) for t in vocab.tokens}
        return vocab

    def save(self, path: str | Path) -> None:
        _save_entries(path, self.tokens, self.freqs)

    @staticmethod
    def load(path: str | Path) -> "TokenVocab":
        entries, freqs = _load_entries(path)
        vocab = TokenVocab(entries)
        vocab.freqs = freqs
        return vocab

    def digest(self) -> str:
        return _digest(self.tokens, self.freqs)


@dataclass
class KeywordVocab:
    """The dictionary of C keywords, ordered by descending question-document
    frequency (lexicographic tie-break)."""

    entries: list[str]
    doc_freq: dict[str, int]
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {k: i for i, k in enumerate(self.entries)}
        if len(self.index) != len(self.entries):
            raise VocabError("duplicate keywords in vocabulary")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def size(self) -> int:
        return len(self.entries)

    def __contains__(self, kw: str) -> bool:
        return kw in self.index

    @staticmethod
    def build(keyword_sets: list[set[str]], min_freq: int = 2) -> "KeywordVocab":
        freqs = Counter()
        for ks in keyword_sets:
            freqs.update(ks)
        entries = _ordered_by_freq(freqs, min_freq)
        if not entries:
            raise VocabError("empty keyword vocabulary")
        return KeywordVocab(entries, {k: freqs[k] for k in entries})

    def targets(self, keywords: set[str]) -> np.ndarray:
        """Binary indicator vector of length C; out-of-vocabulary keywords
        are simply not representable and drop out."""
        v = np.zeros(len(self.entries), dtype=np.float64)
        for k in keywords:
            i = self.index.get(k)
            if i is not None:
                v[i] = 1.0
        return v

    def save(self, path: str | Path) -> None:
        _save_entries(path, self.entries, self.doc_freq)

    @staticmethod
    def load(path: str | Path) -> "KeywordVocab":
        entries, freqs = _load_entries(path)
        return KeywordVocab(entries, freqs)

    def digest(self) -> str:
        return _digest(self.entries, self.doc_freq)


def _save_entries(path: str | Path, entries: list[str], freqs: dict[str, int]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write(f"{e}\t{freqs.get(e, 0)}\n")


def _load_entries(path: str | Path) -> tuple[list[str], dict[str, int]]:
    entries: list[str] = []
    freqs: dict[str, int] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                tok, freq = line.split("\t")
            except ValueError as e:
                raise VocabError(f"{path}:{lineno}: expected 'entry<TAB>freq'") from e
            entries.append(tok)
            freqs[tok] = int(freq)
    return entries, freqs


def _digest(entries: list[str], freqs: dict[str, int]) -> str:
    h = hashlib.sha256()
    for e in entries:
        h.update(f"{e}\t{freqs.get(e, 0)}\n".encode())
    return h.hexdigest()[:12]
