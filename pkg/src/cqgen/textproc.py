"""Corpus text cleaning, tokenization, lemmatization and keyword extraction."""

from __future__ import annotations

import html
import html.entities
import re
import unicodedata
from pathlib import Path
from typing import Iterable, Optional

TokenSequence = list[str]

# "& amp ;" style entities whose name survives with spaces around it.
_SPLIT_ENTITY_RE = re.compile(r"&\s*(#[0-9]+|#x[0-9a-fA-F]+|[A-Za-z][A-Za-z0-9]*)\s*;")
_KNOWN_ENTITY_NAMES = {name.rstrip(";") for name in html.entities.html5}

_TOKEN_RE = re.compile(r"[a-z0-9]+|'[a-z]+|[^\sa-z0-9]")

_WS_RE = re.compile(r"\s+")


def _join_split_entities(text: str) -> str:
    def fix(m: re.Match) -> str:
        name = m.group(1)
        if name.startswith("#") or name in _KNOWN_ENTITY_NAMES:
            return f"&{name};"
        return m.group(0)

    return _SPLIT_ENTITY_RE.sub(fix, text)


def clean_context(raw: str) -> str:
    """Unescape HTML entities (including space-split forms), drop control
    characters, collapse whitespace. Idempotent on its own output."""
    text = raw
    # double-escaped entities need repeated passes; bounded for safety
    for _ in range(4):
        fixed = html.unescape(_join_split_entities(text))
        if fixed == text:
            break
        text = fixed
    text = "".join(" " if unicodedata.category(ch) == "Cc" else ch for ch in text)
    return _WS_RE.sub(" ", text).strip()


DEFAULT_UNIVERSAL_PATTERNS = ("ship to", "does it ship", "shipping to")
DEFAULT_COMPARISON_PATTERNS = (" vs ", " vs. ", "versus", "better than", "compared to", "compared with")


def clean_question(raw: str,
                   universal_patterns: Iterable[str] = DEFAULT_UNIVERSAL_PATTERNS,
                   comparison_patterns: Iterable[str] = DEFAULT_COMPARISON_PATTERNS) -> Optional[str]:
    """Keep text up to the final '?'; drop non-questions and noise questions.

    Returns None when there is no question mark or a noise pattern matches.
    """
    idx = raw.rfind("?")
    if idx < 0:
        return None
    text = raw[: idx + 1].strip()
    lowered = f" {text.lower()} "
    for pat in comparison_patterns:
        if pat in lowered:
            return None
    for pat in universal_patterns:
        if pat in lowered:
            return None
    return text


def tokenize(text: str) -> TokenSequence:
    """Lowercase, split punctuation into standalone tokens."""
    return _TOKEN_RE.findall(text.lower())


# Irregulars plus high-frequency e-commerce verbs the suffix rules mangle.
_LEMMA_EXCEPTIONS = {
    "children": "child",
    "feet": "foot",
    "men": "man",
    "women": "woman",
    "teeth": "tooth",
    "knives": "knife",
    "shelves": "shelf",
    "leaves": "leaf",
    "dishes": "dish",
    "glasses": "glass",
    "using": "use",
    "used": "use",
    "uses": "use",
    "making": "make",
    "made": "make",
    "makes": "make",
    "coming": "come",
    "comes": "come",
    "fitting": "fit",
    "fits": "fit",
    "has": "have",
    "having": "have",
    "does": "do",
    "being": "be",
    "is": "be",
    "are": "be",
    "was": "be",
    "were": "be",
}

_VOWELS = set("aeiou")


def _strip_suffix_once(token: str) -> str:
    if token in _LEMMA_EXCEPTIONS:
        return _LEMMA_EXCEPTIONS[token]
    t = token
    if len(t) > 4 and t.endswith("ies"):
        return t[:-3] + "y"
    if len(t) > 4 and (t.endswith("ches") or t.endswith("shes") or t.endswith("sses") or t.endswith("xes") or t.endswith("zzes")):
        return t[:-2]
    if len(t) > 3 and t.endswith("s") and not t.endswith("ss") and not t.endswith("us") and not t.endswith("is"):
        return t[:-1]
    if len(t) > 5 and t.endswith("ing"):
        stem = t[:-3]
        if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] not in _VOWELS:
            stem = stem[:-1]
        if len(stem) < 3:
            stem = stem + "e"
        return stem
    if len(t) > 4 and t.endswith("ied"):
        return t[:-3] + "y"
    if len(t) > 4 and t.endswith("ed") and not t.endswith("eed"):
        stem = t[:-2]
        if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] not in _VOWELS:
            stem = stem[:-1]
        if len(stem) < 3:
            stem = stem + "e"
        return stem
    return t


def lemma(token: str) -> str:
    """Deterministic suffix-stripping normal form; idempotent by construction
    (rules are applied until a fixed point; every rewrite shortens the token,
    so this terminates)."""
    cur = token
    while True:
        nxt = _strip_suffix_once(cur)
        if nxt == cur:
            return cur
        cur = nxt


DEFAULT_STOPWORDS = frozenset("""
a about above after again all am an and any anyone are aren arent as at be
because been before being below between both but by can cannot cant could
couldnt did didnt do dont down during each few for from further had hadnt
has hasnt have havent having he her here hers herself him himself his how
i if in into it its itself just me more most my myself no nor not now of
off on once only or other our ours ourselves out over own same she should
shouldnt so some such than that the their theirs them themselves then there
these they this those through to too under until up very we what when where
which while who whom why will with wont would wouldnt you your yours
yourself yourselves 's 't 'll 're 've 'd 'm n't am is are was were been
does doing done get got gets my much many may might must shall us them his
been also
""".split())


def is_content_token(token: str) -> bool:
    """Punctuation and numbers are not content; neither is anything that does
    not start with a letter (kills clitics like 's)."""
    return bool(token) and token[0].isalpha()


def extract_keywords(question: TokenSequence, stopwords: frozenset[str] | set[str] = DEFAULT_STOPWORDS,
                     content_lexicon: Optional[set[str]] = None) -> set[str]:
    """Keywords of a question: lemmatized content tokens minus stopwords,
    optionally intersected with a content-word lexicon (POS-filter proxy)."""
    out: set[str] = set()
    for tok in question:
        if not is_content_token(tok) or tok in stopwords:
            continue
        lem = lemma(tok)
        if lem in stopwords or not is_content_token(lem):
            continue
        if content_lexicon is not None and lem not in content_lexicon:
            continue
        out.add(lem)
    return out


def load_wordlist(path: str | Path) -> set[str]:
    """One entry per line; '#' starts a comment."""
    entries: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if line:
                entries.add(line)
    return entries
