"""Simulated queries from review keywords and product attributes."""
from __future__ import annotations

import math
import re
from collections import Counter

_PUNCT = re.compile(r"[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return _PUNCT.sub(" ", (text or "").lower()).split()


def idf_table(docs: list[list[str]]) -> dict[str, float]:
    """Smoothed idf: ln((1 + D) / (1 + df)) + 1."""
    n = len(docs)
    df = Counter(tok for doc in docs for tok in set(doc))
    return {tok: math.log((1 + n) / (1 + c)) + 1.0 for tok, c in df.items()}


def tfidf_scores(doc: list[str], idf: dict[str, float]) -> dict[str, float]:
    """Raw term count times idf for each distinct token of ``doc``."""
    return {tok: c * idf[tok] for tok, c in Counter(doc).items()}


def top_keywords(doc: list[str], idf: dict[str, float], k: int = 3) -> list[str]:
    """Highest-scoring tokens; ties go to the lexicographically smaller token."""
    scores = tfidf_scores(doc, idf)
    return sorted(scores, key=lambda tok: (-scores[tok], tok))[:k]


def tfidf_queries(reviews, attrs, k: int = 3) -> list[list[str]]:
    """Query terms per interaction: attribute tokens followed by top-k review keywords.

    ``reviews`` is one text per interaction (``None`` or empty allowed) and
    ``attrs`` one iterable of attribute strings (category, title, brand ...)
    per interaction.  Repeated terms are kept once, first occurrence wins.
    """
    if len(reviews) != len(attrs):
        raise ValueError(f"{len(reviews)} reviews but {len(attrs)} attribute lists")
    docs = [tokenize(r) for r in reviews]
    idf = idf_table(docs)
    out = []
    for doc, fields in zip(docs, attrs):
        terms = [tok for f in fields for tok in tokenize(f)]
        if doc:
            terms += top_keywords(doc, idf, k)
        out.append(list(dict.fromkeys(terms)))
    return out


def build_vocab(queries) -> dict[str, int]:
    """Word ids starting at 1 (0 is padding), in sorted token order."""
    return {tok: i for i, tok in enumerate(sorted({t for q in queries for t in q}), start=1)}


def encode_queries(queries, vocab: dict[str, int]) -> list[tuple[int, ...]]:
    return [tuple(vocab[t] for t in q) for q in queries]
