import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from searchrec.tfidf import (build_vocab, encode_queries, idf_table, tfidf_queries, tfidf_scores,
                             tokenize, top_keywords)


def test_tokenize_lowercases_and_strips_punctuation():
    assert tokenize("Great, GREAT phone!! (blue)") == ["great", "great", "phone", "blue"]
    assert tokenize("") == []
    assert tokenize(None) == []


def test_unique_word_has_max_idf_and_is_selected():
    docs = [tokenize(t) for t in ["good cheap good", "good cheap", "good zebra"]]
    idf = idf_table(docs)
    assert idf["zebra"] == max(idf.values())
    assert top_keywords(docs[2], idf, k=1) == ["zebra"]


def test_identical_documents_tie_lexicographically():
    docs = [tokenize("pear apple fig"), tokenize("pear apple fig")]
    idf = idf_table(docs)
    assert top_keywords(docs[0], idf, k=3) == ["apple", "fig", "pear"]
    assert top_keywords(docs[0], idf, k=2) == ["apple", "fig"]


def _loop_tfidf(docs):
    """Hand loop: raw count x (ln((1+D)/(1+df)) + 1)."""
    D = len(docs)
    out = []
    for doc in docs:
        row = {}
        for tok in doc:
            df = sum(1 for other in docs if tok in other)
            tf = sum(1 for x in doc if x == tok)
            row[tok] = tf * (math.log((1 + D) / (1 + df)) + 1)
        out.append(row)
    return out


def test_three_document_corpus_matches_loop_oracle():
    docs = [tokenize(t) for t in ["the battery lasts", "the screen the screen", "battery screen case"]]
    idf = idf_table(docs)
    for doc, expect in zip(docs, _loop_tfidf(docs)):
        got = tfidf_scores(doc, idf)
        assert got.keys() == expect.keys()
        for tok in expect:
            assert got[tok] == pytest.approx(expect[tok], rel=1e-12)


words = st.sampled_from(["red", "blue", "fast", "slow", "cheap", "phone", "case", "zip"])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(words, min_size=1, max_size=8), min_size=1, max_size=6))
def test_scores_match_sklearn(corpus):
    sk = pytest.importorskip("sklearn.feature_extraction.text")
    texts = [" ".join(d) for d in corpus]
    vec = sk.TfidfVectorizer(norm=None, smooth_idf=True, sublinear_tf=False, token_pattern=r"\S+")
    mat = vec.fit_transform(texts).toarray()
    vocab = vec.vocabulary_
    docs = [tokenize(t) for t in texts]
    idf = idf_table(docs)
    for i, doc in enumerate(docs):
        for tok, score in tfidf_scores(doc, idf).items():
            assert score == pytest.approx(mat[i, vocab[tok]], rel=1e-12)


def test_queries_combine_attributes_and_keywords():
    reviews = ["battery battery great", "", "great screen"]
    attrs = [["Phones", "Acme"], ["Cases"], ["Phones"]]
    q = tfidf_queries(reviews, attrs, k=1)
    assert q[0] == ["phones", "acme", "battery"]
    assert q[1] == ["cases"]            # empty review: attributes only
    assert q[2][0] == "phones" and len(q[2]) == 2


def test_queries_dedupe_terms_and_check_lengths():
    assert tfidf_queries(["blue blue case"], [["Blue"]], k=3) == [["blue", "case"]]
    with pytest.raises(ValueError):
        tfidf_queries(["a"], [], k=3)


def test_vocab_ids_start_at_one():
    qs = [["b", "a"], ["c", "a"]]
    vocab = build_vocab(qs)
    assert sorted(vocab.values()) == [1, 2, 3]
    assert vocab["a"] == 1
    assert encode_queries(qs, vocab) == [(2, 1), (3, 1)]
    assert np.all(np.array(list(vocab.values())) > 0)
