import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from widetrack.content import (
    ENGINEERED_COLUMNS,
    Vocabulary,
    VocabularyError,
    assemble_vector,
    build_vocabulary,
    doc_token_counts,
    engineered,
    feature_names,
    load_vocabulary,
    save_vocabulary,
    tfidf,
    tokenize_url,
)
from widetrack.graph import NodeKey, SubdomainDocument


def doc(host, kind, urls, sites=("site.com",)):
    return SubdomainDocument(
        host=host,
        kind=kind,
        urls=Counter(urls),
        sites=set(sites),
        parent=NodeKey(".".join(host.split(".")[-2:]), kind),
    )


class TestTokenizer:
    def test_query_url(self):
        assert tokenize_url("https://a.tracker.com/pixel?id=123&uid=x") == [
            "a", "tracker", "com", "pixel", "id", "123", "uid", "x",
        ]

    def test_minimal_url(self):
        assert tokenize_url("http://x.com/") == ["x", "com"]

    def test_dash_and_dot_both_split(self):
        assert tokenize_url("https://cdn.site.net/a-b.js") == [
            "cdn", "site", "net", "a", "b", "js",
        ]

    def test_lowercases_and_keeps_duplicates_in_order(self):
        assert tokenize_url("HTTP://X.com/x?x=X") == ["x", "com", "x", "x", "x"]

    def test_scheme_stripped_only_as_prefix(self):
        assert tokenize_url("https://a.com/https") == ["a", "com", "https"]


class TestVocabulary:
    def test_single_document(self):
        v = build_vocabulary([doc("a.t.net", "other", ["https://a.t.net/b"])])
        assert v.terms == ["a", "b", "net", "t"]
        assert all(df == 1 for df in v.df.values())
        assert v.corpus_size == 1

    def test_document_frequency_ranks(self):
        docs = [
            doc("a.t.net", "other", ["https://a.t.net/uid"]),
            doc("b.s.net", "other", ["https://b.s.net/uid"]),
            doc("c.r.net", "other", ["https://c.r.net/uid?cdn=1"]),
        ]
        v = build_vocabulary(docs)
        assert v.terms.index("uid") < v.terms.index("cdn")
        assert v.df["uid"] == 3 and v.df["cdn"] == 1

    def test_truncates_to_k(self):
        urls = [f"https://h.x.net/{i:04d}" for i in range(2000)]
        v = build_vocabulary([doc("h.x.net", "other", [u]) for u in urls], k=1000)
        assert len(v.terms) == 1000

    def test_tie_break_is_lexicographic(self):
        v = build_vocabulary([doc("b.a.net", "other", ["https://b.a.net/zz"])], k=2)
        assert v.terms == sorted(v.terms)

    def test_permutation_invariant(self):
        docs = [
            doc("a.t.net", "other", ["https://a.t.net/x?uid=1"]),
            doc("b.s.net", "other", ["https://b.s.net/y?uid=2"]),
            doc("c.r.net", "other", ["https://c.r.net/z"]),
        ]
        v1 = build_vocabulary(docs)
        v2 = build_vocabulary(list(reversed(docs)))
        assert v1.terms == v2.terms and v1.df == v2.df

    def test_term_frequency_ranking_flag(self):
        docs = [
            doc("a.t.net", "other", {"https://a.t.net/x/x/x/x": 1}),
            doc("b.s.net", "other", ["https://b.s.net/y?uid=1"]),
        ]
        by_df = build_vocabulary(docs, k=3, rank_by="df")
        by_tf = build_vocabulary(docs, k=3, rank_by="tf")
        assert "x" in by_tf.terms[:1]  # four occurrences beat df-1 ties
        assert by_df.terms != by_tf.terms

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            build_vocabulary([])
        with pytest.raises(ValueError):
            build_vocabulary([doc("a.t.net", "other", ["https://a.t.net/"])], rank_by="x")


class TestTfidf:
    def vocab(self, corpus_size, df):
        return Vocabulary(terms=list(df), df=dict(df), corpus_size=corpus_size)

    def test_absent_term_scores_zero(self):
        v = self.vocab(10, {"uid": 4})
        assert tfidf("uid", Counter(), v) == 0.0

    def test_formula_value(self):
        # f=1, |D|=10, df=4 -> ln(2) * ln(10/5)
        v = self.vocab(10, {"uid": 4})
        expected = math.log(2) * math.log(10 / 5)
        assert tfidf("uid", Counter({"uid": 1}), v) == pytest.approx(expected, rel=1e-12)
        assert round(expected, 4) == 0.4805

    def test_term_in_every_document_goes_negative(self):
        v = self.vocab(8, {"com": 8})
        assert tfidf("com", Counter({"com": 3}), v) < 0.0

    def test_clamp_idf_floors_at_zero(self):
        v = self.vocab(8, {"com": 8})
        assert tfidf("com", Counter({"com": 3}), v, clamp_idf=True) == 0.0

    def test_out_of_vocabulary_term_rejected(self):
        v = self.vocab(10, {"uid": 4})
        with pytest.raises(VocabularyError):
            tfidf("ghost", Counter({"ghost": 1}), v)

    @given(
        f=st.integers(min_value=0, max_value=50),
        df=st.integers(min_value=1, max_value=40),
        extra=st.integers(min_value=0, max_value=40),
    )
    def test_zero_iff_absent_or_df_boundary(self, f, df, extra):
        corpus = df + extra
        v = self.vocab(corpus, {"t": df})
        score = tfidf("t", Counter({"t": f}), v)
        assert (score == 0.0) == (f == 0 or corpus == 1 + df)


class TestEngineered:
    def test_hand_counted_fixture(self):
        d = doc("a.com", "script", ["a.com/p?x=1&y=2"])
        assert engineered(d) == [15.0, 1.0, 2.0, 1.0, 0.0]

    def test_no_query_counts_zero(self):
        d = doc("a.com", "media", ["https://a.com/img.png"])
        assert engineered(d)[1:4] == [0.0, 0.0, 0.0]

    def test_mean_length(self):
        d = doc("a.com", "other", ["0123456789", "01234567890123456789"])
        assert engineered(d)[0] == 15.0

    def test_multiplicity_weights_the_mean(self):
        d = doc("a.com", "other", Counter({"0123456789": 3, "01234567890123456789": 1}))
        assert engineered(d)[0] == 12.5

    def test_kind_codes_distinct(self):
        codes = {
            engineered(doc("a.com", kind, ["https://a.com/"]))[4]
            for kind in ("script", "media", "iframe", "other")
        }
        assert codes == {0.0, 1.0, 2.0, 3.0}

    def test_empty_document_rejected(self):
        with pytest.raises(ValueError):
            engineered(doc("a.com", "other", []))


class TestAssemble:
    def test_matches_independent_recomputation(self):
        d = doc("px.t.net", "other", ["https://px.t.net/c?uid=9&uid=8"])
        docs = [d, doc("b.s.net", "script", ["https://b.s.net/lib.js"])]
        v = build_vocabulary(docs, k=6)
        struct_row = np.array([3.0, 1.0, 2.0])
        vec = assemble_vector(d, v, struct_row)
        assert len(vec) == 6 + 5 + 3

        tokens = doc_token_counts(d)
        for i, term in enumerate(v.terms):
            f = tokens.get(term, 0)
            expected = math.log(1 + f) * math.log(v.corpus_size / (1 + v.df[term]))
            assert vec[i] == pytest.approx(expected, abs=1e-15)
        assert vec[6:11] == pytest.approx(engineered(d))
        assert vec[11:].tolist() == [3.0, 1.0, 2.0]

    def test_absent_vocabulary_terms_exactly_zero(self):
        d = doc("px.t.net", "other", ["https://px.t.net/c"])
        v = Vocabulary(terms=["zzz", "qqq"], df={"zzz": 1, "qqq": 1}, corpus_size=4)
        vec = assemble_vector(d, v, np.zeros(2))
        assert vec[:2].tolist() == [0.0, 0.0]

    def test_same_parent_shares_structural_block(self):
        d1 = doc("px.t.net", "other", ["https://px.t.net/a?uid=1"])
        d2 = doc("sync.t.net", "other", ["https://sync.t.net/b"])
        v = build_vocabulary([d1, d2], k=8)
        row = np.array([7.0, 8.0])
        v1 = assemble_vector(d1, v, row)
        v2 = assemble_vector(d2, v, row)
        assert v1[-2:].tolist() == v2[-2:].tolist()
        assert not np.array_equal(v1[:-2], v2[:-2])

    def test_pure_function(self):
        d = doc("px.t.net", "other", ["https://px.t.net/c?uid=9"])
        v = build_vocabulary([d], k=4)
        row = np.array([1.0])
        assert np.array_equal(assemble_vector(d, v, row), assemble_vector(d, v, row))


def test_feature_names_layout():
    v = Vocabulary(terms=["uid", "ref"], df={"uid": 2, "ref": 1}, corpus_size=3)
    names = feature_names(v, ["degree"])
    assert names == ["kw:uid", "kw:ref", *ENGINEERED_COLUMNS, "degree"]


def test_vocabulary_file_round_trip():
    v = build_vocabulary(
        [doc("a.t.net", "other", ["https://a.t.net/x?uid=1&ref=2"])], k=5
    )
    loaded = load_vocabulary(save_vocabulary(v))
    assert loaded.terms == v.terms
    assert loaded.df == v.df
    assert loaded.corpus_size == v.corpus_size


def test_vocabulary_file_rejects_garbage():
    with pytest.raises(ValueError):
        load_vocabulary(b"nope\n")
