"""URL tokenization, keyword weighting, and per-document feature assembly."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .graph import SubdomainDocument

_DELIMITERS = re.compile(r"[/?&=.\-]")

KIND_CODES = {"script": 0, "media": 1, "iframe": 2, "other": 3}

ENGINEERED_COLUMNS = (
    "avg_url_len",
    "amp_count",
    "eq_count",
    "question_count",
    "kind_code",
)


class VocabularyError(KeyError):
    pass


def tokenize_url(url: str) -> list[str]:
    """Lowercase, strip the scheme prefix, split on the six URL delimiters.

    Order is preserved and duplicates are kept; empty fragments drop out.
    """
    s = url.lower()
    for prefix in ("https://", "http://"):
        if s.startswith(prefix):
            s = s[len(prefix):]
            break
    return [tok for tok in _DELIMITERS.split(s) if tok]


def doc_token_counts(document: SubdomainDocument) -> Counter:
    """Term frequencies over all of a document's URLs, multiplicity included."""
    counts: Counter = Counter()
    for url, mult in document.urls.items():
        for token in tokenize_url(url):
            counts[token] += mult
    return counts


@dataclass
class Vocabulary:
    terms: list[str]
    df: dict[str, int]
    corpus_size: int
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.terms)}

    def __contains__(self, term: str) -> bool:
        return term in self._index

    def index(self, term: str) -> int:
        return self._index[term]


def build_vocabulary(
    documents: list[SubdomainDocument], k: int = 1000, rank_by: str = "df"
) -> Vocabulary:
    """Keep the top-k terms ranked by document frequency (ties lexicographic).

    ``rank_by="tf"`` ranks by total term frequency instead; document
    frequencies are recorded either way since the weighting needs them.
    """
    if not documents:
        raise ValueError("vocabulary needs at least one document")
    if rank_by not in ("df", "tf"):
        raise ValueError(f"unknown ranking {rank_by!r}")
    df: Counter = Counter()
    tf: Counter = Counter()
    for doc in documents:
        counts = doc_token_counts(doc)
        df.update(counts.keys())
        if rank_by == "tf":
            tf.update(counts)
    rank = tf if rank_by == "tf" else df
    terms = sorted(rank, key=lambda t: (-rank[t], t))[:k]
    return Vocabulary(
        terms=terms, df={t: df[t] for t in terms}, corpus_size=len(documents)
    )


def tfidf(
    term: str, tokens: Counter, vocabulary: Vocabulary, clamp_idf: bool = False
) -> float:
    """log(1 + f) * log(|D| / (1 + df)), natural logarithms.

    The inverse factor goes negative when a term appears in every document;
    that is kept as-is unless ``clamp_idf`` floors it at zero.
    """
    if term not in vocabulary:
        raise VocabularyError(term)
    f = tokens.get(term, 0)
    if f == 0:
        return 0.0
    idf = math.log(vocabulary.corpus_size / (1 + vocabulary.df[term]))
    if clamp_idf and idf < 0.0:
        idf = 0.0
    return math.log(1 + f) * idf


def keyword_scores(
    document: SubdomainDocument, vocabulary: Vocabulary, clamp_idf: bool = False
) -> np.ndarray:
    tokens = doc_token_counts(document)
    out = np.zeros(len(vocabulary.terms))
    for i, term in enumerate(vocabulary.terms):
        if tokens.get(term):
            out[i] = tfidf(term, tokens, vocabulary, clamp_idf=clamp_idf)
    return out


def engineered(document: SubdomainDocument) -> list[float]:
    """[mean URL length, "&" count, "=" count, "?" count, kind code]."""
    if not document.urls:
        raise ValueError(f"document {document.host} has no URLs")
    total = sum(document.urls.values())
    length = amp = eq = q = 0
    for url, mult in document.urls.items():
        length += len(url) * mult
        amp += url.count("&") * mult
        eq += url.count("=") * mult
        q += url.count("?") * mult
    return [
        length / total,
        float(amp),
        float(eq),
        float(q),
        float(KIND_CODES[document.kind]),
    ]


def assemble_vector(
    document: SubdomainDocument,
    vocabulary: Vocabulary,
    struct_row: np.ndarray,
    clamp_idf: bool = False,
) -> np.ndarray:
    """Concatenate [keywords | engineered | structural] in fixed order."""
    return np.concatenate(
        [
            keyword_scores(document, vocabulary, clamp_idf=clamp_idf),
            np.array(engineered(document)),
            np.asarray(struct_row, dtype=float),
        ]
    )


def feature_names(vocabulary: Vocabulary, struct_columns: list[str]) -> list[str]:
    return (
        [f"kw:{t}" for t in vocabulary.terms]
        + list(ENGINEERED_COLUMNS)
        + list(struct_columns)
    )


def save_vocabulary(vocabulary: Vocabulary) -> bytes:
    lines = [
        "widetrack-vocab\tv1",
        f"corpus_size\t{vocabulary.corpus_size}",
    ]
    lines.extend(f"{t}\t{vocabulary.df[t]}" for t in vocabulary.terms)
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_vocabulary(data: bytes) -> Vocabulary:
    lines = data.decode("utf-8").splitlines()
    if not lines or lines[0] != "widetrack-vocab\tv1":
        raise ValueError("unrecognized vocabulary file")
    corpus_size = int(lines[1].split("\t")[1])
    terms = []
    df = {}
    for line in lines[2:]:
        if not line:
            continue
        term, count = line.split("\t")
        terms.append(term)
        df[term] = int(count)
    return Vocabulary(terms=terms, df=df, corpus_size=corpus_size)
