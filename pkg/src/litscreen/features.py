"""Hashed n-gram bag-of-features over title + abstract text.

The featurizer is stateless: no vocabulary is fit, so featurizing one
article never depends on the rest of the corpus and train/serve code paths
are identical.  Tokens are lowercased alphanumeric runs; n-grams are hashed
with MurmurHash3 (seed 0) into a fixed number of buckets.  Text is
truncated to the first ``max_seq_len`` tokens *after* optional
publication-type tags are prepended, keeping the front of the sequence.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import murmurhash3_32

from .corpus import Article

__all__ = [
    "tokenize",
    "FeatureVector",
    "HashingFeaturizer",
    "stack_feature_vectors",
    "LengthStats",
    "corpus_length_stats",
]

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

_TF_SCALINGS = ("raw", "log1p")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens; punctuation and underscores split."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Sparse non-negative feature vector for one article."""

    indices: np.ndarray  # sorted, unique bucket ids
    values: np.ndarray   # term weights, aligned with indices
    dim: int

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def l1(self) -> float:
        return float(self.values.sum())


def stack_feature_vectors(vectors: Sequence[FeatureVector], dim: int) -> sp.csr_matrix:
    """Stack per-article vectors into one CSR matrix, one row per article."""
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    for i, v in enumerate(vectors):
        if v.dim != dim:
            raise ValueError(f"vector dim {v.dim} != expected {dim}")
        indptr[i + 1] = indptr[i] + v.nnz
    if vectors:
        indices = np.concatenate([v.indices for v in vectors])
        data = np.concatenate([v.values for v in vectors])
    else:
        indices = np.zeros(0, dtype=np.int64)
        data = np.zeros(0, dtype=np.float64)
    return sp.csr_matrix((data, indices, indptr), shape=(len(vectors), dim))


class HashingFeaturizer(BaseEstimator, TransformerMixin):
    """Map articles to hashed n-gram count vectors.

    Parameters
    ----------
    max_seq_len : int
        Keep only the first ``max_seq_len`` tokens of the assembled text.
    use_pt_tag : bool
        Prepend publication-type tags to the text before truncation.
    ngram_orders : iterable of int
        N-gram sizes to extract, e.g. ``(1, 2)`` for unigrams and bigrams.
    hash_dim : int
        Number of hash buckets (feature dimensionality).
    tf_scaling : {"raw", "log1p"}
        Use raw term counts or ``log(1 + count)``.

    Instances hold no fitted state; ``fit`` only validates parameters.  The
    same article always maps to the same vector, in and out of batches.
    """

    def __init__(
        self,
        max_seq_len: int = 256,
        use_pt_tag: bool = False,
        ngram_orders: Iterable[int] = (1, 2),
        hash_dim: int = 2**18,
        tf_scaling: str = "raw",
    ) -> None:
        self.max_seq_len = max_seq_len
        self.use_pt_tag = use_pt_tag
        self.ngram_orders = ngram_orders
        self.hash_dim = hash_dim
        self.tf_scaling = tf_scaling

    def _orders(self) -> tuple[int, ...]:
        orders = tuple(sorted(set(int(n) for n in self.ngram_orders)))
        if not orders or orders[0] < 1:
            raise ValueError(f"ngram_orders must be positive ints, got {self.ngram_orders!r}")
        return orders

    def _check_params(self) -> None:
        if int(self.max_seq_len) < 1:
            raise ValueError(f"max_seq_len must be >= 1, got {self.max_seq_len}")
        if int(self.hash_dim) < 2:
            raise ValueError(f"hash_dim must be >= 2, got {self.hash_dim}")
        if self.tf_scaling not in _TF_SCALINGS:
            raise ValueError(
                f"tf_scaling must be one of {_TF_SCALINGS}, got {self.tf_scaling!r}"
            )
        self._orders()

    def fit(self, X=None, y=None) -> "HashingFeaturizer":
        self._check_params()
        return self

    def build_text(self, article: Article) -> list[str]:
        """Token sequence for one article: [pt tags +] title + abstract,
        truncated to the first ``max_seq_len`` tokens."""
        self._check_params()
        tokens: list[str] = []
        if self.use_pt_tag and article.pt_tags:
            tokens.extend(tokenize(" ".join(article.pt_tags)))
        tokens.extend(tokenize(article.title))
        tokens.extend(tokenize(article.abstract))
        return tokens[: int(self.max_seq_len)]

    def _vector_from_tokens(self, tokens: Sequence[str]) -> FeatureVector:
        dim = int(self.hash_dim)
        bucket_ids: list[int] = []
        for n in self._orders():
            if n == 1:
                grams: Iterable[str] = tokens
            else:
                grams = (" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
            for gram in grams:
                h = murmurhash3_32(gram.encode("utf-8"), seed=0, positive=True)
                bucket_ids.append(h % dim)
        if not bucket_ids:
            return FeatureVector(
                indices=np.zeros(0, dtype=np.int64),
                values=np.zeros(0, dtype=np.float64),
                dim=dim,
            )
        indices, counts = np.unique(np.asarray(bucket_ids, dtype=np.int64), return_counts=True)
        values = counts.astype(np.float64)
        if self.tf_scaling == "log1p":
            values = np.log1p(values)
        return FeatureVector(indices=indices, values=values, dim=dim)

    def transform_one(self, article: Article) -> FeatureVector:
        self._check_params()
        return self._vector_from_tokens(self.build_text(article))

    def transform(self, articles: Iterable[Article]) -> sp.csr_matrix:
        self._check_params()
        vectors = [self._vector_from_tokens(self.build_text(a)) for a in articles]
        return stack_feature_vectors(vectors, int(self.hash_dim))


@dataclass(frozen=True)
class LengthStats:
    """Pre-truncation token-length distribution of a corpus."""

    n: int
    mean: float
    max: int
    percentiles: dict[int, int]


def corpus_length_stats(
    articles,
    use_pt_tag: bool = False,
    percentiles: Sequence[int] = (69, 92, 95),
) -> LengthStats:
    """Token counts of the assembled text before any truncation.

    Percentiles use the nearest-rank definition: the p-th percentile is the
    value at rank ``ceil(p/100 * n)`` of the sorted lengths.
    """
    featurizer = HashingFeaturizer(max_seq_len=2**31 - 1, use_pt_tag=use_pt_tag)
    lengths = np.array([len(featurizer.build_text(a)) for a in articles], dtype=np.int64)
    if lengths.size == 0:
        raise ValueError("cannot compute length stats of an empty corpus")
    lengths.sort()
    pct: dict[int, int] = {}
    for p in percentiles:
        if not 0 < p <= 100:
            raise ValueError(f"percentile must lie in (0, 100], got {p}")
        rank = math.ceil(p / 100.0 * lengths.size)
        pct[int(p)] = int(lengths[rank - 1])
    return LengthStats(
        n=int(lengths.size),
        mean=float(lengths.mean()),
        max=int(lengths.max()),
        percentiles=pct,
    )
