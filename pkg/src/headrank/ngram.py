"""Context -> next-token probability matrices from n-gram counts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import SparseMatrix, frobenius_norm, svd_randomized
from .spectral import SpectralSummary, summarize


@dataclass
class TokenStream:
    documents: list[np.ndarray]
    vocab_size: int

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        docs = []
        for i, doc in enumerate(self.documents):
            arr = np.asarray(doc, dtype=np.int64).ravel()
            if arr.size == 0:
                raise ValueError(f"document {i} is empty")
            if arr.min() < 0 or arr.max() >= self.vocab_size:
                raise ValueError(f"document {i} has token ids outside [0, {self.vocab_size})")
            docs.append(arr)
        self.documents = docs

    @property
    def n_tokens(self):
        return sum(d.size for d in self.documents)


@dataclass
class NGramCounts:
    """Counts of (context, next token) pairs, contexts sorted lexicographically.

    ``contexts[i]`` is the (n-1)-token context of row i; its next-token
    counts are ``tokens[indptr[i]:indptr[i+1]]`` / ``counts[...]`` with
    tokens increasing.
    """

    n: int
    vocab_size: int
    contexts: np.ndarray
    indptr: np.ndarray
    tokens: np.ndarray
    counts: np.ndarray

    @property
    def total_contexts(self):
        return self.contexts.shape[0]

    @property
    def total_count(self):
        return int(self.counts.sum())

    def context_totals(self) -> np.ndarray:
        if self.total_contexts == 0:
            return np.zeros(0, dtype=np.int64)
        return np.add.reduceat(self.counts, self.indptr[:-1])

    def as_dict(self) -> dict:
        out = {}
        for i, ctx in enumerate(self.contexts):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            out[tuple(int(t) for t in ctx)] = {
                int(t): int(c) for t, c in zip(self.tokens[lo:hi], self.counts[lo:hi])
            }
        return out


def _windows(ts: TokenStream, n, cross_documents):
    docs = [np.concatenate(ts.documents)] if cross_documents else ts.documents
    chunks = [
        np.lib.stride_tricks.sliding_window_view(d, n) for d in docs if d.size >= n
    ]
    if not chunks:
        return np.empty((0, n), dtype=np.int64)
    return np.concatenate(chunks)


def count_ngrams(ts: TokenStream, n=5, cross_documents=False) -> NGramCounts:
    """Count (n-1)-token contexts followed by a token.

    Contexts never span two documents unless ``cross_documents`` is set.
    """
    if n < 2:
        raise ValueError(f"n-gram order must be at least 2, got {n}")
    if not ts.documents:
        raise ValueError("empty token stream")
    grams, counts = np.unique(_windows(ts, n, cross_documents), axis=0, return_counts=True)
    if grams.shape[0] == 0:
        return NGramCounts(
            n, ts.vocab_size, np.empty((0, n - 1), dtype=np.int64),
            np.zeros(1, dtype=np.int64), np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
        )
    ctx = grams[:, :-1]
    new_ctx = np.ones(grams.shape[0], dtype=bool)
    new_ctx[1:] = np.any(ctx[1:] != ctx[:-1], axis=1)
    starts = np.flatnonzero(new_ctx)
    indptr = np.append(starts, grams.shape[0]).astype(np.int64)
    return NGramCounts(n, ts.vocab_size, ctx[starts], indptr, grams[:, -1].copy(), counts.astype(np.int64))


@dataclass
class ContextDistributionMatrix:
    matrix: SparseMatrix
    contexts: np.ndarray
    min_count: int
    total_contexts: int

    @property
    def n_rows(self):
        return self.matrix.rows


def build_context_matrix(c: NGramCounts, min_count=1) -> ContextDistributionMatrix:
    """Row-stochastic matrix of empirical next-token distributions.

    Keeps contexts seen at least ``min_count`` times.
    """
    if c.total_contexts == 0:
        raise ValueError("no n-grams were counted; the token stream is too short")
    totals = c.context_totals()
    keep = np.flatnonzero(totals >= min_count)
    if keep.size == 0:
        raise ValueError(f"no context survives min_count={min_count}")
    lengths = np.diff(c.indptr)[keep]
    indptr = np.zeros(keep.size + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    take = np.flatnonzero(np.repeat(totals >= min_count, np.diff(c.indptr)))
    row_tot = np.repeat(totals[keep], lengths)
    probs = c.counts[take] / row_tot
    m = SparseMatrix(keep.size, c.vocab_size, indptr, c.tokens[take], probs)
    return ContextDistributionMatrix(m, c.contexts[keep], min_count, c.total_contexts)


def context_matrix_from_rows(rows) -> ContextDistributionMatrix:
    """Wrap an explicit dense row-stochastic array (synthetic constructions)."""
    a = np.asarray(rows, dtype=np.float64)
    if np.any(a < 0) or np.any(np.abs(a.sum(axis=1) - 1) > 1e-12):
        raise ValueError("rows must be probability distributions")
    m = SparseMatrix.from_dense(a)
    ctx = np.arange(a.shape[0]).reshape(-1, 1)
    return ContextDistributionMatrix(m, ctx, 1, a.shape[0])


def language_rank_report(m: ContextDistributionMatrix, k, seed=0, oversample=10, power_iters=4):
    """Top-``k`` spectrum and W-error curve of a context matrix.

    The Frobenius norm comes exactly from the stored probabilities, so the
    curve denominator is exact even when the spectrum is truncated.
    Returns ``(summary, svd_result)``.
    """
    full = min(m.matrix.shape)
    if k > full:
        raise ValueError(f"k={k} exceeds min(C, V)={full}")
    res = svd_randomized(m.matrix, k, oversample=oversample, power_iters=power_iters, seed=seed)
    summary: SpectralSummary = summarize(res.singular_values, frobenius_norm(m.matrix), full)
    return summary, res
