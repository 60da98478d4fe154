"""Synthetic corpora, context matrices and feature datasets with known structure."""

from __future__ import annotations

import numpy as np

from .head import FeatureDataset
from .ngram import TokenStream


def planted_weight(V, d, rank, scale, seed, decay=0.5):
    """``V x d`` matrix of the given rank with singular values from ``scale``
    down to ``scale * decay`` (linearly spaced) and Haar-random factors."""
    if not 1 <= rank <= min(V, d):
        raise ValueError(f"rank {rank} outside [1, min(V, d)={min(V, d)}]")
    rng = np.random.default_rng(seed)
    u, _ = np.linalg.qr(rng.standard_normal((V, rank)))
    w, _ = np.linalg.qr(rng.standard_normal((d, rank)))
    sigma = scale * np.linspace(1.0, decay, rank)
    return (u * sigma) @ w.T


def sample_labels(W, X, rng):
    z = X @ W.T
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random((X.shape[0], 1))
    return np.minimum((np.cumsum(p, axis=1) < u).sum(axis=1), W.shape[0] - 1)


def planted_task(V, d, n, rank=None, scale=30.0, decay=0.5, eval_fraction=0.1, seed=0):
    """Gaussian features (``E||x||^2 = 1``) with labels drawn from
    ``softmax(W x)`` for a planted head ``W`` of the given rank.

    Returns ``(dataset, W)``.
    """
    rank = min(V, d) if rank is None else rank
    rng = np.random.default_rng(seed)
    W = planted_weight(V, d, rank, scale, rng.integers(2**63), decay)
    X = rng.standard_normal((n, d)) / np.sqrt(d)
    y = sample_labels(W, X, rng)
    ds = FeatureDataset(X, y, V).with_random_split(eval_fraction, rng.integers(2**63))
    return ds, W


def one_hot_task(n_contexts, V, per_context, alpha=1.0, seed=0):
    """One-hot context features with labels drawn from per-context Dirichlet
    distributions; every (context, token) pair is observed at least once so
    the empirical conditionals have full support.

    Returns ``(dataset, empirical_conditionals)``.
    """
    if per_context < V:
        raise ValueError("per_context must be at least V for full support")
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.full(V, alpha), size=n_contexts)
    ctx, lab = [], []
    for c in range(n_contexts):
        extra = rng.choice(V, size=per_context - V, p=probs[c])
        lab.append(np.concatenate([np.arange(V), extra]))
        ctx.append(np.full(per_context, c))
    ctx, lab = np.concatenate(ctx), np.concatenate(lab)
    counts = np.zeros((n_contexts, V))
    np.add.at(counts, (ctx, lab), 1)
    X = np.eye(n_contexts)[ctx]
    return FeatureDataset(X, lab, V), counts / counts.sum(axis=1, keepdims=True)


def zipf_corpus(n_tokens, V, n_docs=1000, exponent=1.0, seed=0) -> TokenStream:
    """Unigram Zipfian token stream split into documents at random points."""
    rng = np.random.default_rng(seed)
    p = 1.0 / np.arange(1, V + 1) ** exponent
    p /= p.sum()
    tokens = rng.choice(V, size=n_tokens, p=p)
    cuts = np.sort(rng.choice(np.arange(1, n_tokens), size=n_docs - 1, replace=False))
    return TokenStream(np.split(tokens, cuts), V)


def markov_corpus(n_tokens, V, n_docs=100, concentration=0.1, seed=0) -> TokenStream:
    """First-order Markov chain text; gives n-gram matrices nontrivial spectra."""
    rng = np.random.default_rng(seed)
    trans = rng.dirichlet(np.full(V, concentration), size=V)
    cdf = np.cumsum(trans, axis=1)
    tokens = np.empty(n_tokens, dtype=np.int64)
    tokens[0] = rng.integers(V)
    u = rng.random(n_tokens)
    for i in range(1, n_tokens):
        tokens[i] = min(int(np.searchsorted(cdf[tokens[i - 1]], u[i])), V - 1)
    cuts = np.sort(rng.choice(np.arange(1, n_tokens), size=n_docs - 1, replace=False))
    return TokenStream(np.split(tokens, cuts), V)


def mixture_rows(C, V, rank, seed=0, concentration=0.5):
    """``C x V`` row-stochastic matrix whose rows are convex mixtures of
    ``rank`` base distributions (so its rank is at most ``rank``)."""
    rng = np.random.default_rng(seed)
    base = rng.dirichlet(np.full(V, concentration), size=rank)
    mix = rng.dirichlet(np.ones(rank), size=C)
    rows = mix @ base
    return rows / rows.sum(axis=1, keepdims=True)
