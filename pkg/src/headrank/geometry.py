"""Anisotropy (mean pairwise cosine similarity) of representation sets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import as_dense


@dataclass
class RepresentationSet:
    vectors: np.ndarray
    layer_id: str = ""
    checkpoint_id: str = ""
    sequence_ids: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = as_dense(self.vectors, name=f"representations {self.label}")
        if self.sequence_ids is not None:
            self.sequence_ids = np.asarray(self.sequence_ids)
            if self.sequence_ids.shape != (self.vectors.shape[0],):
                raise ValueError(f"{self.label}: one sequence id per vector required")

    @property
    def label(self):
        return f"{self.checkpoint_id}/{self.layer_id}"

    @property
    def n(self):
        return self.vectors.shape[0]


def _unit_rows(vectors, label=""):
    norms = np.linalg.norm(vectors, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(
            f"{label}: row {int(zero[0])} has zero norm; filter zero vectors before "
            "computing anisotropy"
        )
    return vectors / norms[:, None]


def _sq_norm(v):
    # same reduction as the per-row norms below, so scalings commute exactly
    return float((v * v).sum(axis=-1))


def anisotropy(h, exclude_same_sequence=False) -> float:
    """Mean cosine similarity over ordered pairs ``i != j``.

    Uses ``sum_{i!=j} cos(h_i, h_j) = ||sum_i u_i||^2 - n`` with ``u_i`` the
    unit-normalized rows. ``n`` is taken as ``sum_i ||u_i||^2`` and the
    result is divided by the mean ``||u_i||^2`` so that rounding in the
    normalization cancels (identical directions give exactly 1). With
    ``exclude_same_sequence`` only pairs drawn from different sequences
    count.
    """
    if not isinstance(h, RepresentationSet):
        h = RepresentationSet(h)
    n = h.n
    if n < 2:
        raise ValueError(f"{h.label}: anisotropy needs at least 2 vectors, got {n}")
    u = _unit_rows(h.vectors, h.label)
    sq = (u * u).sum(axis=-1)
    pair_sum = _sq_norm(u.sum(axis=0)) - math.fsum(sq)
    pairs = n * n - n
    if exclude_same_sequence:
        if h.sequence_ids is None:
            raise ValueError(f"{h.label}: sequence ids required to exclude same-sequence pairs")
        for seq in np.unique(h.sequence_ids):
            rows = h.sequence_ids == seq
            k = int(rows.sum())
            pair_sum -= _sq_norm(u[rows].sum(axis=0)) - math.fsum(sq[rows])
            pairs -= k * k - k
        if pairs == 0:
            raise ValueError(f"{h.label}: all vectors come from one sequence")
    return float(pair_sum / (pairs * (math.fsum(sq) / n)))


def anisotropy_naive(vectors) -> float:
    """O(n^2) pairwise reference implementation."""
    v = np.asarray(vectors, dtype=np.float64)
    n = v.shape[0]
    norms = [math.sqrt(_sq_norm(row)) for row in v]
    acc = []
    for i in range(n):
        for j in range(n):
            if i != j:
                acc.append(float(np.dot(v[i], v[j])) / (norms[i] * norms[j]))
    return math.fsum(acc) / (n * n - n)


@dataclass
class AnisotropyRow:
    checkpoint_id: str
    layer_id: str
    n: int
    anisotropy: float


def anisotropy_sweep(dumps, exclude_same_sequence=False) -> list[AnisotropyRow]:
    """One row per representation set, in input order."""
    rows = []
    for h in dumps:
        try:
            value = anisotropy(h, exclude_same_sequence=exclude_same_sequence)
        except ValueError as exc:
            raise ValueError(f"anisotropy failed for {h.label}: {exc}") from exc
        rows.append(AnisotropyRow(h.checkpoint_id, h.layer_id, h.n, value))
    return rows


def subsample(h: RepresentationSet, size, seed) -> RepresentationSet:
    """Uniform sample of ``size`` rows without replacement (all rows if fewer)."""
    if size is None or size >= h.n:
        return h
    idx = np.sort(np.random.default_rng(seed).choice(h.n, size=size, replace=False))
    seqs = None if h.sequence_ids is None else h.sequence_ids[idx]
    return RepresentationSet(h.vectors[idx], h.layer_id, h.checkpoint_id, seqs)
