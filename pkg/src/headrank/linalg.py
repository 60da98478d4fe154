"""Dense and randomized SVD, Frobenius norms and optimal low-rank truncation.

Dense matrices are plain 2-D float64 numpy arrays. Sparse matrices use the
row-compressed :class:`SparseMatrix` container below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _backend

JACOBI_MAX_SWEEPS = 60
JACOBI_TOL = 1e-12


class ConvergenceError(RuntimeError):
    pass


def as_dense(m, name="matrix") -> np.ndarray:
    """Validate and return ``m`` as a C-contiguous 2-D float64 array."""
    a = np.ascontiguousarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and column, got {a.shape}")
    if not np.isfinite(a).all():
        bad = np.argwhere(~np.isfinite(a))[0]
        raise ValueError(f"{name} has a non-finite entry at {tuple(int(i) for i in bad)}")
    return a


@dataclass(frozen=True)
class SparseMatrix:
    """Row-compressed (CSR) matrix of 64-bit floats."""

    rows: int
    cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)
        if self.rows < 0 or self.cols < 0:
            raise ValueError("negative shape")
        if indptr.shape != (self.rows + 1,) or indptr[0] != 0:
            raise ValueError("row offsets must have length rows + 1 and start at 0")
        if np.any(np.diff(indptr) < 0):
            raise ValueError("row offsets must be non-decreasing")
        nnz = int(indptr[-1])
        if indices.shape != (nnz,) or data.shape != (nnz,):
            raise ValueError(f"expected {nnz} column indices and values")
        if nnz:
            if indices.min() < 0 or indices.max() >= self.cols:
                raise ValueError("column index out of range")
            # strictly increasing within each row; row starts are exempt
            step = np.diff(indices)
            starts = np.zeros(nnz - 1, dtype=bool)
            inner = indptr[1:-1]
            starts[inner[(inner > 0) & (inner < nnz)] - 1] = True
            if np.any((step <= 0) & ~starts):
                raise ValueError("column indices must be strictly increasing within each row")
            if not np.isfinite(data).all():
                raise ValueError("sparse matrix has non-finite values")

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self):
        return int(self.indptr[-1])

    @classmethod
    def from_dense(cls, m) -> SparseMatrix:
        a = np.asarray(m, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("expected a 2-D array")
        r, c = np.nonzero(a)
        indptr = np.zeros(a.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=a.shape[0]), out=indptr[1:])
        return cls(a.shape[0], a.shape[1], indptr, c, a[r, c])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        row_of = np.repeat(np.arange(self.rows), np.diff(self.indptr))
        out[row_of, self.indices] = self.data
        return out

    def matmat(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        return _backend.csr_matmat(self.indptr, self.indices, self.data, x)

    def rmatmat(self, x) -> np.ndarray:
        """``self.T @ x``."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        return _backend.csr_rmatmat(self.indptr, self.indices, self.data, x, self.cols)

    def row_sums(self) -> np.ndarray:
        sums = np.zeros(self.rows)
        nonempty = np.diff(self.indptr) > 0
        if self.nnz:
            sums[nonempty] = np.add.reduceat(self.data, self.indptr[:-1][nonempty])
        return sums


@dataclass
class SvdResult:
    singular_values: np.ndarray
    left_vectors: np.ndarray | None = None
    right_vectors: np.ndarray | None = None
    truncated: bool = False
    retained: int = 0
    warnings: list[str] = field(default_factory=list)

    def reconstruct(self) -> np.ndarray:
        if self.left_vectors is None or self.right_vectors is None:
            raise ValueError("factors were not computed")
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


def _complete_columns(u, missing):
    """Replace columns flagged in ``missing`` by an orthonormal completion."""
    keep = u[:, ~missing]
    q, _ = np.linalg.qr(np.hstack([keep, np.eye(u.shape[0])]))
    u = u.copy()
    u[:, missing] = q[:, keep.shape[1] : keep.shape[1] + int(missing.sum())]
    return u


def svd_dense(m, want_factors=True, *, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS) -> SvdResult:
    """Full SVD by cyclic one-sided Jacobi.

    Returns ``min(rows, cols)`` singular values in descending order. Left and
    right factors have orthonormal columns; left columns belonging to zero
    singular values are an arbitrary orthonormal completion.
    """
    a = as_dense(m)
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T
    n = a.shape[1]
    # power-of-two scaling to a unit-order max entry keeps the squared
    # column norms clear of overflow and underflow, and is exact
    peak = float(np.abs(a).max())
    scale = math.ldexp(1.0, math.frexp(peak)[1]) if peak > 0.0 else 1.0
    g = np.array(a.T / scale, dtype=np.float64, order="C")
    vt = np.eye(n) if want_factors else np.empty((n, 0))
    sweeps = _backend.jacobi_columns(g, vt, tol, max_sweeps)
    if sweeps < 0:
        raise ConvergenceError(
            f"one-sided Jacobi did not converge within the cap of {max_sweeps} sweeps"
        )
    sigma = np.sqrt(np.einsum("ij,ij->i", g, g))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    res = SvdResult(singular_values=sigma * scale, retained=n)
    if want_factors:
        # numerically zero values get an orthonormal completion, not g / sigma
        zero = sigma <= max(a.shape) * np.finfo(np.float64).eps * sigma[0]
        u = g[order].T / np.where(zero, 1.0, sigma)
        if zero.any():
            u = _complete_columns(u, zero)
        v = np.ascontiguousarray(vt[order].T)
        if transposed:
            u, v = v, u
        res.left_vectors, res.right_vectors = u, v
    return res


def _operator(m):
    if isinstance(m, SparseMatrix):
        return m.shape, m.matmat, m.rmatmat
    a = as_dense(m)
    return a.shape, a.__matmul__, lambda x: a.T @ x


def _tall_qr(y):
    """Thin QR of a tall matrix: CholeskyQR2, Householder when ill-conditioned."""
    l = y.shape[1]
    try:
        q, r = y, np.eye(l)
        for _ in range(2):
            c = np.linalg.cholesky(q.T @ q)
            q = scipy.linalg.solve_triangular(c, q.T, lower=True).T
            r = c.T @ r
        if np.abs(q.T @ q - np.eye(l)).max() < 1e-12:
            return q, r
    except np.linalg.LinAlgError:
        pass
    return np.linalg.qr(y)


def svd_randomized(m, k, oversample=10, power_iters=2, seed=0, want_factors=False) -> SvdResult:
    """Top-``k`` SVD by randomized subspace iteration.

    Works on a :class:`SparseMatrix` (or a dense array) through products
    only. The sketch lives on the shorter side of the matrix; the subspace
    after ``power_iters`` extra passes equals that of the Gaussian range
    finder with the same number of power iterations. ``k + oversample``
    beyond ``min(rows, cols)`` is clamped and the clamp is reported in
    ``warnings``.
    """
    (rows, cols), mul, rmul = _operator(m)
    full = min(rows, cols)
    if not 0 <= k <= full:
        raise ValueError(f"k={k} outside [0, min(rows, cols)={full}]")
    if oversample < 0 or power_iters < 0:
        raise ValueError("oversample and power_iters must be non-negative")
    warnings = []
    width = k + oversample
    if width > full:
        warnings.append(
            f"k + oversample = {width} exceeds min(rows, cols) = {full}; clamped to {full}"
        )
        width = full
    wide = rows < cols
    to_long, to_short = (rmul, mul) if wide else (mul, rmul)
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((full, width))
    for _ in range(power_iters + 1):
        q, _ = np.linalg.qr(to_short(to_long(q)))
    qy, r = _tall_qr(to_long(q))
    inner = svd_dense(r, want_factors=want_factors)
    res = SvdResult(
        singular_values=inner.singular_values[:k].copy(),
        truncated=k < full,
        retained=k,
        warnings=warnings,
    )
    if want_factors:
        left = qy @ inner.left_vectors[:, :k]
        right = q @ inner.right_vectors[:, :k]
        res.left_vectors, res.right_vectors = (right, left) if wide else (left, right)
    return res


def best_rank_d(m, d) -> np.ndarray:
    """Optimal rank-``d`` approximation in Frobenius norm (SVD truncation)."""
    a = as_dense(m)
    full = min(a.shape)
    if not 0 <= d <= full:
        raise ValueError(f"rank d={d} outside [0, min(rows, cols)={full}]")
    res = svd_dense(a)
    return (res.left_vectors[:, :d] * res.singular_values[:d]) @ res.right_vectors[:, :d].T


def frobenius_norm(m) -> float:
    if isinstance(m, SparseMatrix):
        vals = m.data
    else:
        vals = as_dense(m).ravel()
    scale = np.abs(vals).max() if vals.size else 0.0
    if scale == 0.0:
        return 0.0
    scaled = vals / scale
    return float(scale * np.sqrt(np.dot(scaled, scaled)))
