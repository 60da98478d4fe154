"""Spectral and rank diagnostics for language-model output heads."""

__version__ = "0.1.0"

from ._backend import active as active_backend  # noqa: E402
from .linalg import SparseMatrix, best_rank_d, svd_dense, svd_randomized  # noqa: E402
from .spectral import singular_entropy, summarize, w_error_curve  # noqa: E402

__all__ = [
    "__version__",
    "active_backend",
    "SparseMatrix",
    "best_rank_d",
    "svd_dense",
    "svd_randomized",
    "singular_entropy",
    "summarize",
    "w_error_curve",
]
