"""Empirical checks of the bottleneck bounds on synthetic tasks with a computable optimum."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.stats

from . import synthetic
from .head import FeatureDataset, TrainConfig, evaluate, full_loss_and_grad, rank_sweep
from .linalg import as_dense, best_rank_d, frobenius_norm, svd_dense
from .spectral import tail_norms

GRAD_TOL = 1e-6
GAP_SLACK = 0.02


class NotConvergedError(RuntimeError):
    pass


@dataclass
class SyntheticTask:
    dataset: FeatureDataset
    w_star: np.ndarray
    grad_norm: float
    sigma: np.ndarray = field(init=False)
    planted: np.ndarray | None = None
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sigma = svd_dense(self.w_star, want_factors=False).singular_values

    @property
    def converged(self):
        return self.grad_norm < GRAD_TOL

    def train_loss(self, W):
        X, y = self.dataset.train()
        return evaluate(W, X, y)[0]


def solve_optimal_head(X, y, V, max_iter=20000, tol=GRAD_TOL):
    """Unconstrained minimizer of the mean CE over ``V x d`` heads (L-BFGS).

    Returns ``(W, grad_norm)`` where ``grad_norm`` is the Frobenius norm of
    the gradient of the mean loss at ``W``.
    """
    d = X.shape[1]

    def fun(w):
        loss, g = full_loss_and_grad(w.reshape(V, d), X, y)
        return loss, g.ravel()

    res = scipy.optimize.minimize(
        fun, np.zeros(V * d), jac=True, method="L-BFGS-B",
        options={"maxiter": max_iter, "maxfun": 2 * max_iter, "gtol": tol * 1e-3,
                 "ftol": 0.0, "maxcor": 20},
    )
    W = res.x.reshape(V, d)
    return W, float(np.linalg.norm(fun(res.x)[1]))


def make_task(spec: dict) -> SyntheticTask:
    """Build a task from a JSON-style spec.

    Keys: ``V``, ``d``, ``n``, ``seed`` and optionally ``rank`` (planted
    rank, default full), ``scale``, ``decay``, ``eval_fraction``.
    """
    try:
        V, d, n = int(spec["V"]), int(spec["d"]), int(spec["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"task spec needs integer V, d and n: {exc}") from exc
    if min(V, d, n) < 1 or n < d:
        raise ValueError("task spec needs V, d >= 1 and n >= d")
    ds, W = synthetic.planted_task(
        V, d, n,
        rank=spec.get("rank"),
        scale=float(spec.get("scale", 30.0)),
        decay=float(spec.get("decay", 0.5)),
        eval_fraction=float(spec.get("eval_fraction", 0.1)),
        seed=int(spec.get("seed", 0)),
    )
    X, y = ds.train()
    w_star, gnorm = solve_optimal_head(X, y, V)
    return SyntheticTask(ds, w_star, gnorm, planted=W, spec=dict(spec))


def _require_converged(task):
    if not task.converged:
        raise NotConvergedError(
            f"W* not converged: gradient norm {task.grad_norm:.3e} >= {GRAD_TOL:g}"
        )


@dataclass
class PerturbationProbe:
    direction: np.ndarray
    epsilons: np.ndarray

    def __post_init__(self):
        self.direction = as_dense(self.direction, name="direction")
        self.epsilons = np.asarray(self.epsilons, dtype=np.float64).ravel()
        if abs(frobenius_norm(self.direction) - 1.0) > 1e-12:
            raise ValueError("probe direction must have unit Frobenius norm")
        if np.any(self.epsilons < 0) or np.any(np.diff(self.epsilons) >= 0):
            raise ValueError("epsilons must be non-negative and strictly decreasing")

    @classmethod
    def random(cls, shape, seed, epsilons=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5)):
        m = np.random.default_rng(seed).standard_normal(shape)
        return cls(m / frobenius_norm(m), epsilons)


def per_sample_loss_change(W, M, X, y, eps):
    """``L(W + eps M, x_i, y_i) - L(W, x_i, y_i)`` for each sample.

    Evaluated as ``-eps (Mx)_y + log1p(sum_j p_j expm1(eps (Mx)_j))`` so
    that tiny ``eps`` keep full relative precision.
    """
    z = X @ W.T
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    mz = X @ M.T
    rows = np.arange(y.size)
    return -eps * mz[rows, y] + np.log1p(np.sum(p * np.expm1(eps * mz), axis=1))


def directional_derivative(W, M, X, y):
    """Mean over samples of ``|<grad L_i(W), M>|`` from the analytic gradient."""
    z = X @ W.T
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(y.size), y] -= 1.0
    return float(np.mean(np.abs(np.sum(p * (X @ M.T), axis=1))))


@dataclass
class Lemma1Row:
    eps: float
    delta_loss: float
    ratio: float


def lemma1_probe(task: SyntheticTask, probe: PerturbationProbe) -> list[Lemma1Row]:
    """Mean absolute per-sample loss change along ``W* + eps M``.

    The ratio ``delta / eps`` tends to :func:`directional_derivative` as
    ``eps -> 0``.
    """
    _require_converged(task)
    if probe.direction.shape != task.w_star.shape:
        raise ValueError(f"direction shape {probe.direction.shape} != W* shape {task.w_star.shape}")
    X, y = task.dataset.train()
    rows = []
    for eps in probe.epsilons:
        dl = float(np.mean(np.abs(per_sample_loss_change(task.w_star, probe.direction, X, y, eps))))
        rows.append(Lemma1Row(float(eps), dl, dl / eps if eps > 0 else 0.0))
    return rows


@dataclass
class EymResult:
    d: int
    distance: float
    tail_norm: float
    residual: float


def eym_verify(m, d) -> EymResult:
    """Compare ``||m - best_rank_d(m)||_F`` with the tail singular-value norm."""
    a = as_dense(m)
    approx = best_rank_d(a, d)
    dist = frobenius_norm(a - approx)
    tail = float(tail_norms(svd_dense(a, want_factors=False).singular_values)[d])
    scale = frobenius_norm(a)
    resid = abs(dist - tail) / scale if scale > 0 else abs(dist - tail)
    return EymResult(int(d), dist, tail, resid)


@dataclass
class Theorem1Row:
    d: int
    tail_norm: float
    w_error: float
    loss_star: float
    loss_truncated: float
    loss_trained: float
    best_lr: float
    eval_ce: float

    @property
    def gap_truncated(self):
        return self.loss_truncated - self.loss_star

    @property
    def gap_trained(self):
        return self.loss_trained - self.loss_star


def theorem1_sweep(task: SyntheticTask, ranks, lrs=(1e-2, 2e-2, 5e-2), seeds=(0,),
                   cfg: TrainConfig | None = None):
    """Trained rank-d heads vs the SVD truncation of W*, on the training set.

    Losses are means over training samples. The trained loss per rank is the
    best training loss over the learning-rate grid (the closest surrogate of
    the constrained optimum). Returns ``(rows, sweep_rows)``; the second
    item is the eval-CE table from :func:`rank_sweep`.
    """
    _require_converged(task)
    V, d_feat = task.w_star.shape
    for r in ranks:
        if not 1 <= r <= min(V, d_feat):
            raise ValueError(f"rank {r} outside [1, {min(V, d_feat)}]")
    cells, sweep_rows = rank_sweep(task.dataset, ranks, lrs, seeds, cfg)
    failed = [c for c in cells if c.error]
    if failed:
        raise RuntimeError(f"{len(failed)} sweep cells failed, first: {failed[0].error}")
    loss_star = task.train_loss(task.w_star)
    tails = tail_norms(task.sigma)
    fro = frobenius_norm(task.w_star)
    by_rank = {row.r: row for row in sweep_rows}
    out = []
    for r in ranks:
        mine = [c for c in cells if c.r == r]
        per_lr = {}
        for c in mine:
            per_lr.setdefault(c.lr, []).append(c.train_ce)
        lr_best = min(sorted(per_lr), key=lambda lr: float(np.mean(per_lr[lr])))
        out.append(Theorem1Row(
            d=int(r),
            tail_norm=float(tails[r]),
            w_error=float(tails[r] / fro),
            loss_star=loss_star,
            loss_truncated=task.train_loss(best_rank_d(task.w_star, r)),
            loss_trained=float(np.mean(per_lr[lr_best])),
            best_lr=lr_best,
            eval_ce=by_rank[r].eval_ce,
        ))
    return out, sweep_rows


@dataclass
class Theorem1Check:
    ordering_ok: bool
    lower_ok: bool
    monotone_ok: bool
    spearman: float
    failures: list[str]

    @property
    def passed(self):
        return self.ordering_ok and self.lower_ok and self.monotone_ok


def check_theorem1(rows, slack=GAP_SLACK) -> Theorem1Check:
    """Ordering chain, sign and monotonicity checks over a sweep."""
    rows = sorted(rows, key=lambda r: r.d)
    fails = []
    for r in rows:
        if r.gap_trained < -slack:
            fails.append(f"d={r.d}: gap_trained {r.gap_trained:.4f} below -{slack}")
        if r.loss_trained > r.loss_truncated + slack:
            fails.append(f"d={r.d}: trained loss {r.loss_trained:.4f} exceeds truncated "
                         f"{r.loss_truncated:.4f} + {slack}")
    ordering_ok = not any("exceeds" in f for f in fails)
    lower_ok = not any("below" in f for f in fails)
    monotone_ok = True
    for a, b in zip(rows, rows[1:]):
        if b.gap_trained > a.gap_trained + slack:
            monotone_ok = False
            fails.append(f"gap_trained rises from d={a.d} to d={b.d}")
    rho = float("nan")
    if len(rows) >= 3:
        rho = float(scipy.stats.spearmanr([r.gap_trained for r in rows],
                                          [r.tail_norm for r in rows]).statistic)
    return Theorem1Check(ordering_ok, lower_ok, monotone_ok, rho, fails)


@dataclass
class GapCurve:
    w_error: list[float]
    gap_trained: list[float]
    d: list[int]
    knee_w_error: float | None
    threshold: float


def gap_vs_werror_report(rows, threshold=0.05) -> GapCurve:
    """Loss gap against W-error, sorted by W-error, with the knee flagged.

    The knee is the smallest W-error whose trained gap exceeds ``threshold``.
    """
    rows = sorted(rows, key=lambda r: (r.w_error, r.d))
    knee = None
    if math.isfinite(threshold):
        over = [r.w_error for r in rows if r.gap_trained > threshold]
        knee = min(over) if over else None
    return GapCurve([r.w_error for r in rows], [r.gap_trained for r in rows],
                    [r.d for r in rows], knee, threshold)
