"""Rank-constrained linear LM heads ``W = A @ B`` trained on frozen features."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .linalg import as_dense

_EVAL_CHUNK = 8192


class DivergenceError(RuntimeError):
    def __init__(self, step, loss):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


@dataclass
class FeatureDataset:
    features: np.ndarray
    labels: np.ndarray
    vocab_size: int
    is_eval: np.ndarray | None = None

    def __post_init__(self):
        self.features = as_dense(self.features, name="features")
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got {self.labels.size}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.vocab_size):
            raise ValueError(f"labels must lie in [0, {self.vocab_size})")
        if self.is_eval is None:
            self.is_eval = np.zeros(n, dtype=bool)
        self.is_eval = np.asarray(self.is_eval, dtype=bool)
        if self.is_eval.shape != (n,):
            raise ValueError("split tags must have one entry per sample")

    @property
    def dim(self):
        return self.features.shape[1]

    def train(self):
        keep = ~self.is_eval
        return self.features[keep], self.labels[keep]

    def eval(self):
        return self.features[self.is_eval], self.labels[self.is_eval]

    def with_random_split(self, eval_fraction, seed) -> FeatureDataset:
        n = self.features.shape[0]
        n_eval = int(round(eval_fraction * n))
        tags = np.zeros(n, dtype=bool)
        tags[np.random.default_rng(seed).permutation(n)[:n_eval]] = True
        return replace(self, is_eval=tags)


@dataclass
class RankConstrainedHead:
    A: np.ndarray
    B: np.ndarray
    init_seed: int | None = None

    @property
    def r(self):
        return self.A.shape[1]

    def weight(self) -> np.ndarray:
        return self.A @ self.B


@dataclass
class TrainConfig:
    lr: float = 1e-2
    warmup_frac: float = 0.01
    schedule: str = "cosine"
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.warmup_frac < 1:
            raise ValueError("warmup_frac must lie in [0, 1)")

    def lr_at(self, step, total_steps):
        """Linear warmup to ``lr`` then cosine decay to zero (or constant)."""
        warm = int(self.warmup_frac * total_steps)
        if step < warm:
            return self.lr * (step + 1) / warm
        if self.schedule == "constant":
            return self.lr
        progress = (step - warm) / max(1, total_steps - warm)
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * progress))

    def to_json(self):
        return asdict(self)


@dataclass
class TrainReport:
    losses: list[float]
    train_ce: float
    eval_ce: float
    eval_acc: float
    lr: float
    steps: int
    head: RankConstrainedHead | None = None
    weight: np.ndarray | None = field(default=None, repr=False)


def cross_entropy(logits, y) -> float:
    """``-log softmax(logits)[y]`` with max-subtraction."""
    z = np.asarray(logits, dtype=np.float64).ravel()
    if not np.isfinite(z).all():
        raise ValueError("logits must be finite")
    if not 0 <= y < z.size:
        raise ValueError(f"label {y} outside [0, {z.size})")
    zmax = z.max()
    return float(zmax + math.log(np.exp(z - zmax).sum()) - z[y])


def _softmax_xent(z, y):
    """Mean CE and (probabilities - onehot) / n for a batch of logits."""
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1)
    rows = np.arange(y.size)
    loss = float(np.mean(np.log(s) - z[rows, y]))
    g = e / s[:, None]
    g[rows, y] -= 1.0
    g /= y.size
    return loss, g


def head_loss_and_grads(A, B, X, y):
    """Mean cross-entropy of ``softmax(X B^T A^T)`` and its gradients."""
    h = X @ B.T
    loss, g = _softmax_xent(h @ A.T, y)
    return loss, g.T @ h, (g @ A).T @ X


def full_loss_and_grad(W, X, y):
    loss, g = _softmax_xent(X @ W.T, y)
    return loss, g.T @ X


def evaluate(W, X, y):
    """Mean CE and accuracy (argmax ties go to the lowest token id)."""
    if y.size == 0:
        return float("nan"), float("nan")
    total = 0.0
    hits = 0
    for lo in range(0, y.size, _EVAL_CHUNK):
        xs, ys = X[lo : lo + _EVAL_CHUNK], y[lo : lo + _EVAL_CHUNK]
        z = xs @ W.T
        hits += int(np.sum(np.argmax(z, axis=1) == ys))
        z = z - z.max(axis=1, keepdims=True)
        total += float(np.sum(np.log(np.exp(z).sum(axis=1)) - z[np.arange(ys.size), ys]))
    return total / y.size, hits / y.size


def init_head(V, d, r, seed) -> RankConstrainedHead:
    """Factors with i.i.d. N(0, 1) entries."""
    if not 1 <= r <= d:
        raise ValueError(f"inner rank r={r} must lie in [1, d={d}]")
    if V < 1:
        raise ValueError("vocabulary size must be positive")
    rng = np.random.default_rng(seed)
    return RankConstrainedHead(rng.standard_normal((V, r)), rng.standard_normal((r, d)), seed)


def _optimize(params, loss_and_grads, X, y, cfg: TrainConfig):
    n = y.size
    if n == 0:
        raise ValueError("empty training split")
    per_epoch = -(-n // cfg.batch_size)
    total = per_epoch * cfg.epochs
    rng = np.random.default_rng(cfg.seed)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    losses = []
    step = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        acc = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            loss, *grads = loss_and_grads(*params, X[idx], y[idx])
            if not math.isfinite(loss):
                raise DivergenceError(step, loss)
            acc += loss * idx.size
            eta = cfg.lr_at(step, total)
            step += 1
            if cfg.optimizer == "sgd":
                for p, g in zip(params, grads):
                    p -= eta * g
                continue
            c1 = 1.0 - cfg.beta1**step
            c2 = 1.0 - cfg.beta2**step
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= cfg.beta1
                mi += (1.0 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1.0 - cfg.beta2) * (g * g)
                p -= eta * (mi / c1) / (np.sqrt(vi / c2) + cfg.eps)
        losses.append(acc / n)
        if not all(np.isfinite(p).all() for p in params):
            raise DivergenceError(step, float("nan"))
    return losses, step


def train_head(ds: FeatureDataset, head: RankConstrainedHead, cfg: TrainConfig) -> TrainReport:
    """Mini-batch training of both factors on the train split.

    The input head is left untouched; the trained copy is on the report.
    """
    if head.B.shape[1] != ds.dim:
        raise ValueError(f"head expects {head.B.shape[1]} features, dataset has {ds.dim}")
    if head.A.shape[0] != ds.vocab_size:
        raise ValueError(f"head has {head.A.shape[0]} outputs, vocabulary is {ds.vocab_size}")
    A, B = head.A.copy(), head.B.copy()
    X, y = ds.train()
    losses, steps = _optimize([A, B], head_loss_and_grads, X, y, cfg)
    W = A @ B
    train_ce, _ = evaluate(W, X, y)
    eval_ce, eval_acc = evaluate(W, *ds.eval())
    return TrainReport(losses, train_ce, eval_ce, eval_acc, cfg.lr, steps,
                       head=RankConstrainedHead(A, B, head.init_seed), weight=W)


def train_full_head(ds: FeatureDataset, cfg: TrainConfig, init=None) -> TrainReport:
    """Unfactored ``V x d`` head, zero-initialized unless ``init`` is given."""
    W = np.zeros((ds.vocab_size, ds.dim)) if init is None else as_dense(init).copy()
    X, y = ds.train()
    losses, steps = _optimize([W], full_loss_and_grad, X, y, cfg)
    train_ce, _ = evaluate(W, X, y)
    eval_ce, eval_acc = evaluate(W, *ds.eval())
    return TrainReport(losses, train_ce, eval_ce, eval_acc, cfg.lr, steps, weight=W)


@dataclass
class SweepCell:
    r: int
    lr: float
    seed: int
    eval_ce: float = float("nan")
    eval_acc: float = float("nan")
    train_ce: float = float("nan")
    error: str | None = None
    report: TrainReport | None = field(default=None, repr=False)


@dataclass
class SweepRow:
    r: int
    best_lr: float
    eval_ce: float
    eval_acc: float
    train_ce: float


def rank_sweep(ds: FeatureDataset, ranks, lrs, seeds=(0,), cfg: TrainConfig | None = None,
               keep_reports=False):
    """Train one head per (rank, learning rate, seed) cell.

    For every rank, the learning rate with the lowest mean eval CE over
    seeds is kept (ties go to the smaller rate). Failed cells are recorded
    with their error and skipped. Returns ``(cells, rows)``.
    """
    cfg = cfg or TrainConfig()
    cells = []
    for r in ranks:
        for lr in lrs:
            for seed in seeds:
                cell = SweepCell(int(r), float(lr), int(seed))
                try:
                    head = init_head(ds.vocab_size, ds.dim, int(r), seed)
                    rep = train_head(ds, head, replace(cfg, lr=float(lr), seed=int(seed)))
                except (ValueError, DivergenceError) as exc:
                    cell.error = str(exc)
                else:
                    cell.eval_ce, cell.eval_acc, cell.train_ce = rep.eval_ce, rep.eval_acc, rep.train_ce
                    if keep_reports:
                        cell.report = rep
                cells.append(cell)
    rows = []
    for r in ranks:
        best = None
        for lr in sorted(set(float(x) for x in lrs)):
            ok = [c for c in cells if c.r == r and c.lr == lr and c.error is None]
            if len(ok) != len(seeds):
                continue
            score = float(np.mean([c.eval_ce for c in ok]))
            if best is None or score < best.eval_ce:
                best = SweepRow(int(r), lr, score, float(np.mean([c.eval_acc for c in ok])),
                                float(np.mean([c.train_ce for c in ok])))
        if best is not None:
            rows.append(best)
    return cells, rows
