import math

import numpy as np
import pytest

from headrank.head import TrainConfig
from headrank.theory import (
    NotConvergedError,
    PerturbationProbe,
    SyntheticTask,
    check_theorem1,
    directional_derivative,
    eym_verify,
    gap_vs_werror_report,
    lemma1_probe,
    make_task,
    per_sample_loss_change,
    solve_optimal_head,
    theorem1_sweep,
)
from headrank import synthetic


@pytest.fixture(scope="module")
def small_task():
    return make_task({"V": 12, "d": 6, "n": 3000, "seed": 0})


def test_eym_cases(rng):
    r = eym_verify(np.diag([3.0, 1.0]), 1)
    assert r.distance == pytest.approx(1.0, abs=1e-15) and r.residual < 1e-15
    assert eym_verify(rng.standard_normal((40, 25)), 5).residual < 1e-8
    assert eym_verify(rng.standard_normal((8, 5)), 5).distance < 1e-13


def test_optimum_converges(small_task):
    assert small_task.converged
    assert np.all(np.diff(small_task.sigma) <= 0)


def test_one_hot_optimum_is_empirical_conditional():
    ds, cond = synthetic.one_hot_task(4, 5, per_context=60, seed=1)
    W, g = solve_optimal_head(ds.features, ds.labels, 5)
    assert g < 1e-6
    z = W.T - W.T.max(axis=1, keepdims=True)
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(p, cond, atol=1e-6)


def test_make_task_errors():
    with pytest.raises(ValueError):
        make_task({"V": 3})
    with pytest.raises(ValueError):
        make_task({"V": 3, "d": 10, "n": 5})


def test_probe_validation():
    with pytest.raises(ValueError, match="unit"):
        PerturbationProbe(np.ones((2, 2)), [1e-1])
    with pytest.raises(ValueError, match="decreasing"):
        PerturbationProbe(np.eye(1), [1e-3, 1e-2])


def test_lemma1_ratio_stabilises(small_task):
    for k in range(5):
        probe = PerturbationProbe.random(small_task.w_star.shape, k)
        rows = lemma1_probe(small_task, probe)
        a, b = rows[-2].ratio, rows[-1].ratio
        assert abs(a - b) / ((a + b) / 2) < 0.05
        X, y = small_task.dataset.train()
        oracle = directional_derivative(small_task.w_star, probe.direction, X, y)
        assert b == pytest.approx(oracle, rel=1e-3)
        small = [r.ratio for r in rows if r.eps <= 1e-3]
        assert max(small) / min(small) < 1.1


def test_lemma1_invisible_direction():
    # last feature is always zero, so a direction on that column is unseen
    ds, _ = synthetic.planted_task(6, 4, 800, seed=2)
    ds.features[:, -1] = 0.0
    X, y = ds.train()
    W, g = solve_optimal_head(X, y, 6)
    task = SyntheticTask(ds, W, g)
    M = np.zeros_like(W)
    M[:, -1] = 1.0 / math.sqrt(6)
    rows = lemma1_probe(task, PerturbationProbe(M, [1e-1, 1e-3, 0.0]))
    assert all(r.delta_loss == 0.0 for r in rows)


def test_zero_eps_is_zero(small_task):
    X, y = small_task.dataset.train()
    M = PerturbationProbe.random(small_task.w_star.shape, 0).direction
    assert np.all(per_sample_loss_change(small_task.w_star, M, X, y, 0.0) == 0.0)


def test_not_converged_rejected(small_task):
    bad = SyntheticTask(small_task.dataset, small_task.w_star, grad_norm=1.0)
    with pytest.raises(NotConvergedError):
        lemma1_probe(bad, PerturbationProbe.random(bad.w_star.shape, 0))


@pytest.fixture(scope="module")
def low_rank_sweep():
    task = make_task({"V": 30, "d": 12, "n": 8000, "seed": 1, "rank": 3})
    rows, _ = theorem1_sweep(task, [1, 2, 3, 6, 12], cfg=TrainConfig(epochs=20))
    return task, rows


def test_theorem1_ordering(low_rank_sweep):
    _, rows = low_rank_sweep
    check = check_theorem1(rows)
    assert check.passed, check.failures
    full = rows[-1]
    assert full.gap_trained <= 0.02 and full.gap_truncated <= 0.02


def test_theorem1_rank_range(small_task):
    with pytest.raises(ValueError, match="outside"):
        theorem1_sweep(small_task, [7])


def test_gap_curve(low_rank_sweep):
    _, rows = low_rank_sweep
    curve = gap_vs_werror_report(rows)
    assert curve.w_error == sorted(curve.w_error)
    assert curve.knee_w_error is None or curve.knee_w_error > 0
    assert gap_vs_werror_report(rows, threshold=math.inf).knee_w_error is None
