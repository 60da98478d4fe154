import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from headrank.spectral import (
    singular_entropy,
    spectrum_normalize,
    summarize,
    tail_norms,
    w_error_curve,
)

spectra = arrays(np.float64, st.integers(1, 40), elements=st.one_of(st.just(0.0), st.floats(1e-100, 1e6))).filter(
    lambda s: s.sum() > 0
)


def test_entropy_hand_case():
    assert singular_entropy([3.0, 1.0]) == pytest.approx(0.13081203594113694, abs=1e-12)


def test_entropy_uniform_and_spike():
    assert abs(singular_entropy(np.full(37, 2.5))) < 1e-12
    for n in (2, 10, 1000):
        s = np.zeros(n)
        s[0] = 4.0
        assert abs(singular_entropy(s) - math.log(n)) < 1e-9


def test_entropy_zero_spectrum():
    with pytest.raises(ValueError, match="all-zero spectrum"):
        singular_entropy(np.zeros(4))


@pytest.mark.parametrize("bad", [[], [1.0, -1.0], [np.nan], [np.inf, 1.0]])
def test_entropy_rejects(bad):
    with pytest.raises(ValueError):
        singular_entropy(bad)


@settings(max_examples=100, deadline=None)
@given(spectra, st.integers(-40, 40))
def test_entropy_exact_power_of_two_scaling(s, e):
    assert singular_entropy(s * 2.0**e) == singular_entropy(s)


@settings(max_examples=100, deadline=None)
@given(spectra, st.floats(1e-3, 1e3))
def test_entropy_scale_invariance(s, c):
    assert abs(singular_entropy(s * c) - singular_entropy(s)) <= 1e-13


@settings(max_examples=100, deadline=None)
@given(spectra)
def test_entropy_bounds(s):
    h = singular_entropy(s)
    assert 0.0 <= h <= math.log(s.size) + 1e-12


def test_normalize():
    np.testing.assert_array_equal(spectrum_normalize([4.0, 2.0, 1.0]), [1.0, 0.5, 0.25])
    with pytest.raises(ValueError):
        spectrum_normalize([0.0, 0.0])


def test_tail_norms():
    np.testing.assert_allclose(tail_norms([3.0, 4.0]), [5.0, 4.0, 0.0])


def test_w_error_hand_case():
    c = w_error_curve([3.0, 1.0], math.sqrt(10.0))
    np.testing.assert_allclose(c.w_error, [1.0, 1 / math.sqrt(10.0), 0.0], atol=1e-15)
    assert not c.is_lower_bound.any()


@settings(max_examples=100, deadline=None)
@given(spectra)
def test_w_error_monotone_in_unit_interval(s):
    s = np.sort(s)[::-1]
    c = w_error_curve(s, float(np.sqrt(np.sum(s * s))))
    assert c.w_error[0] == pytest.approx(1.0)
    assert c.w_error[-1] == 0.0
    assert np.all(np.diff(c.w_error) <= 0)
    assert np.all((0 <= c.w_error) & (c.w_error <= 1))


def test_truncated_flags_lower_bound():
    c = w_error_curve([3.0, 2.0], fro_norm=4.0, full_rank=5)
    assert c.is_lower_bound.all()
    complete = w_error_curve([3.0, 2.0], fro_norm=math.sqrt(13.0), full_rank=5)
    assert not complete.is_lower_bound.any()


def test_w_error_rejects_inconsistent_norm():
    with pytest.raises(ValueError, match="exceeds"):
        w_error_curve([3.0, 4.0], 1.0)
    with pytest.raises(ValueError):
        w_error_curve([1.0], 0.0)


def test_summarize_json():
    s = summarize([3.0, 1.0], math.sqrt(10.0))
    out = s.to_json()
    assert out["full_rank"] == 2 and not out["truncated"]
    assert out["sigma_max"] == 3.0
