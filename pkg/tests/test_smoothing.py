import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from txrecords.oracles import oracle_loess_at
from txrecords.smoothing import loess_smooth, smoothed


def test_linear_reproduced():
    x = np.arange(1, 65, dtype=float)
    y = 0.3 * x - 2
    np.testing.assert_allclose(loess_smooth(x, y), y, atol=1e-10)


def test_constant():
    x = np.arange(10, dtype=float)
    np.testing.assert_allclose(loess_smooth(x, np.full(10, 4.2)), 4.2, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(8, 60), st.integers(0, 10_000), st.floats(0.3, 1.0))
def test_matches_weighted_least_squares(n, seed, span):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 10, n))
    if np.any(np.diff(x) <= 1e-6):
        return
    y = rng.normal(size=n)
    if span * n < 3:
        return
    out = loess_smooth(x, y, span)
    for i in (n // 3, n // 2):
        assert out[i] == pytest.approx(oracle_loess_at(x, y, i, span), abs=1e-8)


def test_errors_and_nan():
    with pytest.raises(ValueError):
        loess_smooth([1.0, 2.0], [1.0, 2.0])
    x = np.arange(10, dtype=float)
    y = x.copy()
    y[3] = np.nan
    s = smoothed(x, y)
    assert np.isfinite(s.smooth[np.isfinite(y)]).all()
