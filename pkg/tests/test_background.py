import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LinearRegression

from stempeaks.background import (
    BackgroundRegressor, SingularDesignError, background_at, bin_averages, fit_background_regression,
    global_rate, window_average, window_sums,
)
from stempeaks.tags import CountTrack


def dense_window_average(x, center, width):
    lo = max(center - width // 2, 0)
    hi = min(center - width // 2 + width, len(x))
    return x[lo:hi].sum() / (hi - lo) if hi > lo else 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=400), st.integers(1, 60), st.data())
def test_window_average_matches_dense_sum(counts, width, data):
    x = np.array(counts)
    track = CountTrack.from_dense({"c": x})
    centers = np.array(data.draw(st.lists(st.integers(0, len(x) - 1), min_size=1, max_size=20)))
    got = window_average(track, "c", centers, width)
    want = np.array([dense_window_average(x, c, width) for c in centers])
    assert np.array_equal(got, want)


def test_window_sums_half_open():
    track = CountTrack.from_dense({"c": np.array([1, 2, 3, 4])})
    assert window_sums(track, "c", np.array([0, 1, 3]), np.array([1, 3, 4])).tolist() == [1, 5, 4]


def test_even_window_is_left_heavy():
    track = CountTrack.from_dense({"c": np.arange(10)})
    # width 4 at center 5 covers [3, 7)
    assert window_average(track, "c", 5, 4) == (3 + 4 + 5 + 6) / 4


def test_global_rate():
    track = CountTrack.from_dense({"c": np.ones(100, dtype=int)})
    assert global_rate(track, 1000.0) == 0.1
    with pytest.raises(ValueError):
        global_rate(track, 0.0)


def _tracks(rng, lam_c, ratio):
    control = CountTrack.from_dense({"c": rng.poisson(lam_c)})
    ip = CountTrack.from_dense({"c": rng.poisson(ratio * lam_c)})
    return ip, control


def test_regression_matches_least_squares_oracle():
    rng = np.random.default_rng(0)
    n = 400_000
    lam_c = np.repeat(rng.gamma(2.0, 0.005, n // 2000), 2000)
    ip, control = _tracks(rng, lam_c, 0.7)
    model = fit_background_regression(ip, control)
    y, x1, x2 = [], [], []
    xi, xc = ip.to_dense("c"), control.to_dense("c")
    for s in range(0, n, 1000):
        y.append(xi[s:s + 1000].mean())
        x1.append(xc[s:s + 1000].mean())
        b = (s // 10000) * 10000
        x2.append(xc[b:b + 10000].mean())
    ols = LinearRegression(fit_intercept=False).fit(np.column_stack([x1, x2]), y)
    assert model.a1 == pytest.approx(ols.coef_[0], abs=1e-12)
    assert model.a2 == pytest.approx(ols.coef_[1], abs=1e-12)
    assert model.n_bins == n // 1000


def test_bin_averages_clip_last_bin():
    x = np.zeros(2500, dtype=int)
    x[-1] = 5
    track = CountTrack.from_dense({"c": x})
    _, starts, y, x1, x2 = bin_averages(track, track)
    assert starts.tolist() == [0, 1000, 2000]
    assert y[-1] == 5 / 500 and x1[-1] == 5 / 500 and x2[-1] == 5 / 2500


@pytest.mark.parametrize("rate", [0.002, 0.01, 0.02])
def test_depth_ratio_recovered_for_constant_rates(rate):
    rng = np.random.default_rng(11)
    ip, control = _tracks(rng, np.full(1_000_000, rate), 0.8)
    model = fit_background_regression(ip, control)
    assert model.a1 + model.a2 == pytest.approx(0.8, abs=0.05)


def test_background_floor_and_clamp():
    rng = np.random.default_rng(2)
    ip, control = _tracks(rng, np.full(200_000, 0.01), 0.8)
    reg = BackgroundRegressor(genome_length=1e9).fit(ip, control)
    lam, plus = background_at(reg.model_, control, "c", np.array([0, 100_000]))
    assert np.all(plus >= lam) and np.all(plus >= reg.lambda_L_)
    assert reg.lambda_L_ == ip.total() / 1e9
    assert np.array_equal(reg.predict(control, "c", np.array([0, 100_000])), lam)
    assert np.array_equal(reg.predict_floor(control, "c", np.array([0, 100_000])), plus)


def test_singular_design_raises():
    empty = CountTrack({}, {"c": 10_000})
    other = CountTrack.from_dense({"c": np.ones(10_000, dtype=int)})
    with pytest.raises(SingularDesignError):
        fit_background_regression(other, empty)
    with pytest.raises(SingularDesignError):
        # constant Control makes both windows identical
        fit_background_regression(other, other)


def test_estimator_params():
    reg = BackgroundRegressor(window_small=500, window_large=5000)
    assert reg.get_params() == {"window_small": 500, "window_large": 5000, "genome_length": None}
