import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stempeaks.kernel import Kernel, default_peak_shape, quartic_biweight
from stempeaks.smoothing import convolve, find_candidates, local_maxima, local_maxima_heights
from stempeaks.tags import CountTrack


def dense_smooth(counts, kernel):
    # out(t) = sum_s w(s) count(t - s), evaluated by full convolution
    h = kernel.half_width
    return np.convolve(counts.astype(float), kernel.weights)[h:h + len(counts)]


def naive_maxima(values):
    """Scan for runs of equal values above both neighbours (zero outside); report run starts."""
    v = np.concatenate(([0.0], values, [0.0]))
    out = []
    i = 1
    while i < len(v) - 1:
        j = i
        while j + 1 < len(v) - 1 and v[j + 1] == v[i]:
            j += 1
        if v[i] > v[i - 1] and v[i] > v[j + 1]:
            out.append((i - 1, v[i]))
        i = j + 1
    return out


def sparse_counts(rng, n, rate):
    x = rng.poisson(rate, n)
    x[rng.random(n) < 0.001] += 3
    return x


def test_sparse_convolution_matches_dense_oracle():
    rng = np.random.default_rng(1)
    k = default_peak_shape()
    x = sparse_counts(rng, 10_000, 0.01)
    got = convolve(CountTrack.from_dense({"c": x}), k).to_dense("c")
    assert np.max(np.abs(got - dense_smooth(x, k))) <= 1e-12


def test_isolated_count_gives_mode_value_exactly():
    k = default_peak_shape()
    x = np.zeros(5000, dtype=int)
    x[2500] = 1
    cand = find_candidates(CountTrack.from_dense({"c": x}), k)
    assert len(cand) == 1
    assert cand["height"].iloc[0] == k.mode_value
    assert cand["position"].iloc[0] == 2500


def test_plateau_reported_at_lowest_address():
    k = Kernel([1, 1, 1])
    x = np.zeros(20, dtype=int)
    x[[5, 6, 7]] = 1
    cand = find_candidates(CountTrack.from_dense({"c": x}), k)
    # smoothed values 1/3, 2/3, 1, 2/3, 1/3 from position 4
    assert cand["position"].tolist() == [6]
    x2 = np.zeros(20, dtype=int)
    x2[[5, 8]] = 1
    cand2 = find_candidates(CountTrack.from_dense({"c": x2}), Kernel(np.ones(5)))
    # both counts are in the window at positions 6 and 7; the run starts at 6
    assert cand2["position"].tolist() == [6]


def test_near_edge_flag_and_zero_outside_chromosome():
    k = default_peak_shape()
    x = np.zeros(3000, dtype=int)
    x[[10, 1500, 2995]] = 1
    cand = find_candidates(CountTrack.from_dense({"c": x}), k)
    assert cand["near_edge"].tolist() == [True, False, True]


@pytest.mark.parametrize("seed", range(5))
def test_local_maxima_match_naive_scan(seed):
    rng = np.random.default_rng(seed)
    k = Kernel(quartic_biweight(31))
    x = sparse_counts(rng, 20_000, 0.02)
    track = CountTrack.from_dense({"c": x})
    cand = local_maxima(convolve(track, k))
    expected = naive_maxima(convolve(track, k).to_dense("c"))
    assert list(zip(cand["position"], cand["height"])) == expected
    streamed = find_candidates(track, k)
    assert streamed[["position", "height"]].equals(cand[["position", "height"]])


def test_batch_size_does_not_change_results():
    rng = np.random.default_rng(7)
    k = default_peak_shape()
    track = CountTrack.from_dense({"a": sparse_counts(rng, 200_000, 0.005),
                                   "b": sparse_counts(rng, 50_000, 0.005)})
    ref = find_candidates(track, k)
    small = find_candidates(track, k, batch_size=5_000)
    gapped = find_candidates(track, k, group_gap=50_000)
    assert ref.equals(small) and ref.equals(gapped)


def test_heights_helper_matches_candidates():
    rng = np.random.default_rng(3)
    k = default_peak_shape()
    x = sparse_counts(rng, 50_000, 0.01)
    cand = find_candidates(CountTrack.from_dense({"c": x}), k)
    assert np.array_equal(local_maxima_heights(x, k), cand["height"].to_numpy())


def test_empty_track_has_no_candidates():
    cand = find_candidates(CountTrack({}, {"c": 100}), default_peak_shape())
    assert len(cand) == 0 and list(cand.columns) == ["chrom", "position", "height", "near_edge"]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=300), st.integers(1, 15))
def test_convolution_properties(counts, half):
    k = Kernel(quartic_biweight(2 * half + 3))
    x = np.array(counts)
    n = len(x)
    pad = np.concatenate((np.zeros(k.width, int), x, np.zeros(k.width, int)))
    s = convolve(CountTrack.from_dense({"c": pad}), k).to_dense("c")
    # mass is conserved when nothing falls off the ends
    assert s.sum() == pytest.approx(x.sum(), rel=1e-12, abs=1e-12)
    assert np.allclose(s, dense_smooth(pad, k), atol=1e-12)
    # linearity
    s2 = convolve(CountTrack.from_dense({"c": 2 * pad}), k).to_dense("c")
    assert np.allclose(s2, 2 * s, atol=1e-12)
    assert len(pad) == n + 2 * k.width
