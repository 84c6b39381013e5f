"""End-to-end acceptance checks, one test per criterion, at the stated tolerances."""

import time

import numpy as np
import pytest

from stempeaks.background import fit_background_regression, window_average
from stempeaks.caller import StemPeakCaller
from stempeaks.kernel import Kernel, default_peak_shape, quartic_biweight
from stempeaks.multitest import StepCDF, bh_select, dkw_epsilon, ks_distance, null_pvalue_levels
from stempeaks.shape import StrandProfile, estimate_shift, strand_profiles
from stempeaks.simulate import SpikeInConfig, run_spikein, sample_track
from stempeaks.smoothing import convolve, find_candidates, local_maxima, local_maxima_heights
from stempeaks.survival import build_table, table_range
from stempeaks.tags import CountTrack, TagSet

pytestmark = pytest.mark.slow

LAMBDA_NULL = 0.01
FOXA1_RANGE = (0.00089, 0.0925)


@pytest.fixture(scope="module")
def kernel():
    return default_peak_shape()


@pytest.fixture(scope="module")
def null_table(kernel):
    lo, hi = table_range([LAMBDA_NULL])
    return build_table(lo, hi, kernel, seed=0)


@pytest.fixture(scope="module")
def spikein():
    out = {}
    for norm in ("area", "height"):
        cfg = SpikeInConfig(length=1_000_000, n_spikes=20, replicates=10, q=0.1, seed=0, normalization=norm)
        t = time.perf_counter()
        per_rep, summary = run_spikein(cfg, snrs=(5.0, 10.0, 15.0))
        out[norm] = (per_rep, summary, time.perf_counter() - t)
    return out


def test_criterion_1_spikein_fdr_and_power(spikein, acceptance):
    ok, parts = True, []
    for norm, (_, summary, secs) in spikein.items():
        fdp = summary.set_index("snr")["fdp"]
        power = summary.set_index("snr")["power"]
        this = bool((fdp <= 0.15).all() and power[15.0] >= power[5.0] and secs <= 300)
        ok &= this
        parts.append(f"{norm}: fdp {'/'.join(f'{v:.3f}' for v in fdp)} "
                     f"power {'/'.join(f'{v:.3f}' for v in power)} {secs:.0f}s")
    acceptance(1, ok, "; ".join(parts))
    assert ok


def test_criterion_2_background_recovery(spikein, acceptance):
    corr = spikein["area"][0]["background_corr"]
    rng = np.random.default_rng(0)
    control = sample_track(np.full(1_000_000, LAMBDA_NULL), rng, "c")
    ip = sample_track(np.full(1_000_000, 0.8 * LAMBDA_NULL), rng, "c")
    model = fit_background_regression(ip, control)
    total = model.a1 + model.a2
    ok = bool(corr.min() >= 0.6 and abs(total - 0.8) <= 0.05)
    acceptance(2, ok, f"corr mean {corr.mean():.3f} min {corr.min():.3f}; "
                      f"a1+a2 {total:.3f} (a1 {model.a1:.3f}, a2 {model.a2:.3f})")
    assert ok


def test_criterion_3_null_validity(kernel, null_table, acceptance):
    x = np.random.default_rng(2024).poisson(LAMBDA_NULL, 1_000_000)
    h = local_maxima_heights(x, kernel)
    p = np.sort(null_table.lookup(h, np.full(len(h), LAMBDA_NULL)))
    n = len(p)
    eps = dkw_epsilon(n, 0.01)
    # the empirical CDF is largest just at each sample point
    excess = float(np.max(np.arange(1, n + 1) / n - p))
    ks = ks_distance(p, StepCDF(null_pvalue_levels(LAMBDA_NULL, null_table)))
    ok = excess <= eps and ks <= 0.02
    acceptance(3, ok, f"{n} maxima; max(G - p) {excess:.4f} <= DKW {eps:.4f}; KS to G0 {ks:.4f}")
    assert ok


def test_criterion_4_single_tag_rule(kernel, null_table, acceptance):
    w0 = kernel.mode_value
    lam = null_table.lambda_grid
    p_grid = null_table.lookup(np.full(len(lam), w0), lam)
    x = np.zeros(200_000, dtype=int)
    x[100_000] = 1
    cand = find_candidates(CountTrack.from_dense({"c": x}), kernel)
    # one tag over a genome length of 100 puts the floor lambda_L at 0.01
    caller = StemPeakCaller(kernel=kernel, table=null_table, genome_length=100.0)
    control = sample_track(np.full(200_000, 0.01), np.random.default_rng(1), "c")
    caller.fit(CountTrack.from_dense({"c": x}), control)
    single = caller.candidates_.set_index("position").loc[100_000]
    ok = bool(np.all(p_grid == 1.0) and cand["height"].iloc[0] == w0 and single["pvalue"] == 1.0)
    acceptance(4, ok, f"height {float(cand['height'].iloc[0])!r} == w0 {w0!r}; p == 1 at all {len(lam)} rates")
    assert ok


def _naive_maxima(v):
    v = np.concatenate(([0.0], v, [0.0]))
    out, i = [], 1
    while i < len(v) - 1:
        j = i
        while j + 1 < len(v) - 1 and v[j + 1] == v[i]:
            j += 1
        if v[i] > v[i - 1] and v[i] > v[j + 1]:
            out.append(i - 1)
        i = j + 1
    return out


def _brute_bh(p, q):
    m = len(p)
    srt = sorted(p)
    k = max([r for r in range(1, m + 1) if srt[r - 1] <= r * q / m], default=0)
    return [k > 0 and x <= srt[k - 1] for x in p]


def test_criterion_5_oracle_equivalence(kernel, acceptance):
    rng = np.random.default_rng(5)
    x = rng.poisson(0.01, 10_000)
    x[rng.integers(0, 10_000, 10)] += 4
    smooth = convolve(CountTrack.from_dense({"c": x}), kernel)
    dense = np.convolve(x.astype(float), kernel.weights)[400:400 + len(x)]
    conv_err = float(np.max(np.abs(smooth.to_dense("c") - dense)))

    maxima_ok = local_maxima(smooth)["position"].tolist() == _naive_maxima(smooth.to_dense("c"))

    bh_ok = True
    for i in range(200):
        r = np.random.default_rng(10_000 + i)
        p = np.round(r.uniform(0, 1, int(r.integers(1, 200))) ** 3, 5)
        bh_ok &= bh_select(p, 0.1).tolist() == _brute_bh(p.tolist(), 0.1)

    track = CountTrack.from_dense({"c": x})
    centers = np.arange(0, 10_000, 37)
    win_ok = True
    for width in (1000, 10000, 801, 2):
        lo = np.clip(centers - width // 2, 0, len(x))
        hi = np.clip(centers - width // 2 + width, 0, len(x))
        want = np.array([x[a:b].sum() / (b - a) for a, b in zip(lo, hi)])
        win_ok &= np.array_equal(window_average(track, "c", centers, width), want)

    ok = conv_err <= 1e-12 and maxima_ok and bh_ok and win_ok
    acceptance(5, ok, f"convolution err {conv_err:.2e}; maxima exact {maxima_ok}; "
                      f"BH exact on 200 lists {bh_ok}; windows exact {win_ok}")
    assert ok


def _per_rate_ks(a, b):
    u = np.union1d(a.u_grid, b.u_grid)
    return np.array([np.max(np.abs(a.lookup(u, np.full(len(u), lam)) - b.lookup(u, np.full(len(u), lam))))
                     for lam in a.lambda_grid])


def test_criterion_6_table_properties(kernel, null_table, acceptance):
    lo, hi = null_table.lambda_range
    same = build_table(lo, hi, kernel, seed=0)
    other = build_table(lo, hi, kernel, seed=1)
    wide_a = build_table(*FOXA1_RANGE, kernel, seed=0)
    wide_b = build_table(*FOXA1_RANGE, kernel, seed=1)
    monotone = all(np.all(np.diff(t.values, axis=1) <= 0) for t in (null_table, wide_a))
    bounded = all(t.values.min() >= 0 and t.values.max() <= 1 for t in (null_table, wide_a))
    identical = np.array_equal(same.values, null_table.values) and np.array_equal(same.u_grid, null_table.u_grid)
    ks_near = _per_rate_ks(null_table, other).max()
    ks_wide = _per_rate_ks(wide_a, wide_b).max()
    ok = bool(monotone and bounded and identical and ks_near <= 0.02 and ks_wide <= 0.02)
    acceptance(6, ok, f"monotone {monotone}; in [0,1] {bounded}; same seed identical {identical}; "
                      f"other seed max per-rate KS {ks_near:.4f} (near 0.01), {ks_wide:.4f} (wide range)")
    assert ok


def _pseudo_peak_tags(d, rng, n_peaks=1000, per_strand=60, spacing=5000, sd=40.0):
    centers = spacing * (1 + np.arange(n_peaks))
    n_f = rng.poisson(per_strand, n_peaks)
    n_r = rng.poisson(per_strand, n_peaks)
    fwd = np.repeat(centers, n_f) + np.rint(rng.normal(0, sd, n_f.sum())).astype(int) - d
    rev = np.repeat(centers, n_r) + np.rint(rng.normal(0, sd, n_r.sum())).astype(int) + d
    loc = np.concatenate((fwd, rev))
    strand = np.concatenate((np.zeros(len(fwd), bool), np.ones(len(rev), bool)))
    return TagSet({"c": loc}, {"c": strand}), [("c", int(c)) for c in centers]


def test_criterion_7_shift_estimation(acceptance):
    rng = np.random.default_rng(7)
    got = {}
    for d in (20, 40, 62):
        tags, centers = _pseudo_peak_tags(d, rng)
        got[d] = estimate_shift(strand_profiles(tags, centers, 2001))
    ok = all(abs(s - d) <= 2 for d, s in got.items())
    acceptance(7, ok, "; ".join(f"2d={2 * d}: shift {s} (d={d})" for d, s in got.items()))
    assert ok
    assert isinstance(strand_profiles(tags, centers[:1], 2001), StrandProfile)


def test_criterion_8_quartic_biweight(acceptance):
    exact = np.array_equal(quartic_biweight(5), [0.0, 9 / 16, 1.0, 9 / 16, 0.0])
    ends = all(
        (b := quartic_biweight(w))[0] == 0.0 and b[-1] == 0.0 and b[w // 2] == 1.0
        for w in range(3, 4003, 2)
    )
    windowed = Kernel(quartic_biweight(801)).weights
    ok = bool(exact and ends and windowed[0] == 0.0)
    acceptance(8, ok, f"W=5 exact {exact}; ends 0 and center 1 for all odd W in 3..4001 {ends}")
    assert ok
