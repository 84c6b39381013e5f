"""Spike-in simulation with known peaks, scored for realized FDR and power."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from .background import BackgroundRegressor, background_at, window_average
from .caller import StemPeakCaller
from .kernel import Kernel, default_peak_shape
from .seeding import stage_seed
from .smoothing import find_candidates
from .survival import DEFAULT_MIN_LENGTH, build_table, table_range
from .tags import CountTrack

logger = logging.getLogger(__name__)

SIM_CHROM = "sim"
NORMALIZATIONS = ("area", "height")


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpikeInConfig:
    """Design of one spike-in experiment.

    ``normalization="area"`` scales each spike to total area ``mean(lambda0)``;
    ``"height"`` scales it to peak height ``mean(lambda0)``, so that ``snr``
    is the ratio of the spike's peak rate to the mean background rate.
    The template fields describe the synthetic Control template used when
    none is supplied.
    """

    length: int = 10_000_000
    n_spikes: int = 20
    snr: float = 10.0
    control_to_ip: float = 0.8
    a1: float = 0.3
    a2: float = 0.7
    replicates: int = 10
    q: float = 0.1
    seed: int = 0
    normalization: str = "area"
    template_rate: float = 0.002
    template_sigma: float = 0.5
    template_segment: int = 20_000

    def validate(self, kernel_width: int):
        if self.length <= self.n_spikes * kernel_width:
            raise ValueError("length must exceed n_spikes times the kernel width")
        if self.snr < 0:
            raise ValueError("snr must be nonnegative")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if not 0 < self.q < 1:
            raise ValueError("q must be in (0, 1)")


@dataclass
class GroundTruth:
    centers: np.ndarray
    half_width: int
    lambda_c: np.ndarray
    lambda0: np.ndarray
    spikes: np.ndarray  # unscaled sum of spikes (lambda^+)
    snr: float = 0.0
    supports: np.ndarray = field(init=False)

    def __post_init__(self):
        self.centers = np.sort(np.asarray(self.centers, dtype=np.int64))
        self.supports = np.column_stack((self.centers - self.half_width, self.centers + self.half_width))
        if len(self.centers) > 1 and np.any(self.supports[1:, 0] <= self.supports[:-1, 1]):
            raise PlacementError("spike supports overlap")

    @property
    def lambda_ip(self) -> np.ndarray:
        return self.lambda0 + self.snr * self.spikes


def synthetic_template(length: int, rate: float = 0.002, sigma: float = 0.5, segment: int = 20_000,
                       seed=None) -> CountTrack:
    """Control counts drawn from a constant-plus-lognormal piecewise-constant rate.

    Segment lengths are exponential with mean ``segment``; the rate on each
    is ``rate * (0.5 + 0.5 * Z)`` with ``Z`` lognormal of mean 1.
    """
    rng = np.random.default_rng(seed)
    bounds = [0]
    while bounds[-1] < length:
        bounds.append(bounds[-1] + max(1, int(rng.exponential(segment))))
    bounds = np.minimum(np.array(bounds), length)
    z = rng.lognormal(-0.5 * sigma ** 2, sigma, len(bounds) - 1)
    rates = np.repeat(rate * (0.5 + 0.5 * z), np.diff(bounds))
    return sample_track(rates, rng)


def synth_rates(template: CountTrack, config: SpikeInConfig, chrom: str | None = None):
    """``(lambda_C, lambda0)`` as dense arrays over ``[0, config.length)``."""
    chrom = chrom if chrom is not None else template.chroms[0]
    if template.chrom_lengths[chrom] < config.length:
        raise ValueError("template is shorter than the simulated length")
    if template.total(chrom) == 0:
        logger.warning("template has no counts; simulated rates are zero")
    t = np.arange(config.length)
    lam_c = (config.a1 * window_average(template, chrom, t, 1000)
             + config.a2 * window_average(template, chrom, t, 10000))
    return lam_c, config.control_to_ip * lam_c


def place_spikes(lambda0: np.ndarray, kernel: Kernel, config: SpikeInConfig, seed=None,
                 max_tries: int = 10_000) -> GroundTruth:
    """Place ``n_spikes`` copies of the kernel at random, with disjoint supports."""
    rng = np.random.default_rng(seed)
    L, h = len(lambda0), kernel.half_width
    centers: list[int] = []
    tries = 0
    while len(centers) < config.n_spikes:
        tries += 1
        if tries > max_tries:
            raise PlacementError(f"could not place {config.n_spikes} disjoint spikes in {L} bp")
        c = int(rng.integers(h, L - h))
        if all(abs(c - o) > 2 * h for o in centers):
            centers.append(c)
    mean0 = float(np.mean(lambda0))
    shape = kernel.weights * (mean0 if config.normalization == "area" else mean0 / kernel.mode_value)
    spikes = np.zeros(L)
    for c in centers:
        spikes[c - h:c + h + 1] += shape
    lam_c = lambda0 / config.control_to_ip if config.control_to_ip else np.zeros(L)
    return GroundTruth(np.array(centers), h, lam_c, lambda0, spikes, config.snr)


def sample_track(rate: np.ndarray, seed=None, chrom: str = SIM_CHROM) -> CountTrack:
    """Independent Poisson counts at every position, stored sparsely."""
    rate = np.asarray(rate, dtype=float)
    if np.any(rate < 0):
        raise ValueError("rates must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = rng.poisson(rate)
    pos = np.flatnonzero(x)
    return CountTrack({chrom: (pos, x[pos])}, {chrom: len(rate)})


def score(positions, truth: GroundTruth) -> dict:
    """Realized false discovery proportion and power of a list of detections.

    A detection is true when it lies in a spike support.  Power is the
    fraction of spikes holding at least one detection.
    """
    if isinstance(positions, pd.DataFrame):
        positions = positions["position"].to_numpy()
    pos = np.asarray(positions, dtype=np.int64)
    starts, ends = truth.supports[:, 0], truth.supports[:, 1]
    k = np.searchsorted(starts, pos, side="right") - 1
    inside = (k >= 0) & (pos <= ends[np.maximum(k, 0)])
    n_true = int(inside.sum())
    n_det = len(pos)
    hit = len(np.unique(k[inside]))
    n = len(truth.centers)
    return {
        "n_detected": n_det, "n_true": n_true, "n_false": n_det - n_true, "spikes_hit": hit,
        "fdp": (n_det - n_true) / max(1, n_det), "power": hit / n if n else 0.0,
    }


@dataclass
class _Replicate:
    truth: GroundTruth
    control: CountTrack
    ip_background: np.ndarray
    spike_noise_seed: int


def _ip_track(rep: _Replicate, snr: float) -> CountTrack:
    # background counts are shared across snr values; spike counts use a fixed per-replicate seed
    rng = np.random.default_rng(rep.spike_noise_seed)
    extra = rng.poisson(snr * rep.truth.spikes) if snr > 0 else 0
    x = rep.ip_background + extra
    pos = np.flatnonzero(x)
    return CountTrack({SIM_CHROM: (pos, x[pos])}, {SIM_CHROM: len(x)})


def _candidate_rates(ip, control, kernel, caller_kw):
    bg = BackgroundRegressor(caller_kw.get("window_small", 1000), caller_kw.get("window_large", 10000),
                             caller_kw.get("genome_length")).fit(ip, control)
    cand = find_candidates(ip, kernel)
    return background_at(bg.model_, control, SIM_CHROM, cand["position"].to_numpy())[1]


def run_spikein(config: SpikeInConfig, snrs=(5.0, 10.0, 15.0), kernel: Kernel | None = None,
                template: CountTrack | None = None, n_lambda: int = 300, n_u: int = 200,
                min_length: int = DEFAULT_MIN_LENGTH, n_jobs=None, background_stride: int = 10):
    """Simulate ``config.replicates`` data sets per SNR value, call peaks and score them.

    All SNR values share the background draws of each replicate.  One
    survival table, sized to cover every replicate, is shared by all calls.
    Returns ``(per_replicate, summary)`` frames.
    """
    kernel = kernel if kernel is not None else default_peak_shape()
    config.validate(kernel.width)
    started = time.perf_counter()
    if template is None:
        template = synthetic_template(config.length, config.template_rate, config.template_sigma,
                                      config.template_segment, stage_seed(config.seed, "template"))
    lam_c, lam0 = synth_rates(template, config)
    reps = []
    for r in range(config.replicates):
        truth = place_spikes(lam0, kernel, config, stage_seed(config.seed, "spikes", r))
        control = sample_track(lam_c, stage_seed(config.seed, "control", r))
        ip_bg = np.random.default_rng(stage_seed(config.seed, "ip", r)).poisson(lam0)
        reps.append(_Replicate(truth, control, ip_bg, stage_seed(config.seed, "spike_counts", r)))

    caller_kw = {"genome_length": float(config.length)}
    plus = [_candidate_rates(_ip_track(rep, s), rep.control, kernel, caller_kw)
            for s in snrs for rep in reps]
    plus = np.concatenate([p for p in plus if len(p)])
    lo, hi = table_range(plus)
    table = build_table(lo, hi, kernel, seed=stage_seed(config.seed, "table"), n_lambda=n_lambda,
                        n_u=n_u, min_length=min_length, n_jobs=n_jobs)

    rows = []
    t_idx = np.arange(0, config.length, background_stride)
    for s in snrs:
        for r, rep in enumerate(reps):
            ip = _ip_track(rep, s)
            caller = StemPeakCaller(kernel=kernel, q=config.q, table=table, **caller_kw).fit(ip, rep.control)
            row = {"snr": s, "replicate": r, **score(caller.peaks_, rep.truth)}
            if caller.background_ is not None:
                est = caller.background_.predict(rep.control, SIM_CHROM, t_idx)
                row["background_corr"] = float(np.corrcoef(lam0[t_idx], est)[0, 1])
                row["a1"], row["a2"] = caller.background_.coef_
            rows.append(row)
    per_rep = pd.DataFrame(rows)
    summary = (per_rep.groupby("snr", sort=True)
               .agg(fdp=("fdp", "mean"), power=("power", "mean"), n_detected=("n_detected", "sum"),
                    n_false=("n_false", "sum"), background_corr=("background_corr", "mean"),
                    a1=("a1", "mean"), a2=("a2", "mean"))
               .reset_index())
    summary["replicates"] = config.replicates
    summary["normalization"] = config.normalization
    logger.info("spike-in run finished in %.1f s", time.perf_counter() - started)
    return per_rep, summary


def config_dict(config: SpikeInConfig) -> dict:
    return asdict(config)


def with_overrides(config: SpikeInConfig, **kw) -> SpikeInConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
