"""End-to-end peak calling: smoothing, background, Monte Carlo p-values and BH."""

from __future__ import annotations

import logging
import warnings

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .background import BackgroundRegressor, background_at
from .kernel import Kernel, default_peak_shape
from .multitest import PEAK_COLUMNS, bh_select, diagnostics_table, rank_peaks
from .seeding import stage_seed
from .smoothing import find_candidates
from .survival import DEFAULT_MIN_LENGTH, SurvivalTable, TableRangeError, build_table, table_range
from .tags import CountTrack

logger = logging.getLogger(__name__)


def _empty_peaks() -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype=t) for c, t in zip(
        PEAK_COLUMNS, [np.int64, object, np.int64, float, float, float, float, float, bool, bool])})


class StemPeakCaller(BaseEstimator):
    """Call peaks in an aligned IP track against a Control track.

    ``fit(ip, control)`` smooths the IP track with ``kernel``, takes every
    local maximum as a candidate, estimates its local background from the
    Control, scores it against a Monte Carlo survival table and applies the
    BH procedure at level ``q``.

    Parameters
    ----------
    kernel : Kernel or None
        Matched-filter kernel; None uses :func:`default_peak_shape`.
    q : float
        FDR level.
    table : SurvivalTable or None
        Precomputed table; it must have been built with ``kernel`` and cover
        the observed background rates.  None builds one for the data.
    n_lambda, n_u : int
        Table grid sizes.
    margin : float
        Relative margin added around the observed rate range.
    window_small, window_large : int
        Control window sizes for the background regression.
    genome_length : float or None
        Denominator of the global rate; None uses the summed chromosome lengths.
    seed : int
        Root seed; the table build gets a derived seed.
    min_length : int
        Minimum simulated sequence length per table rate.
    n_jobs : int or None
        Workers for the table build; results do not depend on it.
    """

    def __init__(self, kernel=None, q=0.01, table=None, n_lambda=300, n_u=200, margin=0.25,
                 window_small=1000, window_large=10000, genome_length=None, seed=0,
                 min_length=DEFAULT_MIN_LENGTH, n_jobs=None):
        self.kernel = kernel
        self.q = q
        self.table = table
        self.n_lambda = n_lambda
        self.n_u = n_u
        self.margin = margin
        self.window_small = window_small
        self.window_large = window_large
        self.genome_length = genome_length
        self.seed = seed
        self.min_length = min_length
        self.n_jobs = n_jobs

    def _validate(self):
        if not 0 < self.q < 1:
            raise ValueError("q must be in (0, 1)")
        if not 0 <= self.margin < 1:
            raise ValueError("margin must be in [0, 1)")
        kernel = self.kernel if self.kernel is not None else default_peak_shape()
        if not isinstance(kernel, Kernel):
            kernel = Kernel(kernel)
        return kernel

    def _score(self, ip: CountTrack, control: CountTrack) -> pd.DataFrame:
        cand = find_candidates(ip, self.kernel_)
        lam0 = np.zeros(len(cand))
        plus = np.zeros(len(cand))
        for chrom, idx in cand.groupby("chrom", sort=False).indices.items():
            lam0[idx], plus[idx] = background_at(self.background_.model_, control, chrom,
                                                 cand["position"].to_numpy()[idx])
        cand["lambda0"] = lam0
        cand["lambda0_plus"] = plus
        return cand

    def _get_table(self, plus: np.ndarray) -> SurvivalTable:
        if self.table is not None:
            table = self.table
            table.check_kernel(self.kernel_)
            if not table.covers(plus):
                lo, hi = table.lambda_range
                raise TableRangeError(f"background rates [{plus.min():.4g}, {plus.max():.4g}] "
                                      f"not covered by table range [{lo:.4g}, {hi:.4g}]")
            self.report_["table"] = "supplied"
            return table
        lo, hi = table_range(plus, self.margin)
        if hi <= lo * (1 + 1e-9):
            hi = lo * 1.01
        table = build_table(lo, hi, self.kernel_, seed=stage_seed(self.seed, "table"),
                            n_lambda=self.n_lambda, n_u=self.n_u, min_length=self.min_length,
                            n_jobs=self.n_jobs)
        self.report_["table"] = "built"
        return table

    def fit(self, ip: CountTrack, control: CountTrack, y=None):
        self.kernel_ = self._validate()
        self.report_ = {"ip_total": ip.total(), "control_total": control.total()}
        self.chrom_order_ = list(ip.chrom_lengths)
        if ip.total() == 0:
            warnings.warn("IP track is empty; no peaks called", stacklevel=2)
            self.background_ = None
            self.table_ = self.table
            self.candidates_ = _empty_peaks().drop(columns=["rank"])
            self.peaks_ = _empty_peaks()
            self.report_.update(candidates=0, significant=0, below_resolution=0)
            return self
        self.background_ = BackgroundRegressor(self.window_small, self.window_large,
                                               self.genome_length).fit(ip, control)
        model = self.background_.model_
        self.report_.update(a1=model.a1, a2=model.a2, se_a1=model.se_a1, se_a2=model.se_a2,
                            lambda_L=model.lambda_L)
        cand = self._score(ip, control)
        self.table_ = self._get_table(cand["lambda0_plus"].to_numpy())
        p, below = self.table_.lookup(cand["height"].to_numpy(), cand["lambda0_plus"].to_numpy(),
                                      return_flags=True)
        cand["pvalue"] = np.atleast_1d(p)
        cand["below_resolution"] = np.atleast_1d(below)
        with np.errstate(divide="ignore"):
            cand["snr"] = cand["height"] / cand["lambda0"]
        cand["significant"] = bh_select(cand["pvalue"].to_numpy(), self.q)
        self.candidates_ = cand
        self.peaks_ = self._rank(cand[cand["significant"]])
        self.report_.update(
            candidates=len(cand), candidates_near_edge=int(cand["near_edge"].sum()),
            significant=len(self.peaks_), below_resolution=int(cand["below_resolution"].sum()),
            lambda0_plus_min=float(cand["lambda0_plus"].min()),
            lambda0_plus_max=float(cand["lambda0_plus"].max()),
        )
        logger.info("%d candidates, %d significant at q=%g", len(cand), len(self.peaks_), self.q)
        return self

    def _rank(self, frame: pd.DataFrame) -> pd.DataFrame:
        if len(frame) == 0:
            return _empty_peaks()
        return rank_peaks(frame, self.chrom_order_)[PEAK_COLUMNS]

    def ranked_candidates(self) -> pd.DataFrame:
        """All candidates: significant peaks first (ranks 1..m_sig), then the rest."""
        check_is_fitted(self, "candidates_")
        cand = self.candidates_
        if len(cand) == 0:
            return _empty_peaks()
        rest = self._rank(cand[~cand["significant"]])
        rest["rank"] += len(self.peaks_)
        return pd.concat([self.peaks_, rest], ignore_index=True)

    def predict(self, X=None) -> pd.DataFrame:
        """The significant peaks, ranked."""
        check_is_fitted(self, "peaks_")
        return self.peaks_

    def fit_predict(self, ip: CountTrack, control: CountTrack) -> pd.DataFrame:
        return self.fit(ip, control).predict()

    def diagnostics(self, grid=None, empirical_null=None) -> pd.DataFrame:
        """Observed and theoretical null CDFs of the candidate p-values."""
        check_is_fitted(self, "candidates_")
        if len(self.candidates_) == 0:
            raise ValueError("no candidates to diagnose")
        return diagnostics_table(self.candidates_["pvalue"], self.candidates_["lambda0_plus"],
                                 self.table_, grid, empirical_null)
