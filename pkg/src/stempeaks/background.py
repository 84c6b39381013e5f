"""Local background rate from the Control via two-window linear regression."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .tags import CountTrack

logger = logging.getLogger(__name__)

DEFAULT_GENOME_LENGTH = 3.018e9


class SingularDesignError(ValueError):
    pass


def _cumulative(track: CountTrack, chrom: str):
    pos = track.positions(chrom)
    return pos, np.concatenate(([0], np.cumsum(track.counts(chrom))))


def window_sums(track: CountTrack, chrom: str, lo, hi) -> np.ndarray:
    """Total count over each half-open interval ``[lo, hi)``."""
    pos, cum = _cumulative(track, chrom)
    return cum[np.searchsorted(pos, hi, side="left")] - cum[np.searchsorted(pos, lo, side="left")]


def window_average(track: CountTrack, chrom: str, center, width: int):
    """Average count per bp in a window of ``width`` bp centered at ``center``.

    The window is ``[center - width//2, center - width//2 + width)``; it is
    clipped to the chromosome and the clipped length is the denominator.
    ``center`` may be a scalar or an array.
    """
    if width < 1:
        raise ValueError("window width must be >= 1")
    center = np.asarray(center, dtype=np.int64)
    length = track.chrom_lengths[chrom]
    lo = np.clip(center - width // 2, 0, length)
    hi = np.clip(center - width // 2 + width, 0, length)
    span = hi - lo
    sums = window_sums(track, chrom, lo, hi)
    out = np.divide(sums, span, out=np.zeros(span.shape), where=span > 0)
    return out if out.ndim else float(out)


def global_rate(ip: CountTrack, genome_length: float = DEFAULT_GENOME_LENGTH) -> float:
    """Total aligned IP count divided by the genome length."""
    if genome_length <= 0:
        raise ValueError("genome_length must be positive")
    total = ip.total()
    if total == 0:
        logger.warning("IP track is empty; global rate is 0")
    return total / genome_length


def bin_averages(ip: CountTrack, control: CountTrack, small: int = 1000, large: int = 10000):
    """Disjoint-bin averages used as regression data.

    Returns arrays ``(chrom, bin_start, ip_avg, c_small_avg, c_large_avg)``
    where the large-window average belongs to the enclosing ``large`` bin.
    Bins overlapping a chromosome end are averaged over their clipped length.
    """
    chroms, starts, ys, x1s, x2s = [], [], [], [], []
    for chrom, length in ip.chrom_lengths.items():
        lo = np.arange(0, length, small, dtype=np.int64)
        hi = np.minimum(lo + small, length)
        y = window_sums(ip, chrom, lo, hi) / (hi - lo)
        if chrom in control.chrom_lengths:
            x1 = window_sums(control, chrom, lo, hi) / (hi - lo)
            big_lo = (lo // large) * large
            big_hi = np.minimum(big_lo + large, length)
            x2 = window_sums(control, chrom, big_lo, big_hi) / (big_hi - big_lo)
        else:
            x1 = x2 = np.zeros(len(lo))
        chroms.append(np.full(len(lo), chrom, dtype=object))
        starts.append(lo)
        ys.append(y)
        x1s.append(x1)
        x2s.append(x2)
    cat = lambda parts, dt=float: np.concatenate(parts) if parts else np.empty(0, dtype=dt)  # noqa: E731
    return cat(chroms, object), cat(starts, np.int64), cat(ys), cat(x1s), cat(x2s)


@dataclass(frozen=True)
class BackgroundModel:
    a1: float
    a2: float
    lambda_L: float
    window_small: int = 1000
    window_large: int = 10000
    se_a1: float = float("nan")
    se_a2: float = float("nan")
    n_bins: int = 0

    def __post_init__(self):
        if self.window_small >= self.window_large:
            raise ValueError("window_small must be smaller than window_large")


def fit_background_regression(ip: CountTrack, control: CountTrack, window_small: int = 1000,
                              window_large: int = 10000, lambda_L: float | None = None,
                              genome_length: float | None = None) -> BackgroundModel:
    """Least squares (no intercept) of IP bin averages on Control 1 kb and 10 kb averages.

    All bins are used, unweighted.  ``lambda_L`` defaults to
    :func:`global_rate` over ``genome_length`` (itself defaulting to the
    summed chromosome lengths of ``ip``).
    """
    if ip.total() == 0 or control.total() == 0:
        raise SingularDesignError("IP and Control tracks must both be nonempty")
    _, _, y, x1, x2 = bin_averages(ip, control, window_small, window_large)
    X = np.column_stack([x1, x2])
    xtx = X.T @ X
    if np.linalg.matrix_rank(xtx) < 2 or np.linalg.cond(xtx) > 1e12:
        raise SingularDesignError("regression design is singular (Control windows collinear or empty)")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    n = len(y)
    resid = y - X @ coef
    dof = max(n - 2, 1)
    cov = (resid @ resid / dof) * np.linalg.inv(xtx)
    se = np.sqrt(np.diag(cov))
    if lambda_L is None:
        lambda_L = global_rate(ip, genome_length if genome_length is not None else ip.genome_length)
    return BackgroundModel(a1=float(coef[0]), a2=float(coef[1]), lambda_L=float(lambda_L),
                           window_small=window_small, window_large=window_large,
                           se_a1=float(se[0]), se_a2=float(se[1]), n_bins=n)


def background_at(model: BackgroundModel, control: CountTrack, chrom: str, t):
    """Return ``(lambda0, lambda0_plus)`` at position(s) ``t`` on ``chrom``.

    Sliding windows centered at ``t`` (not the fitting bins) are used;
    negative estimates are clamped to 0 and ``lambda0_plus`` is floored at
    ``lambda_L``.
    """
    t = np.asarray(t, dtype=np.int64)
    if chrom in control.chrom_lengths:
        lam = (model.a1 * window_average(control, chrom, t, model.window_small)
               + model.a2 * window_average(control, chrom, t, model.window_large))
    else:
        lam = np.zeros(t.shape)
    lam = np.maximum(lam, 0.0)
    plus = np.maximum(lam, model.lambda_L)
    if t.ndim == 0:
        return float(lam), float(plus)
    return lam, plus


class BackgroundRegressor(BaseEstimator):
    """Estimator wrapper: ``fit(ip, control)`` then ``predict(control, chrom, t)``.

    Parameters
    ----------
    window_small, window_large : int
        Control window sizes in bp.
    genome_length : float or None
        Denominator of the global rate ``lambda_L``; None uses the summed
        chromosome lengths of the IP track.
    """

    def __init__(self, window_small=1000, window_large=10000, genome_length=None):
        self.window_small = window_small
        self.window_large = window_large
        self.genome_length = genome_length

    def fit(self, ip: CountTrack, control: CountTrack):
        self.model_ = fit_background_regression(ip, control, self.window_small, self.window_large,
                                                genome_length=self.genome_length)
        self.coef_ = np.array([self.model_.a1, self.model_.a2])
        self.coef_se_ = np.array([self.model_.se_a1, self.model_.se_a2])
        self.lambda_L_ = self.model_.lambda_L
        return self

    def predict(self, control: CountTrack, chrom: str, t):
        check_is_fitted(self, "model_")
        return background_at(self.model_, control, chrom, t)[0]

    def predict_floor(self, control: CountTrack, chrom: str, t):
        check_is_fitted(self, "model_")
        return background_at(self.model_, control, chrom, t)[1]
