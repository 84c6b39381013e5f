"""Strand shift and peak shape estimation from strong peaks."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline
from scipy.optimize import isotonic_regression
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .kernel import Kernel, KernelError, count_strict_maxima, gaussian_kernel, quartic_biweight
from .smoothing import find_candidates
from .tags import CountTrack, TagSet, as_tagset, infer_chrom_lengths, shift_and_count

logger = logging.getLogger(__name__)


class ShapeEstimationError(ValueError):
    pass


@dataclass(frozen=True)
class StrandProfile:
    """Mean forward and reverse tag counts by offset from the peak centers.

    Index ``(width - 1) // 2`` is the center; index ``i`` is offset
    ``i - (width - 1) // 2``.
    """

    width: int
    forward: np.ndarray
    reverse: np.ndarray
    n_peaks: int

    def __post_init__(self):
        if self.width % 2 == 0 or len(self.forward) != self.width or len(self.reverse) != self.width:
            raise ValueError("profile vectors must have odd length equal to width")
        if np.any(self.forward < 0) or np.any(self.reverse < 0):
            raise ValueError("profile entries must be nonnegative")

    @property
    def offsets(self) -> np.ndarray:
        h = self.width // 2
        return np.arange(-h, h + 1)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"offset": self.offsets, "forward": self.forward, "reverse": self.reverse})


def preliminary_peaks(track: CountTrack, prelim_kernel: Kernel | None = None, n: int = 1000) -> list:
    """The ``n`` highest local maxima of the smoothed track as ``(chrom, position)``.

    Ordered by decreasing height, ties to the lower address.
    """
    kernel = prelim_kernel if prelim_kernel is not None else gaussian_kernel(50.0)
    cand = find_candidates(track, kernel)
    if len(cand) < n:
        warnings.warn(f"only {len(cand)} local maxima available, fewer than the {n} requested",
                      stacklevel=2)
    rank = {c: i for i, c in enumerate(track.chrom_lengths)}
    cand = cand.assign(_c=cand["chrom"].map(rank))
    cand = cand.sort_values(["height", "_c", "position"], ascending=[False, True, True], kind="stable")
    top = cand.head(n)
    return list(zip(top["chrom"].tolist(), top["position"].tolist()))


def _window_counts(loc_sorted: np.ndarray, centers: np.ndarray, half: int) -> np.ndarray:
    width = 2 * half + 1
    lo = np.searchsorted(loc_sorted, centers - half, side="left")
    hi = np.searchsorted(loc_sorted, centers + half, side="right")
    n = hi - lo
    if n.sum() == 0:
        return np.zeros(width)
    which = np.repeat(np.arange(len(centers)), n)
    idx = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n) + np.repeat(lo, n)
    off = loc_sorted[idx] - centers[which] + half
    return np.bincount(off, minlength=width).astype(float)


def strand_profiles(tags, centers, width: int = 2001) -> StrandProfile:
    """Average strand tag counts in a ``width`` bp window around each center.

    ``centers`` is a sequence of ``(chrom, position)`` pairs.  Tag locations
    are taken unshifted.
    """
    if width < 1 or width % 2 == 0:
        raise ValueError("profile window must be odd")
    centers = list(centers)
    if not centers:
        raise ShapeEstimationError("no peak centers given")
    tagset = as_tagset(tags)
    half = width // 2
    fwd = np.zeros(width)
    rev = np.zeros(width)
    by_chrom: dict[str, list[int]] = {}
    for chrom, pos in centers:
        by_chrom.setdefault(chrom, []).append(int(pos))
    for chrom, pos in by_chrom.items():
        c = np.asarray(pos, dtype=np.int64)
        fwd += _window_counts(np.sort(tagset.strand_locations(chrom, False)), c, half)
        rev += _window_counts(np.sort(tagset.strand_locations(chrom, True)), c, half)
    n = len(centers)
    return StrandProfile(width, fwd / n, rev / n, n)


def _spline_basis(n: int, knot_spacing: int) -> np.ndarray:
    half = n // 2
    x = np.arange(-half, half + 1, dtype=float)
    k = int(math.ceil(half / knot_spacing)) - 1
    interior = knot_spacing * np.arange(-k, k + 1, dtype=float)
    knots = np.concatenate(([x[0]] * 4, interior, [x[-1]] * 4))
    return BSpline.design_matrix(x, knots, 3).toarray()


#: roughness penalties searched by generalized cross-validation
PENALTY_GRID = np.concatenate(([0.0], np.logspace(-4, 6, 41)))


def fit_spline(values: np.ndarray, knot_spacing: int = 25) -> np.ndarray:
    """Penalized cubic spline fit of a centered profile, evaluated on the integer grid.

    Interior knots sit at multiples of ``knot_spacing`` from the center, so
    the fit commutes with mirroring the profile.  The second-difference
    penalty on the B-spline coefficients is chosen by generalized
    cross-validation; zero penalty is a candidate, so a profile that already
    is a spline on these knots is reproduced.
    """
    y = np.asarray(values, dtype=float)
    B = _spline_basis(len(y), knot_spacing)
    BtB, Bty = B.T @ B, B.T @ y
    D = np.diff(np.eye(B.shape[1]), 2, axis=0)
    P = D.T @ D
    n = len(y)
    best = None
    for lam in PENALTY_GRID:
        A = BtB + lam * P
        beta = np.linalg.solve(A, Bty)
        edf = np.trace(np.linalg.solve(A, BtB))
        r = y - B @ beta
        gcv = n * (r @ r) / (n - edf) ** 2
        if best is None or gcv < best[0]:
            best = (gcv, beta)
    return B @ best[1]


def _spline_mode(values: np.ndarray, knot_spacing: int) -> int:
    fitted = fit_spline(values, knot_spacing)
    # argmax returns the first maximum, i.e. the lower offset
    return int(np.argmax(fitted)) - len(values) // 2


def estimate_shift(profile: StrandProfile, knot_spacing: int = 25) -> int:
    """Half the distance between the spline modes of the reverse and forward profiles.

    Rounded half up.  A negative value means the strands are inverted and
    raises :class:`ShapeEstimationError`.
    """
    if not profile.forward.any() or not profile.reverse.any():
        raise ShapeEstimationError("both strand profiles must be nonzero")
    m_fwd = _spline_mode(profile.forward, knot_spacing)
    m_rev = _spline_mode(profile.reverse, knot_spacing)
    shift = math.floor((m_rev - m_fwd) / 2 + 0.5)
    if shift < 0:
        raise ShapeEstimationError(f"negative shift {shift}: forward mode {m_fwd} lies after reverse mode {m_rev}")
    return shift


def _displace(v: np.ndarray, k: int) -> np.ndarray:
    # out[i] = v[i - k], zero filled
    out = np.zeros_like(v)
    if k >= 0:
        out[k:] = v[:len(v) - k]
    else:
        out[:k] = v[-k:]
    return out


def _unimodal_projection(w: np.ndarray) -> np.ndarray:
    # least-squares nonincreasing fit on the right half, mirrored
    h = len(w) // 2
    right = isotonic_regression(w[h:], increasing=False).x
    return np.concatenate((right[:0:-1], right))


def estimate_peak_shape(profile: StrandProfile, shift: int, width: int = 801,
                        knot_spacing: int = 25, unimodal: str = "project") -> Kernel:
    """Symmetric unit-sum peak shape from strand profiles aligned by ``shift``.

    The aligned strands are averaged with their mirror image, spline fitted,
    cropped to ``width``, windowed by the quartic biweight, clamped at 0 and
    normalized.  Secondary maxima left by the fit (typically tiny ripples in
    the flat background part) are removed by projecting each half onto
    monotone sequences when ``unimodal="project"``; with ``"reject"`` they
    raise :class:`ShapeEstimationError`.
    """
    if width % 2 == 0 or width < 3:
        raise ValueError("kernel width must be odd and >= 3")
    if width > profile.width:
        raise ValueError("kernel width exceeds the profile window")
    if unimodal not in ("project", "reject"):
        raise ValueError("unimodal must be 'project' or 'reject'")
    joint = 0.5 * (_displace(profile.forward, shift) + _displace(profile.reverse, -shift))
    joint = 0.5 * (joint + joint[::-1])
    fitted = fit_spline(joint, knot_spacing)
    c, h = profile.width // 2, width // 2
    w = fitted[c - h:c + h + 1] * quartic_biweight(width)
    w = np.maximum(w, 0.0)
    w = 0.5 * (w + w[::-1])
    if not np.any(w > 0):
        raise ShapeEstimationError("estimated peak shape is identically zero")
    n_max = count_strict_maxima(w[1:-1])
    if n_max != 1:
        if unimodal == "reject":
            raise ShapeEstimationError(f"estimated peak shape has {n_max} interior maxima, expected 1")
        logger.info("removing %d secondary maxima from the estimated peak shape", n_max - 1)
        w = _unimodal_projection(w)
    if w[h] != w.max() or count_strict_maxima(w) != 1:
        raise ShapeEstimationError("estimated peak shape does not peak at the center")
    try:
        return Kernel(w)
    except KernelError as exc:
        raise ShapeEstimationError(str(exc)) from exc


def longest_chrom(chrom_lengths: dict) -> str:
    return max(chrom_lengths, key=lambda c: (chrom_lengths[c], -list(chrom_lengths).index(c)))


class PeakShapeEstimator(BaseEstimator, TransformerMixin):
    """Estimate the strand shift and matched-filter kernel from IP tags.

    ``fit(tags)`` runs the tentative shift, finds the strongest peaks on one
    chromosome, builds strand profiles and estimates shift and shape.
    ``transform(tags)`` returns the tags shifted by the estimate and counted.

    Parameters
    ----------
    tentative_shift : int
        Shift used before the strong peaks are known.
    prelim_sigma : float
        Standard deviation of the preliminary Gaussian kernel.
    n_peaks : int
        Number of strong peaks averaged.
    profile_width, kernel_width : int
        Odd window sizes of the strand profiles and of the output kernel.
    knot_spacing : int
        Distance between spline knots.
    chrom : str or None
        Chromosome to estimate on; None picks the longest.
    unimodal : {"project", "reject"}
        How secondary maxima of the fitted shape are handled.
    """

    def __init__(self, tentative_shift=100, prelim_sigma=50.0, n_peaks=1000, profile_width=2001,
                 kernel_width=801, knot_spacing=25, chrom=None, unimodal="project"):
        self.tentative_shift = tentative_shift
        self.prelim_sigma = prelim_sigma
        self.n_peaks = n_peaks
        self.profile_width = profile_width
        self.kernel_width = kernel_width
        self.knot_spacing = knot_spacing
        self.chrom = chrom
        self.unimodal = unimodal

    def _validate(self):
        if self.profile_width % 2 == 0 or self.kernel_width % 2 == 0:
            raise ValueError("profile_width and kernel_width must be odd")
        if self.kernel_width > self.profile_width:
            raise ValueError("kernel_width must not exceed profile_width")
        if self.n_peaks < 1:
            raise ValueError("n_peaks must be positive")

    def fit(self, tags, y=None, chrom_lengths=None):
        self._validate()
        tagset: TagSet = as_tagset(tags)
        lengths = dict(chrom_lengths) if chrom_lengths is not None else infer_chrom_lengths(tagset)
        self.chrom_lengths_ = lengths
        chrom = self.chrom if self.chrom is not None else longest_chrom(
            {c: lengths[c] for c in tagset.chroms if c in lengths})
        if chrom not in tagset.locations:
            raise ShapeEstimationError(f"no tags on chromosome {chrom!r}")
        one = TagSet({chrom: tagset.locations[chrom]}, {chrom: tagset.reverse[chrom]})
        track = shift_and_count(one, self.tentative_shift, {chrom: lengths[chrom]})
        self.centers_ = preliminary_peaks(track, gaussian_kernel(self.prelim_sigma), self.n_peaks)
        self.profile_ = strand_profiles(one, self.centers_, self.profile_width)
        self.shift_ = estimate_shift(self.profile_, self.knot_spacing)
        self.kernel_ = estimate_peak_shape(self.profile_, self.shift_, self.kernel_width,
                                           self.knot_spacing, self.unimodal)
        self.chrom_ = chrom
        logger.info("estimated shift %d on %s from %d peaks; kernel mode %.5g",
                    self.shift_, chrom, self.profile_.n_peaks, self.kernel_.mode_value)
        return self

    def transform(self, tags, chrom_lengths=None, report=None) -> CountTrack:
        check_is_fitted(self, "shift_")
        lengths = chrom_lengths if chrom_lengths is not None else self.chrom_lengths_
        return shift_and_count(tags, self.shift_, lengths, report=report)
