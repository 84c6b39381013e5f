"""ChIP-Seq peak detection by smoothing, local maxima and Monte Carlo p-values with FDR control."""

__version__ = "0.1.0"

from .background import BackgroundModel, BackgroundRegressor, fit_background_regression  # noqa: E402
from .caller import StemPeakCaller  # noqa: E402
from .kernel import Kernel, default_peak_shape, gaussian_kernel, quartic_biweight  # noqa: E402
from .multitest import bh_select, rank_peaks  # noqa: E402
from .shape import PeakShapeEstimator, StrandProfile  # noqa: E402
from .simulate import SpikeInConfig, run_spikein  # noqa: E402
from .smoothing import convolve, find_candidates, local_maxima  # noqa: E402
from .survival import SurvivalTable, build_table  # noqa: E402
from .tags import CountTrack, TagRecord, TagSet, shift_and_count  # noqa: E402

__all__ = [
    "BackgroundModel", "BackgroundRegressor", "CountTrack", "Kernel", "PeakShapeEstimator",
    "SpikeInConfig", "StemPeakCaller", "StrandProfile", "SurvivalTable", "TagRecord", "TagSet",
    "bh_select", "build_table", "convolve", "default_peak_shape", "find_candidates",
    "fit_background_regression", "gaussian_kernel", "local_maxima", "quartic_biweight",
    "rank_peaks", "run_spikein", "shift_and_count",
]
