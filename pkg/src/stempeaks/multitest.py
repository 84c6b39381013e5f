"""Benjamini-Hochberg selection, peak ranking and p-value distribution diagnostics."""

from __future__ import annotations

import math

import numpy as np
import pandas as pd

from .survival import SurvivalTable

PEAK_COLUMNS = ["rank", "chrom", "position", "height", "lambda0", "lambda0_plus", "snr",
                "pvalue", "below_resolution", "significant"]


def bh_threshold(pvalues, q: float) -> float:
    """Largest sorted p-value ``p_(k)`` with ``p_(k) <= k q / m``, or -inf if none."""
    p = np.sort(np.asarray(pvalues, dtype=float))
    m = len(p)
    if m == 0:
        return -np.inf
    ok = np.flatnonzero(p <= np.arange(1, m + 1) * q / m)
    return float(p[ok[-1]]) if len(ok) else -np.inf


def bh_select(pvalues, q: float) -> np.ndarray:
    """Step-up BH procedure at level ``q``; ties at the threshold are all selected."""
    if not 0 < q < 1:
        raise ValueError("q must be in (0, 1)")
    p = np.asarray(pvalues, dtype=float)
    if p.size == 0:
        return np.zeros(0, dtype=bool)
    return p <= bh_threshold(p, q)


def rank_peaks(peaks: pd.DataFrame, chrom_order=None) -> pd.DataFrame:
    """Order peaks and assign ranks 1..n.

    Below-resolution peaks come first, by decreasing SNR; the rest follow by
    increasing p-value.  Remaining ties go to the higher SNR, then the lower
    genomic address (chromosome order, then position).
    """
    df = peaks.copy()
    if chrom_order is None:
        chrom_order = list(dict.fromkeys(df["chrom"]))
    order = {c: i for i, c in enumerate(chrom_order)}
    below = df["below_resolution"].to_numpy(dtype=bool)
    snr = df["snr"].to_numpy(dtype=float)
    key_p = np.where(below, 0.0, df["pvalue"].to_numpy(dtype=float))
    key = np.lexsort((
        df["position"].to_numpy(),
        df["chrom"].map(order).to_numpy(),
        -snr,
        key_p,
        ~below,
    ))
    df = df.iloc[key].reset_index(drop=True)
    df["rank"] = np.arange(1, len(df) + 1)
    return df


def observed_pvalue_cdf(pvalues, grid) -> np.ndarray:
    """Empirical CDF ``G(p) = #{p_i <= p} / m`` evaluated on ``grid``."""
    p = np.sort(np.asarray(pvalues, dtype=float))
    grid = np.asarray(grid, dtype=float)
    if len(p) == 0:
        return np.zeros(grid.shape)
    return np.searchsorted(p, grid, side="right") / len(p)


def null_pvalue_levels(lam: float, table: SurvivalTable) -> np.ndarray:
    """Sorted p-values ``F(u_k; lam)`` attained by the discrete heights ``u_k`` at ``lam``.

    The ``u_k`` are the distinct simulated heights at the nearest grid rate.
    """
    u = table.attainable_heights(lam)
    return np.sort(np.atleast_1d(table.lookup(u, lam)))


def _step_cdf(levels: np.ndarray, grid: np.ndarray) -> np.ndarray:
    # G0(p) = largest attained level not exceeding p, 0 if none
    idx = np.searchsorted(levels, grid, side="right") - 1
    return np.where(idx >= 0, levels[np.maximum(idx, 0)], 0.0)


def null_pvalue_cdf(lam: float, table: SurvivalTable, grid) -> np.ndarray:
    """Null CDF of the discrete p-value at a constant rate ``lam``.

    ``G0(p) = F(u_k)`` for ``F(u_k) <= p < F(u_{k-1})`` and 1 for ``p >= F(u_1)``.
    """
    return _step_cdf(null_pvalue_levels(lam, table), np.asarray(grid, dtype=float))


def null_mixture_cdf(lambda0_plus, table: SurvivalTable, grid) -> np.ndarray:
    """Average of ``G0(p; lam_t)`` over the candidates' background rates.

    Candidates sharing the nearest grid rate share one ``G0``, so the cost is
    one step function per distinct grid rate.
    """
    lam = np.asarray(lambda0_plus, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if lam.size == 0:
        return np.zeros(grid.shape)
    idx = table.nearest_index(lam)
    out = np.zeros(grid.shape)
    for i, n in zip(*np.unique(idx, return_counts=True)):
        # every candidate uses G0 at its nearest grid rate
        g = table.lambda_grid[i]
        out += n * null_pvalue_cdf(g, table, grid)
    return out / lam.size


def dkw_epsilon(n: int, alpha: float = 0.01) -> float:
    """Dvoretzky-Kiefer-Wolfowitz band half-width at confidence ``1 - alpha``."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


def ks_distance(sample, cdf_at) -> float:
    """Sup distance between the empirical CDF of ``sample`` and a CDF callable.

    Both are right-continuous step functions or continuous, so it suffices to
    check every jump point of either side from the left and the right; pass
    extra jump points via ``cdf_at.jumps`` when the reference is a step function.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    pts = np.unique(np.concatenate((x, getattr(cdf_at, "jumps", np.empty(0)), [0.0, 1.0])))
    left = np.nextafter(pts, -np.inf)
    pts = np.concatenate((pts, left))
    emp = np.searchsorted(x, pts, side="right") / len(x)
    return float(np.max(np.abs(emp - cdf_at(pts))))


class StepCDF:
    """Right-continuous step CDF jumping to ``levels[k]`` at ``levels[k]``."""

    def __init__(self, levels):
        self.jumps = np.sort(np.asarray(levels, dtype=float))

    def __call__(self, grid):
        return _step_cdf(self.jumps, np.asarray(grid, dtype=float))


def diagnostics_table(pvalues, lambda0_plus, table: SurvivalTable, grid=None,
                      empirical_null=None) -> pd.DataFrame:
    """Observed CDF, theoretical null mixture and (optional) empirical null CDF on a p grid."""
    if grid is None:
        grid = np.linspace(0.0, 1.0, 201)
    out = pd.DataFrame({
        "p": grid,
        "G_hat": observed_pvalue_cdf(pvalues, grid),
        "G0_hat": null_mixture_cdf(lambda0_plus, table, grid),
    })
    if empirical_null is not None:
        out["G_empirical_null"] = observed_pvalue_cdf(empirical_null, grid)
    return out
