"""Monte Carlo survival table for heights of local maxima of smoothed Poisson noise.

For each background rate on a log-spaced grid, a long i.i.d. Poisson
sequence is smoothed with the kernel and the heights of its local maxima are
recorded.  Their empirical survival function ``F(u; lam) = P(height >= u)``
is tabulated on a shared height grid, smoothed across ``log(lam)`` by
regression on five cubic B-splines, clipped to [0, 1] and made nonincreasing
in ``u`` by isotonic regression.

Two smoothers are available.  ``"logit"`` (default) fits, for every height
node, a binomial regression with logit link of the exceedance counts on the
B-spline basis; at a fixed height the tail probability is close to a power of
``lam``, so the logit is close to linear in ``log(lam)``; a roughness
penalty chosen by AIC keeps sparse tails from being extrapolated to zero.  ``"linear"``
is ordinary least squares of the survival values on the same basis.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.interpolate import BSpline
from scipy.optimize import isotonic_regression

from .kernel import Kernel
from .smoothing import local_maxima_heights

logger = logging.getLogger(__name__)

TABLE_FORMAT_VERSION = 1

#: floor on the simulated length per rate; 10**5 leaves seed-to-seed
#: differences of 0.02 to 0.04 at the ends of the rate grid
DEFAULT_MIN_LENGTH = 1_000_000


class TableRangeError(ValueError):
    """A rate falls outside the grid the table was built for."""


class FingerprintMismatch(ValueError):
    """The table was built with a different kernel."""


def simulation_length(lam: float, min_length: int = DEFAULT_MIN_LENGTH, min_nonzero: int = 100) -> int:
    return max(int(min_length), int(math.ceil(min_nonzero / lam)))


def simulate_heights(lam: float, kernel: Kernel, seed, min_length: int = DEFAULT_MIN_LENGTH,
                     min_nonzero: int = 100) -> np.ndarray:
    """Heights of all local maxima of a smoothed i.i.d. Poisson(``lam``) sequence.

    The sequence has ``max(min_length, ceil(min_nonzero / lam))`` positions and
    is extended by the same amount until it holds at least ``min_nonzero``
    nonzero counts.  Deterministic in ``(lam, kernel, seed)``.
    """
    if lam <= 0:
        raise ValueError("rate must be positive")
    rng = np.random.default_rng(seed)
    n = simulation_length(lam, min_length, min_nonzero)
    x = rng.poisson(lam, n)
    while np.count_nonzero(x) < min_nonzero:
        x = np.concatenate((x, rng.poisson(lam, n)))
    return local_maxima_heights(x, kernel)


def _sim_one(lam, kernel, seed_seq, min_length, min_nonzero):
    h = simulate_heights(lam, kernel, seed_seq, min_length, min_nonzero)
    n = simulation_length(lam, min_length, min_nonzero)
    return np.sort(h), n


def bspline_basis(x: np.ndarray, n_basis: int = 5, degree: int = 3) -> np.ndarray:
    """Design matrix of ``n_basis`` B-splines with uniform interior knots on [min(x), max(x)]."""
    a, b = float(np.min(x)), float(np.max(x))
    n_interior = n_basis - degree - 1
    if n_interior < 0:
        raise ValueError("need n_basis >= degree + 1")
    interior = np.linspace(a, b, n_interior + 2)[1:-1]
    knots = np.concatenate(([a] * (degree + 1), interior, [b] * (degree + 1)))
    return BSpline.design_matrix(np.clip(x, a, b), knots, degree).toarray()


def smooth_over_lambda(raw: np.ndarray, log_lambda: np.ndarray, n_basis: int = 5) -> np.ndarray:
    """Project every column of ``raw`` (rows indexed by rate) onto the B-spline basis.

    Columns that are exactly constant are returned unchanged.
    """
    B = bspline_basis(log_lambda, n_basis)
    coef, *_ = np.linalg.lstsq(B, raw, rcond=None)
    out = B @ coef
    flat = np.all(raw == raw[:1], axis=0)
    out[:, flat] = raw[:, flat]
    return out


#: candidate roughness penalties for the logit smoother, chosen per height by AIC
PENALTY_GRID = (0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0)


def _binomial_deviance(y, p, n):
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(y > 0, y * np.log(y / p), 0.0)
        b = np.where(y < 1, (1 - y) * np.log((1 - y) / (1 - p)), 0.0)
    return float(2.0 * np.sum(n * (a + b)))


def _penalized_logit_fit(B, y, n, pen, max_iter):
    p0 = (y * n + 0.5) / (n + 1.0)
    beta = np.linalg.lstsq(B, np.log(p0 / (1 - p0)), rcond=None)[0]
    for _ in range(max_iter):
        eta = np.clip(B @ beta, -30.0, 30.0)
        p = 1.0 / (1.0 + np.exp(-eta))
        var = p * (1 - p)
        z = eta + (y - p) / (var + 1e-300)
        wts = n * var
        new = np.linalg.solve(B.T @ (wts[:, None] * B) + pen, B.T @ (wts * z))
        done = np.max(np.abs(new - beta)) < 1e-9
        beta = new
        if done:
            break
    eta = np.clip(B @ beta, -30.0, 30.0)
    p = 1.0 / (1.0 + np.exp(-eta))
    info = B.T @ ((n * p * (1 - p))[:, None] * B)
    edf = float(np.trace(np.linalg.solve(info + pen, info)))
    return p, _binomial_deviance(y, p, n) + 2.0 * edf


def smooth_over_lambda_logit(raw: np.ndarray, n: np.ndarray, log_lambda: np.ndarray,
                             n_basis: int = 5, penalties=PENALTY_GRID, ridge: float = 1e-6,
                             max_iter: int = 100) -> np.ndarray:
    """Binomial (logit link) regression of each column of ``raw`` on the B-spline basis.

    ``raw[i, j]`` is the fraction of ``n[i]`` simulated maxima exceeding
    height ``j``.  Fitted by penalized iteratively reweighted least squares.
    The penalty on second differences of the coefficients shrinks the fit
    toward a straight line in ``(log lam, logit F)``; its weight is chosen
    per column by AIC from ``penalties``.  Without it, a basis function
    whose rates saw no exceedance would drive its coefficient to minus
    infinity and the tail to zero.  Exactly constant columns are returned
    unchanged.
    """
    B = bspline_basis(log_lambda, n_basis)
    n = np.maximum(np.asarray(n, dtype=float), 1.0)
    out = raw.copy()
    D = np.diff(np.eye(n_basis), 2, axis=0)
    P = D.T @ D
    eye = ridge * np.eye(n_basis)
    for j in range(raw.shape[1]):
        y = raw[:, j]
        if np.all(y == y[0]):
            continue
        fits = [_penalized_logit_fit(B, y, n, k * P + eye, max_iter) for k in penalties]
        out[:, j] = min(fits, key=lambda f: f[1])[0]
    return out


def monotone_decreasing_rows(values: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    for i, row in enumerate(values):
        out[i] = isotonic_regression(row, increasing=False).x
    return out


@dataclass
class SurvivalTable:
    """Smoothed survival values ``values[i, j] = F(u_grid[j]; lambda_grid[i])``.

    ``heights`` keeps the distinct simulated heights per rate (the attainable
    values used for null p-value distributions); ``n_maxima`` the number of
    simulated local maxima per rate, which sets the resolution floor.
    """

    lambda_grid: np.ndarray
    u_grid: np.ndarray
    values: np.ndarray
    raw_values: np.ndarray
    n_maxima: np.ndarray
    heights: list = field(repr=False)
    kernel_fingerprint: str = ""
    mode_value: float = float("nan")
    seed: int | None = None
    sim_lengths: np.ndarray | None = None
    min_length: int = DEFAULT_MIN_LENGTH

    @property
    def lambda_range(self) -> tuple[float, float]:
        return float(self.lambda_grid[0]), float(self.lambda_grid[-1])

    def covers(self, lam) -> bool:
        lam = np.asarray(lam, dtype=float)
        lo, hi = self.lambda_range
        tol = 1e-12 * hi
        return bool(np.all((lam >= lo - tol) & (lam <= hi + tol)))

    def check_kernel(self, kernel: Kernel):
        if kernel.fingerprint != self.kernel_fingerprint:
            raise FingerprintMismatch("survival table was built with a different kernel")

    def nearest_index(self, lam) -> np.ndarray:
        x = np.log(np.asarray(lam, dtype=float))
        g = np.log(self.lambda_grid)
        i = np.clip(np.searchsorted(g, x), 1, len(g) - 1)
        return np.where(np.abs(x - g[i - 1]) <= np.abs(g[i] - x), i - 1, i)

    def lookup(self, u, lam, return_flags: bool = False):
        """Bilinear interpolation of the table in ``(log lam, u)``.

        Heights below the grid get 1 and heights above it get 0.  Heights
        above the grid, and any value under ``1 / n_maxima`` at the nearest
        rate, are flagged as below the Monte Carlo resolution.  Rates outside
        the grid raise :class:`TableRangeError`.
        """
        u = np.asarray(u, dtype=float)
        lam = np.asarray(lam, dtype=float)
        u, lam = np.broadcast_arrays(u, lam)
        if not self.covers(lam):
            lo, hi = self.lambda_range
            raise TableRangeError(f"rate outside table range [{lo:.4g}, {hi:.4g}]")
        g = np.log(self.lambda_grid)
        x = np.clip(np.log(lam), g[0], g[-1])
        i = np.clip(np.searchsorted(g, x, side="right") - 1, 0, len(g) - 2)
        fx = (x - g[i]) / (g[i + 1] - g[i])
        ug = self.u_grid
        j = np.clip(np.searchsorted(ug, u, side="right") - 1, 0, len(ug) - 2)
        fu = np.clip((u - ug[j]) / (ug[j + 1] - ug[j]), 0.0, 1.0)
        V = self.values
        # a + f * (b - a) is exact when neighbouring values are equal
        lo_row = V[i, j] + fu * (V[i, j + 1] - V[i, j])
        hi_row = V[i + 1, j] + fu * (V[i + 1, j + 1] - V[i + 1, j])
        p = lo_row + fx * (hi_row - lo_row)
        p = np.where(u < ug[0], 1.0, p)
        floor = 1.0 / np.maximum(self.n_maxima[self.nearest_index(lam)], 1)
        above = u > ug[-1]
        p = np.where(above, 0.0, p)
        below = above | (p < floor)
        if p.ndim == 0:
            p, below = float(p), bool(below)
        return (p, below) if return_flags else p

    def attainable_heights(self, lam: float) -> np.ndarray:
        return self.heights[int(self.nearest_index(lam))]

    def save(self, path):
        offsets = np.concatenate(([0], np.cumsum([len(h) for h in self.heights])))
        np.savez_compressed(
            path,
            format_version=np.array(TABLE_FORMAT_VERSION),
            lambda_grid=self.lambda_grid, u_grid=self.u_grid, values=self.values,
            raw_values=self.raw_values, n_maxima=self.n_maxima,
            heights=np.concatenate(self.heights) if self.heights else np.empty(0),
            height_offsets=offsets,
            kernel_fingerprint=np.array(self.kernel_fingerprint),
            mode_value=np.array(self.mode_value),
            seed=np.array(-1 if self.seed is None else self.seed),
            sim_lengths=self.sim_lengths if self.sim_lengths is not None else np.empty(0),
            min_length=np.array(self.min_length),
        )

    @classmethod
    def load(cls, path) -> "SurvivalTable":
        with np.load(path, allow_pickle=False) as z:
            version = int(z["format_version"])
            if version != TABLE_FORMAT_VERSION:
                raise ValueError(f"unsupported table format version {version}")
            off = z["height_offsets"]
            flat = z["heights"]
            seed = int(z["seed"])
            return cls(
                lambda_grid=z["lambda_grid"], u_grid=z["u_grid"], values=z["values"],
                raw_values=z["raw_values"], n_maxima=z["n_maxima"],
                heights=[flat[off[k]:off[k + 1]] for k in range(len(off) - 1)],
                kernel_fingerprint=str(z["kernel_fingerprint"]),
                mode_value=float(z["mode_value"]),
                seed=None if seed < 0 else seed,
                sim_lengths=z["sim_lengths"], min_length=int(z["min_length"]),
            )


def table_range(lambda0_plus, margin: float = 0.25) -> tuple[float, float]:
    """Rate range ``[min * (1 - margin), max * (1 + margin)]`` of the observed floors."""
    lam = np.asarray(lambda0_plus, dtype=float)
    if lam.size == 0 or np.min(lam) <= 0:
        raise ValueError("need positive background rates to size the table")
    return float(lam.min() * (1 - margin)), float(lam.max() * (1 + margin))


def build_table(lambda_min: float, lambda_max: float, kernel: Kernel, seed: int = 0,
                n_lambda: int = 300, n_u: int = 200, n_basis: int = 5,
                smoothing: str = "logit", min_length: int = DEFAULT_MIN_LENGTH, min_nonzero: int = 100,
                n_jobs: int | None = None) -> SurvivalTable:
    """Simulate and tabulate ``F(u; lam)`` on a log-spaced grid of rates.

    Each rate gets its own child of ``SeedSequence(seed)``, so the table does
    not depend on ``n_jobs``.  The height grid starts just below the kernel
    mode value, has a node exactly at it, and is log-spaced up to the largest
    simulated height rounded up to ``w0 * 2**k``.
    """
    if not (0 < lambda_min < lambda_max) or not np.isfinite(lambda_max):
        raise ValueError(f"degenerate rate range [{lambda_min}, {lambda_max}]")
    if n_lambda < n_basis or n_u < 3:
        raise ValueError("grid too small")
    if smoothing not in ("logit", "linear", "none"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    lambda_grid = np.geomspace(lambda_min, lambda_max, n_lambda)
    lambda_grid[0], lambda_grid[-1] = lambda_min, lambda_max
    children = np.random.SeedSequence(seed).spawn(n_lambda)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_sim_one)(lam, kernel, ss, min_length, min_nonzero)
        for lam, ss in zip(lambda_grid.tolist(), children)
    )
    heights = [h for h, _ in results]
    sim_lengths = np.array([n for _, n in results], dtype=np.int64)
    n_maxima = np.array([len(h) for h in heights], dtype=np.int64)

    w0 = kernel.mode_value
    top = max([h[-1] for h in heights if len(h)] + [w0 * 1.01])
    # round up to w0 * 2**k so that rebuilds with other seeds share the grid
    top = w0 * 2.0 ** math.ceil(math.log2(top / w0))
    upper = np.geomspace(w0, top, n_u - 1)
    upper[0], upper[-1] = w0, top
    u_grid = np.concatenate(([w0 * (1 - 1e-9)], upper))

    raw = np.empty((n_lambda, n_u))
    for i, h in enumerate(heights):
        if len(h) == 0:
            raw[i] = np.where(u_grid <= w0, 1.0, 0.0)
        else:
            raw[i] = (len(h) - np.searchsorted(h, u_grid, side="left")) / len(h)
    if smoothing == "logit":
        values = smooth_over_lambda_logit(raw, n_maxima, np.log(lambda_grid), n_basis)
    elif smoothing == "linear":
        values = smooth_over_lambda(raw, np.log(lambda_grid), n_basis)
    elif smoothing == "none":
        values = raw.copy()
    else:
        raise ValueError(f"unknown smoothing {smoothing!r}")
    values = monotone_decreasing_rows(np.clip(values, 0.0, 1.0))
    values = np.clip(values, 0.0, 1.0)
    logger.info("built survival table: %d rates in [%.4g, %.4g], %d heights, %d..%d maxima per rate",
                n_lambda, lambda_min, lambda_max, n_u, n_maxima.min(), n_maxima.max())
    return SurvivalTable(
        lambda_grid=lambda_grid, u_grid=u_grid, values=values, raw_values=raw,
        n_maxima=n_maxima, heights=[np.unique(h) for h in heights],
        kernel_fingerprint=kernel.fingerprint, mode_value=w0, seed=seed,
        sim_lengths=sim_lengths, min_length=min_length,
    )


def pvalue(height, lambda0_plus, table: SurvivalTable, return_flags: bool = False):
    """p-value of a local maximum of the given height under background ``lambda0_plus``."""
    height = np.asarray(height, dtype=float)
    if np.any(height <= 0):
        raise ValueError("candidate heights must be positive")
    return table.lookup(height, lambda0_plus, return_flags=return_flags)
