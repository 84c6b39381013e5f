"""Smoothing kernels: the quartic biweight window and the unit-sum Kernel type."""

from __future__ import annotations

import hashlib
import os

import numpy as np


class KernelError(ValueError):
    pass


def quartic_biweight(width: int) -> np.ndarray:
    """Quartic biweight ``(1 - (2t/(W-1))**2)**2`` on ``t = -(W-1)/2 .. (W-1)/2``.

    Vanishes at both ends and equals 1 at the center.
    """
    if width < 3 or width % 2 == 0:
        raise KernelError(f"biweight width must be odd and >= 3, got {width}")
    half = (width - 1) // 2
    t = np.arange(-half, half + 1, dtype=float)
    b = (1.0 - (t / half) ** 2) ** 2
    b[0] = b[-1] = 0.0
    return b


def count_strict_maxima(values: np.ndarray) -> int:
    """Number of runs of equal values strictly higher than both neighbouring runs."""
    v = np.concatenate(([-np.inf], np.asarray(values, dtype=float), [-np.inf]))
    starts = np.flatnonzero(np.diff(v) != 0) + 1
    runs = v[np.concatenate(([0], starts))]
    return int(np.sum((runs[1:-1] > runs[:-2]) & (runs[1:-1] > runs[2:])))


class Kernel:
    """Odd-length, symmetric, unimodal, nonnegative weights with unit sum.

    The weights are symmetrized and scaled to unit sum on construction;
    anything that still violates the contract raises :class:`KernelError`.
    With ``normalize=False`` the weights are kept bit-for-bit and must already
    sum to 1 within 1e-9 (used when reading a kernel file back).
    """

    def __init__(self, weights, normalize: bool = True):
        w = np.array(weights, dtype=float)
        if w.ndim != 1 or len(w) % 2 == 0:
            raise KernelError("kernel must be a 1-d vector of odd length")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise KernelError("kernel weights must be finite and nonnegative")
        if not np.allclose(w, w[::-1], rtol=1e-6, atol=1e-12 * max(w.max(), 1e-300)):
            raise KernelError("kernel must be symmetric")
        w = 0.5 * (w + w[::-1])
        total = w.sum()
        if total <= 0:
            raise KernelError("kernel weights are all zero")
        if normalize:
            w = w / total
        elif abs(total - 1.0) > 1e-9:
            raise KernelError(f"kernel weights sum to {total}, not 1")
        half = len(w) // 2
        if count_strict_maxima(w) != 1 or w[half] != w.max():
            raise KernelError("kernel must be unimodal with its mode at the center")
        w.setflags(write=False)
        self.weights = w

    def __len__(self):
        return len(self.weights)

    def __eq__(self, other):
        return isinstance(other, Kernel) and np.array_equal(self.weights, other.weights)

    def __repr__(self):
        return f"Kernel(width={len(self)}, mode={self.mode_value:.6g})"

    @property
    def width(self) -> int:
        return len(self.weights)

    @property
    def half_width(self) -> int:
        return len(self.weights) // 2

    @property
    def mode_value(self) -> float:
        """Height of the smoothed track at an isolated single tag."""
        return float(self.weights[self.half_width])

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(-self.half_width, self.half_width + 1)

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.weights, dtype="<f8").tobytes()).hexdigest()

    def write(self, dest):
        """Write as two tab-separated columns (offset, weight) at full precision."""
        fh = open(dest, "w") if isinstance(dest, (str, os.PathLike)) else dest
        try:
            fh.write("#offset\tweight\n")
            for off, wt in zip(self.offsets.tolist(), self.weights.tolist()):
                fh.write(f"{off}\t{wt!r}\n")
        finally:
            if fh is not dest:
                fh.close()

    @classmethod
    def read(cls, source) -> "Kernel":
        fh = open(source) if isinstance(source, (str, os.PathLike)) else source
        try:
            rows = [line.split() for line in fh if line.strip() and not line.startswith("#")]
        finally:
            if fh is not source:
                fh.close()
        rows.sort(key=lambda r: int(r[0]))
        return cls([float(r[1]) for r in rows], normalize=False)


def gaussian_kernel(sigma: float = 50.0, truncate: float = 4.0) -> Kernel:
    """Discretized Gaussian truncated at ``truncate * sigma``, unit sum."""
    if sigma <= 0:
        raise KernelError("sigma must be positive")
    half = int(np.ceil(truncate * sigma))
    t = np.arange(-half, half + 1, dtype=float)
    return Kernel(np.exp(-0.5 * (t / sigma) ** 2))


def default_peak_shape(width: int = 801, scale: float = 73.0, power: float = 1.5) -> Kernel:
    """A heavy-tailed symmetric peak shape windowed by the quartic biweight.

    Used when no shape has been estimated from data (e.g. in simulations).
    With the defaults the mode value is close to 0.0076.
    """
    half = (width - 1) // 2
    t = np.arange(-half, half + 1, dtype=float)
    return Kernel((1.0 + (t / scale) ** 2) ** (-power) * quartic_biweight(width))
