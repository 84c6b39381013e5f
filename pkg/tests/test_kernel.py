import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stempeaks.kernel import (
    Kernel, KernelError, count_strict_maxima, default_peak_shape, gaussian_kernel, quartic_biweight,
)


def test_biweight_width_five():
    assert np.array_equal(quartic_biweight(5), [0.0, 9 / 16, 1.0, 9 / 16, 0.0])


@given(st.integers(1, 2000))
def test_biweight_ends_zero_center_one(h):
    b = quartic_biweight(2 * h + 1)
    assert b[0] == 0.0 and b[-1] == 0.0 and b[h] == 1.0
    assert np.array_equal(b, b[::-1])
    assert np.all(np.diff(b[:h + 1]) >= 0)


@pytest.mark.parametrize("width", [1, 2, 4, 800])
def test_biweight_rejects_bad_width(width):
    with pytest.raises(KernelError):
        quartic_biweight(width)


def test_strict_maxima_counts_plateaus_once():
    assert count_strict_maxima([0, 1, 1, 0]) == 1
    assert count_strict_maxima([0, 1, 0, 1, 0]) == 2
    assert count_strict_maxima([1, 1, 1]) == 1
    assert count_strict_maxima([0, 1, 1, 2]) == 1


def test_kernel_is_normalized_and_frozen():
    k = Kernel([1, 2, 1])
    assert np.allclose(k.weights, [0.25, 0.5, 0.25])
    assert k.mode_value == 0.5 and k.half_width == 1
    with pytest.raises(ValueError):
        k.weights[0] = 1.0


@pytest.mark.parametrize("w", [[1, 2], [1, 2, 3], [2, 1, 2], [0, 0, 0], [-1, 2, -1], [1, np.nan, 1]])
def test_kernel_contract_violations(w):
    with pytest.raises(KernelError):
        Kernel(w)


def test_kernel_file_roundtrip_is_bit_exact():
    k = default_peak_shape()
    buf = io.StringIO()
    k.write(buf)
    buf.seek(0)
    back = Kernel.read(buf)
    assert back == k and back.fingerprint == k.fingerprint


def test_fingerprint_depends_on_weights():
    assert Kernel([1, 2, 1]).fingerprint != Kernel([1, 3, 1]).fingerprint


def test_default_shape_mode_value():
    k = default_peak_shape()
    assert k.width == 801
    assert k.mode_value == pytest.approx(0.00758, abs=5e-5)
    assert k.weights[0] == 0.0


def test_gaussian_kernel_truncation():
    k = gaussian_kernel(50.0)
    assert k.width == 401
    assert k.weights.sum() == pytest.approx(1.0, abs=1e-12)
