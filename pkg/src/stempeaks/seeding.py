"""Deterministic per-stage seeds derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def stage_seed(root: int, stage: str, *index: int) -> int:
    """A 63-bit seed for ``stage`` (and optional integer indices) under ``root``.

    Stable across processes and Python versions (no use of ``hash``).
    """
    key = [int(root), zlib.crc32(stage.encode())] + [int(i) for i in index]
    return int(np.random.SeedSequence(key).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
