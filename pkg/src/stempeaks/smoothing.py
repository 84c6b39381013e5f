"""Matched-filter smoothing of sparse count tracks and local-maximum extraction.

The smoothed value is only evaluated within ``half_width`` of a nonzero
count.  Tags are split into groups wherever two consecutive tags are at least
``width + 1`` bp apart, so each group's smoothed support is flanked by true
zeros and groups can be processed independently.  Groups are packed into
batches of bounded size; within a batch the convolution is a scatter-add over
kernel offsets, vectorized across tags.

Every smoothed value is accumulated in the same order (by kernel offset), so
identical local count patterns produce bit-identical values and plateaus can
be detected with exact equality.  An isolated single count yields exactly the
kernel's mode value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import pandas as pd

from .kernel import Kernel
from .tags import CountTrack

#: upper bound on the number of positions evaluated per batch
DEFAULT_BATCH_SIZE = 4_000_000

CANDIDATE_COLUMNS = ["chrom", "position", "height", "near_edge"]


def _group_bounds(pos: np.ndarray, min_gap: int) -> tuple[np.ndarray, np.ndarray]:
    if len(pos) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    cut = np.flatnonzero(np.diff(pos) >= min_gap) + 1
    first = np.concatenate(([0], cut))
    last = np.concatenate((cut, [len(pos)])) - 1
    return first, last


def _iter_batches(pos, cnt, kernel: Kernel, length: int, batch_size: int, group_gap: int):
    """Yield ``(seg_starts, seg_offsets, buffer)`` for batches of tag groups.

    ``buffer`` holds the concatenated smoothed segments; segment ``g`` covers
    chromosome positions ``seg_starts[g] + i`` at buffer index
    ``seg_offsets[g] + i``.  Every segment begins and ends with a zero.
    """
    w = kernel.weights
    half = kernel.half_width
    width = len(w)
    first, last = _group_bounds(pos, max(group_gap, width + 1))
    if len(first) == 0:
        return
    seg_len = pos[last] - pos[first] + width + 2
    g = 0
    n_groups = len(first)
    while g < n_groups:
        # at least one group per batch, however long
        stop = g + 1
        total = seg_len[g]
        while stop < n_groups and total + seg_len[stop] <= batch_size:
            total += seg_len[stop]
            stop += 1
        lens = seg_len[g:stop]
        offsets = np.concatenate(([0], np.cumsum(lens)[:-1]))
        buf = np.zeros(int(lens.sum()), dtype=float)
        t0, t1 = first[g], last[stop - 1] + 1
        group_of_tag = np.repeat(np.arange(stop - g), last[g:stop] - first[g:stop] + 1)
        base = offsets[group_of_tag] + (pos[t0:t1] - pos[first[g:stop]][group_of_tag]) + 1
        c = cnt[t0:t1].astype(float)
        for j in range(width):
            if w[j] != 0.0:
                buf[base + j] += c * w[j]
        seg_starts = pos[first[g:stop]] - half - 1
        # smoothed sequence is zero outside the chromosome
        for s, o, n in zip(seg_starts.tolist(), offsets.tolist(), lens.tolist()):
            if s < 0:
                buf[o:o + min(-s, n)] = 0.0
            if s + n > length:
                buf[o + max(length - s, 0):o + n] = 0.0
        yield seg_starts, offsets, buf
        g = stop


def _maxima_in_buffer(buf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run-length local maxima: (buffer index of run start, height)."""
    if len(buf) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    change = np.flatnonzero(buf[1:] != buf[:-1]) + 1
    starts = np.concatenate(([0], change))
    vals = buf[starts]
    left = np.concatenate(([-np.inf], vals[:-1]))
    right = np.concatenate((vals[1:], [-np.inf]))
    is_max = (vals > left) & (vals > right) & (vals > 0)
    return starts[is_max], vals[is_max]


def _buffer_to_position(idx, seg_starts, offsets):
    seg = np.searchsorted(offsets, idx, side="right") - 1
    return seg_starts[seg] + (idx - offsets[seg])


@dataclass
class SmoothTrack:
    """Smoothed values stored as per-chromosome lists of dense segments.

    Positions not covered by a segment have value 0.
    """

    kernel: Kernel
    chrom_lengths: dict
    segments: dict = field(default_factory=dict)  # chrom -> list[(start, values)]

    def value_at(self, chrom: str, position: int) -> float:
        for start, vals in self.segments.get(chrom, []):
            if start <= position < start + len(vals):
                return float(vals[position - start])
        return 0.0

    def to_dense(self, chrom: str) -> np.ndarray:
        n = self.chrom_lengths[chrom]
        out = np.zeros(n)
        for start, vals in self.segments.get(chrom, []):
            lo, hi = max(start, 0), min(start + len(vals), n)
            if hi > lo:
                out[lo:hi] = vals[lo - start:hi - start]
        return out


def convolve(track: CountTrack, kernel: Kernel, group_gap: int = 0,
             batch_size: int = DEFAULT_BATCH_SIZE) -> SmoothTrack:
    """Smooth ``track`` with ``kernel``: ``out(t) = sum_s w(s) * count(t - s)``.

    Materializes all segments; use :func:`find_candidates` to stream a whole
    genome without holding the smoothed track in memory.
    """
    smooth = SmoothTrack(kernel, dict(track.chrom_lengths))
    for chrom, pos, cnt in track.items():
        segs = []
        for seg_starts, offsets, buf in _iter_batches(pos, cnt, kernel, track.chrom_lengths[chrom],
                                                      batch_size, group_gap):
            ends = np.concatenate((offsets[1:], [len(buf)]))
            for s, o, e in zip(seg_starts.tolist(), offsets.tolist(), ends.tolist()):
                segs.append((s, buf[o:e].copy()))
        smooth.segments[chrom] = segs
    return smooth


def _candidate_frame(chroms, positions, heights, near_edge) -> pd.DataFrame:
    return pd.DataFrame({
        "chrom": pd.Series(chroms, dtype=object),
        "position": np.asarray(positions, dtype=np.int64),
        "height": np.asarray(heights, dtype=float),
        "near_edge": np.asarray(near_edge, dtype=bool),
    }, columns=CANDIDATE_COLUMNS)


def _edge_flags(positions, half, length):
    return (positions < half) | (positions >= length - half)


def local_maxima(smooth: SmoothTrack) -> pd.DataFrame:
    """Local maxima of a smoothed track.

    A maximal run of equal values higher than both flanking values yields a
    single candidate at the run's lowest address.  Candidates within
    ``half_width`` of a chromosome end are flagged ``near_edge``.
    """
    half = smooth.kernel.half_width
    parts = []
    for chrom, length in smooth.chrom_lengths.items():
        segs = smooth.segments.get(chrom, [])
        if not segs:
            continue
        starts = np.array([s for s, _ in segs], dtype=np.int64)
        lens = np.array([len(v) for _, v in segs], dtype=np.int64)
        offsets = np.concatenate(([0], np.cumsum(lens)[:-1]))
        buf = np.concatenate([v for _, v in segs])
        idx, h = _maxima_in_buffer(buf)
        p = _buffer_to_position(idx, starts, offsets)
        parts.append(_candidate_frame([chrom] * len(p), p, h, _edge_flags(p, half, length)))
    if not parts:
        return _candidate_frame([], [], [], [])
    return pd.concat(parts, ignore_index=True)


def iter_candidates(track: CountTrack, kernel: Kernel, group_gap: int = 0,
                    batch_size: int = DEFAULT_BATCH_SIZE) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
    """Stream ``(chrom, positions, heights)`` of local maxima batch by batch."""
    for chrom, pos, cnt in track.items():
        for seg_starts, offsets, buf in _iter_batches(pos, cnt, kernel, track.chrom_lengths[chrom],
                                                      batch_size, group_gap):
            idx, h = _maxima_in_buffer(buf)
            yield chrom, _buffer_to_position(idx, seg_starts, offsets), h


def find_candidates(track: CountTrack, kernel: Kernel, group_gap: int = 0,
                    batch_size: int = DEFAULT_BATCH_SIZE) -> pd.DataFrame:
    """Smooth and extract local maxima in one streaming pass.

    Returns a frame with columns ``chrom, position, height, near_edge`` in
    genome order.
    """
    half = kernel.half_width
    parts = []
    for chrom, p, h in iter_candidates(track, kernel, group_gap, batch_size):
        if len(p):
            flags = _edge_flags(p, half, track.chrom_lengths[chrom])
            parts.append(_candidate_frame([chrom] * len(p), p, h, flags))
    if not parts:
        return _candidate_frame([], [], [], [])
    return pd.concat(parts, ignore_index=True)


def local_maxima_heights(counts: np.ndarray, kernel: Kernel) -> np.ndarray:
    """Heights of all local maxima of a dense count vector after smoothing."""
    counts = np.asarray(counts)
    pos = np.flatnonzero(counts)
    parts = [_maxima_in_buffer(buf)[1]
             for _, _, buf in _iter_batches(pos, counts[pos], kernel, len(counts),
                                            DEFAULT_BATCH_SIZE, 0)]
    return np.concatenate(parts) if parts else np.empty(0)
