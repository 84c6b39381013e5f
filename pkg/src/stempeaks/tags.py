"""Tag tables, duplicate removal, strand alignment and sparse count tracks.

Coordinates are 0-based and half-open.  The location of a forward tag is its
start; the location of a reverse tag is ``end - 1`` (its higher address).
"""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

logger = logging.getLogger(__name__)

FORWARD = "+"
REVERSE = "-"
_STRANDS = {"+": FORWARD, "-": REVERSE, "−": REVERSE}


class TagParseError(ValueError):
    """Raised for a malformed line in a tag table."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, slots=True)
class TagRecord:
    chrom: str
    start: int
    end: int
    strand: str

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"tag start {self.start} must be < end {self.end}")
        if self.strand not in (FORWARD, REVERSE):
            raise ValueError(f"unknown strand {self.strand!r}")

    @property
    def location(self) -> int:
        return self.start if self.strand == FORWARD else self.end - 1


def _open_text(source) -> io.TextIOBase:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r")
    return source


def iter_tags(source) -> Iterator[TagRecord]:
    """Yield tags from a 4-column tab-separated table (chrom, start, end, strand).

    Lines starting with ``#`` and blank lines are skipped.
    """
    fh = _open_text(source)
    try:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) < 4:
                raise TagParseError(lineno, f"expected 4 tab-separated fields, got {len(fields)}")
            chrom, start, end, strand = fields[:4]
            try:
                start_i, end_i = int(start), int(end)
            except ValueError:
                raise TagParseError(lineno, f"non-integer coordinate in {line!r}") from None
            if strand not in _STRANDS:
                raise TagParseError(lineno, f"unknown strand symbol {strand!r}")
            if start_i < 0 or start_i >= end_i:
                raise TagParseError(lineno, f"invalid interval [{start_i}, {end_i})")
            yield TagRecord(chrom, start_i, end_i, _STRANDS[strand])
    finally:
        if fh is not source:
            fh.close()


def parse_tags(source) -> list[TagRecord]:
    """Parse a tag table into a list of records, in input order."""
    return list(iter_tags(source))


def dedup_tags(tags: Iterable[TagRecord]) -> list[TagRecord]:
    """Keep the first tag for every (chrom, location, strand); order is preserved."""
    seen = set()
    out = []
    for tag in tags:
        key = (tag.chrom, tag.location, tag.strand)
        if key not in seen:
            seen.add(key)
            out.append(tag)
    return out


class TagSet:
    """Columnar tag locations per chromosome.

    ``locations[chrom]`` holds tag locations and ``reverse[chrom]`` a boolean
    mask marking reverse-strand tags.  This is what the pipeline passes around;
    lists of :class:`TagRecord` are converted on entry.
    """

    def __init__(self, locations: Mapping[str, np.ndarray], reverse: Mapping[str, np.ndarray]):
        self.locations = {c: np.asarray(v, dtype=np.int64) for c, v in locations.items()}
        self.reverse = {c: np.asarray(reverse[c], dtype=bool) for c in self.locations}

    @classmethod
    def from_records(cls, tags: Iterable[TagRecord]) -> "TagSet":
        locs: dict[str, list[int]] = {}
        revs: dict[str, list[bool]] = {}
        for tag in tags:
            locs.setdefault(tag.chrom, []).append(tag.location)
            revs.setdefault(tag.chrom, []).append(tag.strand == REVERSE)
        return cls(locs, revs)

    @classmethod
    def read(cls, source) -> "TagSet":
        return cls.from_records(iter_tags(source))

    def __len__(self) -> int:
        return sum(len(v) for v in self.locations.values())

    @property
    def chroms(self) -> list[str]:
        return list(self.locations)

    def strand_locations(self, chrom: str, reverse: bool) -> np.ndarray:
        if chrom not in self.locations:
            return np.empty(0, dtype=np.int64)
        mask = self.reverse[chrom]
        return self.locations[chrom][mask if reverse else ~mask]

    def dedup(self) -> "TagSet":
        locs, revs = {}, {}
        for chrom, loc in self.locations.items():
            rev = self.reverse[chrom]
            keys = loc * 2 + rev
            _, first = np.unique(keys, return_index=True)
            first.sort()
            locs[chrom], revs[chrom] = loc[first], rev[first]
        return TagSet(locs, revs)

    def records(self) -> list[TagRecord]:
        out = []
        for chrom, loc in self.locations.items():
            for x, r in zip(loc.tolist(), self.reverse[chrom].tolist()):
                # reconstruct a 1 bp tag at the location
                out.append(TagRecord(chrom, x, x + 1, REVERSE if r else FORWARD))
        return out

    def max_location(self) -> dict[str, int]:
        return {c: int(v.max()) if len(v) else -1 for c, v in self.locations.items()}


def as_tagset(tags) -> TagSet:
    if isinstance(tags, TagSet):
        return tags
    return TagSet.from_records(tags)


class CountTrack:
    """Sparse nonnegative integer counts along each chromosome.

    Parameters
    ----------
    data : mapping chrom -> (positions, counts)
        Positions strictly increasing, counts >= 1.  Chromosomes listed in
        ``chrom_lengths`` but absent from ``data`` are empty.
    chrom_lengths : mapping chrom -> int
        Length of every chromosome in bp.  Its key order is the genome order.
    """

    def __init__(self, data: Mapping[str, tuple], chrom_lengths: Mapping[str, int]):
        self.chrom_lengths = {c: int(n) for c, n in chrom_lengths.items()}
        self._pos: dict[str, np.ndarray] = {}
        self._cnt: dict[str, np.ndarray] = {}
        for chrom in self.chrom_lengths:
            pos, cnt = data.get(chrom, ((), ()))
            self._pos[chrom] = np.asarray(pos, dtype=np.int64)
            self._cnt[chrom] = np.asarray(cnt, dtype=np.int64)
        unknown = set(data) - set(self.chrom_lengths)
        if unknown:
            raise ValueError(f"no length given for chromosomes {sorted(unknown)}")
        self._check()

    def _check(self):
        for chrom, pos in self._pos.items():
            cnt = self._cnt[chrom]
            if pos.shape != cnt.shape or pos.ndim != 1:
                raise ValueError(f"{chrom}: positions and counts must be 1-d and equal length")
            if len(pos) == 0:
                continue
            if np.any(np.diff(pos) <= 0):
                raise ValueError(f"{chrom}: positions must be strictly increasing")
            if cnt.min() < 1:
                raise ValueError(f"{chrom}: stored counts must be >= 1")
            if pos[0] < 0 or pos[-1] >= self.chrom_lengths[chrom]:
                raise ValueError(f"{chrom}: position outside [0, {self.chrom_lengths[chrom]})")

    @classmethod
    def from_dense(cls, arrays: Mapping[str, np.ndarray]) -> "CountTrack":
        data, lengths = {}, {}
        for chrom, arr in arrays.items():
            arr = np.asarray(arr)
            if np.any(arr < 0):
                raise ValueError("counts must be nonnegative")
            pos = np.flatnonzero(arr)
            data[chrom] = (pos, arr[pos].astype(np.int64))
            lengths[chrom] = len(arr)
        return cls(data, lengths)

    @property
    def chroms(self) -> list[str]:
        return list(self.chrom_lengths)

    @property
    def genome_length(self) -> int:
        return sum(self.chrom_lengths.values())

    def positions(self, chrom: str) -> np.ndarray:
        return self._pos[chrom]

    def counts(self, chrom: str) -> np.ndarray:
        return self._cnt[chrom]

    def items(self):
        for chrom in self.chrom_lengths:
            yield chrom, self._pos[chrom], self._cnt[chrom]

    def total(self, chrom: str | None = None) -> int:
        if chrom is not None:
            return int(self._cnt[chrom].sum())
        return int(sum(c.sum() for c in self._cnt.values()))

    def count_at(self, chrom: str, position: int) -> int:
        pos = self._pos.get(chrom)
        if pos is None:
            return 0
        i = np.searchsorted(pos, position)
        if i < len(pos) and pos[i] == position:
            return int(self._cnt[chrom][i])
        return 0

    def to_dense(self, chrom: str) -> np.ndarray:
        out = np.zeros(self.chrom_lengths[chrom], dtype=np.int64)
        out[self._pos[chrom]] = self._cnt[chrom]
        return out

    def scaled(self, factor: int) -> "CountTrack":
        return CountTrack({c: (p, n * int(factor)) for c, p, n in self.items()}, self.chrom_lengths)

    def __eq__(self, other):
        if not isinstance(other, CountTrack) or other.chrom_lengths != self.chrom_lengths:
            return NotImplemented if not isinstance(other, CountTrack) else False
        return all(
            np.array_equal(p, other.positions(c)) and np.array_equal(n, other.counts(c))
            for c, p, n in self.items()
        )

    def __repr__(self):
        return f"CountTrack({len(self.chrom_lengths)} chroms, total={self.total()})"

    def write(self, dest):
        """Write as tab-separated (chrom, position, count) in genome order."""
        fh = open(dest, "w") if isinstance(dest, (str, os.PathLike)) else dest
        try:
            for chrom, pos, cnt in self.items():
                for p, n in zip(pos.tolist(), cnt.tolist()):
                    fh.write(f"{chrom}\t{p}\t{n}\n")
        finally:
            if fh is not dest:
                fh.close()

    @classmethod
    def read(cls, source, chrom_lengths: Mapping[str, int]) -> "CountTrack":
        acc: dict[str, dict[int, int]] = {}
        fh = _open_text(source)
        try:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip() or line.startswith("#"):
                    continue
                fields = line.rstrip("\r\n").split("\t")
                if len(fields) < 3:
                    raise TagParseError(lineno, "expected chrom, position, count")
                d = acc.setdefault(fields[0], {})
                d[int(fields[1])] = d.get(int(fields[1]), 0) + int(fields[2])
        finally:
            if fh is not source:
                fh.close()
        data = {}
        for chrom, d in acc.items():
            pos = np.array(sorted(d), dtype=np.int64)
            data[chrom] = (pos, np.array([d[p] for p in pos.tolist()], dtype=np.int64))
        return cls(data, chrom_lengths)


def shift_and_count(tags, shift: int, chrom_lengths: Mapping[str, int] | None = None,
                    report: dict | None = None) -> CountTrack:
    """Shift tags toward their 3' end and count coinciding locations.

    Forward locations move up by ``shift`` and reverse locations down.
    Shifted locations outside ``[0, length)`` are dropped; their number is
    stored under ``report["dropped_at_boundary"]`` when a report dict is given.
    When ``chrom_lengths`` is omitted, each chromosome ends one past its
    highest unshifted tag location.
    """
    if shift < 0:
        raise ValueError("shift must be >= 0")
    tagset = as_tagset(tags)
    if chrom_lengths is None:
        chrom_lengths = infer_chrom_lengths(tagset)
    data = {}
    dropped = 0
    for chrom, loc in tagset.locations.items():
        if chrom not in chrom_lengths:
            raise ValueError(f"no length given for chromosome {chrom!r}")
        moved = np.where(tagset.reverse[chrom], loc - shift, loc + shift)
        keep = (moved >= 0) & (moved < chrom_lengths[chrom])
        dropped += int(len(moved) - keep.sum())
        pos, cnt = np.unique(moved[keep], return_counts=True)
        data[chrom] = (pos, cnt)
    if dropped:
        logger.info("dropped %d tags shifted past a chromosome end", dropped)
    if report is not None:
        report["dropped_at_boundary"] = report.get("dropped_at_boundary", 0) + dropped
    return CountTrack(data, chrom_lengths)


def infer_chrom_lengths(*tagsets: TagSet) -> dict[str, int]:
    lengths: dict[str, int] = {}
    for ts in tagsets:
        for chrom, top in ts.max_location().items():
            lengths[chrom] = max(lengths.get(chrom, 0), top + 1)
    return lengths


def read_chrom_lengths(path) -> dict[str, int]:
    """Read a two-column (chrom, length) table."""
    lengths = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) < 2:
                raise TagParseError(lineno, "expected chrom and length")
            lengths[fields[0]] = int(fields[1])
    return lengths
