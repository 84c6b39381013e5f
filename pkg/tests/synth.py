"""Synthetic tag files for end-to-end tests."""

from __future__ import annotations

import numpy as np

TAG_LEN = 35


def make_tags(rng, chrom_lengths, n_sites, half_shift=60, fragments=40, spread=40.0,
              background=0.002):
    """Return ``(rows, sites)``; rows are (chrom, start, end, strand) tuples."""
    rows, sites = [], []
    for chrom, length in chrom_lengths.items():
        n_bg = rng.poisson(background * length)
        starts = rng.integers(0, length - TAG_LEN, n_bg)
        strands = rng.random(n_bg) < 0.5
        rows += [(chrom, int(s), int(s) + TAG_LEN, "+" if f else "-") for s, f in zip(starts, strands)]
        for c in np.sort(rng.choice(np.arange(2000, length - 2000, 3000), n_sites[chrom], replace=False)):
            sites.append((chrom, int(c)))
            n = rng.poisson(fragments)
            centers = np.rint(c + rng.normal(0, spread, n)).astype(int)
            fwd = rng.random(n) < 0.5
            for x, f in zip(centers.tolist(), fwd.tolist()):
                if f:
                    s = x - half_shift
                    rows.append((chrom, s, s + TAG_LEN, "+"))
                else:
                    e = x + half_shift + 1
                    rows.append((chrom, e - TAG_LEN, e, "-"))
    return rows, sites


def write_tags(path, rows):
    with open(path, "w") as fh:
        fh.write("#chrom\tstart\tend\tstrand\n")
        for r in rows:
            fh.write("\t".join(map(str, r)) + "\n")
