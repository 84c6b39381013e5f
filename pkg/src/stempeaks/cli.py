"""Command-line interface: ``stempeaks {align,table,call,simulate,diagnose}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .background import DEFAULT_GENOME_LENGTH, BackgroundRegressor, background_at
from .caller import StemPeakCaller
from .kernel import Kernel, default_peak_shape
from .multitest import PEAK_COLUMNS
from .shape import PeakShapeEstimator
from .simulate import SpikeInConfig, run_spikein
from .smoothing import find_candidates
from .survival import (
    DEFAULT_MIN_LENGTH, FingerprintMismatch, SurvivalTable, TableRangeError, build_table, table_range,
)
from .tags import CountTrack, TagSet, infer_chrom_lengths, read_chrom_lengths, shift_and_count

logger = logging.getLogger("stempeaks")

FLOAT_FORMAT = "%.10g"


class CliError(Exception):
    pass


def read_config(path) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment.  Keys may use ``-`` or ``_``."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def write_tsv(frame: pd.DataFrame, path):
    frame.to_csv(path, sep="\t", index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_report(report: dict, path):
    rows = [(k, v) for k, v in report.items()]
    write_tsv(pd.DataFrame(rows, columns=["key", "value"]), path)


def _existing(path: str) -> str:
    if not os.path.exists(path):
        raise CliError(f"input file not found: {path}")
    return path


def _read_tags(path: str, report: dict, prefix: str) -> TagSet:
    tags = TagSet.read(_existing(path))
    report[f"{prefix}_tags_in"] = len(tags)
    tags = tags.dedup()
    report[f"{prefix}_tags_dedup"] = len(tags)
    logger.info("%s: %d tags, %d after duplicate removal", path, report[f"{prefix}_tags_in"], len(tags))
    return tags


def _chrom_lengths(args, *tagsets) -> dict:
    if getattr(args, "chrom_lengths", None):
        return read_chrom_lengths(_existing(args.chrom_lengths))
    return infer_chrom_lengths(*tagsets)


def _load_kernel(args) -> Kernel | None:
    if getattr(args, "kernel", None):
        return Kernel.read(_existing(args.kernel))
    return None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- align

def _shape_estimator(args) -> PeakShapeEstimator:
    return PeakShapeEstimator(tentative_shift=args.tentative_shift, prelim_sigma=args.prelim_sigma,
                              n_peaks=args.n_peaks, profile_width=args.profile_width,
                              kernel_width=args.kernel_width, chrom=args.chrom)


def cmd_align(args) -> int:
    report: dict = {}
    tags = _read_tags(args.ip, report, "ip")
    lengths = _chrom_lengths(args, tags)
    est = _shape_estimator(args).fit(tags, chrom_lengths=lengths)
    out = _out_dir(args)
    (out / "shift.txt").write_text(f"{est.shift_}\n")
    est.kernel_.write(out / "kernel.tsv")
    write_tsv(est.profile_.to_frame(), out / "profiles.tsv")
    print(est.shift_)
    return 0


# ---------------------------------------------------------------- call

def _prepare_tracks(args, report):
    ip_tags = _read_tags(args.ip, report, "ip")
    ctl_tags = _read_tags(args.control, report, "control")
    lengths = _chrom_lengths(args, ip_tags, ctl_tags)
    kernel = _load_kernel(args)
    shift = args.shift
    if len(ip_tags) == 0:
        return None, None, kernel or default_peak_shape(), shift or 0, lengths
    if shift is None or kernel is None:
        est = _shape_estimator(args).fit(ip_tags, chrom_lengths=lengths)
        shift = est.shift_ if shift is None else shift
        kernel = est.kernel_ if kernel is None else kernel
        report["estimated_shift"] = est.shift_
    report["shift"] = shift
    drop: dict = {}
    ip = shift_and_count(ip_tags, shift, lengths, report=drop)
    report["ip_dropped_at_boundary"] = drop.get("dropped_at_boundary", 0)
    drop = {}
    control = shift_and_count(ctl_tags, shift, lengths, report=drop)
    report["control_dropped_at_boundary"] = drop.get("dropped_at_boundary", 0)
    return ip, control, kernel, shift, lengths


def _caller(args, kernel, table=None) -> StemPeakCaller:
    return StemPeakCaller(kernel=kernel, q=args.q, table=table, n_lambda=args.n_lambda, n_u=args.n_u,
                          margin=args.margin, window_small=args.window_small,
                          window_large=args.window_large, genome_length=args.genome_length,
                          seed=args.seed, min_length=args.min_length, n_jobs=args.jobs)


def _load_table(args) -> SurvivalTable | None:
    if getattr(args, "table", None):
        return SurvivalTable.load(_existing(args.table))
    return None


def _empty_outputs(out: Path, report: dict):
    logger.warning("IP sample has no tags; writing an empty peak table")
    write_tsv(pd.DataFrame(columns=PEAK_COLUMNS), out / "peaks.tsv")
    report.update(candidates=0, significant=0)
    write_report(report, out / "report.tsv")


def cmd_call(args) -> int:
    report: dict = {}
    ip, control, kernel, shift, lengths = _prepare_tracks(args, report)
    out = _out_dir(args)
    if ip is None:
        _empty_outputs(out, report)
        return 0
    kernel.write(out / "kernel.tsv")
    caller = _caller(args, kernel, _load_table(args)).fit(ip, control)
    report.update(caller.report_)
    report["q"] = args.q
    report["seed"] = args.seed
    peaks = caller.ranked_candidates() if args.all_candidates else caller.peaks_
    write_tsv(peaks, out / "peaks.tsv")
    if len(caller.candidates_):
        write_tsv(caller.diagnostics(), out / "diagnostics.tsv")
    if args.save_table and caller.table_ is not None:
        caller.table_.save(args.save_table)
    write_report(report, out / "report.tsv")
    logger.info("%d significant peaks of %d candidates", report.get("significant", 0),
                report.get("candidates", 0))
    return 0


def cmd_diagnose(args) -> int:
    report: dict = {}
    ip, control, kernel, shift, lengths = _prepare_tracks(args, report)
    out = _out_dir(args)
    if ip is None:
        raise CliError("IP sample has no tags; nothing to diagnose")
    caller = _caller(args, kernel, _load_table(args)).fit(ip, control)
    # empirical null: the Control searched against itself
    null_caller = _caller(args, kernel, None).fit(control, control)
    empirical = null_caller.candidates_["pvalue"].to_numpy() if len(null_caller.candidates_) else None
    write_tsv(caller.diagnostics(empirical_null=empirical), out / "diagnostics.tsv")
    report.update({f"ip_{k}": v for k, v in caller.report_.items()})
    report.update({f"null_{k}": v for k, v in null_caller.report_.items()})
    write_report(report, out / "report.tsv")
    return 0


# ---------------------------------------------------------------- table

def cmd_table(args) -> int:
    kernel = _load_kernel(args) or default_peak_shape()
    if args.lambda_min is not None and args.lambda_max is not None:
        lo, hi = args.lambda_min, args.lambda_max
    elif args.ip and args.control:
        report: dict = {}
        ip, control, _, _, _ = _prepare_tracks(args, report)
        if ip is None:
            raise CliError("IP sample has no tags; cannot size the table")
        bg = BackgroundRegressor(args.window_small, args.window_large, args.genome_length).fit(ip, control)
        cand = find_candidates(ip, kernel)
        plus = np.concatenate([background_at(bg.model_, control, c, g["position"].to_numpy())[1]
                               for c, g in cand.groupby("chrom", sort=False)])
        lo, hi = table_range(plus, args.margin)
    else:
        raise CliError("give --lambda-min and --lambda-max, or --ip and --control")
    table = build_table(lo, hi, kernel, seed=args.seed, n_lambda=args.n_lambda, n_u=args.n_u,
                        min_length=args.min_length, n_jobs=args.jobs)
    table.save(args.out)
    logger.info("wrote table for rates [%.4g, %.4g] to %s", lo, hi, args.out)
    return 0


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    config = SpikeInConfig(length=args.length, n_spikes=args.n_spikes, control_to_ip=args.control_to_ip,
                           replicates=args.replicates, q=args.q, seed=args.seed,
                           normalization=args.normalization)
    template = None
    if args.template:
        path = _existing(args.template)
        chrom = pd.read_csv(path, sep="\t", comment="#", header=None, usecols=[0], nrows=1).iloc[0, 0]
        template = CountTrack.read(path, {str(chrom): args.length})
    kernel = _load_kernel(args)
    per_rep, summary = run_spikein(config, snrs=args.snr, kernel=kernel, template=template,
                                   n_lambda=args.n_lambda, n_u=args.n_u, min_length=args.min_length,
                                   n_jobs=args.jobs)
    out = _out_dir(args)
    write_tsv(per_rep, out / "replicates.tsv")
    write_tsv(summary, out / "summary.tsv")
    summary[["snr", "fdp", "power"]].to_csv(sys.stdout, sep="\t", index=False, float_format="%.4f")
    return 0


# ---------------------------------------------------------------- parser

def _add_common(p, seed=True):
    p.add_argument("--config", help="key = value file; command-line flags take precedence")
    p.add_argument("--jobs", type=int, default=None, help="parallel workers (default: 1)")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="root random seed")


def _add_shape(p):
    g = p.add_argument_group("shape estimation")
    g.add_argument("--tentative-shift", type=int, default=100)
    g.add_argument("--prelim-sigma", type=float, default=50.0)
    g.add_argument("--n-peaks", type=int, default=1000)
    g.add_argument("--profile-width", type=int, default=2001)
    g.add_argument("--kernel-width", type=int, default=801)
    g.add_argument("--chrom", default=None, help="chromosome for shape estimation (default: longest)")


def _add_table_grid(p):
    g = p.add_argument_group("survival table")
    g.add_argument("--n-lambda", type=int, default=300)
    g.add_argument("--n-u", type=int, default=200)
    g.add_argument("--margin", type=float, default=0.25)
    g.add_argument("--min-length", type=int, default=DEFAULT_MIN_LENGTH,
                   help="minimum simulated length per rate")


def _add_background(p):
    g = p.add_argument_group("background")
    g.add_argument("--window-small", type=int, default=1000)
    g.add_argument("--window-large", type=int, default=10000)
    g.add_argument("--genome-length", type=float, default=DEFAULT_GENOME_LENGTH)


def _add_inputs(p, required=True):
    p.add_argument("--ip", required=required, help="IP tag file (chrom, start, end, strand)")
    p.add_argument("--control", required=required, help="Control tag file")
    p.add_argument("--chrom-lengths", help="two-column chromosome length table")
    p.add_argument("--kernel", help="kernel file from `align`; estimated from the IP when omitted")
    p.add_argument("--shift", type=int, default=None, help="tag shift; estimated when omitted")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stempeaks", description="ChIP-Seq peak detection by the STEM algorithm")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="estimate tag shift and peak shape")
    p.add_argument("--ip", required=True, help="IP tag file")
    p.add_argument("--chrom-lengths")
    p.add_argument("--out", required=True, help="output directory")
    _add_shape(p)
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("table", help="build a Monte Carlo survival table")
    p.add_argument("--out", required=True, help="output .npz path")
    p.add_argument("--lambda-min", type=float)
    p.add_argument("--lambda-max", type=float)
    _add_inputs(p, required=False)
    _add_shape(p)
    _add_table_grid(p)
    _add_background(p)
    _add_common(p)
    p.set_defaults(func=cmd_table)

    for name, func, text in (("call", cmd_call, "call peaks"),
                             ("diagnose", cmd_diagnose, "p-value null diagnostics")):
        p = sub.add_parser(name, help=text)
        _add_inputs(p)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--fdr", dest="q", type=float, default=0.01, help="FDR level q")
        p.add_argument("--table", help="survival table from `table`; built when omitted")
        if name == "call":
            p.add_argument("--save-table", help="write the table used to this path")
            p.add_argument("--all-candidates", action="store_true",
                           help="write every candidate, significant peaks first")
        _add_shape(p)
        _add_table_grid(p)
        _add_background(p)
        _add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("simulate", help="spike-in FDR and power experiment")
    p.add_argument("--length", type=int, default=10_000_000)
    p.add_argument("--n-spikes", type=int, default=20)
    p.add_argument("--snr", type=float, nargs="+", default=[5.0, 10.0, 15.0])
    p.add_argument("--fdr", dest="q", type=float, default=0.1)
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--control-to-ip", type=float, default=0.8)
    p.add_argument("--normalization", choices=["area", "height"], default="area")
    p.add_argument("--template", help="Control count track (chrom, pos, count) used as rate template")
    p.add_argument("--kernel")
    p.add_argument("--out", required=True, help="output directory")
    _add_table_grid(p)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def _scan_config(argv) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse ``argv``, using a ``--config`` file (if any) for defaults that flags override."""
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _scan_config(argv)
    subparsers = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    command = next((tok for tok in argv if tok in subparsers), None)
    if path is None or command is None:
        return parser.parse_args(argv)
    sub = subparsers[command]
    known = {a.dest: a for a in sub._actions}  # noqa: SLF001
    defaults = {}
    for key, raw in read_config(_existing(path)).items():
        key = "q" if key == "fdr" else key
        if key not in known or key in ("config", "help"):
            raise CliError(f"unknown configuration key {key!r} for `{command}`")
        action = known[key]
        if action.nargs in ("+", "*"):
            defaults[key] = [action.type(v) if action.type else v for v in raw.replace(",", " ").split()]
        elif isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = action.type(raw) if action.type else raw
    sub.set_defaults(**defaults)
    for action in sub._actions:  # noqa: SLF001
        if action.dest in defaults:
            action.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except CliError as exc:
        print(f"stempeaks: error: {exc}", file=sys.stderr)
        return 2
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except FingerprintMismatch as exc:
        logger.error("refusing to call: %s", exc)
        return 3
    except (CliError, TableRangeError, OSError, ValueError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
