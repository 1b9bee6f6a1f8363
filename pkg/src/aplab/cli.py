"""Command-line pipeline: simulate, fit, compare.

Every command takes an explicit ``--seed`` (no wall-clock seeding), writes
its artifacts plus a ``manifest.json`` into ``--out``, and is idempotent up
to timestamps.  Exit codes: 0 success, 2 bad input, 3 fit failure, 4 I/O
error.  ``APLAB_THREADS`` optionally caps internal parallelism.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, io, models, stats
from .errors import ApLabError, FitFailureError, FormatError
from .extract import build_histogram, extract_extra_intervals
from .fit import FitProblem, multistart_fit
from .sim import simulate_periods

EXIT_OK, EXIT_BAD_INPUT, EXIT_FIT_FAILURE, EXIT_IO = 0, 2, 3, 4


def _n_threads():
    try:
        return max(1, int(os.environ.get("APLAB_THREADS", "1")))
    except ValueError:
        return 1


def _write_manifest(out_dir: Path, command, args, seed):
    manifest = {
        "command": command,
        "argv": [str(a) for a in sys.argv[1:]],
        "config_paths": {k: str(v) for k, v in args.items() if v is not None},
        "seed": seed,
        "output_directory": str(out_dir),
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "tool_version": __version__,
    }
    io.write_json(out_dir / "manifest.json", manifest)


def _load_config(path):
    doc = json.loads(Path(path).read_text())
    return io.detector_config_from_dict(doc)


def _load_model(path):
    doc = json.loads(Path(path).read_text())
    return io.trap_model_from_dict(doc)


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    model = _load_model(args.model)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stream = simulate_periods(config, model, args.periods, args.seed,
                              n_threads=_n_threads())
    path = out_dir / ("intervals.csv" if args.csv else "intervals.bin")
    if args.csv:
        io.write_intervals_csv(path, stream.intervals)
    else:
        io.write_intervals_binary(path, stream)
    extras, n_periods = extract_extra_intervals(stream)
    p_ad = len(extras) / n_periods if n_periods else 0.0
    _write_manifest(out_dir, "simulate",
                    {"config": args.config, "model": args.model}, args.seed)
    print(f"wrote {path} ({len(stream.intervals)} intervals, "
          f"{n_periods} periods)")
    print(f"P_ad estimate: {p_ad:.6f}")
    return EXIT_OK


def _load_input_histogram(path, config):
    with open(path, "rb") as fh:
        first = fh.read(4)
    if first[:1] == b"{":
        return io.histogram_from_dict(json.loads(Path(path).read_text()))
    intervals, meta = io.read_intervals_auto(path)
    if config is None:
        raise FormatError("interval input needs --config for extraction")
    extras, n_periods = extract_extra_intervals(intervals, config)
    return build_histogram(extras, config, n_periods)


def _parse_components(text):
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if lo < 1 or hi < lo:
            raise ValueError(f"bad component range {text!r}")
        return list(range(lo, hi + 1))
    return [int(text)]


def _table_row(family, params, report):
    if family == models.MULTI_EXP:
        taus = " ".join(f"{tau * 1000:9.4g}" for tau in params.tau)
        head = f"N={params.n_components}  tau(ns): {taus}"
    elif family == models.SINHC:
        head = (f"sinhc  tau_min={params.tau_min * 1000:.4g} ns  "
                f"tau_max={params.tau_max * 1000:.5g} ns")
    else:
        head = (f"power  D={params.D:.4g}  alpha={params.alpha:.4g}  "
                f"t_d={params.t_d * 1000:.4g} ns")
    return (f"{head}  |  chi2/chi2_crit={report.chi2_normalized:.3g}  "
            f"1-R2={report.one_minus_r2:.3g}  P_a={report.p_a * 100:.3f}%")


def cmd_fit(args) -> int:
    config = _load_config(args.config) if args.config else None
    hist = _load_input_histogram(args.input, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    io.write_json(out_dir / "histogram.json", hist)

    sweep = _parse_components(args.components)
    for n_comp in sweep:
        problem = FitProblem(histogram=hist, family=args.family,
                             n_components=n_comp, weighting=args.weighting)
        outcome = multistart_fit(problem, args.starts, args.seed,
                                 n_threads=_n_threads())
        report = stats.gof_report(hist, outcome.params,
                                  outcome.n_free_params)
        suffix = f"_{n_comp}" if args.family == models.MULTI_EXP else ""
        io.write_json(out_dir / f"fit_{args.family}{suffix}.json", outcome,
                      seed=args.seed)
        io.write_json(out_dir / f"gof_{args.family}{suffix}.json", report)
        print(_table_row(args.family, outcome.params, report))
    _write_manifest(out_dir, "fit",
                    {"config": args.config, "input": args.input}, args.seed)
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.fits) < 2:
        raise ValueError("compare needs at least two fit outcome files")
    hist = io.histogram_from_dict(json.loads(Path(args.histogram).read_text()))
    fingerprint = hist.fingerprint()
    outcomes = []
    for path in args.fits:
        outcome = io.fit_outcome_from_dict(json.loads(Path(path).read_text()))
        if outcome.fingerprint and outcome.fingerprint != fingerprint:
            raise ValueError(
                f"{path}: fit was made against a different histogram")
        outcomes.append(outcome)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stride = args.stride
    idx = np.arange(0, hist.n_bins, stride)
    centers = hist.bin_centers

    with open(out_dir / "histogram_decimated.csv", "w") as fh:
        fh.write("# bin_center_us,count\n")
        np.savetxt(fh, np.column_stack([centers[idx], hist.counts[idx]]),
                   fmt=["%.9g", "%d"], delimiter=",")

    curve_cols = [centers[idx]]
    labels = []
    print("family  |  chi2/chi2_crit  1-R2  P_a")
    for outcome in outcomes:
        q = models.model_pdf(centers, outcome.params) * hist.bin_width
        curve_cols.append(q[idx])
        label = outcome.family
        if outcome.family == models.MULTI_EXP:
            label += f"_{outcome.params.n_components}"
        labels.append(label)
        report = stats.gof_report(hist, outcome.params,
                                  outcome.n_free_params)
        io.write_residuals_csv(out_dir / f"residuals_{label}.csv", hist,
                               report)
        print(_table_row(outcome.family, outcome.params, report))
    with open(out_dir / "curves.csv", "w") as fh:
        fh.write("# bin_center_us," + ",".join(labels) + "\n")
        np.savetxt(fh, np.column_stack(curve_cols), delimiter=",")
    _write_manifest(out_dir, "compare", {"histogram": args.histogram},
                    seed=None)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aplab",
        description="Afterpulse waiting-time simulation and model fitting")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate an interval stream")
    p_sim.add_argument("--config", required=True, help="detector config JSON")
    p_sim.add_argument("--model", required=True, help="trap model JSON")
    p_sim.add_argument("--periods", type=int, required=True)
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--csv", action="store_true",
                       help="write CSV instead of binary intervals")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit a model family to data")
    p_fit.add_argument("input", help="interval file or histogram JSON")
    p_fit.add_argument("--config", help="detector config JSON "
                       "(required for interval input)")
    p_fit.add_argument("--family", required=True, choices=models.FAMILIES)
    p_fit.add_argument("--components", default="1",
                       help="multi-exp component count, or a sweep like 1..5")
    p_fit.add_argument("--starts", type=int, default=10)
    p_fit.add_argument("--seed", type=int, required=True)
    p_fit.add_argument("--weighting", default="uniform",
                       choices=("uniform", "poisson"))
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_cmp = sub.add_parser("compare", help="tabulate fits of one histogram")
    p_cmp.add_argument("fits", nargs="+", help="fit outcome JSON files")
    p_cmp.add_argument("--histogram", required=True,
                       help="histogram JSON the fits refer to")
    p_cmp.add_argument("--stride", type=int, default=120,
                       help="histogram decimation stride (1 = full)")
    p_cmp.add_argument("--out", required=True)
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FitFailureError as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT_FAILURE
    except (OSError,) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ApLabError, ValueError, json.JSONDecodeError) as exc:
        print(f"bad input: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
