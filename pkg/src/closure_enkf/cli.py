"""Command-line entry point.

Subcommands ``truth``, ``observe``, ``filter`` and ``experiment`` run the
pipeline up to the named stage; ``search`` evaluates the hyperparameter grid;
``report`` turns persisted artifacts into plot-ready CSV files.

Errors are written to stderr as one JSON line ``{"error": ..., "message": ...}``.
Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure,
4 missing artifacts or I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .config import ExperimentConfig, desk_scale, preset
from .enkf import credible_band
from .errors import ClosureEnKFError, ConfigurationError, DivergenceError, SingularityError
from .experiment import run_experiment, run_search

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

SUBCOMMANDS = ("truth", "observe", "filter", "search", "experiment", "report")
OUT_ENV = "CLOSURE_ENKF_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="closure-enkf", description="Closure-term estimation with an augmented EnKF.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./out)")
        if name == "report":
            continue
        p.add_argument("--preset", default=None)
        p.add_argument("--config", default=None, type=Path)
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--seed", type=int, default=None, help="master seed (default 42)")
        p.add_argument("--desk", action="store_true", help="apply the desk-scale reduction")
        p.add_argument("--threads", type=int, default=None)
    return parser


def parse_invocation(argv) -> tuple[argparse.Namespace, ExperimentConfig | None]:
    """Parse ``argv`` and resolve the experiment config (``None`` for ``report``)."""
    args = build_parser().parse_args(argv)
    if args.command == "report":
        return args, None
    if args.preset and args.config:
        raise UsageError("--preset and --config are mutually exclusive")
    if not (args.preset or args.config):
        raise UsageError("one of --preset or --config is required")
    cfg = preset(args.preset) if args.preset else ExperimentConfig.load(args.config)
    overrides = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.desk:
        cfg = desk_scale(cfg)
    cfg = cfg.with_overrides(overrides)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be a 64-bit unsigned integer")
        cfg.seed = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be positive")
        cfg.filter.threads = args.threads
    return args, cfg.validate()


def output_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "out")


# --- report -------------------------------------------------------------------

def emit_report(out_dir) -> list[str]:
    """Write plot-data files under ``out_dir/report`` from persisted artifacts.

    Returns the written paths relative to ``out_dir``.
    """
    out = Path(out_dir)
    written = []
    summary_path, search_path = out / "summary.json", out / "search.csv"
    if not summary_path.exists() and not search_path.exists():
        raise FileNotFoundError(f"no summary.json or search.csv in {out}")
    if summary_path.exists():
        summary = artifacts.read_json(summary_path)
        dim = len(summary["grid"]["count"])
        coords = ["x"] if dim == 1 else ["x", "y"]
        for i, entry in enumerate(summary["per_time"], start=1):
            header, data = artifacts.read_csv(out / entry["closure_file"])
            col = {h: j for j, h in enumerate(header)}
            xy = data[:, [col[c] for c in coords]]
            mean, std, truth = data[:, col["closure_mean"]], data[:, col["closure_std"]], data[:, col["truth_closure"]]
            lower, upper = credible_band(mean, std)
            name = f"report/band_{i:04d}.csv"
            artifacts.write_csv(out / name, [*coords, "truth", "mean", "lower", "upper"],
                                np.column_stack([xy, truth, mean, lower, upper]))
            written.append(name)
            if dim == 2:
                name = f"report/residual_{i:04d}.csv"
                artifacts.write_csv(out / name, [*coords, "residual"], np.column_stack([xy, truth - mean]))
                written.append(name)
    if search_path.exists():
        with open(search_path, newline="") as fh:
            rows = list(csv.reader(fh))
        artifacts.write_csv(out / "report/surface.csv", rows[0], rows[1:])
        written.append("report/surface.csv")
    return written


# --- main -----------------------------------------------------------------------

def _fail(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True) + "\n")
    return code


def run(argv=None) -> int:
    try:
        args, cfg = parse_invocation(sys.argv[1:] if argv is None else argv)
        out = output_dir(args)
        if args.command == "report":
            files = emit_report(out)
            print(json.dumps({"command": "report", "out": str(out), "files": len(files)}))
        elif args.command == "search":
            surface = run_search(cfg, out, threads=cfg.filter.threads)
            s, m = surface.argmin_nll
            print(json.dumps({"command": "search", "out": str(out), "argmin_nll": {"sigma": s, "num_bases": m}}))
        else:
            summary = run_experiment(cfg, out, stage=args.command)
            line = {"command": args.command, "out": str(out), "files": len(summary.data["files"])}
            if "metrics" in summary.data:
                line["l2_error"] = summary.metrics["l2_error"]
                line["nll"] = summary.metrics["nll"]
            print(json.dumps(line))
    except UsageError as err:
        return _fail("usage", str(err), EXIT_USAGE)
    except ConfigurationError as err:
        return _fail("configuration", str(err), EXIT_USAGE)
    except DivergenceError as err:
        return _fail("divergence", str(err), EXIT_NUMERICAL, time_index=err.time_index, member=err.member)
    except (SingularityError, FloatingPointError, np.linalg.LinAlgError) as err:
        return _fail("numerical", str(err), EXIT_NUMERICAL)
    except (FileNotFoundError, OSError) as err:
        return _fail("io", str(err), EXIT_IO)
    except ClosureEnKFError as err:
        return _fail("error", str(err), EXIT_NUMERICAL)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
