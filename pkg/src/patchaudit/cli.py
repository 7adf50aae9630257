"""Command-line front end.

Subcommands:
  audit  run the full failure audit on a records CSV and write the report
  prep   build canvas-sized patches from images + ROI annotations
  synth  generate a synthetic cohort records CSV from a config file

Exit codes: 0 success, 2 input/configuration error, 3 statistical error.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .bootstrap import BootstrapError
from .geometry import GeometryError, PgmError
from .metrics import MetricError
from .prep import PrepError, run_prep
from .records import RecordError, parse_records, write_records
from .report import AuditConfig, AuditError, load_audit_config, run_audit, write_report
from .riskmodel import DesignError, FitError
from .stats import StatError
from .synth import ConfigError, generate, load_config

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_STATS = 3

_INPUT_ERRORS = (RecordError, ConfigError, PrepError, PgmError, GeometryError,
                 DesignError, OSError)
_STAT_ERRORS = (BootstrapError, StatError, FitError, MetricError)


def _size_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected lo:hi") from exc
    return lo, hi


def _fractions(text: str) -> tuple[float, float, float]:
    try:
        a, b, c = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected train:val:test") from exc
    return a, b, c


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchaudit",
        description="Confounding-aware failure audit for binary patch classifiers",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    audit = sub.add_parser("audit", help="run the full audit on a records CSV")
    audit.add_argument("--input", required=True, help="records CSV")
    audit.add_argument("--config", help="audit config file (schema overrides etc.)")
    audit.add_argument("--out", required=True, help="output directory")
    audit.add_argument("--seed", type=int, default=None)
    audit.add_argument("--threshold", type=float, default=None)
    audit.add_argument("--iterations", type=int, default=None)
    audit.add_argument("--size-range", type=_size_range, metavar="LO:HI",
                       default=None, help="overall bootstrap sample size range")
    audit.add_argument("--ci", choices=("normal", "percentile"), default=None)
    audit.add_argument("--workers", type=int, default=1)

    prep = sub.add_parser("prep", help="extract patches from images + ROIs")
    prep.add_argument("--manifest", required=True,
                      help="CSV: image,patient_id,x,y,width,height (NA box = no ROI)")
    prep.add_argument("--out", required=True)
    prep.add_argument("--seed", type=int, default=0)
    prep.add_argument("--fractions", type=_fractions, metavar="TRAIN:VAL:TEST",
                      default=None, help="patient split fractions")
    prep.add_argument("--negatives-per-image", type=int, default=1,
                      help="negatives for ROI-free images")
    prep.add_argument("--attempts", type=int, default=1000,
                      help="rejection sampling budget per negative")

    synth = sub.add_parser("synth", help="generate a synthetic cohort CSV")
    synth.add_argument("--config", required=True, help="generator config file")
    synth.add_argument("--out", required=True, help="records CSV to write")
    synth.add_argument("--seed", type=int, default=None, help="override config seed")
    synth.add_argument("--size", type=int, default=None, help="override cohort size")

    return parser


def cmd_audit(args) -> int:
    config = AuditConfig(workers=args.workers)
    if args.config:
        config = load_audit_config(args.config, config)
    overrides = {
        "seed": args.seed,
        "threshold": args.threshold,
        "iterations": args.iterations,
        "ci_method": args.ci,
    }
    updates = {k: v for k, v in overrides.items() if v is not None}
    if args.size_range is not None:
        updates["size_lo"], updates["size_hi"] = args.size_range
    if updates:
        from dataclasses import replace
        config = replace(config, **updates)

    dataset = parse_records(args.input, config.schema)
    report = run_audit(dataset, config)
    written = write_report(report, args.out)
    print(f"audit: wrote {len(written)} files under {args.out}")
    return EXIT_OK


def cmd_prep(args) -> int:
    fractions = args.fractions
    manifest = run_prep(
        args.manifest,
        args.out,
        seed=args.seed,
        fractions=fractions if fractions is not None else (0.556, 0.189, 0.255),
        negatives_per_image=args.negatives_per_image,
        max_attempts=args.attempts,
    )
    print(f"prep: wrote {manifest}")
    return EXIT_OK


def cmd_synth(args) -> int:
    config = load_config(args.config)
    if args.seed is not None or args.size is not None:
        from dataclasses import replace
        config = replace(
            config,
            seed=config.seed if args.seed is None else args.seed,
            size=config.size if args.size is None else args.size,
        )
    dataset = generate(config)
    write_records(dataset.records, args.out)
    print(f"synth: wrote {len(dataset)} records to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"audit": cmd_audit, "prep": cmd_prep, "synth": cmd_synth}
    try:
        return handlers[args.command](args)
    except AuditError as exc:
        cause = exc.__cause__
        code = EXIT_INPUT if isinstance(cause, _INPUT_ERRORS) else EXIT_STATS
        print(f"error: {exc}", file=sys.stderr)
        return code
    except _INPUT_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _STAT_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STATS


if __name__ == "__main__":
    sys.exit(main())
