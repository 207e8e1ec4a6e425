"""Command line front end.

Four verbs: ``validate`` checks a config and the model assumptions
without computing anything expensive, ``run`` executes the full pipeline,
``compare`` runs the window-and-rank comparison on two spectrum
artifacts, and ``report`` turns a finished run into CSV tables, a JSON
summary, and optional SVG plots.

Exit codes: 0 success, 2 configuration or validation failure, 3 numerical
failure inside a solver or pipeline stage, 4 I/O or artifact-format
failure.  Usage errors from the argument parser also exit with 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig
from .errors import ConfigError, MagwellError, ValidationError
from .geometry import validate_assumptions
from .pipeline import compare_spectra, emit_report, run_pipeline
from .spectra import SpectrumResult

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _cmd_validate(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    config.validate()
    model = config.model()
    report = validate_assumptions(model)
    for check in report.checks:
        verdict = {True: "pass", False: "FAIL", None: "skip"}[check.passed]
        print("%-28s %s" % (check.name, verdict))
    print("config hash: %s" % config.content_hash())
    if not report.all_passed:
        print("model %s fails its assumption checks" % model.name,
              file=sys.stderr)
        return EXIT_VALIDATION
    print("ok")
    return EXIT_OK


def _cmd_run(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    manifest = run_pipeline(config)
    print("run directory: %s" % manifest["run_dir"])
    print("artifacts: %d" % len(manifest["artifacts"]))
    for rel in manifest["comparisons"]:
        doc = json.loads(
            (Path(manifest["run_dir"]) / rel).read_text()
        )
        print(
            "%-24s hausdorff_like=%.3e rank_check=%s"
            % (rel, doc["hausdorff_like"], doc["rank_check"])
        )
    print("status: %s" % manifest["status"])
    return EXIT_OK


def _cmd_compare(args) -> int:
    a = SpectrumResult.from_json(Path(args.spectrum_a).read_text())
    b = SpectrumResult.from_json(Path(args.spectrum_b).read_text())
    report = compare_spectra(
        a, b, window=tuple(args.window), cluster_tol=args.cluster_tol
    )
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
        print("wrote %s" % args.out)
    else:
        print(text)
    return EXIT_OK


def _cmd_report(args) -> int:
    written = emit_report(args.manifest, emit_plots=args.plots)
    for path in written:
        print("wrote %s" % path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magwell",
        description="magnetic-well spectral experiments",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_validate = sub.add_parser(
        "validate", help="check a config and the model assumptions"
    )
    p_validate.add_argument("config", help="path to an INI config")
    p_validate.set_defaults(func=_cmd_validate)

    p_run = sub.add_parser("run", help="execute the full pipeline")
    p_run.add_argument("config", help="path to an INI config")
    p_run.set_defaults(func=_cmd_run)

    p_compare = sub.add_parser(
        "compare", help="window-and-rank comparison of two spectrum artifacts"
    )
    p_compare.add_argument("spectrum_a", help="spectrum_result JSON path")
    p_compare.add_argument("spectrum_b", help="spectrum_result JSON path")
    p_compare.add_argument(
        "--window", nargs=2, type=float, required=True,
        metavar=("LO", "HI"), help="rescaled energy window",
    )
    p_compare.add_argument(
        "--cluster-tol", type=float, default=None,
        help="clustering tolerance (default: 10x the larger solver tol)",
    )
    p_compare.add_argument("--out", default=None, help="write the report here")
    p_compare.set_defaults(func=_cmd_compare)

    p_report = sub.add_parser(
        "report", help="emit CSV tables and plots for a finished run"
    )
    p_report.add_argument("manifest", help="path to a run manifest.json")
    p_report.add_argument(
        "--plots", action=argparse.BooleanOptionalAction, default=None,
        help="force plots on or off (default: follow the config)",
    )
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as exc:
        print("validation error: %s" % exc, file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError) as exc:
        print("i/o error: %s" % exc, file=sys.stderr)
        return EXIT_IO
    except MagwellError as exc:
        print("numerical error: %s" % exc, file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
