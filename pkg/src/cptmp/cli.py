"""Command-line front end: ``run``, ``choquet``, ``verify`` and ``dump-paths``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline, reports
from .config import OUTPUT_ENV, build_run_config, parse_tolerance_flags, read_config_file
from .errors import ConfigError, DataError, DomainError, NumericalError
from .functional import choquet_order_stat, choquet_plugin
from .preference import DistortionFn, UtilityFn
from .scenarios import SCENARIO_IDS

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("cptmp")


class _Parser(argparse.ArgumentParser):
    """Argument errors are configuration errors (exit code 2)."""

    def error(self, message):
        raise ConfigError(message)


def _common(p: argparse.ArgumentParser, scenario: bool = True) -> None:
    p.add_argument("--config", type=Path, help="INI config file; flags override it")
    if scenario:
        p.add_argument("--scenario", choices=SCENARIO_IDS)
    p.add_argument("--paths", dest="n_paths", type=int, help="number of Monte Carlo paths")
    p.add_argument("--steps", type=int, help="number of time steps")
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", action="append", metavar="KEY=VALUE", help="override a tolerance (repeatable)")
    p.add_argument("--output", type=Path, help=f"output directory (default ${OUTPUT_ENV} or ./cptmp-out)")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--workers", type=int, help="threads for path generation; results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cptmp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate a scenario and check the first-order conditions")
    _common(p)
    p.add_argument("--control-scale", type=float, help="multiply the candidate control")
    p.add_argument("--emit-paths", action="store_true", default=None, help="also write paths.csv")

    p = sub.add_parser("choquet", help="distorted expectation of the samples in a CSV file")
    p.add_argument("samples", type=Path)
    p.add_argument("--util", default="identity", help="pow:G (x^G), power:G (x^G/G) or identity")
    p.add_argument("--dist", default="identity", help="identity, pow:K (p^K) or lopes:NU,A,B")

    p = sub.add_parser("verify", help="run an invariant suite across the preset scenarios")
    p.add_argument("--suite", choices=pipeline.SUITES, default="all")
    _common(p, scenario=False)

    p = sub.add_parser("dump-paths", help="write simulated paths of a scenario as CSV")
    _common(p)
    p.add_argument("--limit", type=int, default=reports.DEFAULT_PATH_LIMIT, help="number of paths to write")
    return parser


def _run_config(args, command: str):
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    flags = {key: getattr(args, key, None) for key in ("scenario", "n_paths", "steps", "seed", "output", "format",
                                                        "workers", "control_scale", "emit_paths")}
    flags["tolerances"] = parse_tolerance_flags(getattr(args, "tolerance", None))
    return build_run_config(command, file_values, flags)


# ------------------------------------------------------------ subcommands

def cmd_run(args) -> int:
    rc = _run_config(args, "run")
    cfg = rc.scenario_config()
    report, row, ens = pipeline.run_scenario(cfg, rc.tolerances, workers=rc.workers)
    report = {"command": "run", "seed": rc.seed, "tolerances": rc.tolerances, **report}
    reports.atomic_write(rc.output / "report.json", reports.dumps(report))
    reports.atomic_write(rc.output / "summary.csv", reports.summary_csv([row]))
    if rc.emit_paths and ens is not None:
        reports.atomic_write(rc.output / "paths.csv", reports.paths_csv(ens))
    print(reports.dumps(report) if rc.format == "json" else reports.summary_csv([row]), end="")
    return EXIT_OK if report["verdict"] in ("consistent", "evaluated") else EXIT_FAILED


def parse_util(text: str) -> UtilityFn:
    kind, _, arg = text.partition(":")
    try:
        if kind == "pow":
            g = float(arg)
            return UtilityFn.power(g, g)
        if kind == "power":
            return UtilityFn.power(float(arg))
        if kind == "identity":
            return UtilityFn.custom([(0.0, 0.0), (1.0, 1.0)])
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"bad utility {text!r}: {exc}") from exc
    raise ConfigError(f"unknown utility {text!r}")


def parse_dist(text: str) -> DistortionFn:
    kind, _, arg = text.partition(":")
    try:
        if kind == "identity":
            return DistortionFn.identity()
        if kind == "pow":
            # p^K is the Lopes family with nu = 1, a = K - 1
            return DistortionFn.lopes(1.0, float(arg) - 1.0, 0.0)
        if kind == "lopes":
            nu, a, b = (float(x) for x in arg.split(","))
            return DistortionFn.lopes(nu, a, b)
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"bad distortion {text!r}: {exc}") from exc
    raise ConfigError(f"unknown distortion {text!r}")


def read_samples(path: Path) -> np.ndarray:
    """First column of a CSV file; a non-numeric first row is taken as a header."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and r[0].strip()]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if rows:
        try:
            float(rows[0][0])
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise DataError(f"{path} holds no samples")
    try:
        return np.array([float(r[0]) for r in rows])
    except ValueError as exc:
        raise DataError(f"non-numeric sample in {path}: {exc}") from exc


def cmd_choquet(args) -> int:
    x = read_samples(args.samples)
    util, dist = parse_util(args.util), parse_dist(args.dist)
    out = {}
    for est in (choquet_order_stat(x, util, dist), choquet_plugin(x, util, dist)):
        out[est.estimator] = {"value": est.value, "std_error": est.std_error}
    out["n"] = int(x.size)
    print(json.dumps(reports.clean(out), sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    rc = _run_config(args, "verify")
    checks = pipeline.run_suite(args.suite, rc.seed, n_paths=rc.n_paths, steps=rc.steps, tolerances=rc.tolerances,
                                workers=rc.workers, overrides=rc.scenario_overrides)
    passed = all(c.passed for c in checks)
    report = {"command": "verify", "suite": args.suite, "seed": rc.seed, "n_paths": rc.n_paths, "steps": rc.steps,
              "tolerances": rc.tolerances, "checks": [c.to_dict() for c in checks],
              "verdict": "pass" if passed else "fail"}
    cols = ["suite", "scenario", "name", "value", "threshold", "passed"]
    table = reports.table_csv([c.to_dict() for c in checks], cols)
    reports.atomic_write(rc.output / "report.json", reports.dumps(report))
    reports.atomic_write(rc.output / "verify.csv", table)
    print(reports.dumps(report) if rc.format == "json" else table, end="")
    return EXIT_OK if passed else EXIT_FAILED


def cmd_dump_paths(args) -> int:
    rc = _run_config(args, "dump-paths")
    if args.limit < 1:
        raise ConfigError("limit must be positive")
    cfg = rc.scenario_config()
    if cfg.id not in pipeline.ANALYTIC_IDS:
        raise ConfigError(f"{cfg.id!r} is evaluation-only and has no path ensemble to dump")
    sc = pipeline.build_scenario(cfg, workers=rc.workers)
    ens = pipeline.simulate_variational(sc.ensemble, sc.model, pipeline.verification_direction(sc))
    reports.atomic_write(rc.output / "paths.csv", reports.paths_csv(ens, args.limit))
    print(rc.output / "paths.csv")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "choquet": cmd_choquet, "verify": cmd_verify, "dump-paths": cmd_dump_paths}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DomainError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
