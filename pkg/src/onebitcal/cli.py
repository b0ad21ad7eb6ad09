"""Command line interface: ``calib run``, ``calib mc`` and ``calib detect``."""

import argparse
from dataclasses import replace
import logging
import sys
from pathlib import Path

import numpy as np

from .detect import hermitian_eigenvalues, sorte
from .errors import CalibrationError, ConfigError
from .experiment import (TRIAL_HEADER, aggregate_csv, format_covariance, parse_config,
                         parse_covariance, run_mc, run_trial, scene_report, trial_csv)

EXIT_CONFIG = 1
EXIT_NUMERIC = 2


def _load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def cmd_run(args):
    config = _load_config(args.config)
    try:
        record, cal = run_trial(config, args.T, args.seed, return_calibration=True)
    except (CalibrationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    for key, value in scene_report(config).items():
        print(f"{key}: {value}")
    report = cal.report
    print(f"termination: {report.termination.value}")
    print(f"gains_ls: {cal.ls.gains.tolist()}")
    print(f"phases_ls_deg: {np.rad2deg(cal.ls.phases_rad).tolist()}")
    print(f"gains_kld: {cal.gains.tolist()}")
    print(f"phases_kld_deg: {np.rad2deg(cal.phases_rad).tolist()}")
    for name, value in zip(TRIAL_HEADER, record.row()):
        print(f"{name}: {value}")

    if args.out:
        Path(args.out).write_text(trial_csv([record]))
    if args.dump_cov:
        Path(args.dump_cov).write_text(format_covariance(cal.c_matrix))
    return 0


def cmd_mc(args):
    config = _load_config(args.config)
    if args.trials is not None:
        config = replace(config, trials=args.trials)
    records, aggregates = run_mc(config, jobs=args.jobs)
    out = Path(args.out)
    agg_out = Path(args.agg_out) if args.agg_out else out.with_name(out.stem + "_agg.csv")
    out.write_text(trial_csv(records))
    agg_out.write_text(aggregate_csv(aggregates))
    sys.stdout.write(aggregate_csv(aggregates))
    return 0


def cmd_detect(args):
    try:
        text = Path(args.cov).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {args.cov}: {exc.strerror}") from None
    cov = parse_covariance(text)
    if not np.allclose(cov, cov.conj().T, atol=1e-12, rtol=0):
        raise ConfigError("covariance is not Hermitian")
    try:
        lam = hermitian_eigenvalues(cov)
        m_hat = sorte(lam)
    except ValueError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"eigenvalues: {lam.tolist()}")
    print(f"m_hat: {m_hat}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="calib", description="Blind gain/phase calibration of one-bit ULAs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a single calibration trial")
    p.add_argument("--config", required=True)
    p.add_argument("-T", type=int, required=True, help="number of snapshots")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the trial row as CSV")
    p.add_argument("--dump-cov", help="write the calibrated clean covariance (i,j,re,im)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("mc", help="Monte Carlo sweep over the snapshot grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="per-trial CSV")
    p.add_argument("--agg-out", help="aggregate CSV (default: <out stem>_agg.csv)")
    p.add_argument("--trials", type=int, help="override the configured trial count")
    p.add_argument("-j", "--jobs", type=int, default=1)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("detect", help="count sources in a dumped covariance")
    p.add_argument("--cov", required=True)
    p.set_defaults(func=cmd_detect)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
