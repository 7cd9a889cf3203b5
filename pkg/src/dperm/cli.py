"""Command-line front end.

Subcommands:
  run             execute a sweep described by a spec file
  calibrate       print the calibrated noise variance for given parameters
  verify-privacy  replay the accountant against a calibration
  oracle          print the non-private optimum of a dataset/model pair

`dperm run` exits 0 on a fully clean sweep and 2 if any cell errored
(failures are recorded per row, the sweep still completes).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .bench import emit, parse_spec_file, run_experiment
from .data import builtin_dataset, load_csv, normalize, BUILTIN_DATASETS
from .losses import PolyakLojasiewicz, StronglyConvex, logistic, logistic_l2
from .privacy import PrivacyParams, calibrate_sigma, verify_calibration
from .trainer import oracle_optimum


def _add_budget_args(parser: argparse.ArgumentParser):
    parser.add_argument("--epsilon", type=float, required=True, help="privacy budget epsilon")
    parser.add_argument("--delta", type=float, required=True, help="privacy budget delta")
    parser.add_argument("--steps", type=int, required=True, help="training iterations composed")
    parser.add_argument("--n", type=int, required=True, help="training set size")
    parser.add_argument("--lipschitz", type=float, default=1.0, help="loss Lipschitz constant")
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument(
        "--strong-convexity", type=float, help="strong convexity modulus (strongly convex regime)"
    )
    group.add_argument(
        "--pl", action="store_true", help="calibrate in the Polyak-Lojasiewicz regime"
    )
    parser.add_argument("--c", type=float, default=1.0, help="calibration constant (default 1)")


def _regime(args):
    if args.pl:
        return PolyakLojasiewicz()
    return StronglyConvex(args.strong_convexity)


def _calibrate(args) -> int:
    scale = calibrate_sigma(
        PrivacyParams(args.epsilon, args.delta),
        steps=args.steps,
        n=args.n,
        lipschitz=args.lipschitz,
        regime=_regime(args),
        c=args.c,
    )
    print(f"sigma_sq = {scale.sigma_sq:.17g}")
    return 0


def _verify(args) -> int:
    params = PrivacyParams(args.epsilon, args.delta)
    scale = calibrate_sigma(
        params,
        steps=args.steps,
        n=args.n,
        lipschitz=args.lipschitz,
        regime=_regime(args),
        c=args.c,
    )
    report = verify_calibration(params, scale, c1=args.c1)
    print(f"sigma_sq          = {scale.sigma_sq:.17g}")
    print(f"realized epsilon  = {report.realized_epsilon:.17g}")
    print(f"minimizing order  = {report.best_order}")
    print(f"target epsilon    = {params.epsilon:.17g}")
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def _oracle(args) -> int:
    if args.dataset in BUILTIN_DATASETS:
        dataset = builtin_dataset(args.dataset)
    else:
        if args.label_column is None or args.positive_label is None:
            print("oracle: CSV datasets need --label-column and --positive-label", file=sys.stderr)
            return 2
        label = int(args.label_column) if args.label_column.lstrip("-").isdigit() else args.label_column
        dataset = load_csv(args.dataset, label, args.positive_label)
    dataset = normalize(dataset)
    spec = logistic() if args.model == "lr" else logistic_l2(args.reg_lambda)
    params, value = oracle_optimum(dataset, spec, args.tolerance)
    np.set_printoptions(precision=12, linewidth=100)
    print(f"theta_star = {params.theta}")
    print(f"objective_min = {value:.17g}")
    return 0


def _run(args) -> int:
    spec = parse_spec_file(args.spec)
    overrides = {}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out is not None:
        overrides["output"] = args.out
    if args.format is not None:
        overrides["out_format"] = args.format
    if overrides:
        spec = replace(spec, **overrides)
    table = run_experiment(spec)
    out = spec.output or "results." + spec.out_format
    emit(table, out, spec.out_format)
    clean = sum(1 for r in table.rows if r.error is None)
    print(f"wrote {out}: {len(table.rows)} rows ({len(table.rows) - clean} errored)")
    for row in table.rows:
        if row.error is not None:
            print(f"  {row.mechanism} eps={row.epsilon:g}: {row.error}", file=sys.stderr)
    return 2 if table.errored else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dperm", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a sweep from a spec file")
    run_p.add_argument("--spec", required=True, help="path to a key=value spec file")
    run_p.add_argument("--out", help="output path (default results.<format>)")
    run_p.add_argument("--format", choices=("csv", "json"), help="override output format")
    run_p.add_argument("--workers", type=int, help="concurrent sweep cells")
    run_p.add_argument("--seed", type=int, help="override the spec's base seed")
    run_p.set_defaults(func=_run)

    cal_p = sub.add_parser("calibrate", help="print the calibrated noise variance")
    _add_budget_args(cal_p)
    cal_p.set_defaults(func=_calibrate)

    ver_p = sub.add_parser("verify-privacy", help="replay the moments accountant")
    _add_budget_args(ver_p)
    ver_p.add_argument(
        "--c1", type=float, default=None, help="per-step moment constant (default: derived)"
    )
    ver_p.set_defaults(func=_verify)

    orc_p = sub.add_parser("oracle", help="print the non-private optimum")
    orc_p.add_argument("--dataset", required=True, help="builtin name or CSV path")
    orc_p.add_argument("--label-column", help="CSV label column (name or index)")
    orc_p.add_argument("--positive-label", help="raw label token mapped to +1")
    orc_p.add_argument("--model", choices=("lr", "lr_l2"), default="lr_l2")
    orc_p.add_argument("--reg-lambda", type=float, default=0.01)
    orc_p.add_argument("--tolerance", type=float, default=1e-9)
    orc_p.set_defaults(func=_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
