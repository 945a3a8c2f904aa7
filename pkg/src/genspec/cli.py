"""Command line entry point: ``genspec run | summarize | generate``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import harness
from .data import SyntheticSpec, generate_synthetic, read_key_values, write_letor


def _synthetic_arg(value: str) -> SyntheticSpec:
    if os.path.exists(value):
        with open(value) as fh:
            return SyntheticSpec.from_mapping(read_key_values(fh.read()))
    return harness.parse_synthetic(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genspec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment sweep and write CSV")
    run.add_argument("--config", help="key = value config file")
    run.add_argument("--alpha", type=float)
    run.add_argument("--epsilon", help="comma-separated confidence levels")
    run.add_argument("--beta", type=float)
    run.add_argument("--budgets", help="comma-separated ascending click budgets")
    run.add_argument("--repeats", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="CSV path (default: stdout)")
    run.add_argument("--mode", help="comma-separated: " + ", ".join(harness.MODES))
    run.add_argument("--dataset", help="LETOR directory with train.txt, vali.txt, test.txt")
    run.add_argument("--synthetic", help="synthetic spec file or inline key=value,key=value")
    run.add_argument("--summary", action="store_true", help="also print a mean/sd table to stderr")

    summ = sub.add_parser("summarize", help="mean and standard deviation per method, epsilon and budget")
    summ.add_argument("csv")

    gen = sub.add_parser("generate", help="write a synthetic dataset as LETOR files")
    gen.add_argument("--synthetic", default="", help="synthetic spec file or inline key=value,key=value")
    gen.add_argument("--out", required=True, help="output directory")
    return parser


def _run(args) -> int:
    config = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    overrides = {}
    if args.alpha is not None:
        overrides["alpha"] = str(args.alpha)
    if args.epsilon is not None:
        overrides["epsilon"] = args.epsilon
    if args.beta is not None:
        overrides["beta"] = str(args.beta)
    if args.budgets is not None:
        overrides["budgets"] = args.budgets
    if args.repeats is not None:
        overrides["repeats"] = str(args.repeats)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.dataset is not None:
        overrides["dataset"] = args.dataset
    config = harness.config_from_mapping(overrides, base=config)
    if args.synthetic is not None:
        config = config.with_overrides(synthetic=_synthetic_arg(args.synthetic))

    rows = harness.run_experiment(config)
    text = harness.rows_to_csv(rows)
    if config.out:
        with open(config.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.summary:
        print(harness.format_summary(harness.summarize(rows)), file=sys.stderr)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "summarize":
            with open(args.csv) as fh:
                rows = harness.read_csv_rows(fh.read())
            print(harness.format_summary(harness.summarize(rows)))
            return 0
        if args.command == "generate":
            spec = _synthetic_arg(args.synthetic) if args.synthetic else SyntheticSpec()
            ds = generate_synthetic(spec)
            os.makedirs(args.out, exist_ok=True)
            for part, name in (("train", "train.txt"), ("validation", "vali.txt"), ("test", "test.txt")):
                with open(os.path.join(args.out, name), "w") as fh:
                    write_letor(ds.partition(part), fh)
            return 0
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"genspec: error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
