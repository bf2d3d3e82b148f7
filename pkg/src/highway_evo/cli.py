"""Command-line interface.

Subcommands:

* ``evolve``    — run the EA experiment for one variant
* ``baseline``  — train only the standard reference network
* ``summarize`` — min/mean/std/max over accuracy values
* ``decode``    — print the network specification a bit string encodes
* ``make-data`` — generate the synthetic digit dataset files

``evolve`` and ``baseline`` accept ``--config FILE`` with a JSON object
whose keys mirror the flags (underscored); explicit flags override the
file, and the file overrides the ``--paper-scale`` bundle.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .codec import bits_from_str, bits_to_str, decode, GENOTYPE_BITS
from .harness import (
    ExperimentConfig,
    VARIANTS,
    load_experiment_splits,
    run_experiment,
    standard_network_baseline,
    summarize,
)
from .synthdigits import (
    DEFAULT_TEST_COUNT,
    DEFAULT_TRAIN_COUNT,
    generate_dataset,
)

_CONFIG_FIELDS = {field.name for field in dataclasses.fields(ExperimentConfig)}


def _add_experiment_flags(parser: argparse.ArgumentParser, with_variant: bool) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file with defaults for the flags below")
    if with_variant:
        parser.add_argument("--variant", choices=VARIANTS, default=None)
        parser.add_argument("--generations", type=int, default=None)
        parser.add_argument("--repetitions", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--train-subset", type=int, default=None)
    parser.add_argument("--val-subset", type=int, default=None)
    parser.add_argument("--test-subset", type=int, default=None)
    parser.add_argument("--data-dir", type=Path, default=None)
    parser.add_argument("--out-dir", type=Path, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--paper-scale", action="store_true",
                        help="full protocol: 30 generations, 10 repetitions, "
                             "5 epochs, no subsetting")
    parser.add_argument("--filters-are-kernel-sizes", action="store_true",
                        help="read the genotype's filter field as a spatial "
                             "kernel size shared by all highway layers")


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    settings = json.loads(path.read_text())
    if not isinstance(settings, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    unknown = set(settings) - _CONFIG_FIELDS - {"paper_scale"}
    if unknown:
        raise ValueError(f"config file {path} has unknown keys: {sorted(unknown)}")
    return settings


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge defaults, the paper-scale bundle, the config file, and flags."""
    file_settings = _load_config_file(args.config)
    config = ExperimentConfig()
    if args.paper_scale or file_settings.pop("paper_scale", False):
        config = config.apply_paper_scale()
    for key, value in file_settings.items():
        config = dataclasses.replace(config, **{key: value})

    overrides = {}
    for flag, key in (
        ("variant", "variant"), ("generations", "generations"),
        ("repetitions", "repetitions"), ("seed", "seed"),
        ("epochs", "epochs"), ("train_subset", "train_subset"),
        ("val_subset", "val_subset"), ("test_subset", "test_subset"),
        ("data_dir", "data_dir"), ("out_dir", "out_dir"),
        ("batch_size", "batch_size"), ("threads", "threads"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if args.filters_are_kernel_sizes:
        overrides["filters_as_kernels"] = True
    return dataclasses.replace(config, **overrides)


def _cmd_evolve(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    config.validate()
    with threadpool_limits(limits=config.threads):
        result = run_experiment(config)
    print(result.report_path.read_text(), end="")
    print(f"\nartifacts written to {Path(config.out_dir).resolve()}")
    return 1 if result.failed_runs and not result.stats else 0


def _cmd_baseline(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    with threadpool_limits(limits=config.threads):
        splits = load_experiment_splits(config)
        record = standard_network_baseline(
            splits, seed=config.seed, epochs=config.epochs,
            batch_size=config.batch_size)
    if record.status == "failed":
        print("standard reference network: training failed", file=sys.stderr)
        return 1
    print(f"standard reference network: validation loss {record.fitness:.4f}, "
          f"validation accuracy {record.validation_accuracy:.4f}, "
          f"test accuracy {record.test_accuracy:.4f}")
    return 0


def _cmd_summarize(args: argparse.Namespace) -> int:
    values = list(args.values)
    if args.run_dir is not None:
        for spec_path in sorted(Path(args.run_dir).glob("run*_best.json")):
            values.append(json.loads(spec_path.read_text())["test_accuracy"])
    if not values:
        print("summarize: no values given (pass numbers or --run-dir)",
              file=sys.stderr)
        return 2
    row = summarize(values)
    print(f"n {len(values)}  min {row.minimum!r}  mean {row.mean!r}  "
          f"std {row.std!r}  max {row.maximum!r}")
    return 0


def _cmd_decode(args: argparse.Namespace) -> int:
    bits = bits_from_str(args.bits)
    spec = decode(bits)
    payload = dict(spec.to_dict())
    payload["genotype_bits"] = bits_to_str(bits)
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_make_data(args: argparse.Namespace) -> int:
    paths = generate_dataset(args.data_dir, train_count=args.train_count,
                             test_count=args.test_count, seed=args.seed)
    for path in paths:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="highway-evo",
        description="Evolve convolutional highway networks with a (1+1)-EA.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    evolve = sub.add_parser("evolve", help="run an EA experiment")
    _add_experiment_flags(evolve, with_variant=True)
    evolve.set_defaults(func=_cmd_evolve)

    baseline = sub.add_parser("baseline", help="train the standard reference network")
    _add_experiment_flags(baseline, with_variant=False)
    baseline.set_defaults(func=_cmd_baseline)

    summ = sub.add_parser("summarize", help="min/mean/std/max of accuracy values")
    summ.add_argument("values", type=float, nargs="*")
    summ.add_argument("--run-dir", type=Path, default=None,
                      help="collect test accuracies from run*_best.json files")
    summ.set_defaults(func=_cmd_summarize)

    dec = sub.add_parser("decode", help="decode a genotype bit string")
    dec.add_argument("--bits", required=True,
                     help=f"{GENOTYPE_BITS}-character string of 0s and 1s")
    dec.set_defaults(func=_cmd_decode)

    make_data = sub.add_parser("make-data", help="generate the synthetic digit dataset")
    make_data.add_argument("--data-dir", type=Path, required=True)
    make_data.add_argument("--train-count", type=int, default=DEFAULT_TRAIN_COUNT)
    make_data.add_argument("--test-count", type=int, default=DEFAULT_TEST_COUNT)
    make_data.add_argument("--seed", type=int, default=0)
    make_data.set_defaults(func=_cmd_make_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
