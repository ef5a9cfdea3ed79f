"""Command-line driver: ``ctxnet <subcommand> [flags]``.

Exit status: 0 ok, 1 runtime failure, 2 usage error, 3 missing dependency
(checkpoint or data files).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import stages, store
from .errors import CtxNetError, DependencyError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DEPENDENCY = 0, 1, 2, 3

HELP = {
    "train-ae": "train the bottleneck autoencoder on augmented digits",
    "train-contexts": "train the 405 context nets against a trained autoencoder",
    "train-classifier": "train the context-shared classifier head (upstream frozen)",
    "train-baseline": "train the comparison CNN",
    "eval": "evaluate the full pipeline on the test split",
    "visualize": "write the decoded 405-context mosaic for one test digit",
    "probe-triangle": "run the unseen-triangle generalization probe",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file (flags override it)")
    common.add_argument("--data-dir", help="directory with the four MNIST IDX files (default $CTXNET_DATA_DIR)")
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--train-size", type=int, help="use the first N training images")
    common.add_argument("--augment", action="store_const", const=True, default=None,
                        help="train on randomly warped copies of the images")
    common.add_argument("--no-augment", dest="augment", action="store_const", const=False,
                        help="train on the raw images (overrides the stage default and config file)")
    common.add_argument("--jobs", type=int, help="worker processes for train-contexts")
    common.add_argument("--eval-every", type=int, help="test-set evaluation interval in epochs")
    common.add_argument("--index", type=int, help="test image index for visualize")
    common.add_argument("--out", help="output directory")
    common.add_argument("--ae", help="autoencoder checkpoint path")
    common.add_argument("--ctx", help="context-bank checkpoint path")
    common.add_argument("--clf", help="classifier checkpoint path")
    common.add_argument("--baseline", help="baseline checkpoint path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ctxnet", description="Context-transformation networks on MNIST.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name in stages.COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
    return parser


def resolve(args: argparse.Namespace) -> store.RunConfig:
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    file_values = store.read_config_file(args.config) if args.config else {}
    defaults = dict(stages.STAGE_DEFAULTS.get(args.command, {}))
    if os.environ.get("CTXNET_DATA_DIR"):
        defaults["data_dir"] = os.environ["CTXNET_DATA_DIR"]
    return store.resolve_config(file_values, flags, defaults)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=logging.INFO if args.verbose or args.command.startswith("train") else logging.WARNING,
                        format="%(asctime)s %(message)s", datefmt="%H:%M:%S", stream=sys.stderr)
    try:
        cfg = resolve(args)
        print(f"command: {args.command}")
        print("config: " + json.dumps(cfg.as_dict(), sort_keys=True))
        print(f"seed: {cfg.seed}")
        metrics = stages.COMMANDS[args.command](cfg)
    except (DependencyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except CtxNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = metrics.pop("report", None)
    metrics.pop("curve", None)
    print("metrics: " + json.dumps(metrics, sort_keys=True, default=str))
    if report:
        print(report, end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
