"""``domain-game`` command line.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

import pydantic

from domain_game.cli.config import RunConfigFile
from domain_game.common.configuration import configure_torch, resolve_data_root
from domain_game.utils.logging_config import setup_logging

# Set up logging configuration
setup_logging()

# Create a logger
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class CommandParser(argparse.ArgumentParser):
    """Parser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _data_dir(explicit: Optional[str]) -> str:
    data_dir = resolve_data_root(explicit)
    if not data_dir:
        raise UsageError("no data directory: pass --data or set DOMAIN_GAME_DATA_ROOT")
    return data_dir


def cmd_generate_data(args) -> int:
    from domain_game.data.synthdata import make_benchmark, write_benchmark

    config = RunConfigFile.from_yaml(args.config)
    data = config.data if args.workers is None else config.data.model_copy(update={"workers": args.workers})
    manifest, samples = make_benchmark(data)
    write_benchmark(_data_dir(args.out), manifest, samples)
    return EXIT_OK


def cmd_train(args) -> int:
    from domain_game.evaluation.ablations import apply_ablation, single_encoder_config
    from domain_game.training.runner import run_training

    config = RunConfigFile.from_yaml(args.config)
    training = apply_ablation(config.training, args.ablate)
    if args.baseline:
        training = single_encoder_config(training)
    config = config.model_copy(update={"training": training})
    result = run_training(config.training, config.model, _data_dir(args.data), args.out, snapshot=config.snapshot())
    print(f"best epoch {result.best_epoch}: {result.best_checkpoint}")
    return EXIT_OK


def _evaluation_settings(config_path: Optional[str]):
    """Evaluation section and training switches of an optional run config."""
    from domain_game.cli.config import EvaluationConfig
    from domain_game.training.game import TrainConfig

    if not config_path:
        return EvaluationConfig(), TrainConfig()
    config = RunConfigFile.from_yaml(config_path)
    return config.evaluation, config.training


def _run_dir_of(ckpt: str) -> str:
    from domain_game.training.runner import CHECKPOINT_DIR

    parent = os.path.dirname(os.path.abspath(ckpt))
    return os.path.dirname(parent) if os.path.basename(parent) == CHECKPOINT_DIR else parent


def cmd_evaluate(args) -> int:
    from domain_game.evaluation.metrics import as_predictor, collect_examples, cross_domain_report, save_examples
    from domain_game.data.synthdata import load_manifest

    evaluation, training = _evaluation_settings(args.config)
    configure_torch(training.torch_num_threads, training.deterministic_algorithms)
    data_dir = _data_dir(args.data)
    manifest = load_manifest(data_dir)
    batch_size = args.batch_size if args.batch_size is not None else evaluation.batch_size
    predictor = as_predictor(args.ckpt, batch_size=batch_size)
    report, _ = cross_domain_report(predictor, manifest, data_dir)
    out = args.out or os.path.join(_run_dir_of(args.ckpt), f"{evaluation.report_name}.csv")
    written = report.write(out)
    examples_path = args.examples or os.path.join(os.path.dirname(os.path.abspath(out)), evaluation.examples_name)
    written.append(save_examples(examples_path, collect_examples(predictor, manifest, data_dir)))
    sys.stdout.write(report.render_table())
    for path in written:
        logger.info(f"wrote {path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from domain_game.evaluation.ablations import run_ablation_suite

    config = RunConfigFile.from_yaml(args.config)
    table = run_ablation_suite(config.training, config.model, _data_dir(args.data), args.out, seeds=args.seeds)
    sys.stdout.write(table.to_string(index=False, float_format=lambda v: f"{v:.2f}") + "\n")
    return EXIT_OK


def cmd_report_plots(args) -> int:
    from domain_game.cli.plots import report_plots

    evaluation, _ = _evaluation_settings(args.config)
    report_dir = os.path.dirname(os.path.abspath(args.report))
    examples_path = args.examples
    if examples_path is None:
        candidate = os.path.join(report_dir, evaluation.examples_name)
        examples_path = candidate if os.path.isfile(candidate) else None
    out_dir = args.out or os.path.join(report_dir, evaluation.plots_dir)
    for path in report_plots(args.report, examples_path, out_dir):
        print(path)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from domain_game.cli.selftest import run_selftest

    _, failed = run_selftest()
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def build_parser() -> CommandParser:
    parser = CommandParser(prog="domain-game", description="Domain Game training, evaluation and benchmarking.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log DEBUG lines to the console")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True

    generate = subparsers.add_parser("generate-data", help="materialise the synthetic benchmark")
    generate.add_argument("--config", required=True)
    generate.add_argument("--out", help="benchmark directory (default: DOMAIN_GAME_DATA_ROOT)")
    generate.add_argument("--workers", type=int, help="override data.workers")
    generate.set_defaults(handler=cmd_generate_data)

    train = subparsers.add_parser("train", help="train the domain game on the source domain")
    train.add_argument("--config", required=True)
    train.add_argument("--data", help="benchmark directory (default: DOMAIN_GAME_DATA_ROOT)")
    train.add_argument("--out", required=True, help="run directory")
    train.add_argument("--ablate", choices=["domain-encoder", "space-constraint", "rotation", "flip"])
    train.add_argument("--baseline", action="store_true", help="train the single-encoder control instead")
    train.set_defaults(handler=cmd_train)

    evaluate = subparsers.add_parser("evaluate", help="cross-domain report of a checkpoint")
    evaluate.add_argument("--ckpt", required=True)
    evaluate.add_argument("--config", help="run config whose evaluation section supplies the defaults below")
    evaluate.add_argument("--data", help="benchmark directory (default: DOMAIN_GAME_DATA_ROOT)")
    evaluate.add_argument(
        "--out", help="report path; .csv, .txt and .json are written (default: <report_name>.csv in the run directory)"
    )
    evaluate.add_argument("--examples", help="examples archive (default: <examples_name> next to the report)")
    evaluate.add_argument("--batch-size", type=int, help="slices per forward pass (default: evaluation.batch_size)")
    evaluate.set_defaults(handler=cmd_evaluate)

    ablate = subparsers.add_parser("ablate", help="benchmark plus the four ablations over several seeds")
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--data", help="benchmark directory (default: DOMAIN_GAME_DATA_ROOT)")
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ablate.set_defaults(handler=cmd_ablate)

    plots = subparsers.add_parser("report-plots", help="SVG figures from a report")
    plots.add_argument("--report", required=True, help="report CSV")
    plots.add_argument("--config", help="run config whose evaluation section supplies the defaults below")
    plots.add_argument("--examples", help="examples archive written by evaluate")
    plots.add_argument("--out", help="output directory (default: <plots_dir> next to the report)")
    plots.set_defaults(handler=cmd_report_plots)

    selftest = subparsers.add_parser("selftest", help="run the metric-oracle and group-law checks")
    selftest.set_defaults(handler=cmd_selftest)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.verbose:
        setup_logging(verbose=True, force=True)
    try:
        return args.handler(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"domain-game: error: {e}\n")
        return EXIT_USAGE
    except pydantic.ValidationError as e:
        sys.stderr.write(f"domain-game: invalid configuration: {e}\n")
        return EXIT_RUNTIME
    except Exception as e:
        title = getattr(e, "title", type(e).__name__)
        detail = getattr(e, "detail", str(e))
        logger.debug("command failed", exc_info=True)
        sys.stderr.write(f"domain-game: {title}: {detail}\n")
        return EXIT_RUNTIME


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
