import argparse
import csv
import logging
import math
import sys

from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from ..config import ExperimentConfig
from ..exceptions import ConfigurationError, IiOpenSetError, RowParseError, SplitError
from ..interface import RUN_FILES, Experiment, compare
from ..models import UNKNOWN, SplitMode, TrainRegime
from ..util import parse_seeds

console = Console()
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _fmt(value):
    return "-" if value is None or (isinstance(value, float) and math.isnan(value)) else f"{value:.4f}"


def show_split(split):
    table = Table(show_header=True)
    table.add_column("Part", justify="left")
    table.add_column("Instances", justify="right")
    table.add_column("Labels", justify="left")
    for name in ("train", "val", "test"):
        part = getattr(split, name)
        labels = sorted({int(label) for label in part.labels})
        table.add_row(
            name,
            f"{len(part):,}",
            ", ".join("unknown" if label == UNKNOWN else str(label) for label in labels),
        )
    console.print(table)
    console.print(
        f"known classes {split.known_class_ids}, unknown classes {split.unknown_class_ids}"
    )


def show_report(report):
    table = Table(show_header=True)
    table.add_column("Metric", justify="left")
    table.add_column("Value", justify="right")
    for key, value in report.metrics().items():
        table.add_row(key, _fmt(value))
    console.print(table)

    table = Table(show_header=True)
    table.add_column("Label", justify="left")
    table.add_column("Precision", justify="right")
    table.add_column("Recall", justify="right")
    table.add_column("F1", justify="right")
    table.add_column("Support", justify="right")
    for i, label in enumerate(report.labels):
        table.add_row(
            "unknown" if label == UNKNOWN else str(label),
            _fmt(report.precision[i]),
            _fmt(report.recall[i]),
            _fmt(report.f1[i]),
            f"{report.support[i]:,}",
            end_section=i == len(report.labels) - 2,
        )
    console.print(table)


def show_comparison(comparisons):
    table = Table(show_header=True)
    table.add_column("Metric", justify="left")
    table.add_column("Mean A", justify="right")
    table.add_column("Mean B", justify="right")
    table.add_column("t", justify="right")
    table.add_column("p", justify="right")
    for row in comparisons:
        table.add_row(row.metric, _fmt(row.mean_a), _fmt(row.mean_b), f"{row.t:.4f}", f"{row.p:.4g}")
    console.print(table)


def cmd_split(experiment, args):
    show_split(experiment.split())


def cmd_train(experiment, args):
    if args.seeds:
        for seed, model in zip(args.seeds, experiment.train_seeds(args.seeds)):
            console.print(
                f"seed {seed}: {model.regime.value}, threshold {model.threshold:.6g}, "
                f"model {experiment.for_seed(seed).path('model')}"
            )
        return
    model = experiment.train()
    console.print(
        f"{model.regime.value}: {model.metadata.optimizer_steps} optimizer steps, "
        f"threshold {model.threshold:.6g}, model {experiment.path('model')}"
    )


def cmd_eval(experiment, args):
    if args.seeds:
        if args.model:
            raise ConfigurationError("--model", "cannot be combined with --seeds")
        for seed, report in zip(args.seeds, experiment.evaluate_seeds(args.seeds)):
            console.print(f"seed {seed}")
            show_report(report)
        return
    model = experiment.load_model(args.model)
    show_report(experiment.evaluate(model))


def cmd_predict(experiment, args):
    model = experiment.load_model(args.model)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    failed = 0
    try:
        writer = csv.writer(out)
        class_ids = [int(c) for c in model.class_means.class_ids]
        writer.writerow(["row", "label", "score", *(f"p_{c}" for c in class_ids)])
        for row, result in experiment.predict_file(model, args.input, args.header):
            if isinstance(result, RowParseError):
                failed += 1
                logger.error("Skipping %s", result)
                continue
            if result.is_unknown:
                writer.writerow([row, "unknown", repr(result.score), *([""] * len(class_ids))])
            else:
                writer.writerow(
                    [row, result.label, repr(result.score), *(repr(float(p)) for p in result.probs)]
                )
    finally:
        if out is not sys.stdout:
            out.close()
    if failed:
        logger.warning("%d malformed rows skipped", failed)


def cmd_compare(experiment, args):
    show_comparison(compare(args.runs_a, args.runs_b, args.filter))


def seeds_argument(text):
    try:
        return parse_seeds(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid seeds {text!r}: {exc}")


def build_parser():
    parser = argparse.ArgumentParser(
        description="Train and evaluate ii-loss open-set classifiers."
    )
    parser.add_argument("--verbose", action="store_true", default=False)
    subparsers = parser.add_subparsers(dest="command", required=True)

    def experiment_parser(name, func, help):
        sub = subparsers.add_parser(name, help=help)
        sub.set_defaults(func=func)
        sub.add_argument("--config", help="Experiment config (YAML).")
        sub.add_argument("--seed", type=int)
        sub.add_argument("--k", type=int, help="Number of known classes.")
        sub.add_argument("--split-mode", type=SplitMode, choices=list(SplitMode))
        sub.add_argument("--regime", type=TrainRegime, choices=list(TrainRegime))
        sub.add_argument("--iterations", type=int)
        sub.add_argument("--contamination-ratio", type=float)
        sub.add_argument("--output-dir", help="Run directory.")
        return sub

    experiment_parser("split", cmd_split, "Create the open-set split manifest.")
    seeds_help = "Training seeds, e.g. 0-4 or 0,3,7; one run-<seed> directory each."
    sub = experiment_parser("train", cmd_train, "Train a model on the split.")
    sub.add_argument("--seeds", type=seeds_argument, help=seeds_help)

    sub = experiment_parser("eval", cmd_eval, "Evaluate a model on the split's test set.")
    sub.add_argument("--model", help=f"Defaults to {RUN_FILES['model']} in the run directory.")
    sub.add_argument("--seeds", type=seeds_argument, help=seeds_help)

    sub = experiment_parser("predict", cmd_predict, "Predict CSV rows of raw features.")
    sub.add_argument("input", help="CSV file, optionally gzipped.")
    sub.add_argument("--model", help=f"Defaults to {RUN_FILES['model']} in the run directory.")
    sub.add_argument("--header", action="store_true", default=False)
    sub.add_argument("--output", help="Defaults to stdout.")

    sub = subparsers.add_parser("compare", help="Welch's t-test between two sets of runs.")
    sub.set_defaults(func=cmd_compare)
    sub.add_argument("--a", dest="runs_a", nargs="+", required=True, help="Reports or run directories.")
    sub.add_argument("--b", dest="runs_b", nargs="+", required=True, help="Reports or run directories.")
    sub.add_argument("--filter", help="Regex on run directory names.")
    return parser


def load_experiment(args):
    if args.command == "compare":
        return None
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    config = config.with_overrides(
        **{
            "seed": args.seed,
            "split.k": args.k,
            "split.mode": args.split_mode,
            "train.regime": args.regime,
            "train.iterations": args.iterations,
            "train.contamination_ratio": args.contamination_ratio,
            "output_dir": args.output_dir,
        }
    )
    return Experiment(config)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )
    try:
        args.func(load_experiment(args), args)
    except (ConfigurationError, SplitError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG_ERROR
    except (IiOpenSetError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
