import csv
import dataclasses
import json
import logging
import re
import typing

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DatasetFormat, ExperimentConfig
from .data import apply_manifest, load_csv, load_idx, open_split, synth_blobs
from .evaluation import MetricComparison, compare_runs, evaluate_with_scores, roc_points
from .exceptions import RowParseError, TrainingDivergedError
from .io import (
    FileIterator,
    load_model,
    read_report_metrics,
    save_model,
    write_curves_csv,
    write_report,
    write_roc_points,
)
from .models import (
    UNKNOWN,
    Dataset,
    EvalReport,
    OpenPrediction,
    OpenSetSplit,
    SplitManifest,
    SplitMode,
    TrainedModel,
)
from .openset import predict_open_batch
from .parser import parse_row
from .training import train
from .util import batcher

logger = logging.getLogger(__name__)

RUN_FILES = {
    "split": "split.json",
    "model": "model.iimodel",
    "curves": "curves.csv",
    "report_json": "report.json",
    "report_csv": "report.csv",
    "roc": "roc_points.csv",
    "predictions": "predictions.csv",
}


def _dump_json(document, path):
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")


@dataclass
class Experiment:
    """Runs the pipeline stages of one experiment config inside its run directory."""

    config: ExperimentConfig
    predict_batch_size: int = 1024

    @property
    def output_dir(self) -> Path:
        return Path(self.config.output_dir)

    def path(self, name) -> Path:
        return self.output_dir / RUN_FILES[name]

    def load_dataset(self) -> typing.Tuple[Dataset, typing.Optional[Dataset]]:
        """
        Load the configured dataset and, if the config names one, its
        predefined test partition. The test partition is scaled like the
        training data.
        """
        spec = self.config.dataset
        test = None
        if spec.format == DatasetFormat.Idx:
            dataset = load_idx(spec.path, spec.labels_path)
            if spec.test_path:
                test = load_idx(spec.test_path, spec.test_labels_path)
        elif spec.format == DatasetFormat.Csv:
            dataset = load_csv(spec.path, spec.label_column, spec.header, spec.standardize)
            if spec.test_path:
                raw = load_csv(spec.test_path, spec.label_column, spec.header)
                test = Dataset(
                    features=dataset.scaling.apply(raw.features),
                    labels=raw.labels,
                    name=raw.name,
                    scaling=dataset.scaling,
                )
        else:
            dataset = synth_blobs(
                spec.classes,
                spec.n_per_class,
                dim=spec.dim,
                center_spacing=spec.center_spacing,
                sigma=spec.sigma,
                seed=self.config.seed,
                n_outlier_classes=spec.n_outlier_classes,
            )
        return dataset, test

    def split(self) -> OpenSetSplit:
        """Create the open-set split and write its manifest."""
        self.config.validate()
        dataset, test = self.load_dataset()
        spec = self.config.split
        result = open_split(
            dataset,
            spec.k,
            seed=self.config.seed,
            mode=spec.mode,
            train_fraction=spec.train_fraction,
            val_fraction=spec.val_fraction,
            test_dataset=test,
            known=spec.known,
        )
        self.output_dir.mkdir(parents=True, exist_ok=True)
        _dump_json(json.loads(result.manifest.to_json()), self.path("split"))
        logger.info("Wrote %s", self.path("split"))
        return result

    def load_split(self) -> OpenSetSplit:
        """Rebuild the split from the manifest in the run directory."""
        manifest = SplitManifest.from_json(self.path("split").read_text())
        self.config.validate(need_test=manifest.mode == SplitMode.FixedTest)
        dataset, test = self.load_dataset()
        return apply_manifest(manifest, dataset, test)

    def split_or_load(self) -> OpenSetSplit:
        return self.load_split() if self.path("split").is_file() else self.split()

    def train(self, split: typing.Optional[OpenSetSplit] = None) -> TrainedModel:
        """
        Train on the split's training set and write the model and loss curves.
        When training diverges the partial curves are still written.
        """
        split = split or self.split_or_load()
        self.config.validate()
        net_config = self.config.network_config(split.train.dim)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        try:
            model = train(split.train, net_config, self.config.train_config())
        except TrainingDivergedError as exc:
            write_curves_csv(exc.curves, self.path("curves"))
            logger.error("Partial loss curves written to %s", self.path("curves"))
            raise
        save_model(model, self.path("model"))
        write_curves_csv(model.curves, self.path("curves"))
        logger.info("Wrote %s and %s", self.path("model"), self.path("curves"))
        return model

    def load_model(self, path=None) -> TrainedModel:
        return load_model(path or self.path("model"))

    def evaluate(
        self,
        model: typing.Optional[TrainedModel] = None,
        split: typing.Optional[OpenSetSplit] = None,
    ) -> EvalReport:
        """Score the split's test set and write the report and ROC points."""
        model = model or self.load_model()
        split = split or self.load_split()
        report, scores = evaluate_with_scores(model, split.test, self.config.fpr_cap)
        write_report(report, self.path("report_json"), self.path("report_csv"))

        flags = split.test.labels == UNKNOWN
        if flags.any() and not flags.all():
            write_roc_points(*roc_points(scores, flags), self.path("roc"))
        logger.info("Wrote %s", self.path("report_json"))
        return report

    def for_seed(self, seed: int) -> "Experiment":
        """
        The same experiment trained with ``seed`` in ``run-<seed>/`` below this
        run directory. The split stays the one in this run directory.
        """
        config = self.config.with_overrides(
            **{"train.seed": seed, "output_dir": str(self.output_dir / f"run-{seed}")}
        )
        return dataclasses.replace(self, config=config)

    def train_seeds(self, seeds: typing.Iterable[int]) -> typing.List[TrainedModel]:
        split = self.split_or_load()
        return [self.for_seed(seed).train(split) for seed in seeds]

    def evaluate_seeds(self, seeds: typing.Iterable[int]) -> typing.List[EvalReport]:
        split = self.load_split()
        reports = []
        for seed in seeds:
            run = self.for_seed(seed)
            reports.append(run.evaluate(run.load_model(), split))
        return reports

    def predict_rows(
        self,
        model: TrainedModel,
        lines: typing.Iterable[str],
        header: bool = False,
    ) -> typing.Iterator[typing.Tuple[int, typing.Union[OpenPrediction, RowParseError]]]:
        """
        Yield ``(row, prediction)`` for every CSV row of raw features, or
        ``(row, error)`` for a malformed row. Rows count from 1 at the first line
        after the header, as in :func:`load_csv`, and are predicted in batches.
        """
        width = model.config.input_dim
        numbered = enumerate(csv.reader(iter(lines)), start=0 if header else 1)

        def parsed():
            for row, values in numbered:
                if row == 0 or not values:
                    continue
                try:
                    features, _ = parse_row(values, row, width=width)
                except RowParseError as exc:
                    yield row, exc
                else:
                    yield row, features

        for batch in batcher(parsed(), self.predict_batch_size):
            good = [(row, item) for row, item in batch if not isinstance(item, RowParseError)]
            predictions = iter(
                predict_open_batch(
                    model, model.scaling.apply(np.array([item for _, item in good]))
                )
                if good
                else []
            )
            for row, item in batch:
                yield row, item if isinstance(item, RowParseError) else next(predictions)

    def predict_file(self, model: TrainedModel, path, header: bool = False):
        yield from self.predict_rows(model, FileIterator.for_path(path), header)


def read_reports(pathname, regex_filter=None) -> typing.List[typing.Dict[str, float]]:
    """
    Metric records of the reports at ``pathname``: a report file, or every
    ``report.json`` below a directory, optionally filtered by run directory
    name.
    """
    base_path = Path(pathname)
    if not base_path.is_dir():
        return [read_report_metrics(base_path)]
    paths = sorted(base_path.glob(f"**/{RUN_FILES['report_json']}"))
    if regex_filter:
        reo = re.compile(regex_filter)
        paths = [path for path in paths if reo.match(path.parent.name)]
    return [read_report_metrics(path) for path in paths]


def compare(paths_a, paths_b, regex_filter=None) -> typing.List[MetricComparison]:
    runs_a = [run for path in paths_a for run in read_reports(path, regex_filter)]
    runs_b = [run for path in paths_b for run in read_reports(path, regex_filter)]
    logger.info("Comparing %d runs against %d runs", len(runs_a), len(runs_b))
    return compare_runs(runs_a, runs_b)
