import dataclasses
import json

import numpy as np
import pytest

from ii_openset import Experiment, ExperimentConfig, evaluation
from ii_openset.exceptions import MetricError, RowParseError
from ii_openset.interface import compare, read_reports
from ii_openset.models import UNKNOWN, SplitMode
from ii_openset.nn import embed

from .conftest import fixture


@pytest.fixture
def experiment(shared_datadir, tmp_path):
    config = ExperimentConfig.load(fixture(shared_datadir, "experiment.yaml"))
    return Experiment(
        config.with_overrides(
            **{
                "network.layers": [],
                "output_dir": str(tmp_path / "run"),
            }
        ),
        predict_batch_size=2,
    )


def test_split_writes_manifest(experiment):
    split = experiment.split()
    manifest = json.loads(experiment.path("split").read_text())
    assert manifest["known_class_ids"] == [0, 1, 2, 3]
    assert manifest["unknown_class_ids"] == [4, 5]
    assert len(manifest["test_indices"]) == len(split.test)

    first = experiment.path("split").read_bytes()
    experiment.split()
    assert experiment.path("split").read_bytes() == first


def test_load_split_replays_manifest(experiment):
    split = experiment.split()
    loaded = experiment.load_split()
    assert np.array_equal(loaded.test.features, split.test.features)
    assert np.array_equal(loaded.train.labels, split.train.labels)


def test_pipeline(experiment):
    model = experiment.train()
    assert experiment.path("split").is_file()
    assert experiment.path("model").is_file()
    assert len(experiment.path("curves").read_text().splitlines()) == 1001

    report = experiment.evaluate(experiment.load_model())
    assert report.n_unknown == 400
    assert report.macro_f > 0.9
    assert experiment.path("report_json").is_file()
    assert experiment.path("roc").read_text().startswith("fpr,tpr,threshold")
    assert experiment.load_model().threshold == model.threshold


def test_predict_rows(experiment, shared_datadir):
    model = experiment.train()
    results = list(experiment.predict_file(model, fixture(shared_datadir, "predict_rows.csv")))
    assert [row for row, _ in results] == [1, 2, 3, 4, 5]

    by_row = dict(results)
    assert by_row[1].label == 0
    assert by_row[3].label == UNKNOWN
    assert by_row[4].label == 1
    assert isinstance(by_row[2], RowParseError) and by_row[2].column == 2
    assert isinstance(by_row[5], RowParseError)


def test_predict_rows_header(experiment):
    model = experiment.train()
    results = list(experiment.predict_rows(model, ["x,y", "0.0,0.0", "1.0,q"], header=True))
    assert [row for row, _ in results] == [1, 2]
    assert isinstance(results[1][1], RowParseError) and results[1][1].row == 2


def _write_report(directory, **metrics):
    directory.mkdir(parents=True)
    (directory / "report.json").write_text(json.dumps({"metrics": metrics}))


def test_read_reports_and_compare(tmp_path):
    for i, value in enumerate([0.9, 0.92, 0.91]):
        _write_report(tmp_path / "ii" / f"seed-{i}", auc_100=value)
        _write_report(tmp_path / "ce" / f"seed-{i}", auc_100=value - 0.1)
    _write_report(tmp_path / "ii" / "scratch", auc_100=0.0)

    assert len(read_reports(tmp_path / "ii")) == 4
    assert len(read_reports(tmp_path / "ii", r"seed-")) == 3
    assert read_reports(tmp_path / "ii" / "seed-0" / "report.json") == [{"auc_100": 0.9}]

    (row,) = compare([tmp_path / "ii"], [tmp_path / "ce"], r"seed-")
    assert row.metric == "auc_100"
    assert row.mean_a == pytest.approx(0.91)
    assert row.t > 0


def test_compare_needs_two_runs(tmp_path):
    _write_report(tmp_path / "a" / "run", auc_100=0.9)
    _write_report(tmp_path / "b" / "run", auc_100=0.8)
    with pytest.raises(MetricError):
        compare([tmp_path / "a"], [tmp_path / "b"])


def test_evaluate_embeds_the_test_set_once(experiment, monkeypatch):
    model = experiment.train()
    calls = []

    def counting_embed(state, x, *args, **kwargs):
        calls.append(len(x))
        return embed(state, x, *args, **kwargs)

    monkeypatch.setattr(evaluation, "embed", counting_embed)
    report = experiment.evaluate(model)
    assert calls == [report.n_known + report.n_unknown]
    assert experiment.path("roc").is_file()


def test_seeded_runs_share_one_split(experiment):
    models = experiment.train_seeds([0, 1])
    split_bytes = experiment.path("split").read_bytes()
    for seed in (0, 1):
        run = experiment.for_seed(seed)
        assert run.output_dir == experiment.output_dir / f"run-{seed}"
        assert run.path("model").is_file()
        assert not run.path("split").exists()
    assert not np.array_equal(
        models[0].network.params["0.weight"], models[1].network.params["0.weight"]
    )

    reports = experiment.evaluate_seeds([0, 1])
    assert [report.n_unknown for report in reports] == [400, 400]
    assert experiment.path("split").read_bytes() == split_bytes
    assert len(read_reports(experiment.output_dir, r"run-")) == 2


def test_closed_experiment(shared_datadir, tmp_path):
    config = ExperimentConfig.load(fixture(shared_datadir, "experiment.yaml"))
    config = dataclasses.replace(
        config,
        split=dataclasses.replace(config.split, k=6, known=None, mode=SplitMode.Closed),
        output_dir=str(tmp_path / "closed"),
    )
    experiment = Experiment(config)
    report = experiment.evaluate(experiment.train())
    assert report.n_unknown == 0
    assert report.closed_set_accuracy >= 0.95
    assert not experiment.path("roc").exists()
