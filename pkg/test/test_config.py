import pytest

from ii_openset.config import DatasetFormat, ExperimentConfig
from ii_openset.exceptions import ConfigurationError
from ii_openset.models import LayerKind, SplitMode, TrainRegime

from .conftest import fixture


def test_load_experiment(shared_datadir):
    config = ExperimentConfig.load(fixture(shared_datadir, "experiment.yaml"))
    assert config.dataset.format == DatasetFormat.Blobs
    assert config.split.mode == SplitMode.Resplit
    assert config.split.known == [0, 1, 2, 3]
    assert [spec.kind for spec in config.network.layers] == [
        LayerKind.Dense,
        LayerKind.BatchNorm,
        LayerKind.Relu,
    ]
    assert config.train.regime == TrainRegime.Ii
    assert config.seed == 3
    config.validate()


def test_defaults_fill_missing_sections():
    config = ExperimentConfig.from_yaml("seed: 5\n")
    assert config.split.k == 6
    assert config.train.iterations == 5000
    assert config.train.beta1 == 0.5
    assert config.fpr_cap == 0.1


def test_yaml_round_trip(shared_datadir):
    config = ExperimentConfig.load(fixture(shared_datadir, "experiment.yaml"))
    assert ExperimentConfig.from_yaml(config.to_yaml()) == config


def test_unknown_key(shared_datadir):
    with pytest.raises(ConfigurationError) as exc:
        ExperimentConfig.load(fixture(shared_datadir, "unknown_key.yaml"))
    assert exc.value.field == "split.kk"


def test_unknown_nested_key():
    text = "network:\n  layers:\n    - kind: dense\n      widht: 3\n"
    with pytest.raises(ConfigurationError) as exc:
        ExperimentConfig.from_yaml(text)
    assert exc.value.field == "network.layers[0].widht"


def test_invalid_yaml():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_yaml("split: [k: 4")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load(tmp_path / "missing.yaml")


def test_overrides(shared_datadir):
    config = ExperimentConfig.load(fixture(shared_datadir, "experiment.yaml"))
    changed = config.with_overrides(
        **{"seed": 11, "split.k": 3, "train.iterations": None, "split.known": None}
    )
    assert changed.seed == 11
    assert changed.split.k == 3
    assert changed.train.iterations == config.train.iterations
    assert config.split.k == 4


def test_csv_path_is_required(tmp_path):
    config = ExperimentConfig.from_yaml("dataset:\n  format: csv\n")
    with pytest.raises(ConfigurationError) as exc:
        config.validate()
    assert exc.value.field == "dataset.path"

    config = config.with_overrides(**{"dataset.path": str(tmp_path / "missing.csv")})
    with pytest.raises(ConfigurationError) as exc:
        config.validate()
    assert exc.value.field == "dataset.path"


def test_fixed_test_needs_test_files(shared_datadir):
    config = ExperimentConfig().with_overrides(
        **{
            "dataset.path": str(fixture(shared_datadir, "three_rows.csv")),
            "split.mode": SplitMode.FixedTest,
        }
    )
    with pytest.raises(ConfigurationError) as exc:
        config.validate()
    assert exc.value.field == "dataset.test_path"


@pytest.mark.parametrize(
    "overrides, field",
    [
        ({"split.k": 0}, "split.k"),
        ({"split.known": [0, 1]}, "split.known"),
        ({"train.contamination_ratio": 1.0}, "train.contamination_ratio"),
        ({"train.batch_size": 0}, "train.batch_size"),
        ({"fpr_cap": 0.0}, "fpr_cap"),
        ({"network.preset": "android"}, "network.preset"),
        ({"split.mode": SplitMode.FixedTest}, "split.mode"),
    ],
)
def test_validate_names_the_field(shared_datadir, overrides, field):
    config = ExperimentConfig.load(fixture(shared_datadir, "experiment.yaml"))
    with pytest.raises(ConfigurationError) as exc:
        config.with_overrides(**overrides).validate()
    assert exc.value.field == field


def test_network_config(shared_datadir):
    config = ExperimentConfig.load(fixture(shared_datadir, "experiment.yaml"))
    net = config.network_config(input_dim=2)
    assert net.z_dim == 4
    assert net.n_classes == 4
    assert not net.ce_head
    assert config.with_overrides(**{"train.regime": TrainRegime.IiCe}).network_config(2).ce_head
    assert config.train_config().seed == 3


def test_preset_brings_its_training_settings():
    config = ExperimentConfig.from_yaml("network:\n  preset: Android\n")
    assert config.train.learning_rate == 0.1
    assert config.train.beta1 == 0.9
    assert config.train.iterations == 10000

    config = ExperimentConfig.from_yaml(
        "network:\n  preset: Android\ntrain:\n  learning_rate: 0.01\n"
    )
    assert config.train.learning_rate == 0.01
    assert config.train.beta1 == 0.9
    assert ExperimentConfig.from_yaml(config.to_yaml()) == config

    config = ExperimentConfig.from_yaml("network:\n  preset: MsChallenge\n")
    assert (config.train.learning_rate, config.train.beta1) == (0.001, 0.9)


def test_unknown_preset_in_yaml():
    with pytest.raises(ConfigurationError) as exc:
        ExperimentConfig.from_yaml("network:\n  preset: Training\n")
    assert exc.value.field == "network.preset"


def test_training_seed_leaves_the_split_seed(shared_datadir):
    config = ExperimentConfig.load(fixture(shared_datadir, "experiment.yaml"))
    reseeded = config.with_overrides(**{"train.seed": 8})
    assert reseeded.train_config().seed == 8
    assert reseeded.network_config(2).seed != config.network_config(2).seed
    assert reseeded.seed == config.seed == 3


def test_closed_split_mode_is_accepted():
    config = ExperimentConfig.from_yaml(
        "dataset:\n  format: blobs\n  n_outlier_classes: 2\nsplit:\n  k: 6\n  mode: closed\n"
    )
    assert config.split.mode == SplitMode.Closed
    config.validate()
