import dataclasses
import json
import typing

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import yaml
from dataclasses_json import DataClassJsonMixin, Undefined
from dataclasses_json import config as json_config

from .exceptions import ConfigurationError
from .models import (
    Architecture,
    LayerSpec,
    NetworkConfig,
    SplitMode,
    TrainConfig,
    TrainRegime,
)
from .util import sub_seed

_STRICT = json_config(undefined=Undefined.RAISE)["dataclasses_json"]


class DatasetFormat(str, Enum):
    Idx = "idx"
    Csv = "csv"
    Blobs = "blobs"


@dataclass
class DatasetSpec(DataClassJsonMixin):
    dataclass_json_config = _STRICT

    format: DatasetFormat = DatasetFormat.Csv
    # CSV file, or the IDX image file.
    path: typing.Optional[str] = None
    labels_path: typing.Optional[str] = None
    # Predefined test partition for the fixed-test split mode.
    test_path: typing.Optional[str] = None
    test_labels_path: typing.Optional[str] = None
    label_column: int = -1
    header: bool = False
    standardize: bool = False
    # Synthetic blobs.
    classes: int = 4
    n_per_class: int = 200
    dim: int = 2
    center_spacing: float = 10.0
    sigma: float = 0.3
    n_outlier_classes: int = 0

    def paths(self) -> typing.Dict[str, typing.Optional[str]]:
        if self.format == DatasetFormat.Idx:
            return {
                "dataset.path": self.path,
                "dataset.labels_path": self.labels_path,
            }
        if self.format == DatasetFormat.Csv:
            return {"dataset.path": self.path}
        return {}

    def test_paths(self) -> typing.Dict[str, typing.Optional[str]]:
        if self.format == DatasetFormat.Idx:
            return {
                "dataset.test_path": self.test_path,
                "dataset.test_labels_path": self.test_labels_path,
            }
        if self.format == DatasetFormat.Csv:
            return {"dataset.test_path": self.test_path}
        return {}


@dataclass
class SplitSpec(DataClassJsonMixin):
    dataclass_json_config = _STRICT

    k: int = 6
    mode: SplitMode = SplitMode.Resplit
    train_fraction: float = 0.75
    val_fraction: float = 1.0 / 3.0
    known: typing.Optional[typing.List[int]] = None


@dataclass
class NetworkSpec(DataClassJsonMixin):
    dataclass_json_config = _STRICT

    preset: typing.Optional[str] = None
    layers: typing.Optional[typing.List[LayerSpec]] = None
    # Defaults to the number of known classes.
    z_dim: typing.Optional[int] = None
    z_batchnorm: bool = True

    def hidden_layers(self) -> typing.List[LayerSpec]:
        if self.preset is not None:
            return Architecture.get(self.preset)
        return list(self.layers or [])


@dataclass
class TrainSpec(DataClassJsonMixin):
    dataclass_json_config = _STRICT

    regime: TrainRegime = TrainRegime.Ii
    iterations: int = 5000
    batch_size: int = 128
    learning_rate: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    contamination_ratio: float = 0.01
    log_every: int = 100
    # Seeds network init, batching and dropout; defaults to the experiment seed.
    # Runs that differ only here share one split.
    seed: typing.Optional[int] = None


@dataclass
class ExperimentConfig(DataClassJsonMixin):
    """
    Everything a run needs. Every random choice is derived from ``seed``, so
    the config alone reproduces split, model and reports.
    """

    dataclass_json_config = _STRICT

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    split: SplitSpec = field(default_factory=SplitSpec)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    seed: int = 0
    output_dir: str = "runs/experiment"
    fpr_cap: float = 0.1

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigurationError("config", f"invalid YAML: {exc}")
        data = {} if data is None else data
        _check_keys(cls, data, "")
        data = _with_preset_training(data)
        try:
            return cls.from_dict(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError("config", str(exc))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError("config", str(exc))
        return cls.from_yaml(text)

    def to_yaml(self) -> str:
        return yaml.safe_dump(json.loads(self.to_json()), sort_keys=False)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """
        Copy with ``section.field`` overrides applied, e.g.
        ``with_overrides(**{"split.k": 4})``. ``None`` values are skipped.
        """
        result = self
        for dotted, value in overrides.items():
            if value is None:
                continue
            section, _, name = dotted.rpartition(".")
            if section:
                part = dataclasses.replace(getattr(result, section), **{name: value})
                result = dataclasses.replace(result, **{section: part})
            else:
                result = dataclasses.replace(result, **{name: value})
        return result

    def validate(self, need_test: bool = False):
        """
        Check value ranges and that every referenced file exists.

        :raise ConfigurationError: with the dotted path of the offending field.
        """
        paths = dict(self.dataset.paths())
        if need_test or (
            self.split.mode == SplitMode.FixedTest
            and self.dataset.format != DatasetFormat.Blobs
        ):
            paths.update(self.dataset.test_paths())
        for name, value in paths.items():
            if value is None:
                raise ConfigurationError(name, "is required")
            if not Path(value).is_file():
                raise ConfigurationError(name, f"{value} does not exist")

        if self.dataset.format == DatasetFormat.Blobs:
            if self.split.mode == SplitMode.FixedTest:
                raise ConfigurationError("split.mode", "blobs have no predefined test set")
            if self.dataset.classes < 1:
                raise ConfigurationError("dataset.classes", "must be >= 1")
            if self.dataset.sigma < 0:
                raise ConfigurationError("dataset.sigma", "must be >= 0")

        if self.split.k < 1:
            raise ConfigurationError("split.k", "must be >= 1")
        if self.split.known is not None and len(set(self.split.known)) != self.split.k:
            raise ConfigurationError("split.known", f"must list {self.split.k} distinct classes")
        if not 0.0 < self.split.train_fraction <= 1.0:
            raise ConfigurationError("split.train_fraction", "must be in (0, 1]")
        if not 0.0 <= self.split.val_fraction < 1.0:
            raise ConfigurationError("split.val_fraction", "must be in [0, 1)")

        if self.network.preset is not None and self.network.layers is not None:
            raise ConfigurationError("network.preset", "give either a preset or layers")
        if self.network.preset is not None:
            Architecture.get(self.network.preset)
        if self.network.z_dim is not None and self.network.z_dim < 1:
            raise ConfigurationError("network.z_dim", "must be >= 1")
        for i, spec in enumerate(self.network.hidden_layers()):
            spec.validate(f"network.layers[{i}]")

        self.train_config().validate()
        if not 0.0 < self.fpr_cap <= 1.0:
            raise ConfigurationError("fpr_cap", "must be in (0, 1]")

    @property
    def training_seed(self) -> int:
        return self.seed if self.train.seed is None else self.train.seed

    def train_config(self) -> TrainConfig:
        spec = self.train
        return TrainConfig(
            regime=spec.regime,
            iterations=spec.iterations,
            batch_size=spec.batch_size,
            learning_rate=spec.learning_rate,
            beta1=spec.beta1,
            beta2=spec.beta2,
            epsilon=spec.epsilon,
            contamination_ratio=spec.contamination_ratio,
            seed=self.training_seed,
            log_every=spec.log_every,
        )

    def network_config(self, input_dim: int) -> NetworkConfig:
        k = self.split.k
        return NetworkConfig(
            input_dim=input_dim,
            layers=self.network.hidden_layers(),
            z_dim=self.network.z_dim or k,
            ce_head=self.train.regime.uses_ce,
            n_classes=k,
            z_batchnorm=self.network.z_batchnorm,
            seed=sub_seed(self.training_seed, "init"),
        )


def _unwrap(type_):
    """The dataclass inside ``Optional[...]`` / ``List[...]``, if any."""
    while typing.get_origin(type_) in (typing.Union, list):
        args = [a for a in typing.get_args(type_) if a is not type(None)]
        type_ = args[0]
    return type_ if dataclasses.is_dataclass(type_) else None


def _check_keys(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigurationError(path or "config", "must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in fields:
            raise ConfigurationError(where, "unknown key")
        nested = _unwrap(fields[key].type)
        if nested is None or value is None:
            continue
        if isinstance(value, list):
            for i, item in enumerate(value):
                _check_keys(nested, item, f"{where}[{i}]")
        else:
            _check_keys(nested, value, where)


def _with_preset_training(data):
    """Fill train settings the config leaves out from the network preset's."""
    network = data.get("network") or {}
    preset = network.get("preset")
    if preset is None:
        return data
    train = dict(data.get("train") or {})
    for key, value in Architecture.training(preset).items():
        train.setdefault(key, value)
    return {**data, "train": train}
