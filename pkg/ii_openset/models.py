import copy
import typing
from enum import Enum

from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from dataclasses_json import DataClassJsonMixin

from .exceptions import ConfigurationError


Matrix = npt.NDArray[np.float64]
Labels = npt.NDArray[np.int64]

# The K+1st label.
UNKNOWN = -1


class Mode(str, Enum):
    Train = "train"
    Infer = "infer"


class LayerKind(str, Enum):
    Dense = "dense"
    Relu = "relu"
    BatchNorm = "batchnorm"
    Dropout = "dropout"


class TrainRegime(str, Enum):
    Ii = "ii"
    Ce = "ce"
    IiCe = "ii_ce"

    @property
    def uses_ii(self):
        return self in (TrainRegime.Ii, TrainRegime.IiCe)

    @property
    def uses_ce(self):
        return self in (TrainRegime.Ce, TrainRegime.IiCe)


class SplitMode(str, Enum):
    Resplit = "resplit"
    FixedTest = "fixed-test"
    # Every class known, stratified like resplit.
    Closed = "closed"


class ScalingKind(str, Enum):
    Identity = "none"
    Divide = "divide"
    Standardize = "standardize"


@dataclass(frozen=True)
class LayerSpec(DataClassJsonMixin):
    kind: LayerKind
    width: typing.Optional[int] = None
    keep_prob: typing.Optional[float] = None
    # Batchnorm only. Without a learned scale the output keeps unit batch
    # variance.
    scale: bool = True

    def validate(self, path="layers"):
        if self.kind == LayerKind.Dense:
            if self.width is None or self.width < 1:
                raise ConfigurationError(f"{path}.width", "dense width must be >= 1")
        if self.kind == LayerKind.Dropout:
            if self.keep_prob is None or not 0.0 < self.keep_prob <= 1.0:
                raise ConfigurationError(
                    f"{path}.keep_prob", "keep_prob must be in (0, 1]"
                )


def dense(width):
    return LayerSpec(kind=LayerKind.Dense, width=width)


def relu():
    return LayerSpec(kind=LayerKind.Relu)


def batchnorm(scale=True):
    return LayerSpec(kind=LayerKind.BatchNorm, scale=scale)


def dropout(keep_prob):
    return LayerSpec(kind=LayerKind.Dropout, keep_prob=keep_prob)


def fc_stack(widths, keep_prob=1.0, use_batchnorm=True):
    """
    Fully connected non-linear block per width: dense, batchnorm, relu and
    dropout (omitted when ``keep_prob`` is 1).
    """
    layers = []
    for width in widths:
        layers.append(dense(width))
        if use_batchnorm:
            layers.append(batchnorm())
        layers.append(relu())
        if keep_prob < 1.0:
            layers.append(dropout(keep_prob))
    return layers


@dataclass
class Architecture:
    Android: typing.ClassVar[typing.List[LayerSpec]] = fc_stack([64], keep_prob=0.9)
    MsChallenge: typing.ClassVar[typing.List[LayerSpec]] = fc_stack(
        [256], keep_prob=0.9
    )
    MnistFc: typing.ClassVar[typing.List[LayerSpec]] = fc_stack(
        [256, 128], keep_prob=0.2
    )
    # Optimizer settings each preset was tuned with; explicit train settings win.
    Training: typing.ClassVar[typing.Dict[str, typing.Dict[str, typing.Any]]] = {
        "Android": {"learning_rate": 0.1, "beta1": 0.9, "iterations": 10000},
        "MsChallenge": {"learning_rate": 0.001, "beta1": 0.9, "beta2": 0.999},
        "MnistFc": {
            "learning_rate": 0.001,
            "beta1": 0.5,
            "beta2": 0.999,
            "iterations": 5000,
        },
    }

    @classmethod
    def get(cls, name):
        layers = getattr(cls, name, None)
        if not isinstance(layers, list):
            raise ConfigurationError("network.preset", f"unknown preset {name!r}")
        return list(layers)

    @classmethod
    def training(cls, name) -> typing.Dict[str, typing.Any]:
        cls.get(name)
        return dict(cls.Training.get(name, {}))


@dataclass
class NetworkConfig(DataClassJsonMixin):
    input_dim: int
    layers: typing.List[LayerSpec]
    z_dim: int
    ce_head: bool = False
    n_classes: typing.Optional[int] = None
    z_batchnorm: bool = True
    seed: int = 0

    @property
    def embedding_layers(self) -> typing.List[LayerSpec]:
        """
        The hidden stack followed by the linear z-layer and, optionally, its
        batchnorm. That batchnorm only shifts: a learned scale would let the
        spread between class means grow without bound.
        """
        layers = list(self.layers) + [dense(self.z_dim)]
        if self.z_batchnorm:
            layers.append(batchnorm(scale=False))
        return layers

    def validate(self):
        if self.input_dim < 1:
            raise ConfigurationError("network.input_dim", "must be >= 1")
        if self.z_dim < 1:
            raise ConfigurationError("network.z_dim", "must be >= 1")
        seen_dense = False
        for i, spec in enumerate(self.layers):
            spec.validate(f"network.layers[{i}]")
            if spec.kind == LayerKind.BatchNorm and not seen_dense:
                raise ConfigurationError(
                    f"network.layers[{i}]", "batchnorm must follow a dense layer"
                )
            seen_dense = seen_dense or spec.kind == LayerKind.Dense
        if self.ce_head and (self.n_classes is None or self.n_classes < 1):
            raise ConfigurationError(
                "network.n_classes", "a ce head needs the number of known classes"
            )


@dataclass
class NetworkState:
    config: NetworkConfig
    params: typing.Dict[str, Matrix]
    buffers: typing.Dict[str, Matrix]
    mode: Mode = Mode.Train
    # Bumped on every optimizer update; forward caches remember it.
    version: int = 0

    def copy(self):
        return NetworkState(
            config=copy.deepcopy(self.config),
            params={k: v.copy() for k, v in self.params.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
            mode=self.mode,
            version=self.version,
        )

    def frozen(self):
        state = self.copy()
        state.mode = Mode.Infer
        for array in [*state.params.values(), *state.buffers.values()]:
            array.setflags(write=False)
        return state


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: typing.Dict[str, Matrix] = field(default_factory=dict)
    v: typing.Dict[str, Matrix] = field(default_factory=dict)


@dataclass
class ClassMeans:
    means: Matrix
    counts: Labels
    class_ids: Labels

    @property
    def k(self):
        return len(self.class_ids)


@dataclass(frozen=True)
class LossBreakdown:
    intra_spread: float
    inter_separation: float
    ii_loss: float
    ce_loss: typing.Optional[float] = None
    degenerate: bool = False


@dataclass
class TrainConfig(DataClassJsonMixin):
    regime: TrainRegime = TrainRegime.Ii
    iterations: int = 5000
    batch_size: int = 128
    learning_rate: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    contamination_ratio: float = 0.01
    seed: int = 0
    log_every: int = 100

    def validate(self):
        if self.iterations < 1:
            raise ConfigurationError("train.iterations", "must be >= 1")
        if self.batch_size < 2:
            raise ConfigurationError("train.batch_size", "must be >= 2")
        if not 0.0 <= self.contamination_ratio < 1.0:
            raise ConfigurationError(
                "train.contamination_ratio", "must be in [0, 1)"
            )
        if self.learning_rate <= 0:
            raise ConfigurationError("train.learning_rate", "must be > 0")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigurationError(f"train.{name}", "must be in [0, 1)")


@dataclass
class LossCurves:
    intra: Matrix
    inter: Matrix
    ii: Matrix
    # NaN where the regime has no ce step.
    ce: Matrix

    def __len__(self):
        return len(self.intra)

    def rows(self):
        for i in range(len(self)):
            yield (
                i + 1,
                float(self.intra[i]),
                float(self.inter[i]),
                float(self.ii[i]),
                float(self.ce[i]),
            )


@dataclass(frozen=True)
class TrainMetadata(DataClassJsonMixin):
    seed: int
    iterations: int
    optimizer_steps: int
    batch_size: int
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float
    contamination_ratio: float
    degenerate: bool = False


@dataclass(frozen=True)
class FeatureScaling(DataClassJsonMixin):
    kind: ScalingKind = ScalingKind.Identity
    divisor: typing.Optional[float] = None
    mean: typing.Optional[typing.List[float]] = None
    std: typing.Optional[typing.List[float]] = None
    image_shape: typing.Optional[typing.List[int]] = None

    def apply(self, features) -> Matrix:
        """Map raw feature values (pixels, unscaled columns) to model inputs."""
        features = np.asarray(features, dtype=np.float64)
        if self.kind == ScalingKind.Divide:
            return features / self.divisor
        if self.kind == ScalingKind.Standardize:
            return (features - np.asarray(self.mean)) / np.asarray(self.std)
        return features


@dataclass
class TrainedModel:
    network: NetworkState
    class_means: ClassMeans
    threshold: float
    regime: TrainRegime
    metadata: TrainMetadata
    curves: LossCurves
    scaling: FeatureScaling = field(default_factory=FeatureScaling)

    @property
    def config(self):
        return self.network.config


@dataclass(frozen=True)
class OpenPrediction:
    label: int
    score: float
    probs: typing.Optional[Matrix] = None

    @property
    def is_unknown(self):
        return self.label == UNKNOWN


@dataclass
class EvalReport(DataClassJsonMixin):
    auc_full: float
    auc_at_cap: float
    cap: float
    labels: typing.List[int]
    precision: typing.List[float]
    recall: typing.List[float]
    f1: typing.List[float]
    support: typing.List[int]
    macro_precision: float
    macro_recall: float
    macro_f: float
    confusion: typing.List[typing.List[int]]
    closed_set_accuracy: typing.Optional[float] = None
    n_known: int = 0
    n_unknown: int = 0

    def metrics(self) -> typing.Dict[str, float]:
        record = {}
        # Undefined without both known and unknown test instances.
        if not np.isnan(self.auc_full):
            record["auc_100"] = self.auc_full
            record["auc_10"] = self.auc_at_cap
        record.update(
            macro_precision=self.macro_precision,
            macro_recall=self.macro_recall,
            macro_f=self.macro_f,
        )
        if self.closed_set_accuracy is not None:
            record["closed_set_accuracy"] = self.closed_set_accuracy
        return record


@dataclass(frozen=True)
class Dataset:
    features: Matrix
    labels: Labels
    name: str = ""
    scaling: FeatureScaling = field(default_factory=FeatureScaling)
    # Labels before known-class remapping; equal to labels when never remapped.
    original_labels: typing.Optional[Labels] = None

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, ndmin=2)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        original = (
            labels.copy()
            if self.original_labels is None
            else np.array(self.original_labels, dtype=np.int64).reshape(-1)
        )
        if features.shape[0] != labels.shape[0]:
            raise ValueError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        if original.shape != labels.shape:
            raise ValueError("original_labels must match labels")
        if not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        for array in (features, labels, original):
            array.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "original_labels", original)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def class_ids(self) -> Labels:
        return np.unique(self.labels[self.labels != UNKNOWN])

    def subset(self, indices, labels=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[indices],
            labels=self.labels[indices] if labels is None else labels,
            name=self.name,
            scaling=self.scaling,
            original_labels=self.original_labels[indices],
        )


@dataclass
class SplitManifest(DataClassJsonMixin):
    mode: SplitMode
    k: int
    seed: int
    known_class_ids: typing.List[int]
    unknown_class_ids: typing.List[int]
    train_indices: typing.List[int]
    val_indices: typing.List[int]
    # Index into the predefined test partition in fixed-test mode.
    test_indices: typing.List[int]
    train_fraction: float = 0.75
    val_fraction: float = 1.0 / 3.0


@dataclass
class OpenSetSplit:
    known_class_ids: typing.List[int]
    unknown_class_ids: typing.List[int]
    train: Dataset
    val: Dataset
    test: Dataset
    seed: int
    manifest: SplitManifest

    @property
    def k(self):
        return len(self.known_class_ids)
