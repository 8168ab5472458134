import csv
import gzip
import io
import json
import math
import struct
import typing

from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ModelFormatError
from .models import (
    ClassMeans,
    EvalReport,
    FeatureScaling,
    LossCurves,
    Mode,
    NetworkConfig,
    NetworkState,
    TrainedModel,
    TrainMetadata,
    TrainRegime,
)
from .nn import init_network


@dataclass
class FileIterator:
    path: typing.Optional[Path] = None
    fileobj: typing.Optional[io.IOBase] = None
    gzipped: bool = False

    @classmethod
    def for_path(cls, path):
        path = Path(path)
        return cls(path=path, gzipped=path.suffix == ".gz")

    def yield_gzipped(self, fh):
        yield from [line for line in fh.read().decode("utf-8").splitlines()]

    def yield_plain(self, fh):
        yield from [line.decode("utf-8").rstrip("\r\n") for line in fh]

    @contextmanager
    def open_path(self):
        assert self.path
        fh = self.path.open("rb")
        try:
            yield fh
        finally:
            fh.close()

    @contextmanager
    def open_gzip(self):
        if self.fileobj:
            yield gzip.GzipFile(fileobj=self.fileobj)
        else:
            with self.open_path() as fh:
                yield gzip.GzipFile(fileobj=fh)

    @contextmanager
    def open(self):
        if not self.gzipped and self.fileobj:
            yield self.fileobj
        else:
            open_func = self.open_gzip if self.gzipped else self.open_path
            with open_func() as fh:
                yield fh

    def read_bytes(self) -> bytes:
        with self.open() as fh:
            return fh.read()

    def __iter__(self):
        yield_func = self.yield_gzipped if self.gzipped else self.yield_plain
        with self.open() as fh:
            yield from yield_func(fh)


# Model container: magic, format version (u32), header length (u64), a JSON
# header, then little-endian float64 arrays in the order the header lists them.
MODEL_MAGIC = b"IIOSMDL\x00"
MODEL_FORMAT_VERSION = 1
_VERSION = struct.Struct("<I")
_HEADER_LENGTH = struct.Struct("<Q")
_FLOAT = np.dtype("<f8")

CURVE_NAMES = ("intra", "inter", "ii", "ce")


def _model_arrays(model: TrainedModel):
    yield "class_means", model.class_means.means
    yield "threshold", np.array([model.threshold])
    for name, param in model.network.params.items():
        yield f"param:{name}", param
    for name, buffer in model.network.buffers.items():
        yield f"buffer:{name}", buffer
    for name in CURVE_NAMES:
        yield f"curve:{name}", getattr(model.curves, name)


def model_to_bytes(model: TrainedModel) -> bytes:
    arrays = list(_model_arrays(model))
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "regime": model.regime.value,
        "network": json.loads(model.network.config.to_json()),
        "class_ids": [int(c) for c in model.class_means.class_ids],
        "class_counts": [int(c) for c in model.class_means.counts],
        "metadata": json.loads(model.metadata.to_json()),
        "scaling": json.loads(model.scaling.to_json()),
        "arrays": [
            {"name": name, "shape": list(np.shape(array))} for name, array in arrays
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )
    chunks = [
        MODEL_MAGIC,
        _VERSION.pack(MODEL_FORMAT_VERSION),
        _HEADER_LENGTH.pack(len(header_bytes)),
        header_bytes,
    ]
    chunks.extend(np.ascontiguousarray(array, dtype=_FLOAT).tobytes() for _, array in arrays)
    return b"".join(chunks)


def save_model(model: TrainedModel, path):
    Path(path).write_bytes(model_to_bytes(model))


def _unpack(struct_, data, offset, field):
    end = offset + struct_.size
    if len(data) < end:
        raise ModelFormatError(field, "file is truncated")
    return struct_.unpack_from(data, offset)[0], end


def _header_field(header, field):
    try:
        return header[field]
    except (KeyError, TypeError):
        raise ModelFormatError(field, "missing from header")


def _int_vector(header, field):
    values = _header_field(header, field)
    if not isinstance(values, list) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in values
    ):
        raise ModelFormatError(field, "must be a list of integers")
    return np.array(values, dtype=np.int64)


def model_from_bytes(data: bytes) -> TrainedModel:
    if data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError("magic", "not a model file")
    offset = len(MODEL_MAGIC)

    version, offset = _unpack(_VERSION, data, offset, "version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            "version", f"unsupported version {version}, expected {MODEL_FORMAT_VERSION}"
        )
    header_length, offset = _unpack(_HEADER_LENGTH, data, offset, "header_length")
    if len(data) < offset + header_length:
        raise ModelFormatError("header", "file is truncated")
    try:
        header = json.loads(data[offset : offset + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError("header", str(exc))
    offset += header_length

    arrays = {}
    entries = _header_field(header, "arrays")
    if not isinstance(entries, list):
        raise ModelFormatError("arrays", "must be a list")
    for i, entry in enumerate(entries):
        try:
            name = str(entry["name"])
            if not isinstance(entry["shape"], list):
                raise TypeError("shape must be a list")
            shape = tuple(int(d) for d in entry["shape"])
        except (KeyError, TypeError, ValueError):
            raise ModelFormatError(f"arrays[{i}]", "needs a name and a shape")
        if any(d < 0 for d in shape):
            raise ModelFormatError(f"arrays.{name}", f"negative dimension in {shape}")
        count = math.prod(shape)
        end = offset + count * _FLOAT.itemsize
        if len(data) < end:
            raise ModelFormatError(f"arrays.{name}", "file is truncated")
        arrays[name] = (
            np.frombuffer(data, dtype=_FLOAT, count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset = end
    if offset != len(data):
        raise ModelFormatError("arrays", f"{len(data) - offset} trailing bytes")

    def array(name):
        if name not in arrays:
            raise ModelFormatError(f"arrays.{name}", "missing")
        return arrays[name]

    try:
        config = NetworkConfig.from_dict(_header_field(header, "network"))
        config.validate()
    except ModelFormatError:
        raise
    except Exception as exc:
        raise ModelFormatError("network", str(exc))
    try:
        metadata = TrainMetadata.from_dict(_header_field(header, "metadata"))
    except ModelFormatError:
        raise
    except Exception as exc:
        raise ModelFormatError("metadata", str(exc))
    try:
        scaling = FeatureScaling.from_dict(_header_field(header, "scaling"))
    except ModelFormatError:
        raise
    except Exception as exc:
        raise ModelFormatError("scaling", str(exc))
    try:
        regime = TrainRegime(_header_field(header, "regime"))
    except ValueError as exc:
        raise ModelFormatError("regime", str(exc))

    expected = init_network(config)
    params, buffers = {}, {}
    for prefix, reference, target in (
        ("param", expected.params, params),
        ("buffer", expected.buffers, buffers),
    ):
        for name, like in reference.items():
            value = array(f"{prefix}:{name}")
            if value.shape != like.shape:
                raise ModelFormatError(
                    f"arrays.{prefix}:{name}",
                    f"shape {value.shape}, network needs {like.shape}",
                )
            target[name] = value

    class_ids = _int_vector(header, "class_ids")
    counts = _int_vector(header, "class_counts")
    means = array("class_means")
    if means.shape != (class_ids.size, config.z_dim) or counts.shape != class_ids.shape:
        raise ModelFormatError(
            "arrays.class_means",
            f"shape {means.shape} does not match {class_ids.size} classes of width {config.z_dim}",
        )
    if not np.isfinite(means).all():
        raise ModelFormatError("arrays.class_means", "must be finite")
    threshold = array("threshold")
    if threshold.shape != (1,):
        raise ModelFormatError("arrays.threshold", "must hold one value")
    if not np.isfinite(threshold[0]):
        raise ModelFormatError("arrays.threshold", f"must be finite, got {threshold[0]}")

    network = NetworkState(
        config=config, params=params, buffers=buffers, mode=Mode.Infer
    ).frozen()
    return TrainedModel(
        network=network,
        class_means=ClassMeans(means=means, counts=counts, class_ids=class_ids),
        threshold=float(threshold[0]),
        regime=regime,
        metadata=metadata,
        curves=LossCurves(**{name: array(f"curve:{name}") for name in CURVE_NAMES}),
        scaling=scaling,
    )


def load_model(path) -> TrainedModel:
    return model_from_bytes(FileIterator.for_path(path).read_bytes())


def _cell(value):
    return "" if isinstance(value, float) and np.isnan(value) else repr(value)


def write_curves_csv(curves: LossCurves, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "intra", "inter", "ii", "ce"])
        for row in curves.rows():
            writer.writerow([row[0], *(_cell(v) for v in row[1:])])


def write_report(report: EvalReport, json_path, csv_path):
    document = {
        "metrics": report.metrics(),
        "report": json.loads(report.to_json()),
    }
    Path(json_path).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
    with Path(csv_path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        for key, value in report.metrics().items():
            writer.writerow([key, repr(float(value))])
        for i, label in enumerate(report.labels):
            name = "unknown" if label < 0 else str(label)
            writer.writerow([f"precision_{name}", repr(report.precision[i])])
            writer.writerow([f"recall_{name}", repr(report.recall[i])])
            writer.writerow([f"f1_{name}", repr(report.f1[i])])


def read_report_metrics(path) -> typing.Dict[str, float]:
    document = json.loads(Path(path).read_text())
    return {key: float(value) for key, value in document["metrics"].items()}


def write_roc_points(fpr, tpr, thresholds, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr", "threshold"])
        for row in zip(fpr, tpr, thresholds):
            writer.writerow([repr(float(v)) for v in row])
