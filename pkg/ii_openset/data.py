"""
Dataset loaders (IDX images, labeled CSV), open-set split simulation and
synthetic Gaussian blobs.
"""

import csv
import logging
import math
import typing

from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, EmptyDatasetError, IdxFormatError, SplitError
from .io import FileIterator
from .models import (
    UNKNOWN,
    Dataset,
    FeatureScaling,
    OpenSetSplit,
    ScalingKind,
    SplitManifest,
    SplitMode,
)
from .parser import parse_row
from .util import sub_rng

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
PIXEL_SCALE = 255.0

_IDX_WORD = np.dtype(">u4")


def _read_idx(path, magic, ndim):
    data = FileIterator.for_path(path).read_bytes()
    header_size = _IDX_WORD.itemsize * (1 + ndim)
    if len(data) < header_size:
        raise IdxFormatError(f"{path}: truncated header, {len(data)} bytes")

    found = int(np.frombuffer(data, dtype=_IDX_WORD, count=1)[0])
    if found != magic:
        raise IdxFormatError(f"{path}: magic number {found}, expected {magic}")

    dims = tuple(
        int(d) for d in np.frombuffer(data, dtype=_IDX_WORD, count=ndim, offset=4)
    )
    size = math.prod(dims)
    body = len(data) - header_size
    if body < size:
        raise IdxFormatError(f"{path}: truncated, {body} of {size} data bytes")
    if body > size:
        raise IdxFormatError(f"{path}: {body - size} trailing bytes")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header_size).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """
    Load an IDX image file and its label file. Pixels are divided by 255 and
    every image is flattened row-major. Files ending in ``.gz`` are
    decompressed on the fly.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{images.shape[0]} images in {images_path} but "
            f"{labels.shape[0]} labels in {labels_path}"
        )
    logger.info("Loaded %d images of %s from %s", images.shape[0], images.shape[1:], images_path)
    return Dataset(
        features=images.reshape(images.shape[0], -1) / PIXEL_SCALE,
        labels=labels.astype(np.int64),
        name=Path(images_path).name,
        scaling=FeatureScaling(
            kind=ScalingKind.Divide,
            divisor=PIXEL_SCALE,
            image_shape=list(images.shape[1:]),
        ),
    )


def _idx_bytes(magic, array):
    header = np.array([magic, *array.shape], dtype=_IDX_WORD)
    return header.tobytes() + array.astype(np.uint8).tobytes()


def dump_idx(dataset: Dataset, images_path, labels_path):
    """Write a dataset loaded by ``load_idx`` back to IDX image and label files."""
    scaling = dataset.scaling
    if scaling.kind != ScalingKind.Divide or not scaling.image_shape:
        raise IdxFormatError("only pixel datasets with an image shape can be written")

    pixels = np.rint(dataset.features * scaling.divisor)
    labels = dataset.original_labels
    if pixels.min(initial=0) < 0 or pixels.max(initial=0) > 255:
        raise IdxFormatError("pixel values out of the 0-255 range")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise IdxFormatError("labels out of the 0-255 range")

    images = pixels.reshape(len(dataset), *scaling.image_shape)
    Path(images_path).write_bytes(_idx_bytes(IDX_IMAGES_MAGIC, images))
    Path(labels_path).write_bytes(_idx_bytes(IDX_LABELS_MAGIC, labels))


def standardize(features):
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std == 0] = 1.0
    return (features - mean) / std, mean, std


def load_csv(path, label_column=-1, header=False, standardize_features=False) -> Dataset:
    """
    Load a numeric CSV table with one integer label column.

    :param label_column: 0-based column index of the label, negative counts
        from the end.
    :param header: skip the first line. Error rows are counted from 1 at the
        first line after the header.
    :param standardize_features: rescale every feature column to zero mean and
        unit variance; constant columns are only centered.
    """
    features, labels = [], []
    width = None
    reader = csv.reader(iter(FileIterator.for_path(path)))
    for row_number, values in enumerate(reader, start=0 if header else 1):
        if row_number == 0:
            continue
        if not values:
            continue
        if width is None:
            width = len(values)
            if width < 2:
                raise ConfigurationError(
                    "dataset.label_column", f"{path} needs features and a label column"
                )
        row, label = parse_row(values, row_number, label_column, width)
        features.append(row)
        labels.append(label)

    if not features:
        raise EmptyDatasetError(f"{path} has no data rows")

    matrix = np.array(features, dtype=np.float64)
    scaling = FeatureScaling()
    if standardize_features:
        matrix, mean, std = standardize(matrix)
        scaling = FeatureScaling(
            kind=ScalingKind.Standardize, mean=mean.tolist(), std=std.tolist()
        )
    logger.info("Loaded %d rows of %d features from %s", *matrix.shape, path)
    return Dataset(
        features=matrix,
        labels=np.array(labels, dtype=np.int64),
        name=Path(path).name,
        scaling=scaling,
    )


def _relabel(original, known):
    known = np.asarray(known, dtype=np.int64)
    positions = np.searchsorted(known, original)
    positions = np.clip(positions, 0, known.size - 1)
    return np.where(known[positions] == original, positions, UNKNOWN)


def _check_indices(name, indices, size):
    if indices.size and (indices.min() < 0 or indices.max() >= size):
        raise SplitError(f"{name} indices out of range for {size} instances")
    if np.unique(indices).size != indices.size:
        raise SplitError(f"{name} indices repeat")


def apply_manifest(
    manifest: SplitManifest,
    dataset: Dataset,
    test_dataset: typing.Optional[Dataset] = None,
) -> OpenSetSplit:
    """Rebuild the split a manifest describes from the dataset(s) it was made from."""
    known = np.array(sorted(manifest.known_class_ids), dtype=np.int64)
    if known.size != manifest.k:
        raise SplitError(f"manifest lists {known.size} known classes, k is {manifest.k}")

    if manifest.mode == SplitMode.FixedTest:
        if test_dataset is None:
            raise SplitError("fixed-test split needs the predefined test set")
        test_source = test_dataset
    else:
        test_source = dataset

    train_idx = np.array(manifest.train_indices, dtype=np.int64)
    val_idx = np.array(manifest.val_indices, dtype=np.int64)
    test_idx = np.array(manifest.test_indices, dtype=np.int64)
    _check_indices("train", train_idx, len(dataset))
    _check_indices("val", val_idx, len(dataset))
    _check_indices("test", test_idx, len(test_source))
    if manifest.mode != SplitMode.FixedTest and (
        np.intersect1d(train_idx, test_idx).size
        or np.intersect1d(train_idx, val_idx).size
        or np.intersect1d(val_idx, test_idx).size
    ):
        raise SplitError("train, val and test indices overlap")

    train = dataset.subset(train_idx, _relabel(dataset.original_labels[train_idx], known))
    val = dataset.subset(val_idx, _relabel(dataset.original_labels[val_idx], known))
    test = test_source.subset(test_idx, _relabel(test_source.original_labels[test_idx], known))

    for name, part in (("train", train), ("val", val)):
        if np.any(part.labels == UNKNOWN):
            raise SplitError(f"{name} contains unknown-class instances")

    return OpenSetSplit(
        known_class_ids=known.tolist(),
        unknown_class_ids=sorted(int(c) for c in manifest.unknown_class_ids),
        train=train,
        val=val,
        test=test,
        seed=manifest.seed,
        manifest=manifest,
    )


def _stratified(rng, labels, known, train_fraction, val_fraction):
    train, val, test = [], [], []
    for class_id in known:
        members = rng.permutation(np.flatnonzero(labels == class_id))
        n_train = min(max(round(train_fraction * members.size), 1), members.size)
        rest = members[n_train:]
        n_val = round(val_fraction * rest.size)
        train.append(members[:n_train])
        val.append(rest[:n_val])
        test.append(rest[n_val:])
    return train, val, test


def open_split(
    dataset: Dataset,
    k: int,
    *,
    seed: int,
    mode: SplitMode = SplitMode.Resplit,
    train_fraction: float = 0.75,
    val_fraction: float = 1.0 / 3.0,
    test_dataset: typing.Optional[Dataset] = None,
    known: typing.Optional[typing.Sequence[int]] = None,
) -> OpenSetSplit:
    """
    Simulate an open-set problem: pick ``k`` known classes and treat the rest
    as unknown.

    ``resplit`` sends a stratified ``train_fraction`` of every known class to
    train and the remainder to test, moves ``val_fraction`` of those known test
    instances to val, and places every unknown-class instance in test.
    ``fixed-test`` keeps the known-class instances of ``dataset`` as train and
    uses all of ``test_dataset`` as test. ``closed`` makes every class known
    and splits like ``resplit``, so test holds no unknown instances. Known
    classes are renumbered ``0..k-1`` in sorted original-id order; unknown test
    instances get ``UNKNOWN``.

    :param known: original ids of the known classes; drawn at random when
        omitted.
    """
    mode = SplitMode(mode)
    labels = dataset.original_labels
    class_ids = np.unique(labels)
    if np.any(class_ids == UNKNOWN):
        raise SplitError("dataset already contains unknown-labeled instances")
    if mode == SplitMode.Closed:
        if k != class_ids.size:
            raise SplitError(
                f"closed split needs k equal to all {class_ids.size} classes, got k={k}"
            )
    elif not 1 <= k < class_ids.size:
        raise SplitError(f"k={k} needs at least 1 known and 1 unknown of {class_ids.size} classes")
    if not 0.0 < train_fraction <= 1.0 or not 0.0 <= val_fraction < 1.0:
        raise ConfigurationError("split", "fractions out of range")
    if mode == SplitMode.FixedTest and test_dataset is None:
        raise SplitError("fixed-test split needs the predefined test set")

    rng = sub_rng(seed, "split")
    if known is None:
        chosen = np.sort(rng.choice(class_ids, size=k, replace=False))
    else:
        chosen = np.unique(np.asarray(known, dtype=np.int64))
        if chosen.size != k or not np.isin(chosen, class_ids).all():
            raise SplitError(f"known classes {list(known)} are not {k} classes of the dataset")
    unknown = np.setdiff1d(class_ids, chosen)

    if mode != SplitMode.FixedTest:
        train, val, test = _stratified(rng, labels, chosen, train_fraction, val_fraction)
        test.append(np.flatnonzero(np.isin(labels, unknown)))
        train_idx, val_idx, test_idx = (np.sort(np.concatenate(p)) for p in (train, val, test))
    else:
        train_idx = np.flatnonzero(np.isin(labels, chosen))
        val_idx = np.array([], dtype=np.int64)
        test_idx = np.arange(len(test_dataset))
        unknown = np.union1d(unknown, np.setdiff1d(test_dataset.original_labels, chosen))

    manifest = SplitManifest(
        mode=mode,
        k=k,
        seed=seed,
        known_class_ids=chosen.tolist(),
        unknown_class_ids=unknown.tolist(),
        train_indices=train_idx.tolist(),
        val_indices=val_idx.tolist(),
        test_indices=test_idx.tolist(),
        train_fraction=train_fraction,
        val_fraction=val_fraction,
    )
    split = apply_manifest(manifest, dataset, test_dataset)
    logger.info(
        "Split %s: known %s, unknown %s, %d train / %d val / %d test",
        mode.value,
        split.known_class_ids,
        split.unknown_class_ids,
        len(split.train),
        len(split.val),
        len(split.test),
    )
    return split


def _grid_centers(k, dim, spacing):
    if dim == 1:
        return np.arange(k, dtype=np.float64).reshape(-1, 1) * spacing
    side = math.ceil(math.sqrt(k))
    centers = np.zeros((k, dim))
    cells = np.arange(k)
    centers[:, 0] = (cells % side) * spacing
    centers[:, 1] = (cells // side) * spacing
    return centers


def _interstitial(centers, dim, spacing):
    """Points between the known centers: grid cell centers, then edge midpoints."""
    k = centers.shape[0]
    positions = []
    if dim > 1:
        side = math.ceil(math.sqrt(k))
        rows = math.ceil(k / side)
        for r in range(rows - 1):
            for c in range(side - 1):
                point = np.zeros(dim)
                point[:2] = (c + 0.5) * spacing, (r + 0.5) * spacing
                positions.append(point)
    for a in range(k):
        for b in range(a + 1, k):
            if math.isclose(np.linalg.norm(centers[a] - centers[b]), spacing):
                positions.append((centers[a] + centers[b]) / 2.0)
    return positions


def synth_blobs(
    k: int,
    n_per_class: int,
    dim: int = 2,
    center_spacing: float = 10.0,
    sigma: float = 0.1,
    seed: int = 0,
    n_outlier_classes: int = 0,
) -> Dataset:
    """
    Isotropic Gaussian classes on a square grid with ``center_spacing`` between
    neighbours, known classes labeled ``0..k-1``. Outlier classes, labeled
    from ``k`` on, sit between the known centers.
    """
    if k < 1:
        raise ConfigurationError("dataset.k", "needs at least one class")
    if n_per_class < 1 or dim < 1:
        raise ConfigurationError("dataset", "n_per_class and dim must be positive")
    if sigma < 0:
        raise ConfigurationError("dataset.sigma", "must not be negative")

    centers = _grid_centers(k, dim, center_spacing)
    extra = _interstitial(centers, dim, center_spacing)
    if n_outlier_classes > len(extra):
        raise ConfigurationError(
            "dataset.n_outlier_classes",
            f"only {len(extra)} outlier positions between {k} classes",
        )
    if n_outlier_classes:
        centers = np.vstack([centers, np.stack(extra[:n_outlier_classes])])

    rng = sub_rng(seed, "blobs")
    features = np.concatenate(
        [center + sigma * rng.standard_normal((n_per_class, dim)) for center in centers]
    )
    labels = np.repeat(np.arange(centers.shape[0]), n_per_class)
    return Dataset(
        features=features,
        labels=labels,
        name=f"blobs-k{k}-o{n_outlier_classes}",
    )
