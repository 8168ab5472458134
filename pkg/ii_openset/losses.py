import typing

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import log_softmax

from .exceptions import EmptyDatasetError, NetworkContractError
from .models import ClassMeans, LossBreakdown, Matrix


def _batch(z, labels):
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if z.ndim != 2:
        raise NetworkContractError(f"z must be a matrix, got shape {z.shape}")
    if z.shape[0] != labels.shape[0]:
        raise NetworkContractError(
            f"{z.shape[0]} rows in z but {labels.shape[0]} labels"
        )
    return z, labels


def class_means(z, labels) -> ClassMeans:
    """
    Per-class arithmetic mean of the rows carrying each label. Classes absent
    from the batch are not represented.
    """
    z, labels = _batch(z, labels)
    if z.shape[0] == 0:
        raise EmptyDatasetError("cannot compute class means of an empty batch")
    class_ids, counts = np.unique(labels, return_counts=True)
    means = np.stack([z[labels == class_id].mean(axis=0) for class_id in class_ids])
    return ClassMeans(means=means, counts=counts, class_ids=class_ids)


def _rows_of(means: ClassMeans, labels):
    positions = np.searchsorted(means.class_ids, labels)
    positions = np.clip(positions, 0, means.k - 1)
    if not np.array_equal(means.class_ids[positions], labels):
        raise NetworkContractError("labels contain classes missing from the means")
    return positions


def intra_spread(z, labels, means: ClassMeans) -> float:
    """Average squared distance of the instances to their class means."""
    z, labels = _batch(z, labels)
    diff = z - means.means[_rows_of(means, labels)]
    return float(np.sum(diff**2) / z.shape[0])


def closest_pair(means: ClassMeans) -> typing.Tuple[int, int, float]:
    """
    Indices (into ``means.class_ids``) of the two closest class means and their
    squared distance. Ties resolve to the lexicographically smallest pair.
    """
    if means.k < 2:
        raise NetworkContractError("closest pair needs at least two classes")
    distances = pdist(means.means, "sqeuclidean")
    rows, cols = np.triu_indices(means.k, k=1)
    best = int(np.argmin(distances))
    return int(rows[best]), int(cols[best]), float(distances[best])


def inter_separation(means: ClassMeans) -> float:
    """Squared distance between the two closest class means; 0 when K = 1."""
    if means.k < 2:
        return 0.0
    return closest_pair(means)[2]


def ii_loss(z, labels) -> LossBreakdown:
    means = class_means(z, labels)
    intra = intra_spread(z, labels, means)
    if means.k < 2:
        return LossBreakdown(
            intra_spread=intra,
            inter_separation=0.0,
            ii_loss=intra,
            degenerate=True,
        )
    inter = inter_separation(means)
    return LossBreakdown(
        intra_spread=intra,
        inter_separation=inter,
        ii_loss=intra - inter,
    )


def ii_loss_grad(z, labels) -> Matrix:
    """
    d(ii-loss)/dz with the class means depending on z. Only the closest pair of
    classes receives the separation term.
    """
    z, labels = _batch(z, labels)
    means = class_means(z, labels)
    rows = _rows_of(means, labels)
    n = z.shape[0]

    # The mean's own dependence on z cancels inside each class.
    grad = 2.0 * (z - means.means[rows]) / n

    if means.k >= 2:
        a, b, _ = closest_pair(means)
        delta = means.means[a] - means.means[b]
        grad[rows == a] -= 2.0 * delta / means.counts[a]
        grad[rows == b] += 2.0 * delta / means.counts[b]
    return grad


def cross_entropy(logits, labels) -> typing.Tuple[float, Matrix]:
    """
    Mean softmax cross entropy; ``labels`` are column indices into ``logits``.

    :return: ``(loss, dloss/dlogits)``
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = logits.shape[0]
    if n != labels.shape[0]:
        raise NetworkContractError(f"{n} rows of logits but {labels.shape[0]} labels")
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise NetworkContractError("labels must index the logit columns")

    log_probs = log_softmax(logits, axis=1)
    loss = -float(np.mean(log_probs[np.arange(n), labels]))

    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
