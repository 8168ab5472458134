"""
Outlier scoring, threshold estimation, class probabilities and the K+1
open-set decision. All functions only read the model, so a frozen
TrainedModel can be shared between threads.
"""

import math
import typing

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import softmax

from .exceptions import ConfigurationError, EmptyDatasetError
from .models import UNKNOWN, Matrix, OpenPrediction, TrainedModel
from .nn import embed, head_logits


def squared_distances(z, means: Matrix) -> Matrix:
    """Squared Euclidean distance of every row of ``z`` to every class mean."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z.reshape(1, -1)
    return cdist(z, means, "sqeuclidean")


def nearest_mean_scores(z, means: Matrix) -> Matrix:
    return squared_distances(z, means).min(axis=1)


def outlier_scores(model: TrainedModel, x) -> Matrix:
    """Distance of ``g(x)`` to the closest class mean, one score per row."""
    return nearest_mean_scores(embed(model.network, x), model.class_means.means)


def outlier_score(model: TrainedModel, x) -> float:
    return float(outlier_scores(model, x)[0])


def estimate_threshold(training_scores, contamination_ratio=0.01) -> float:
    """
    Nearest-rank percentile of the training scores: with ``n`` scores sorted
    ascending, the score at rank ``ceil((1 - r) * n)`` clamped to ``[1, n]``.
    """
    scores = np.sort(np.asarray(training_scores, dtype=np.float64).reshape(-1))
    if scores.size == 0:
        raise EmptyDatasetError("cannot estimate a threshold from no scores")
    if not 0.0 <= contamination_ratio < 1.0:
        raise ConfigurationError("contamination_ratio", "must be in [0, 1)")

    n = scores.size
    # Rounding keeps e.g. (1 - 0.01) * 100 at rank 99.
    rank = math.ceil(round((1.0 - contamination_ratio) * n, 9))
    rank = min(max(rank, 1), n)
    return float(scores[rank - 1])


def distance_probabilities(z, means: Matrix) -> Matrix:
    """Softmax of the negative squared distances to the class means."""
    return softmax(-squared_distances(z, means), axis=1)


def class_probabilities_batch(model: TrainedModel, x) -> Matrix:
    return distance_probabilities(embed(model.network, x), model.class_means.means)


def class_probabilities(model: TrainedModel, x) -> Matrix:
    return class_probabilities_batch(model, x)[0]


def known_class_decision(model: TrainedModel, z) -> typing.Tuple[Matrix, Matrix]:
    """
    Known-class label and probability vector per row, ignoring the threshold:
    nearest class mean for the ii regime, the softmax head otherwise.
    """
    if model.regime.uses_ce:
        probs = softmax(head_logits(model.network, z), axis=1)
    else:
        probs = distance_probabilities(z, model.class_means.means)
    labels = model.class_means.class_ids[np.argmax(probs, axis=1)]
    return labels, probs


def decide(scores, threshold, known_labels) -> Matrix:
    """Unknown where the score strictly exceeds the threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.where(scores > threshold, UNKNOWN, known_labels)


def predict_open_batch(model: TrainedModel, x) -> typing.List[OpenPrediction]:
    z = embed(model.network, x)
    scores = nearest_mean_scores(z, model.class_means.means)
    known_labels, probs = known_class_decision(model, z)
    labels = decide(scores, model.threshold, known_labels)
    return [
        OpenPrediction(
            label=int(label),
            score=float(score),
            probs=None if label == UNKNOWN else row_probs,
        )
        for label, score, row_probs in zip(labels, scores, probs)
    ]


def predict_open(model: TrainedModel, x) -> OpenPrediction:
    return predict_open_batch(model, x)[0]
