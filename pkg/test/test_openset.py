import math

import numpy as np
import pytest

from ii_openset.exceptions import ConfigurationError, EmptyDatasetError
from ii_openset.losses import class_means, inter_separation, intra_spread
from ii_openset.models import UNKNOWN
from ii_openset.nn import embed
from ii_openset.openset import (
    class_probabilities,
    decide,
    distance_probabilities,
    estimate_threshold,
    nearest_mean_scores,
    outlier_score,
    outlier_scores,
    predict_open,
    predict_open_batch,
)


@pytest.fixture
def two_means():
    return np.array([[0.0, 0.0], [4.0, 0.0]])


def test_outlier_score(two_means):
    assert nearest_mean_scores([1.0, 0.0], two_means)[0] == pytest.approx(1.0, abs=1e-12)
    assert nearest_mean_scores([4.0, 0.0], two_means)[0] == 0.0
    assert nearest_mean_scores([1.0, 0.0], two_means[::-1])[0] == pytest.approx(1.0, abs=1e-12)


def test_threshold_nearest_rank():
    assert estimate_threshold(np.arange(1, 101), 0.01) == 99.0
    assert estimate_threshold([1.0, 2.0, 3.0, 4.0], 0.5) == 2.0
    assert estimate_threshold([3.0, 9.0, 1.0], 0.0) == 9.0
    assert estimate_threshold([5.0], 0.99) == 5.0


def test_threshold_does_not_increase_with_contamination():
    scores = np.random.default_rng(6).normal(size=137)
    thresholds = [estimate_threshold(scores, r) for r in np.linspace(0.0, 0.99, 100)]
    assert np.all(np.diff(thresholds) <= 0)
    assert thresholds[0] == scores.max()


def test_threshold_errors():
    with pytest.raises(EmptyDatasetError):
        estimate_threshold([], 0.01)
    with pytest.raises(ConfigurationError):
        estimate_threshold([1.0], 1.0)


def test_distance_probabilities(two_means):
    z = np.array([[2.0, 0.0]])
    assert np.allclose(distance_probabilities(z, two_means), [[0.5, 0.5]])

    # d = (1, 9)
    probs = distance_probabilities(np.array([[1.0, 0.0]]), two_means)[0]
    expected = math.exp(-1) / (math.exp(-1) + math.exp(-9))
    assert probs[0] == pytest.approx(expected, abs=1e-12)
    assert probs.sum() == pytest.approx(1.0)


def test_probabilities_argmax_is_nearest_mean():
    rng = np.random.default_rng(0)
    means = rng.normal(size=(5, 3))
    z = rng.normal(size=(40, 3))
    probs = distance_probabilities(z, means)
    distances = ((z[:, None, :] - means[None]) ** 2).sum(axis=2)
    assert np.array_equal(probs.argmax(axis=1), distances.argmin(axis=1))


def test_decide_is_strict():
    labels = np.array([2, 2])
    assert np.array_equal(decide([1.0, 1.0 + 1e-9], 1.0, labels), [2, UNKNOWN])


@pytest.mark.parametrize(
    "transform",
    [lambda s: 2.0 * s + 5.0, np.log1p, lambda s: np.exp(s / 10.0)],
    ids=["affine", "log1p", "exp"],
)
def test_decide_ignores_monotone_rescaling(transform):
    rng = np.random.default_rng(8)
    scores = rng.integers(0, 40, size=50) / 4
    labels = rng.integers(0, 3, size=50)
    # Between two quarter steps, so no score ties the threshold.
    threshold = 5.125
    expected = decide(scores, threshold, labels)
    assert (expected == UNKNOWN).any() and (expected != UNKNOWN).any()
    assert np.array_equal(decide(transform(scores), transform(threshold), labels), expected)


def test_threshold_contract(two_blob_model, two_blobs):
    scores = outlier_scores(two_blob_model, two_blobs.features)
    n = len(scores)
    assert np.mean(scores > two_blob_model.threshold) <= 0.01 + 1.0 / n


def test_trained_embedding_separates(two_blob_model, two_blobs):
    z = embed(two_blob_model.network, two_blobs.features)
    means = class_means(z, two_blobs.labels)
    assert intra_spread(z, two_blobs.labels, means) < inter_separation(means)


def test_training_lowers_ii_loss(two_blob_model):
    assert two_blob_model.curves.ii[-1] < two_blob_model.curves.ii[0]


def test_midpoint_is_unknown(two_blob_model):
    midpoint = np.array([[5.0, 0.0]])
    prediction = predict_open(two_blob_model, midpoint)
    assert prediction.is_unknown
    assert prediction.probs is None
    assert outlier_score(two_blob_model, midpoint) > two_blob_model.threshold


def test_blob_centers_are_known(two_blob_model):
    predictions = predict_open_batch(two_blob_model, np.array([[0.0, 0.0], [10.0, 0.0]]))
    assert [p.label for p in predictions] == [0, 1]
    for prediction in predictions:
        assert prediction.probs.sum() == pytest.approx(1.0)


def test_blob_center_probabilities(two_blob_model):
    probs = class_probabilities(two_blob_model, np.array([10.0, 0.0]))
    assert probs.shape == (2,)
    assert probs[1] > 0.99
