import itertools
import math

import numpy as np
import pytest

from ii_openset.exceptions import EmptyDatasetError
from ii_openset.losses import (
    class_means,
    closest_pair,
    cross_entropy,
    ii_loss,
    ii_loss_grad,
    inter_separation,
    intra_spread,
)
from ii_openset.models import ClassMeans

from .conftest import numeric_gradient, relative_error


def means_of(rows):
    rows = np.asarray(rows, dtype=np.float64)
    k = rows.shape[0]
    return ClassMeans(means=rows, counts=np.ones(k, dtype=np.int64), class_ids=np.arange(k))


def test_class_means(four_points):
    z, labels = four_points
    means = class_means(z, labels)
    assert np.array_equal(means.means, [[0.0, 1.0], [4.0, 1.0]])
    assert np.array_equal(means.counts, [2, 2])
    assert np.array_equal(means.class_ids, [0, 1])


def test_class_means_single_instance():
    means = class_means(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([5, 9]))
    assert np.array_equal(means.means, [[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(means.class_ids, [5, 9])


def test_class_means_permutation_invariant(four_points):
    z, labels = four_points
    order = np.array([3, 0, 2, 1])
    assert np.array_equal(class_means(z, labels).means, class_means(z[order], labels[order]).means)


def test_class_means_empty_batch():
    with pytest.raises(EmptyDatasetError):
        class_means(np.zeros((0, 2)), np.zeros(0))


def test_intra_spread(four_points):
    z, labels = four_points
    assert intra_spread(z, labels, class_means(z, labels)) == pytest.approx(1.0, abs=1e-12)


def test_intra_spread_zero_cases():
    z = np.array([[1.0, 1.0], [1.0, 1.0], [5.0, 2.0]])
    labels = np.array([0, 0, 1])
    assert intra_spread(z, labels, class_means(z, labels)) == 0.0


def test_inter_separation():
    assert inter_separation(means_of([[0.0, 1.0], [4.0, 1.0]])) == pytest.approx(16.0, abs=1e-12)
    assert inter_separation(means_of([[2.0, 2.0], [2.0, 2.0]])) == 0.0
    assert inter_separation(means_of([[0.0], [3.0], [10.0]])) == pytest.approx(9.0, abs=1e-12)
    assert inter_separation(means_of([[1.0, 1.0]])) == 0.0


def test_inter_separation_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(2, 8))
        rows = rng.normal(size=(k, int(rng.integers(1, 5))))
        brute = min(
            float(np.sum((rows[a] - rows[b]) ** 2))
            for a, b in itertools.combinations(range(k), 2)
        )
        assert inter_separation(means_of(rows)) == pytest.approx(brute, abs=1e-12)


def test_closest_pair_tie_takes_first_pair():
    a, b, distance = closest_pair(means_of([[0.0], [1.0], [2.0]]))
    assert (a, b, distance) == (0, 1, 1.0)


def test_ii_loss(four_points):
    z, labels = four_points
    breakdown = ii_loss(z, labels)
    assert breakdown.intra_spread == pytest.approx(1.0, abs=1e-12)
    assert breakdown.inter_separation == pytest.approx(16.0, abs=1e-12)
    assert breakdown.ii_loss == pytest.approx(-15.0, abs=1e-12)
    assert not breakdown.degenerate


def test_ii_loss_collapsed_batch():
    breakdown = ii_loss(np.ones((4, 2)), np.array([0, 0, 1, 1]))
    assert breakdown.ii_loss == 0.0


def test_ii_loss_translation_invariant(four_points):
    z, labels = four_points
    assert ii_loss(z + [3.0, -7.0], labels).ii_loss == pytest.approx(ii_loss(z, labels).ii_loss)


def test_ii_loss_single_class_is_degenerate():
    z = np.array([[0.0, 0.0], [2.0, 0.0]])
    breakdown = ii_loss(z, np.array([3, 3]))
    assert breakdown.degenerate
    assert breakdown.inter_separation == 0.0
    assert breakdown.ii_loss == breakdown.intra_spread == 1.0


def test_ii_loss_grad_symmetry(four_points):
    z, labels = four_points
    grad = ii_loss_grad(z, labels)
    # Mirror through x = 2 maps class A onto class B.
    assert np.allclose(grad[2:], grad[:2] * [-1.0, 1.0])


def test_ii_loss_grad_single_class():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(5, 3))
    labels = np.zeros(5, dtype=np.int64)
    expected = 2.0 * (z - z.mean(axis=0)) / 5
    assert np.allclose(ii_loss_grad(z, labels), expected)


@pytest.mark.parametrize("seed", range(50))
def test_ii_loss_grad_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(6, 2))
    labels = np.array([0, 0, 1, 1, 2, 2])
    rng.shuffle(labels)

    def loss():
        return ii_loss(z, labels).ii_loss

    assert relative_error(ii_loss_grad(z, labels), numeric_gradient(loss, z)) < 1e-4


def test_cross_entropy_uniform_logits():
    loss, _ = cross_entropy(np.zeros((3, 4)), np.array([0, 1, 3]))
    assert loss == pytest.approx(math.log(4))


def test_cross_entropy_saturated():
    logits = np.zeros((2, 3))
    logits[[0, 1], [2, 0]] = 1000.0
    loss, grad = cross_entropy(logits, np.array([2, 0]))
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_cross_entropy_grad_matches_finite_differences():
    rng = np.random.default_rng(11)
    logits = rng.normal(size=(5, 4))
    labels = np.array([0, 3, 1, 1, 2])

    def loss():
        return cross_entropy(logits, labels)[0]

    _, grad = cross_entropy(logits, labels)
    assert relative_error(grad, numeric_gradient(loss, logits)) < 1e-6
