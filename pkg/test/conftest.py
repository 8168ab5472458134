import numpy as np
import pytest
from scipy.spatial.distance import pdist

from ii_openset.data import open_split, synth_blobs
from ii_openset.losses import class_means
from ii_openset.models import (
    Mode,
    NetworkConfig,
    TrainConfig,
    TrainRegime,
    batchnorm,
    dense,
    dropout,
    relu,
)
from ii_openset.nn import ReluLayer, build_layers
from ii_openset.training import train


def relative_error(analytic, numeric, floor=1e-5):
    """
    Largest elementwise relative error. Entries smaller than ``floor`` on both
    sides, e.g. the bias of a dense layer feeding a batchnorm, are compared
    against ``floor`` instead.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def numeric_gradient(loss, array, h=1e-5):
    """Central differences of ``loss()`` with respect to ``array``, modified in place."""
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + h
        plus = loss()
        array[index] = original - h
        minus = loss()
        array[index] = original
        grad[index] = (plus - minus) / (2 * h)
    return grad


def randomize_params(state, rng):
    """Replace the initial parameters, whose zero biases and unit scales hide gradient errors."""
    for name, param in state.params.items():
        if name.endswith("gamma"):
            param[...] = rng.uniform(0.5, 2.0, size=param.shape)
        else:
            param[...] = rng.normal(size=param.shape)


def relu_margin(state, x):
    """Smallest distance of any relu input to the kink at 0, in train mode."""
    margin = np.inf
    for layer in build_layers(state.config):
        if isinstance(layer, ReluLayer):
            margin = min(margin, float(np.abs(x).min()))
        x, _ = layer.forward(state, x, Mode.Train, None)
    return margin


def smooth_inputs(state, rng, shape, accept=None, margin=1e-3):
    """
    Normal inputs whose relu inputs stay ``margin`` away from 0, so central
    differences do not straddle a kink.
    """
    for _ in range(200):
        x = rng.normal(size=shape)
        if relu_margin(state, x) > margin and (accept is None or accept(x)):
            return x
    pytest.fail("no input clear of the loss kinks")


def closest_pair_gap(z, labels):
    """How much farther the second closest pair of class means is than the closest."""
    distances = np.sort(pdist(class_means(z, labels).means, "sqeuclidean"))
    return float(distances[1] - distances[0]) if distances.size > 1 else np.inf


def fixture(shared_datadir, fixture_name):
    return shared_datadir / fixture_name


@pytest.fixture
def four_points():
    z = np.array([[0.0, 0.0], [0.0, 2.0], [4.0, 0.0], [4.0, 2.0]])
    labels = np.array([0, 0, 1, 1])
    return z, labels


@pytest.fixture
def small_network_config():
    return NetworkConfig(
        input_dim=3,
        layers=[dense(5), batchnorm(), relu(), dropout(1.0)],
        z_dim=2,
        seed=7,
    )


@pytest.fixture
def linear_network_config():
    return NetworkConfig(input_dim=2, layers=[], z_dim=2, seed=0)


@pytest.fixture
def two_blobs():
    return synth_blobs(2, 100, dim=2, center_spacing=10.0, sigma=0.1, seed=0)


@pytest.fixture
def two_blob_model(two_blobs, linear_network_config):
    return train(
        two_blobs,
        linear_network_config,
        TrainConfig(
            regime=TrainRegime.Ii,
            iterations=500,
            batch_size=64,
            learning_rate=0.01,
            seed=0,
        ),
    )


@pytest.fixture(scope="module")
def six_blob_split():
    """Four known blob classes, two unknown ones in between."""
    dataset = synth_blobs(
        4, 200, dim=2, center_spacing=10.0, sigma=0.3, seed=1, n_outlier_classes=2
    )
    return open_split(dataset, 4, seed=1, known=[0, 1, 2, 3])


@pytest.fixture(scope="module")
def six_blob_model(six_blob_split):
    return train(
        six_blob_split.train,
        NetworkConfig(input_dim=2, layers=[], z_dim=4, seed=1),
        TrainConfig(
            regime=TrainRegime.Ii,
            iterations=1000,
            batch_size=64,
            learning_rate=0.01,
            seed=1,
        ),
    )
