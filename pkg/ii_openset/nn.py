"""
Feed-forward network engine for the z-layer embedding: dense, ReLU,
batch normalization and dropout layers with forward/backward passes and an
Adam optimizer. Rows are instances, columns are features, all float64.
"""

import logging
import typing

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NetworkContractError
from .models import (
    AdamState,
    LayerKind,
    LayerSpec,
    Matrix,
    Mode,
    NetworkConfig,
    NetworkState,
)
from .util import row_batches

logger = logging.getLogger(__name__)

BATCHNORM_EPSILON = 1e-5
BATCHNORM_MOMENTUM = 0.99

Gradients = typing.Dict[str, Matrix]


def scaled_uniform(rng, fan_in, fan_out):
    """Weights uniform in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class Layer:
    name: str
    spec: LayerSpec
    in_dim: int

    @property
    def out_dim(self):
        return self.spec.width if self.spec.kind == LayerKind.Dense else self.in_dim

    def key(self, param):
        return f"{self.name}.{param}"

    def init(self, rng) -> typing.Tuple[Gradients, Gradients]:
        return {}, {}

    def forward(self, state, x, mode, rng):
        raise NotImplementedError

    def backward(self, state, cache, dy) -> typing.Tuple[Matrix, Gradients]:
        raise NotImplementedError


class DenseLayer(Layer):
    def init(self, rng):
        return {
            self.key("weight"): scaled_uniform(rng, self.in_dim, self.out_dim),
            self.key("bias"): np.zeros(self.out_dim),
        }, {}

    def forward(self, state, x, mode, rng):
        weight = state.params[self.key("weight")]
        bias = state.params[self.key("bias")]
        return x @ weight + bias, x

    def backward(self, state, cache, dy):
        weight = state.params[self.key("weight")]
        grads = {
            self.key("weight"): cache.T @ dy,
            self.key("bias"): dy.sum(axis=0),
        }
        return dy @ weight.T, grads


class ReluLayer(Layer):
    def forward(self, state, x, mode, rng):
        mask = x > 0
        return x * mask, mask

    def backward(self, state, cache, dy):
        return dy * cache, {}


class BatchNormLayer(Layer):
    def init(self, rng):
        params = {self.key("beta"): np.zeros(self.in_dim)}
        if self.spec.scale:
            params[self.key("gamma")] = np.ones(self.in_dim)
        buffers = {
            self.key("running_mean"): np.zeros(self.in_dim),
            self.key("running_var"): np.ones(self.in_dim),
        }
        return params, buffers

    def gamma(self, state):
        return state.params[self.key("gamma")] if self.spec.scale else 1.0

    def forward(self, state, x, mode, rng):
        gamma = self.gamma(state)
        beta = state.params[self.key("beta")]

        if mode == Mode.Infer:
            mean = state.buffers[self.key("running_mean")]
            var = state.buffers[self.key("running_var")]
            x_hat = (x - mean) / np.sqrt(var + BATCHNORM_EPSILON)
            return gamma * x_hat + beta, None

        if x.shape[0] < 2:
            raise NetworkContractError(
                f"batchnorm layer {self.name} needs a batch of at least 2 rows in train mode"
            )
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        std = np.sqrt(var + BATCHNORM_EPSILON)
        x_hat = (x - mean) / std

        running_mean = self.key("running_mean")
        running_var = self.key("running_var")
        state.buffers[running_mean] = (
            BATCHNORM_MOMENTUM * state.buffers[running_mean]
            + (1.0 - BATCHNORM_MOMENTUM) * mean
        )
        state.buffers[running_var] = (
            BATCHNORM_MOMENTUM * state.buffers[running_var]
            + (1.0 - BATCHNORM_MOMENTUM) * var
        )
        return gamma * x_hat + beta, (x_hat, std)

    def backward(self, state, cache, dy):
        x_hat, std = cache
        n = dy.shape[0]
        gamma = self.gamma(state)
        grads = {self.key("beta"): dy.sum(axis=0)}
        if self.spec.scale:
            grads[self.key("gamma")] = (dy * x_hat).sum(axis=0)
        # Chain rule through the batch mean and variance.
        d_x_hat = dy * gamma
        dx = (
            n * d_x_hat
            - d_x_hat.sum(axis=0)
            - x_hat * (d_x_hat * x_hat).sum(axis=0)
        ) / (n * std)
        return dx, grads


class DropoutLayer(Layer):
    def forward(self, state, x, mode, rng):
        keep_prob = self.spec.keep_prob
        if mode == Mode.Infer or keep_prob >= 1.0:
            return x, None
        if rng is None:
            raise NetworkContractError("train-mode dropout needs a random generator")
        # Inverted dropout: scale at train time so inference is unscaled.
        mask = (rng.random(x.shape) < keep_prob) / keep_prob
        return x * mask, mask

    def backward(self, state, cache, dy):
        return (dy if cache is None else dy * cache), {}


LAYER_TYPES = {
    LayerKind.Dense: DenseLayer,
    LayerKind.Relu: ReluLayer,
    LayerKind.BatchNorm: BatchNormLayer,
    LayerKind.Dropout: DropoutLayer,
}


def build_layers(config: NetworkConfig) -> typing.List[Layer]:
    layers = []
    in_dim = config.input_dim
    for i, spec in enumerate(config.embedding_layers):
        layer = LAYER_TYPES[spec.kind](name=str(i), spec=spec, in_dim=in_dim)
        layers.append(layer)
        in_dim = layer.out_dim
    return layers


def head_layer(config: NetworkConfig) -> typing.Optional[Layer]:
    if not config.ce_head:
        return None
    return DenseLayer(
        name="head",
        spec=LayerSpec(kind=LayerKind.Dense, width=config.n_classes),
        in_dim=config.z_dim,
    )


def init_network(config: NetworkConfig) -> NetworkState:
    config.validate()
    rng = np.random.default_rng(config.seed)
    params, buffers = {}, {}

    layers = build_layers(config)
    head = head_layer(config)
    if head is not None:
        layers.append(head)

    for layer in layers:
        layer_params, layer_buffers = layer.init(rng)
        params.update(layer_params)
        buffers.update(layer_buffers)

    return NetworkState(config=config, params=params, buffers=buffers)


def init_adam(state, learning_rate=0.001, beta1=0.5, beta2=0.999, epsilon=1e-8):
    return AdamState(
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        m={name: np.zeros_like(p) for name, p in state.params.items()},
        v={name: np.zeros_like(p) for name, p in state.params.items()},
    )


@dataclass
class ForwardCache:
    state: NetworkState
    version: int
    mode: Mode
    input_shape: typing.Tuple[int, ...]
    output_shape: typing.Tuple[int, ...]
    entries: typing.List[typing.Tuple[Layer, typing.Any]] = field(default_factory=list)


def _as_matrix(x, cols, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != cols:
        raise NetworkContractError(
            f"{what} must have {cols} columns, got shape {x.shape}"
        )
    return x


def _run_forward(state, layers, x, mode, rng):
    cache = ForwardCache(
        state=state,
        version=state.version,
        mode=mode,
        input_shape=x.shape,
        output_shape=x.shape,
    )
    for layer in layers:
        x, entry = layer.forward(state, x, mode, rng)
        cache.entries.append((layer, entry))
    cache.output_shape = x.shape
    return x, cache


def _run_backward(cache, grad):
    state = cache.state
    if cache.version != state.version:
        raise NetworkContractError(
            "stale forward cache: parameters changed since the forward pass"
        )
    if cache.mode != Mode.Train:
        raise NetworkContractError("backward needs a train-mode forward cache")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != cache.output_shape:
        raise NetworkContractError(
            f"gradient shape {grad.shape} does not match forward output {cache.output_shape}"
        )

    grads: Gradients = {}
    for layer, entry in reversed(cache.entries):
        grad, layer_grads = layer.backward(state, entry, grad)
        grads.update(layer_grads)
    return grad, grads


def forward(state: NetworkState, x, mode=None, rng=None):
    """
    Compute ``z = g(x)``.

    :param mode: ``Mode.Train`` uses batch statistics (updating the running
        statistics) and dropout; ``Mode.Infer`` uses running statistics and
        no dropout. Defaults to ``state.mode``.
    :param rng: generator for dropout masks, required in train mode when a
        dropout layer keeps less than everything.
    :return: ``(z, cache)``; the cache feeds :func:`backward`.
    """
    mode = Mode(mode or state.mode)
    x = _as_matrix(x, state.config.input_dim, "x")
    return _run_forward(state, build_layers(state.config), x, mode, rng)


def backward(cache: ForwardCache, grad_z) -> Gradients:
    """Gradients of every embedding parameter given dLoss/dz."""
    _, grads = _run_backward(cache, grad_z)
    return grads


def backward_input(cache: ForwardCache, grad_z) -> typing.Tuple[Gradients, Matrix]:
    """As :func:`backward`, also returning dLoss/dx."""
    dx, grads = _run_backward(cache, grad_z)
    return grads, dx


def head_forward(state: NetworkState, z, mode=None):
    head = head_layer(state.config)
    if head is None:
        raise NetworkContractError("network has no ce head")
    mode = Mode(mode or state.mode)
    z = _as_matrix(z, state.config.z_dim, "z")
    return _run_forward(state, [head], z, mode, None)


def head_backward(cache: ForwardCache, grad_logits) -> typing.Tuple[Gradients, Matrix]:
    """Head parameter gradients and dLoss/dz."""
    grad_z, grads = _run_backward(cache, grad_logits)
    return grads, grad_z


def embed(state: NetworkState, x, batch_size=4096) -> Matrix:
    """Infer-mode embedding of every row of ``x``, in row batches."""
    x = _as_matrix(x, state.config.input_dim, "x")
    layers = build_layers(state.config)
    if x.shape[0] == 0:
        return np.zeros((0, state.config.z_dim))
    return np.vstack(
        [
            _run_forward(state, layers, x[rows], Mode.Infer, None)[0]
            for rows in row_batches(x.shape[0], batch_size)
        ]
    )


def head_logits(state: NetworkState, z) -> Matrix:
    logits, _ = head_forward(state, z, Mode.Infer)
    return logits


def adam_step(state: NetworkState, adam: AdamState, grads: Gradients) -> NetworkState:
    """One bias-corrected Adam update of the parameters named in ``grads``."""
    for name, grad in grads.items():
        if name not in state.params:
            raise NetworkContractError(f"gradient for unknown parameter {name!r}")
        if grad.shape != state.params[name].shape:
            raise NetworkContractError(
                f"gradient shape {grad.shape} does not match parameter {name!r} {state.params[name].shape}"
            )

    adam.t += 1
    correction1 = 1.0 - adam.beta1**adam.t
    correction2 = 1.0 - adam.beta2**adam.t

    for name, grad in grads.items():
        m = adam.m.get(name)
        v = adam.v.get(name)
        m = (
            (1.0 - adam.beta1) * grad
            if m is None
            else adam.beta1 * m + (1.0 - adam.beta1) * grad
        )
        v = (
            (1.0 - adam.beta2) * grad**2
            if v is None
            else adam.beta2 * v + (1.0 - adam.beta2) * grad**2
        )
        adam.m[name] = m
        adam.v[name] = v
        step = adam.learning_rate * (m / correction1) / (
            np.sqrt(v / correction2) + adam.epsilon
        )
        state.params[name] = state.params[name] - step

    state.version += 1
    return state
