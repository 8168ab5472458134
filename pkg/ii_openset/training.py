import logging

import numpy as np

from .exceptions import ConfigurationError, EmptyClassError, EmptyDatasetError, TrainingDivergedError
from .losses import class_means, cross_entropy, ii_loss, ii_loss_grad
from .models import (
    UNKNOWN,
    Dataset,
    LossCurves,
    Mode,
    NetworkConfig,
    TrainConfig,
    TrainedModel,
    TrainMetadata,
)
from .nn import (
    adam_step,
    backward,
    embed,
    forward,
    head_backward,
    head_forward,
    init_adam,
    init_network,
)
from .openset import estimate_threshold, nearest_mean_scores
from .util import sub_rng

logger = logging.getLogger(__name__)


def _check_inputs(dataset, net_config, train_config):
    train_config.validate()
    net_config.validate()

    if len(dataset) == 0:
        raise EmptyDatasetError("training set is empty")
    if dataset.dim != net_config.input_dim:
        raise ConfigurationError(
            "network.input_dim",
            f"network expects {net_config.input_dim} features, dataset has {dataset.dim}",
        )
    if np.any(dataset.labels == UNKNOWN):
        raise ConfigurationError(
            "dataset", "training data must not contain unknown-class instances"
        )

    class_ids = dataset.class_ids
    if net_config.n_classes is not None:
        missing = np.setdiff1d(np.arange(net_config.n_classes), class_ids)
        if missing.size:
            raise EmptyClassError(
                f"known classes {missing.tolist()} have no training instances"
            )
        if class_ids.size != net_config.n_classes:
            raise ConfigurationError(
                "network.n_classes",
                f"{net_config.n_classes} classes declared, training data has {class_ids.tolist()}",
            )

    regime = train_config.regime
    if regime.uses_ce and not net_config.ce_head:
        raise ConfigurationError(
            "network.ce_head", f"regime {regime.value} needs a ce head"
        )
    if regime.uses_ii and not net_config.z_batchnorm:
        logger.warning(
            "Training regime %s without batch normalization on the z-layer; "
            "inter separation is unbounded",
            regime.value,
        )
    if class_ids.size == 1:
        logger.warning("Only one known class: inter separation is fixed at 0")
    return class_ids


def _diverged(iteration, curves):
    return TrainingDivergedError(
        iteration,
        LossCurves(
            intra=curves.intra[:iteration],
            inter=curves.inter[:iteration],
            ii=curves.ii[:iteration],
            ce=curves.ce[:iteration],
        ),
    )


def train(
    dataset: Dataset,
    net_config: NetworkConfig,
    train_config: TrainConfig,
) -> TrainedModel:
    """
    Train the embedding with mini-batch Adam and freeze it into a model.

    Each iteration samples ``batch_size`` rows uniformly with replacement.
    Regime ``ii`` takes one step on ii-loss, ``ce`` one step on cross entropy
    and ``ii_ce`` an ii-loss step followed by a cross entropy step on the same
    batch, each with its own optimizer moments. Afterwards the class means are
    taken over the whole training set in infer mode and the outlier threshold
    is the contamination-ratio percentile of the training scores.

    :raise TrainingDivergedError: on a non-finite loss; carries the iteration
        and the curves recorded so far.
    """
    class_ids = _check_inputs(dataset, net_config, train_config)
    regime = train_config.regime
    iterations = train_config.iterations

    state = init_network(net_config)
    optimizer = dict(
        learning_rate=train_config.learning_rate,
        beta1=train_config.beta1,
        beta2=train_config.beta2,
        epsilon=train_config.epsilon,
    )
    ii_adam = init_adam(state, **optimizer)
    ce_adam = init_adam(state, **optimizer)
    batch_rng = sub_rng(train_config.seed, "batching")
    dropout_rng = sub_rng(train_config.seed, "dropout")

    features = dataset.features
    labels = dataset.labels
    targets = np.searchsorted(class_ids, labels)
    n = len(dataset)

    curves = LossCurves(
        intra=np.full(iterations, np.nan),
        inter=np.full(iterations, np.nan),
        ii=np.full(iterations, np.nan),
        ce=np.full(iterations, np.nan),
    )
    steps = 0
    degenerate = class_ids.size < 2

    logger.info(
        "Training %s on %d instances of %d classes for %d iterations",
        regime.value,
        n,
        class_ids.size,
        iterations,
    )

    for it in range(iterations):
        rows = batch_rng.integers(0, n, size=train_config.batch_size)
        x, y = features[rows], labels[rows]

        z, cache = forward(state, x, Mode.Train, dropout_rng)
        breakdown = ii_loss(z, y)
        curves.intra[it] = breakdown.intra_spread
        curves.inter[it] = breakdown.inter_separation
        curves.ii[it] = breakdown.ii_loss

        if regime.uses_ii:
            if not np.isfinite(breakdown.ii_loss):
                raise _diverged(it + 1, curves)
            adam_step(state, ii_adam, backward(cache, ii_loss_grad(z, y)))
            steps += 1

        if regime.uses_ce:
            if regime.uses_ii:
                z, cache = forward(state, x, Mode.Train, dropout_rng)
            logits, head_cache = head_forward(state, z, Mode.Train)
            ce, grad_logits = cross_entropy(logits, targets[rows])
            curves.ce[it] = ce
            if not np.isfinite(ce):
                raise _diverged(it + 1, curves)
            head_grads, grad_z = head_backward(head_cache, grad_logits)
            grads = backward(cache, grad_z)
            grads.update(head_grads)
            adam_step(state, ce_adam, grads)
            steps += 1

        if train_config.log_every and (it + 1) % train_config.log_every == 0:
            logger.debug(
                "iteration %d: intra %.6g inter %.6g ii %.6g ce %.6g",
                it + 1,
                curves.intra[it],
                curves.inter[it],
                curves.ii[it],
                curves.ce[it],
            )

    network = state.frozen()
    z_all = embed(network, features)
    means = class_means(z_all, labels)
    threshold = estimate_threshold(
        nearest_mean_scores(z_all, means.means), train_config.contamination_ratio
    )
    if not np.isfinite(threshold):
        raise _diverged(iterations, curves)

    logger.info(
        "Finished after %d optimizer steps, threshold %.6g", steps, threshold
    )

    return TrainedModel(
        network=network,
        class_means=means,
        threshold=threshold,
        regime=regime,
        metadata=TrainMetadata(
            seed=train_config.seed,
            iterations=iterations,
            optimizer_steps=steps,
            batch_size=train_config.batch_size,
            learning_rate=train_config.learning_rate,
            beta1=train_config.beta1,
            beta2=train_config.beta2,
            epsilon=train_config.epsilon,
            contamination_ratio=train_config.contamination_ratio,
            degenerate=degenerate,
        ),
        curves=curves,
        scaling=dataset.scaling,
    )
