import logging
import math
import typing

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import ttest_ind
from sklearn.metrics import auc, confusion_matrix, precision_recall_fscore_support, roc_curve

from .exceptions import DegenerateSampleError, MetricError
from .models import UNKNOWN, Dataset, EvalReport, TrainedModel
from .nn import embed
from .openset import decide, known_class_decision, nearest_mean_scores

logger = logging.getLogger(__name__)

DEFAULT_FPR_CAP = 0.1


def _detection_inputs(scores, is_unknown):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    flags = np.asarray(is_unknown, dtype=bool).reshape(-1)
    if scores.shape != flags.shape:
        raise MetricError(f"{scores.size} scores but {flags.size} flags")
    if flags.all() or not flags.any():
        raise MetricError("ROC needs both known and unknown instances")
    return scores, flags


def roc_points(scores, is_unknown):
    """
    ROC steps with unknown instances as the positive class, one step per
    distinct score value.

    :return: ``(fpr, tpr, thresholds)``
    """
    scores, flags = _detection_inputs(scores, is_unknown)
    return roc_curve(flags, scores, drop_intermediate=False)


def roc_auc(scores, is_unknown, fpr_cap=1.0) -> float:
    """
    Trapezoidal area under the ROC curve over ``FPR in [0, fpr_cap]``, not
    normalized: the largest possible value is ``fpr_cap``.
    """
    if not 0.0 < fpr_cap <= 1.0:
        raise MetricError("fpr_cap must be in (0, 1]")
    fpr, tpr, _ = roc_points(scores, is_unknown)
    keep = fpr <= fpr_cap
    x = np.append(fpr[keep], fpr_cap)
    y = np.append(tpr[keep], np.interp(fpr_cap, fpr, tpr))
    return float(auc(x, y))


@dataclass
class PrfSummary:
    labels: typing.List[int]
    precision: typing.List[float]
    recall: typing.List[float]
    f1: typing.List[float]
    support: typing.List[int]
    macro_precision: float
    macro_recall: float
    macro_f: float
    confusion: typing.List[typing.List[int]]


def macro_prf(predictions, truths, k=None, class_ids=None) -> PrfSummary:
    """
    One-vs-rest precision, recall and F1 for the K known labels and the
    unknown label, and their unweighted means. Zero denominators give 0.
    """
    if class_ids is None:
        if k is None:
            raise MetricError("macro_prf needs k or class_ids")
        class_ids = range(k)
    labels = [int(c) for c in class_ids] + [UNKNOWN]

    predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
    truths = np.asarray(truths, dtype=np.int64).reshape(-1)
    if predictions.shape != truths.shape:
        raise MetricError(f"{predictions.size} predictions but {truths.size} truths")
    for name, values in (("predictions", predictions), ("truths", truths)):
        stray = np.setdiff1d(values, labels)
        if stray.size:
            raise MetricError(f"{name} contain labels {stray.tolist()} outside {labels}")

    precision, recall, f1, support = precision_recall_fscore_support(
        truths, predictions, labels=labels, average=None, zero_division=0
    )
    return PrfSummary(
        labels=labels,
        precision=[float(v) for v in precision],
        recall=[float(v) for v in recall],
        f1=[float(v) for v in f1],
        support=[int(v) for v in support],
        macro_precision=float(np.mean(precision)),
        macro_recall=float(np.mean(recall)),
        macro_f=float(np.mean(f1)),
        confusion=confusion_matrix(truths, predictions, labels=labels).tolist(),
    )


def welch_t_test(sample_a, sample_b) -> typing.Tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p-value."""
    a = np.asarray(sample_a, dtype=np.float64).reshape(-1)
    b = np.asarray(sample_b, dtype=np.float64).reshape(-1)
    if a.size < 2 or b.size < 2:
        raise DegenerateSampleError("each sample needs at least two values")
    if np.var(a) == 0 and np.var(b) == 0:
        raise DegenerateSampleError("both samples have zero variance")
    result = ttest_ind(a, b, equal_var=False)
    return float(result.statistic), float(result.pvalue)


def closed_set_accuracy(model: TrainedModel, dataset: Dataset) -> float:
    """Known-class accuracy on the known-class rows, threshold ignored."""
    known = dataset.labels != UNKNOWN
    if not known.any():
        raise MetricError("no known-class instances to score")
    predicted, _ = known_class_decision(model, embed(model.network, dataset.features[known]))
    return float(np.mean(predicted == dataset.labels[known]))


def _check_dims(model, dataset):
    if dataset.dim != model.config.input_dim:
        raise MetricError(
            f"model expects {model.config.input_dim} features, dataset has {dataset.dim}"
        )


def evaluate(model: TrainedModel, test: Dataset, fpr_cap=DEFAULT_FPR_CAP) -> EvalReport:
    """
    Detection (AUC over the full FPR range and up to ``fpr_cap``) and K+1
    recognition metrics of ``model`` on ``test``, whose unknown instances are
    labeled ``UNKNOWN``.
    """
    report, _ = evaluate_with_scores(model, test, fpr_cap)
    return report


def evaluate_with_scores(
    model: TrainedModel, test: Dataset, fpr_cap=DEFAULT_FPR_CAP
) -> typing.Tuple[EvalReport, np.ndarray]:
    """Like :func:`evaluate`, also returning the outlier score of every test row."""
    _check_dims(model, test)
    z = embed(model.network, test.features)
    scores = nearest_mean_scores(z, model.class_means.means)
    flags = test.labels == UNKNOWN

    if flags.any() and not flags.all():
        auc_full = roc_auc(scores, flags, 1.0)
        auc_at_cap = roc_auc(scores, flags, fpr_cap)
    else:
        logger.warning("Test set lacks known or unknown instances; AUC is undefined")
        auc_full = auc_at_cap = float("nan")

    known_labels, _ = known_class_decision(model, z)
    predictions = decide(scores, model.threshold, known_labels)
    prf = macro_prf(predictions, test.labels, class_ids=model.class_means.class_ids)

    accuracy = (
        float(np.mean(known_labels[~flags] == test.labels[~flags]))
        if (~flags).any()
        else None
    )

    report = EvalReport(
        auc_full=auc_full,
        auc_at_cap=auc_at_cap,
        cap=fpr_cap,
        closed_set_accuracy=accuracy,
        n_known=int((~flags).sum()),
        n_unknown=int(flags.sum()),
        **asdict(prf),
    )
    return report, scores


@dataclass
class MetricComparison:
    metric: str
    mean_a: float
    mean_b: float
    t: float
    p: float


def compare_runs(
    runs_a: typing.Sequence[typing.Mapping[str, float]],
    runs_b: typing.Sequence[typing.Mapping[str, float]],
) -> typing.List[MetricComparison]:
    """
    Welch's t-test per metric key present in every run of both collections.
    Metrics that are constant on both sides get ``t = 0, p = 1`` when the
    constants agree and ``t = +-inf, p = 0`` otherwise.
    """
    if len(runs_a) < 2 or len(runs_b) < 2:
        raise MetricError(
            f"need at least two runs per side, got {len(runs_a)} and {len(runs_b)}"
        )
    keys_a = set.intersection(*(set(run) for run in runs_a))
    keys_b = set.intersection(*(set(run) for run in runs_b))
    shared = sorted(keys_a & keys_b)
    if not shared:
        raise MetricError(
            f"no metric shared by both sides: {sorted(keys_a)} vs {sorted(keys_b)}"
        )

    comparisons = []
    for key in shared:
        a = np.array([run[key] for run in runs_a], dtype=np.float64)
        b = np.array([run[key] for run in runs_b], dtype=np.float64)
        try:
            t, p = welch_t_test(a, b)
        except DegenerateSampleError:
            if a[0] == b[0]:
                t, p = 0.0, 1.0
            else:
                t, p = math.copysign(math.inf, a[0] - b[0]), 0.0
        comparisons.append(
            MetricComparison(
                metric=key,
                mean_a=float(a.mean()),
                mean_b=float(b.mean()),
                t=t,
                p=p,
            )
        )
    return comparisons
