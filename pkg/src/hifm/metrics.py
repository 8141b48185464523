"""Prediction and coefficient evaluation metrics."""

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError, ValidationError


def _pair(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ValidationError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValidationError("metrics need at least one value")
    return a, b


def mse(predicted, actual):
    predicted, actual = _pair(predicted, actual)
    return float(np.mean((predicted - actual) ** 2))


def coefficient_mse(estimated, true):
    """Mean squared coefficient error (tables report this times 1e3)."""
    return mse(estimated, true)


def _scores_labels(scores, labels, need_both=True):
    scores, labels = _pair(scores, labels)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValidationError("labels must be 0/1")
    n_pos = int(labels.sum())
    if need_both and (n_pos == 0 or n_pos == labels.size):
        raise UndefinedMetricError("metric undefined: labels contain a single class")
    if not need_both and n_pos == 0:
        raise UndefinedMetricError("metric undefined: no positive labels")
    return scores, labels.astype(bool)


def auc(scores, labels):
    """Area under the ROC curve as P(score+ > score-) + P(tie)/2 (rank statistic)."""
    scores, pos = _scores_labels(scores, labels)
    ranks = rankdata(scores)
    n_pos = pos.sum()
    n_neg = pos.size - n_pos
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _threshold_counts(scores, pos):
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], pos[order]
    # last index of each block of tied scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(~y)[ends]
    return s[ends], tp, fp


def roc_curve(scores, labels):
    """ROC points ``(fpr, tpr)`` from (0, 0) to (1, 1), one step per distinct score."""
    scores, pos = _scores_labels(scores, labels)
    _, tp, fp = _threshold_counts(scores, pos)
    tpr = np.r_[0.0, tp / pos.sum()]
    fpr = np.r_[0.0, fp / (~pos).sum()]
    return fpr, tpr


def roc_area(fpr, tpr):
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def precision_recall_curve(scores, labels):
    """Precision and recall at each distinct score threshold, highest threshold first."""
    scores, pos = _scores_labels(scores, labels, need_both=False)
    _, tp, fp = _threshold_counts(scores, pos)
    return tp / (tp + fp), tp / pos.sum()


def auprc(scores, labels):
    """Step-interpolated area under the precision-recall curve (average precision)."""
    precision, recall = precision_recall_curve(scores, labels)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def sens_spec_at(scores, labels, threshold):
    """Sensitivity and specificity when predicting positive at ``score >= threshold``."""
    scores, pos = _scores_labels(scores, labels)
    hit = scores >= threshold
    sens = np.sum(hit & pos) / pos.sum()
    spec = np.sum(~hit & ~pos) / (~pos).sum()
    return float(sens), float(spec)
