# -*- coding: utf-8 -*-
"""
:mod:`ehrcontrast.metrics` contains the evaluation metrics: area under
the ROC curve, average precision (area under the precision-recall curve),
silhouette of patient embeddings and threshold sweeps for plotting.

Undefined cases (a single class, too few points) raise
:class:`~.UndefinedMetricError` instead of returning a placeholder value.

"""
from __future__ import absolute_import
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import (
    precision_recall_curve,
    roc_curve,
    silhouette_score,
)

from ehrcontrast.exceptions import ShapeError, UndefinedMetricError


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError("scores %s and labels %s differ in length" % (scores.shape, labels.shape))
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def auroc(scores, labels):
    """
    Area under the ROC curve, computed as the Mann-Whitney statistic
    ``P(score+ > score-) + P(score+ == score-) / 2`` from mid-ranks.

    >>> auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    0.75
    >>> auroc([1, 1, 1], [0, 1, 0])
    0.5
    """
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes, got %d positives and %d negatives" % (
            n_pos, n_neg))
    ranks = rankdata(scores, method='average')
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels):
    """
    Average precision: for every block of tied scores (highest first), the
    recall gained in the block times the precision at the end of the block.

    The block terms are summed as exact fractions and divided once, so
    the result is the correctly rounded value of the definition.

    >>> auprc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])
    1.0
    >>> auprc([0.5] * 10, [1, 1] + [0] * 8)
    0.2
    >>> auprc([0.1, 0.1, 0.5], [0, 1, 1])
    0.8333333333333334
    """
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive")
    values, block = np.unique(scores, return_inverse=True)
    n_blocks = len(values)
    # highest score first
    gained = np.bincount(block[labels == 1], minlength=n_blocks)[::-1]
    sizes = np.bincount(block, minlength=n_blocks)[::-1]
    tp = np.cumsum(gained)
    seen = np.cumsum(sizes)
    total = sum(Fraction(int(g) * int(t), int(s))
                for g, t, s in zip(gained, tp, seen) if g)
    return float(total / n_pos)


def silhouette(embeddings, labels):
    """
    Mean silhouette coefficient of ``embeddings`` (N x l) grouped by
    0/1 ``labels``, with Euclidean distance.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels).ravel()
    if embeddings.ndim != 2 or embeddings.shape[0] != len(labels):
        raise ShapeError("embeddings %s don't match %d labels" % (embeddings.shape, len(labels)))
    counts = [int((labels == c).sum()) for c in (0, 1)]
    if min(counts) < 2 or counts[0] + counts[1] != len(labels):
        raise UndefinedMetricError(
            "silhouette needs at least 2 members in each of the two classes, got %s" % counts
        )
    return float(silhouette_score(embeddings, labels, metric='euclidean'))


def roc_pr_points(scores, labels):
    """
    Threshold sweep points for plotting: a dict with ``'roc'`` and
    ``'pr'`` entries, each an array of ``(x, y, threshold)`` rows
    (FPR/TPR for ROC, recall/precision for PR).
    """
    scores, labels = _check(scores, labels)
    if labels.sum() == 0 or labels.sum() == len(labels):
        raise UndefinedMetricError("curves need both classes")
    fpr, tpr, roc_thresholds = roc_curve(labels, scores, drop_intermediate=False)
    precision, recall, pr_thresholds = precision_recall_curve(labels, scores)
    # the last PR point (recall 0, precision 1) has no threshold
    pr_thresholds = np.append(pr_thresholds, np.inf)
    return {
        'roc': np.column_stack([fpr, tpr, roc_thresholds]),
        'pr': np.column_stack([recall, precision, pr_thresholds]),
    }


def mean_std(values):
    """
    Mean and sample standard deviation (0 for a single value).

    >>> mean_std([1.0, 2.0, 3.0])
    (2.0, 1.0)
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return None, None
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return float(values.mean()), std
