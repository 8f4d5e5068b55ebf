# -*- coding: utf-8 -*-
"""
:mod:`ehrcontrast.interpret` computes feature importance of RETAIN
models. The contribution of feature ``k`` at bin ``i`` is::

    omega[i, k] = alpha_i * (d^T (beta_i * W_p))[k] * X[i, k]

where ``d`` is the class direction the representation is scored
against: the positive event embedding ``C_e+`` for contrastive models,
the positive-class row of ``W_c`` for cross-entropy models. Summed over
bins and features, ``omega`` gives back ``d . C_p_seq`` (the
representation before static fusion), so statics receive no importance.

Per-patient matrices are aggregated into a cohort heatmap by
:func:`aggregate_heatmap`.
"""
from __future__ import absolute_import
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import pandas as pd

from ehrcontrast.exceptions import ContractError, UnsupportedModelError
from ehrcontrast.models import embed_event
from ehrcontrast.numerics import Tensor
from ehrcontrast.schema import BIN_HOURS, DEFAULT_FEATURE_NAMES, N_FEATURES, POSITIVE


def bin_labels(n_steps):
    """
    >>> bin_labels(4)
    ['t-24h', 't-18h', 't-12h', 't-6h']
    """
    return ['t-%dh' % int((n_steps - i) * BIN_HOURS) for i in range(n_steps)]


@dataclass
class ImportanceMatrix:
    """ ``values`` is 63 x n (feature x time bin). """
    values: np.ndarray
    feature_names: Tuple[str, ...] = DEFAULT_FEATURE_NAMES
    bin_labels: List[str] = field(default_factory=list)
    patient_id: str = ''

    def total(self):
        return float(self.values.sum())


@dataclass
class Heatmap:
    """
    Cohort-level importance: ``values`` (63 x n) in [0, 1], per-feature
    ``scores`` (max over bins) and ``ranking`` (feature ids, best first).
    """
    values: np.ndarray
    scores: np.ndarray
    ranking: List[int]
    feature_names: Tuple[str, ...] = DEFAULT_FEATURE_NAMES
    bin_labels: List[str] = field(default_factory=list)
    n_patients: int = 0

    def top(self, k=10):
        return self.ranking[:k]


def _array(x):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(getattr(x, 'matrix', x), dtype=np.float64)


def _importance(alpha, beta, W_p, direction, X, patient_id=''):
    alpha, beta, W_p, X = _array(alpha), _array(beta), _array(W_p), _array(X)
    n_steps = X.shape[0]
    if alpha.shape != (n_steps,) or beta.shape[0] != n_steps:
        raise ContractError("attention of shapes %s / %s doesn't match %d time bins" % (
            alpha.shape, beta.shape, n_steps))
    if X.shape[1] != W_p.shape[1]:
        raise ContractError("X has %d features, W_p expects %d" % (X.shape[1], W_p.shape[1]))
    per_feature = (beta * direction) @ W_p               # n x 63
    omega = alpha[:, None] * per_feature * X
    return ImportanceMatrix(values=omega.T, bin_labels=bin_labels(n_steps),
                            patient_id=patient_id)


def importance_cl(alpha, beta, W_p, event, task, X):
    """
    Importance of a contrastive RETAIN model for sequence ``X``:
    contributions to ``C_e+ . C_p_seq``.
    """
    direction = embed_event(task, POSITIVE, event)[1].data
    return _importance(alpha, beta, W_p, direction, X, getattr(X, 'patient_id', ''))


def importance_cel(alpha, beta, W_p, W_c, X):
    """
    Importance of a cross-entropy RETAIN model for sequence ``X``:
    contributions to the positive logit without its bias.
    """
    direction = _array(W_c)[0]
    return _importance(alpha, beta, W_p, direction, X, getattr(X, 'patient_id', ''))


def explain_sequences(model, sequences):
    """
    Importance matrices of a trained RETAIN model for ``sequences``;
    the formula follows the model's loss.
    """
    if model.encoder.kind != 'retain':
        raise UnsupportedModelError(
            "feature importance needs RETAIN attention; got a %s encoder" % model.encoder.kind
        )
    sequences = list(sequences)
    if not sequences:
        return []
    enc = model.encode(sequences)
    W_p = model.encoder.params.W_p.data
    result = []
    for seq, alpha, beta in zip(sequences, enc['alpha'], enc['beta']):
        if model.loss == 'cl':
            result.append(importance_cl(alpha, beta, W_p, model.event, model.task, seq))
        else:
            result.append(importance_cel(alpha, beta, W_p, model.head.W_c, seq))
    return result


def aggregate_heatmap(matrices):
    """
    Mean of ``|omega|`` over patients, scaled so that the largest cell is 1.
    Features are ranked by their largest cell; ties keep feature order.

    >>> m = ImportanceMatrix(np.zeros((63, 4)))
    >>> m.values[5, 2] = -2.0
    >>> heatmap = aggregate_heatmap([m])
    >>> heatmap.ranking[:3], float(heatmap.values.max())
    ([5, 0, 1], 1.0)
    """
    matrices = list(matrices)
    if not matrices:
        raise ContractError("can't aggregate an empty set of importance matrices")
    shapes = {m.values.shape for m in matrices}
    if len(shapes) > 1:
        raise ContractError("importance matrices have different shapes: %s" % sorted(shapes))
    mean_abs = np.mean([np.abs(m.values) for m in matrices], axis=0)
    return heatmap_from_mean(mean_abs, len(matrices), matrices[0].feature_names)


def heatmap_from_mean(mean_abs, n_patients, feature_names=DEFAULT_FEATURE_NAMES):
    """ Build a :class:`Heatmap` from an already averaged ``|omega|`` matrix. """
    peak = mean_abs.max()
    values = mean_abs / peak if peak > 0 else np.zeros_like(mean_abs)
    scores = values.max(axis=1)
    ranking = [int(i) for i in np.argsort(-scores, kind='stable')]
    return Heatmap(values=values, scores=scores, ranking=ranking,
                   feature_names=tuple(feature_names),
                   bin_labels=bin_labels(values.shape[1]),
                   n_patients=n_patients)


def rank_of(ranking, feature_id):
    """
    1-based rank of ``feature_id`` in ``ranking``.

    >>> rank_of([4, 2, 9], 2)
    2
    """
    try:
        return list(ranking).index(feature_id) + 1
    except ValueError:
        raise ContractError("feature %r is not in the ranking" % feature_id)


def heatmap_frame(heatmap):
    return pd.DataFrame(heatmap.values, index=pd.Index(heatmap.feature_names, name='feature'),
                        columns=heatmap.bin_labels)


def ranking_frame(heatmap):
    ids = np.asarray(heatmap.ranking, dtype=np.int64)
    return pd.DataFrame({
        'rank': np.arange(1, len(ids) + 1),
        'feature_id': ids,
        'name': [heatmap.feature_names[i] for i in ids],
        'score': heatmap.scores[ids],
    })


def write_heatmap_csv(heatmap, path):
    """ 63 rows (one per feature, labelled) by n bin columns. """
    if heatmap.values.shape[0] != N_FEATURES:
        raise ContractError("heatmap must have %d rows" % N_FEATURES)
    heatmap_frame(heatmap).to_csv(path)


def write_ranking_csv(heatmap, path):
    """ Columns ``rank,feature_id,name,score``, best feature first. """
    ranking_frame(heatmap).to_csv(path, index=False)
