# -*- coding: utf-8 -*-
"""
Training objectives and prediction heads.

The contrastive loss (CL) scores a patient representation against the
embedding of its own outcome event and against ``m`` patients with the
same outcome (observed pairs), and against the opposite outcome event and
``q`` patients with the opposite outcome (sampled pairs)::

    L = a * (L_ep + L_ep*) + b * (L_pp + L_pp*)

All four terms are negative log-sigmoids of inner products. Predictions
use the same similarity: ``P(positive) = sigmoid(C_e+ . C_p)``.

The cross-entropy baseline (CEL) is a binary log-loss over a linear head
``sigmoid(W_c C_p + B_c)``; its first component is the positive-class
probability.

    >>> import math
    >>> z = Tensor(np.zeros(4))
    >>> loss = cl_loss(z, z, z, [z, z], [z])
    >>> abs(loss.item() - 2.2 * math.log(2)) < 1e-12
    True
"""
from __future__ import absolute_import
from dataclasses import dataclass
from collections import OrderedDict
from typing import Tuple

import numpy as np
from scipy.special import expit

from ehrcontrast import numerics as nx
from ehrcontrast.exceptions import ContractError, ShapeError
from ehrcontrast.numerics import Tensor
from ehrcontrast.models import embed_event
from ehrcontrast.schema import NEGATIVE, POSITIVE


LOSSES = ('cel', 'cl')


@dataclass(frozen=True)
class ContrastiveBatch:
    """
    One anchor's training sample: the anchor index, the event node it is
    connected to (its own outcome) and the opposite node, ``m`` indices
    of patients sharing the anchor's outcome and ``q`` indices of patients
    with the opposite outcome. Indices refer to the training fold.
    """
    anchor: int
    task: str
    label: str
    opposite_label: str
    positives: Tuple[int, ...]
    negatives: Tuple[int, ...]


def sample_contrastive_batch(labels, u, rng, m=2, q=1, task='mortality'):
    """
    Sample a :class:`ContrastiveBatch` for anchor ``u``: ``m`` patients
    with the anchor's label and ``q`` with the opposite label, uniformly
    without replacement. ``labels`` are the 0/1 labels of the fold.

    >>> rng = np.random.default_rng(0)
    >>> batch = sample_contrastive_batch([1, 1, 1, 0], 0, rng)
    >>> sorted(batch.positives), batch.negatives, batch.label
    ([1, 2], (3,), 'positive')
    """
    labels = np.asarray(labels)
    if not 0 <= u < len(labels):
        raise ContractError("anchor %r outside the fold of %d patients" % (u, len(labels)))
    own = int(labels[u])
    same = np.flatnonzero(labels == own)
    same = same[same != u]
    other = np.flatnonzero(labels != own)
    own_name, other_name = (POSITIVE, NEGATIVE) if own == 1 else (NEGATIVE, POSITIVE)
    if len(same) < m:
        raise ContractError("need %d %s patients besides the anchor, the fold has %d" % (
            m, own_name, len(same)))
    if len(other) < q:
        raise ContractError("need %d %s patients, the fold has %d" % (q, other_name, len(other)))
    positives = rng.choice(same, size=m, replace=False)
    negatives = rng.choice(other, size=q, replace=False)
    return ContrastiveBatch(
        anchor=int(u),
        task=task,
        label=own_name,
        opposite_label=other_name,
        positives=tuple(int(i) for i in positives),
        negatives=tuple(int(i) for i in negatives),
    )


def _as_group(vectors):
    if isinstance(vectors, Tensor):
        return vectors
    return nx.stack(list(vectors), axis=0)


def cl_loss(cp_u, ce_pos, ce_neg, cp_positives, cp_negatives, a=0.8, b=0.2):
    """
    Contrastive loss of an anchor representation ``cp_u`` (``l``).

    ``ce_pos`` is the embedding of the event the anchor is connected to,
    ``ce_neg`` the opposite event; ``cp_positives`` (``m x l``, or a list)
    and ``cp_negatives`` (``q x l``) are representations of same-outcome
    and opposite-outcome patients.

    Leading batch axes are allowed (``B x l``, ``B x m x l``, ...); the
    result is then averaged over anchors.
    """
    cp_u, ce_pos, ce_neg = nx.as_tensor(cp_u), nx.as_tensor(ce_pos), nx.as_tensor(ce_neg)
    cp_positives, cp_negatives = _as_group(cp_positives), _as_group(cp_negatives)
    l = cp_u.shape[-1]
    for name, t in (('C_e+', ce_pos), ('C_e-', ce_neg),
                    ('positive C_p', cp_positives), ('negative C_p', cp_negatives)):
        if t.shape[-1] != l:
            raise ShapeError("cl_loss: %s has shape %s, anchor has %s" % (name, t.shape, cp_u.shape))
    if cp_positives.shape[:-2] != cp_u.shape[:-1] or cp_negatives.shape[:-2] != cp_u.shape[:-1]:
        raise ShapeError("cl_loss: peer shapes %s / %s don't match anchor %s" % (
            cp_positives.shape, cp_negatives.shape, cp_u.shape))

    anchor_row = cp_u.reshape(cp_u.shape[:-1] + (1, l))
    l_ep = -nx.log_sigmoid(nx.dot(ce_pos, cp_u))
    l_ep_star = -nx.log_sigmoid(-nx.dot(ce_neg, cp_u))
    l_pp = -nx.log_sigmoid(nx.dot(cp_positives, anchor_row)).sum(axis=-1)
    l_pp_star = -nx.log_sigmoid(-nx.dot(cp_negatives, anchor_row)).sum(axis=-1)
    loss = a * (l_ep + l_ep_star) + b * (l_pp + l_pp_star)
    return loss.mean()


class CelHead(object):
    """ Linear head of the cross-entropy baseline: ``W_c`` (2 x l), ``B_c`` (2). """
    def __init__(self, W_c, B_c):
        self.W_c = W_c
        self.B_c = B_c

    @classmethod
    def init(cls, latent_dim, rng, scale=0.08):
        return cls(
            Tensor(rng.uniform(-scale, scale, size=(2, latent_dim)), requires_grad=True),
            Tensor(rng.uniform(-scale, scale, size=(2,)), requires_grad=True),
        )

    def parameters(self):
        return OrderedDict([('head.W_c', self.W_c), ('head.B_c', self.B_c)])


def _positive_logit(cp, head):
    cp = nx.as_tensor(cp)
    if cp.shape[-1] != head.W_c.shape[1]:
        raise ShapeError("C_p of shape %s doesn't fit W_c %s" % (cp.shape, head.W_c.shape))
    if cp.ndim == 1:
        logits = (head.W_c @ cp.reshape(cp.shape[0], 1)).reshape(2) + head.B_c
        return logits[0]
    logits = cp @ head.W_c.T + head.B_c
    return logits[:, 0]


def cel_loss(cp, label, head):
    """
    Binary cross-entropy of the positive component of
    ``sigmoid(W_c C_p + B_c)`` against ``label`` (0/1), averaged over a
    batch when ``cp`` is ``B x l``.

    >>> head = CelHead(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))
    >>> round(cel_loss(Tensor(np.ones(3)), 1, head).item(), 6)
    0.693147
    """
    z = _positive_logit(cp, head)
    y = np.asarray(label, dtype=np.float64)
    if y.shape != z.shape:
        raise ShapeError("cel_loss: labels %s don't match logits %s" % (y.shape, z.shape))
    losses = -(y * nx.log_sigmoid(z) + (1.0 - y) * nx.log_sigmoid(-z))
    return losses.mean()


def _values(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def predict_cl(cp, task, params):
    """
    ``sigmoid(C_e+ . C_p)`` where ``C_e+`` is the positive event embedding
    of ``task``; ``cp`` may be a single vector or a batch.
    """
    ce_pos = embed_event(task, POSITIVE, params)[1].data
    return expit(_values(cp) @ ce_pos)


def predict_cel(cp, head):
    """ Positive component of ``sigmoid(W_c C_p + B_c)``. """
    logits = _values(cp) @ head.W_c.data.T + head.B_c.data
    return expit(logits[..., 0])
