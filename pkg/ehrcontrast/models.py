# -*- coding: utf-8 -*-
"""
:mod:`ehrcontrast.models` contains the patient sequence encoders (a plain
tanh RNN and RETAIN), the outcome event embedder and static-feature
fusion, all written with :mod:`ehrcontrast.numerics` tensors.

Encoders accept a single :class:`~.BinnedSequence` (or an ``n x 63``
array) or, through :class:`PatientEncoder`, a batch of sequences with the
same number of bins.

Parameters live in small containers whose :meth:`parameters` method
returns an ordered ``{name: Tensor}`` dict; names are prefixed with the
container kind (``rnn.W_x``, ``retain.W_p``, ``event.R.mortality``, ...)
so the containers can be merged into one dict for training and
checkpointing.
"""
from __future__ import absolute_import
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ehrcontrast import numerics as nx
from ehrcontrast.exceptions import ContractError, ShapeError
from ehrcontrast.numerics import Tensor
from ehrcontrast.schema import N_FEATURES, NEGATIVE, POSITIVE, STATIC_DIM, TASKS, check_task


logger = logging.getLogger(__name__)

ENCODERS = ('rnn', 'retain')
CHECKPOINT_FORMAT = 'ehrcontrast-checkpoint'
CHECKPOINT_VERSION = 1


def _uniform(rng, shape, scale):
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def _check_finite(params):
    for name, p in params.items():
        if not np.isfinite(p.data).all():
            raise ContractError("parameter %s has non-finite values" % name)


class _ParamsMixin(object):
    prefix = ''
    fields = ()

    def parameters(self):
        return OrderedDict(
            ('%s.%s' % (self.prefix, name), getattr(self, name)) for name in self.fields
        )

    @property
    def latent_dim(self):
        return getattr(self, self.fields[0]).shape[0]


@dataclass
class RnnParams(_ParamsMixin):
    """ ``h_i = tanh(W_x x_i + W_h h_{i-1} + b)`` """
    W_x: Tensor
    W_h: Tensor
    b: Tensor

    prefix = 'rnn'
    fields = ('W_x', 'W_h', 'b')


@dataclass
class RetainParams(_ParamsMixin):
    """
    RETAIN parameters: the embedding ``W_p`` and two reverse-time tanh
    recurrences; the first (``A_*``) feeds the scalar visit attention
    through ``w_alpha``, the second (``B_*``) feeds the feature attention
    through ``W_beta``/``b_beta``.

    The visit attention has no bias: softmax over time is invariant to
    adding a constant to every score.
    """
    W_p: Tensor
    A_x: Tensor
    A_h: Tensor
    A_b: Tensor
    w_alpha: Tensor
    B_x: Tensor
    B_h: Tensor
    B_b: Tensor
    W_beta: Tensor
    b_beta: Tensor

    prefix = 'retain'
    fields = ('W_p', 'A_x', 'A_h', 'A_b', 'w_alpha',
              'B_x', 'B_h', 'B_b', 'W_beta', 'b_beta')


class EventParams(object):
    """
    Outcome event embedder: ``W_e`` (l x 2), ``b_e`` (l) and one
    translation vector ``R[task]`` (l) per task.
    """
    def __init__(self, W_e, b_e, R):
        self.W_e = W_e
        self.b_e = b_e
        self.R = OrderedDict(R)

    @property
    def latent_dim(self):
        return self.W_e.shape[0]

    def parameters(self):
        params = OrderedDict([('event.W_e', self.W_e), ('event.b_e', self.b_e)])
        for task, r in self.R.items():
            params['event.R.%s' % task] = r
        return params


@dataclass
class FusionParams(_ParamsMixin):
    """ ``fused = tanh(W_s [C_p; X_d] + b_s)``; ``W_s`` is l x (l + 20). """
    W_s: Tensor
    b_s: Tensor

    prefix = 'fusion'
    fields = ('W_s', 'b_s')


def init_rnn(latent_dim, rng, scale=0.08):
    l = latent_dim
    return RnnParams(
        W_x=_uniform(rng, (l, N_FEATURES), scale),
        W_h=_uniform(rng, (l, l), scale),
        b=_uniform(rng, (l,), scale),
    )


def init_retain(latent_dim, rng, scale=0.08):
    l = latent_dim
    return RetainParams(
        W_p=_uniform(rng, (l, N_FEATURES), scale),
        A_x=_uniform(rng, (l, l), scale),
        A_h=_uniform(rng, (l, l), scale),
        A_b=_uniform(rng, (l,), scale),
        w_alpha=_uniform(rng, (l,), scale),
        B_x=_uniform(rng, (l, l), scale),
        B_h=_uniform(rng, (l, l), scale),
        B_b=_uniform(rng, (l,), scale),
        W_beta=_uniform(rng, (l, l), scale),
        b_beta=_uniform(rng, (l,), scale),
    )


def init_event(latent_dim, rng, scale=0.08, tasks=TASKS):
    l = latent_dim
    W_e = _uniform(rng, (l, 2), scale)
    b_e = _uniform(rng, (l,), scale)
    R = OrderedDict((check_task(task), _uniform(rng, (l,), scale)) for task in tasks)
    return EventParams(W_e, b_e, R)


def init_fusion(latent_dim, rng, scale=0.08):
    l = latent_dim
    return FusionParams(
        W_s=_uniform(rng, (l, l + STATIC_DIM), scale),
        b_s=_uniform(rng, (l,), scale),
    )


def init_encoder(kind, latent_dim, rng, scale=0.08):
    if kind == 'rnn':
        return init_rnn(latent_dim, rng, scale)
    if kind == 'retain':
        return init_retain(latent_dim, rng, scale)
    raise ContractError("unknown encoder %r; expected one of %s" % (kind, ", ".join(ENCODERS)))


# ===== encoders =====

def _as_batch(sequences):
    """ Stack sequences into a ``B x n x 63`` array. """
    mats = [getattr(s, 'matrix', s) for s in sequences]
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    for m in mats:
        if m.ndim != 2 or m.shape[1] != N_FEATURES:
            raise ShapeError("sequence must be n x %d, got %s" % (N_FEATURES, m.shape))
    if len({m.shape[0] for m in mats}) > 1:
        raise ShapeError("sequences in a batch must have the same number of bins, got %s" % (
            sorted({m.shape[0] for m in mats}),))
    if not mats:
        raise ContractError("empty batch")
    return np.stack(mats)


def rnn_forward(X, params):
    """ Run the RNN over a ``B x n x 63`` tensor; return ``B x l``. """
    X = nx.as_tensor(X)
    batch, n_steps = X.shape[0], X.shape[1]
    h = Tensor(np.zeros((batch, params.latent_dim)))
    for i in range(n_steps):
        x_i = X[:, i, :]
        h = nx.tanh(x_i @ params.W_x.T + h @ params.W_h.T + params.b)
    return h


def _reverse_recurrence(V, W_x, W_h, b):
    """ tanh recurrence over ``V`` (B x n x l) from the last step to the first. """
    batch, n_steps, l = V.shape
    g = Tensor(np.zeros((batch, W_h.shape[0])))
    states = [None] * n_steps
    for i in reversed(range(n_steps)):
        g = nx.tanh(V[:, i, :] @ W_x.T + g @ W_h.T + b)
        states[i] = g
    return states


def retain_forward(X, params):
    """
    Run RETAIN over a ``B x n x 63`` tensor. Return ``(C_p, alpha, beta)``
    with shapes ``B x l``, ``B x n`` and ``B x n x l``.
    """
    X = nx.as_tensor(X)
    batch, n_steps = X.shape[0], X.shape[1]
    V = X @ params.W_p.T                                  # B x n x l
    g_states = _reverse_recurrence(V, params.A_x, params.A_h, params.A_b)
    h_states = _reverse_recurrence(V, params.B_x, params.B_h, params.B_b)

    scores = nx.stack([nx.dot(g, params.w_alpha) for g in g_states], axis=1)
    alpha = nx.softmax(scores, axis=1)                    # B x n
    beta = nx.stack([
        nx.tanh(h @ params.W_beta.T + params.b_beta) for h in h_states
    ], axis=1)                                            # B x n x l
    weighted = alpha.reshape(batch, n_steps, 1) * beta * V
    return weighted.sum(axis=1), alpha, beta


def _single(seq):
    return _as_batch([seq])


def encode_rnn(seq, params):
    """
    Encode one sequence with the RNN; return the last hidden state
    (an ``l`` vector, before static fusion).

    >>> rng = np.random.default_rng(0)
    >>> params = init_rnn(3, rng)
    >>> encode_rnn(np.zeros((4, 63)), params).shape
    (3,)
    """
    return rnn_forward(_single(seq), params)[0]


def encode_retain(seq, params):
    """
    Encode one sequence with RETAIN. Return ``(C_p, alpha, beta)``:
    ``C_p = sum_i alpha_i * (beta_i * v_i)`` with ``v_i = W_p x_i``,
    ``alpha`` (n) sums to 1 and ``beta`` (n x l) is in (-1, 1).
    """
    cp, alpha, beta = retain_forward(_single(seq), params)
    return cp[0], alpha[0], beta[0]


def _one_hot(label):
    if label == POSITIVE:
        return np.array([1.0, 0.0])
    if label == NEGATIVE:
        return np.array([0.0, 1.0])
    raise ContractError("label must be %r or %r, got %r" % (POSITIVE, NEGATIVE, label))


def embed_event(task, label, params):
    """
    Return ``(C_hat_e, C_e)`` for an outcome event node:
    ``C_hat_e = tanh(W_e X_e + b_e)`` and ``C_e = C_hat_e - R[task]``,
    where ``X_e`` is ``(1, 0)`` for the positive and ``(0, 1)`` for the
    negative outcome.
    """
    check_task(task)
    if task not in params.R:
        raise ContractError("event params have no relation vector for %r" % task)
    x_e = Tensor(_one_hot(label).reshape(2, 1))
    c_hat = nx.tanh((params.W_e @ x_e).reshape(params.latent_dim) + params.b_e)
    return c_hat, c_hat - params.R[task]


def event_pair(task, params):
    """ ``2 x l`` tensor of event embeddings: row 0 positive, row 1 negative. """
    return nx.stack([embed_event(task, POSITIVE, params)[1],
                     embed_event(task, NEGATIVE, params)[1]], axis=0)


def fuse_static(cp, x_d, params):
    """
    ``tanh(W_s [C_p; X_d] + b_s)``. Works for a single vector or a batch
    (``B x l`` and ``B x 20``).
    """
    cp, x_d = nx.as_tensor(cp), nx.as_tensor(x_d)
    if cp.shape[:-1] != x_d.shape[:-1] or cp.shape[-1] + x_d.shape[-1] != params.W_s.shape[1]:
        raise ShapeError("fuse_static: C_p %s and X_d %s don't fit W_s %s" % (
            cp.shape, x_d.shape, params.W_s.shape))
    joint = nx.concat([cp, x_d], axis=-1)
    return nx.tanh(joint @ params.W_s.T + params.b_s)


@dataclass
class EncodedBatch:
    """ Encoder outputs for a batch; ``alpha``/``beta`` are None for RNN. """
    cp: Tensor
    cp_seq: Tensor
    alpha: Optional[Tensor] = None
    beta: Optional[Tensor] = None


class PatientEncoder(object):
    """
    Sequence encoder plus static fusion. ``encode(sequences)`` returns an
    :class:`EncodedBatch` whose ``cp`` is the fused representation used
    by losses, predictions and exports.
    """
    def __init__(self, kind, params, fusion):
        if kind not in ENCODERS:
            raise ContractError("unknown encoder %r" % kind)
        self.kind = kind
        self.params = params
        self.fusion = fusion

    @classmethod
    def init(cls, kind, latent_dim, rng, scale=0.08):
        params = init_encoder(kind, latent_dim, rng, scale)
        return cls(kind, params, init_fusion(latent_dim, rng, scale))

    @property
    def latent_dim(self):
        return self.params.latent_dim

    def parameters(self):
        params = self.params.parameters()
        params.update(self.fusion.parameters())
        return params

    def encode(self, sequences):
        X = Tensor(_as_batch(sequences))
        statics = Tensor(np.stack([np.asarray(s.static, dtype=np.float64) for s in sequences]))
        if self.kind == 'retain':
            cp_seq, alpha, beta = retain_forward(X, self.params)
        else:
            cp_seq, alpha, beta = rnn_forward(X, self.params), None, None
        cp = fuse_static(cp_seq, statics, self.fusion)
        return EncodedBatch(cp=cp, cp_seq=cp_seq, alpha=alpha, beta=beta)


# ===== checkpoints =====

def save_checkpoint(path, params, meta=None):
    """
    Save named parameter tensors as a versioned JSON document::

        {"format": "ehrcontrast-checkpoint", "version": 1, "meta": {...},
         "params": {name: {"shape": [...], "values": [...]}}}

    """
    doc = OrderedDict([
        ('format', CHECKPOINT_FORMAT),
        ('version', CHECKPOINT_VERSION),
        ('meta', meta or {}),
        ('params', OrderedDict(
            (name, {'shape': list(p.shape), 'values': p.data.ravel().tolist()})
            for name, p in params.items()
        )),
    ])
    with open(path, 'w', encoding='utf8') as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_checkpoint(path):
    """ Load a checkpoint; return ``(meta, {name: np.ndarray})``. """
    with open(path, 'r', encoding='utf8') as f:
        doc = json.load(f)
    if not isinstance(doc, dict) or doc.get('format') != CHECKPOINT_FORMAT:
        raise ContractError("%s is not an ehrcontrast checkpoint" % path)
    if doc.get('version') != CHECKPOINT_VERSION:
        raise ContractError("unsupported checkpoint version %r in %s" % (doc.get('version'), path))
    arrays = OrderedDict()
    for name, entry in sorted(doc['params'].items()):
        values = np.array(entry['values'], dtype=np.float64)
        arrays[name] = values.reshape(entry['shape'])
    return doc.get('meta', {}), arrays


def _tensors(arrays, prefix):
    return OrderedDict(
        (name[len(prefix) + 1:], Tensor(values, requires_grad=True))
        for name, values in arrays.items() if name.startswith(prefix + '.')
    )


def encoder_from_arrays(kind, arrays):
    """ Rebuild a :class:`PatientEncoder` from checkpoint arrays. """
    cls = RnnParams if kind == 'rnn' else RetainParams
    try:
        params = cls(**_tensors(arrays, cls.prefix))
        fusion = FusionParams(**_tensors(arrays, FusionParams.prefix))
    except TypeError as e:
        raise ContractError("checkpoint doesn't match a %s encoder: %s" % (kind, e))
    encoder = PatientEncoder(kind, params, fusion)
    _check_finite(encoder.parameters())
    return encoder


def event_from_arrays(arrays):
    try:
        W_e = Tensor(arrays['event.W_e'], requires_grad=True)
        b_e = Tensor(arrays['event.b_e'], requires_grad=True)
    except KeyError as e:
        raise ContractError("checkpoint has no event parameter %s" % e)
    R = _tensors(arrays, 'event.R')
    return EventParams(W_e, b_e, [(task, R[task]) for task in TASKS if task in R])
