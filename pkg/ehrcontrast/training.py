# -*- coding: utf-8 -*-
"""
:mod:`ehrcontrast.training` trains a sequence encoder on one task with
either the contrastive loss (``'cl'``) or the cross-entropy baseline
(``'cel'``) and wraps the result into a :class:`TrainedModel`, which
follows the scikit-learn classifier protocol::

    model = train(train_sequences, 'retain', 'cl', 'mortality', TrainConfig(), rng)
    proba = model.predict_proba(test_sequences)[:, 1]
    auc = model.score(test_sequences, test_labels)

Each epoch visits the training patients in a fresh random order in
batches of ``batch_size``. For CEL a batch is a mini-batch of patients;
for CL it is a group of anchors, each with its own sampled
:class:`~.ContrastiveBatch`, and the batch loss is the mean anchor loss.
One Adam step is taken per batch.
"""
from __future__ import absolute_import
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from ehrcontrast.base import BaseOutcomeClassifier
from ehrcontrast.exceptions import ContractError, TrainingDivergedError
from ehrcontrast.losses import (
    LOSSES,
    CelHead,
    cel_loss,
    cl_loss,
    predict_cel,
    predict_cl,
    sample_contrastive_batch,
)
from ehrcontrast.models import (
    ENCODERS,
    PatientEncoder,
    encoder_from_arrays,
    event_from_arrays,
    event_pair,
    init_event,
    load_checkpoint,
    save_checkpoint,
)
from ehrcontrast.numerics import Adam, GradientTape, Tensor, backward
from ehrcontrast.schema import BIN_HOURS, POSITIVE, check_task
from ehrcontrast.utils import batches, epochs_progress


logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    latent_dim: int = 64
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 32
    a: float = 0.8
    b: float = 0.2
    m: int = 2
    q: int = 1
    init_scale: float = 0.08
    resample_each_epoch: bool = True
    verbose: bool = False

    def validate(self):
        if self.latent_dim < 1:
            raise ContractError("latent_dim must be >= 1, got %r" % self.latent_dim)
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0, got %r" % self.epochs)
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1, got %r" % self.batch_size)
        if self.m < 1 or self.q < 1:
            raise ContractError("m and q must be >= 1, got m=%r, q=%r" % (self.m, self.q))
        if not self.learning_rate > 0 or not self.init_scale > 0:
            raise ContractError("learning_rate and init_scale must be positive")
        return self


class TrainedModel(BaseOutcomeClassifier):
    """
    A trained encoder with its prediction parameters: the outcome event
    embedder for ``loss='cl'`` or the linear head for ``loss='cel'``.
    ``loss_trace`` holds the mean training loss of every epoch.
    """
    def __init__(self, encoder, loss, task, event=None, head=None,
                 config=None, loss_trace=None, window=24):
        self.encoder = encoder
        self.loss = loss
        self.task = task
        self.event = event
        self.head = head
        self.config = config
        self.loss_trace = loss_trace
        self.window = window

    @classmethod
    def init(cls, encoder_kind, loss, task, config, rng, window=24):
        """ Seed-initialize parameters: encoder, fusion, then event/head. """
        check_task(task)
        if encoder_kind not in ENCODERS:
            raise ContractError("unknown encoder %r; expected one of %s" % (
                encoder_kind, ", ".join(ENCODERS)))
        if loss not in LOSSES:
            raise ContractError("unknown loss %r; expected one of %s" % (loss, ", ".join(LOSSES)))
        l, scale = config.latent_dim, config.init_scale
        encoder = PatientEncoder.init(encoder_kind, l, rng, scale)
        event = head = None
        if loss == 'cl':
            event = init_event(l, rng, scale, tasks=(task,))
        else:
            head = CelHead.init(l, rng, scale)
        return cls(encoder, loss, task, event=event, head=head, config=config,
                   loss_trace=[], window=window)

    @property
    def encoder_kind(self):
        return self.encoder.kind

    @property
    def cell(self):
        return "%s-%s" % (self.encoder.kind, self.loss)

    def parameters(self):
        params = self.encoder.parameters()
        extra = self.event if self.loss == 'cl' else self.head
        params.update(extra.parameters())
        return params

    def encode(self, sequences, chunk_size=512):
        """
        Encode sequences in chunks; return a dict of numpy arrays
        ``cp`` (fused, N x l), ``cp_seq`` (N x l) and, for RETAIN,
        ``alpha`` (N x n) and ``beta`` (N x n x l).
        """
        sequences = list(sequences)
        parts = {'cp': [], 'cp_seq': [], 'alpha': [], 'beta': []}
        for chunk in batches(sequences, chunk_size):
            enc = self.encoder.encode(chunk)
            parts['cp'].append(enc.cp.data)
            parts['cp_seq'].append(enc.cp_seq.data)
            if enc.alpha is not None:
                parts['alpha'].append(enc.alpha.data)
                parts['beta'].append(enc.beta.data)
        return {key: np.concatenate(values) for key, values in parts.items() if values}

    def embed(self, sequences):
        """ Fused patient representations ``C_p``, N x l. """
        if not sequences:
            return np.zeros((0, self.encoder.latent_dim))
        return self.encode(sequences)['cp']

    def predict_positive(self, sequences):
        """ Probability of the positive outcome for every sequence. """
        cp = self.embed(sequences)
        if self.loss == 'cl':
            return predict_cl(cp, self.task, self.event)
        return predict_cel(cp, self.head)

    def explain(self, sequences):
        """ Per-sequence :class:`~.ImportanceMatrix` objects (RETAIN only). """
        from ehrcontrast.interpret import explain_sequences
        return explain_sequences(self, sequences)

    def save(self, path, **meta):
        info = {
            'encoder': self.encoder.kind,
            'loss': self.loss,
            'task': self.task,
            'window': self.window,
            'loss_trace': list(self.loss_trace or []),
            'config': asdict(self.config) if self.config is not None else {},
        }
        info.update(meta)
        save_checkpoint(path, self.parameters(), meta=info)

    @classmethod
    def load(cls, path):
        meta, arrays = load_checkpoint(path)
        try:
            kind, loss, task = meta['encoder'], meta['loss'], meta['task']
        except KeyError as e:
            raise ContractError("checkpoint %s has no %s in its metadata" % (path, e))
        encoder = encoder_from_arrays(kind, arrays)
        event = head = None
        if loss == 'cl':
            event = event_from_arrays(arrays)
        else:
            head = CelHead(Tensor(arrays['head.W_c'], requires_grad=True),
                           Tensor(arrays['head.B_c'], requires_grad=True))
        config = TrainConfig(**meta['config']) if meta.get('config') else None
        return cls(encoder, loss, task, event=event, head=head, config=config,
                   loss_trace=meta.get('loss_trace', []), window=meta.get('window', 24))


def _cel_batch_loss(model, sequences, labels, idx):
    enc = model.encoder.encode([sequences[i] for i in idx])
    return cel_loss(enc.cp, labels[idx].astype(np.float64), model.head)


def _cl_batch_loss(model, sequences, samples):
    # encode every patient the batch touches once, then gather rows
    needed = sorted({s.anchor for s in samples} |
                    {i for s in samples for i in s.positives + s.negatives})
    row = {idx: k for k, idx in enumerate(needed)}
    cp = model.encoder.encode([sequences[i] for i in needed]).cp

    anchors = np.array([row[s.anchor] for s in samples])
    same = np.array([[row[i] for i in s.positives] for s in samples])
    other = np.array([[row[i] for i in s.negatives] for s in samples])
    own = np.array([0 if s.label == POSITIVE else 1 for s in samples])
    events = event_pair(model.task, model.event)

    cfg = model.config
    return cl_loss(cp[anchors], events[own], events[1 - own], cp[same], cp[other],
                   a=cfg.a, b=cfg.b)


def train(sequences, encoder, loss, task, config=None, rng=None):
    """
    Train an ``encoder`` (``'rnn'`` or ``'retain'``) on binned
    ``sequences`` of one training fold with ``loss`` (``'cl'`` or
    ``'cel'``) for ``task``. Return a :class:`TrainedModel` whose
    ``loss_trace`` has one finite mean loss per epoch.

    A non-finite batch loss raises :class:`~.TrainingDivergedError`.
    """
    config = (config or TrainConfig()).validate()
    if rng is None:
        rng = np.random.default_rng(0)
    sequences = list(sequences)
    if not sequences:
        raise ContractError("can't train on an empty fold")
    labels = np.array([seq.labels[task] for seq in sequences], dtype=np.int64)
    window = int(sequences[0].n_steps * BIN_HOURS)

    model = TrainedModel.init(encoder, loss, task, config, rng, window=window)
    params = model.parameters()
    optimizer = Adam(params, learning_rate=config.learning_rate)
    n = len(sequences)

    fixed = None
    if loss == 'cl' and not config.resample_each_epoch:
        fixed = [sample_contrastive_batch(labels, u, rng, config.m, config.q, task)
                 for u in range(n)]

    trace = []
    epochs = epochs_progress(range(config.epochs), disable=not config.verbose,
                             desc=model.cell)
    for epoch in epochs:
        order = rng.permutation(n)
        total = 0.0
        for batch_no, idx in enumerate(batches(order, config.batch_size)):
            with GradientTape(params) as tape:
                if loss == 'cel':
                    value = _cel_batch_loss(model, sequences, labels, idx)
                else:
                    samples = [
                        fixed[u] if fixed is not None else
                        sample_contrastive_batch(labels, u, rng, config.m, config.q, task)
                        for u in idx
                    ]
                    value = _cl_batch_loss(model, sequences, samples)
            v = value.item()
            if not math.isfinite(v):
                raise TrainingDivergedError(epoch, batch_no, v)
            optimizer.step(backward(tape, value))
            total += v * len(idx)
        trace.append(total / n)
        logger.debug("%s %s epoch %d: mean loss %.6f", task, model.cell, epoch, trace[-1])

    model.loss_trace = trace
    return model


def write_loss_trace(trace, path):
    """ Write a loss trace as CSV with ``epoch,mean_loss`` columns. """
    frame = pd.DataFrame({'epoch': np.arange(len(trace)),
                          'mean_loss': np.asarray(trace, dtype=np.float64)})
    frame.to_csv(path, index=False)
