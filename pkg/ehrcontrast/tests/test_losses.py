# -*- coding: utf-8 -*-
from __future__ import absolute_import
import unittest

import numpy as np
import pytest
from scipy.special import expit, log_expit

from ehrcontrast.exceptions import ContractError, ShapeError
from ehrcontrast.losses import (
    CelHead,
    cel_loss,
    cl_loss,
    predict_cel,
    predict_cl,
    sample_contrastive_batch,
)
from ehrcontrast.models import embed_event, init_event
from ehrcontrast.numerics import Tensor


def _cl_reference(cp_u, ce_pos, ce_neg, same, other, a, b):
    return (a * (-log_expit(ce_pos @ cp_u) - log_expit(-(ce_neg @ cp_u))) +
            b * (-log_expit(same @ cp_u).sum() - log_expit(-(other @ cp_u)).sum()))


def test_cl_loss_matches_formula():
    rng = np.random.default_rng(0)
    cp_u, ce_pos, ce_neg = rng.normal(size=(3, 5))
    same, other = rng.normal(size=(3, 5)), rng.normal(size=(2, 5))
    loss = cl_loss(Tensor(cp_u), ce_pos, ce_neg, Tensor(same), Tensor(other), a=0.7, b=0.3)
    expected = _cl_reference(cp_u, ce_pos, ce_neg, same, other, 0.7, 0.3)
    assert loss.item() == pytest.approx(expected, rel=1e-12)


def test_cl_loss_batch_is_mean_of_anchors():
    rng = np.random.default_rng(1)
    cp_u = rng.normal(size=(4, 3))
    ce_pos, ce_neg = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    same, other = rng.normal(size=(4, 2, 3)), rng.normal(size=(4, 1, 3))
    batch = cl_loss(cp_u, ce_pos, ce_neg, Tensor(same), Tensor(other)).item()
    singles = [_cl_reference(cp_u[i], ce_pos[i], ce_neg[i], same[i], other[i], 0.8, 0.2)
               for i in range(4)]
    assert batch == pytest.approx(np.mean(singles), rel=1e-12)


def test_cl_loss_checks_shapes():
    z = Tensor(np.zeros(4))
    with pytest.raises(ShapeError):
        cl_loss(z, np.zeros(3), z, [z, z], [z])
    with pytest.raises(ShapeError):
        cl_loss(z, z, z, Tensor(np.zeros((2, 2, 4))), [z])


def test_cl_loss_prefers_aligned_representations():
    e = np.array([1.0, 0.0])
    aligned = cl_loss(Tensor(e), e, -e, [Tensor(e)], [Tensor(-e)]).item()
    opposed = cl_loss(Tensor(-e), e, -e, [Tensor(e)], [Tensor(-e)]).item()
    assert aligned < opposed


def test_sample_contrastive_batch():
    labels = np.array([1, 0, 1, 0, 0, 1, 0, 0])
    rng = np.random.default_rng(2)
    for u in range(len(labels)):
        batch = sample_contrastive_batch(labels, u, rng, m=2, q=2)
        assert batch.anchor == u
        assert u not in batch.positives
        assert len(set(batch.positives)) == 2 and len(set(batch.negatives)) == 2
        assert all(labels[i] == labels[u] for i in batch.positives)
        assert all(labels[i] != labels[u] for i in batch.negatives)
        if labels[u]:
            assert (batch.label, batch.opposite_label) == ('positive', 'negative')
        else:
            assert (batch.label, batch.opposite_label) == ('negative', 'positive')


def test_sample_contrastive_batch_needs_enough_peers():
    rng = np.random.default_rng(0)
    with pytest.raises(ContractError):
        sample_contrastive_batch([1, 1, 0, 0], 0, rng, m=2, q=1)
    with pytest.raises(ContractError):
        sample_contrastive_batch([1, 1, 1, 0], 0, rng, m=2, q=2)
    with pytest.raises(ContractError):
        sample_contrastive_batch([1, 1, 1, 0], 5, rng)


def test_cel_loss():
    head = CelHead(Tensor([[1.0, -1.0], [0.5, 0.5]]), Tensor([0.25, 0.0]))
    cp = np.array([[0.5, 0.25], [-1.0, 2.0]])
    z = cp @ np.array([1.0, -1.0]) + 0.25
    expected = np.mean([-log_expit(z[0]), -log_expit(-z[1])])
    assert cel_loss(Tensor(cp), np.array([1.0, 0.0]), head).item() == pytest.approx(expected)
    assert cel_loss(Tensor(cp[0]), 1, head).item() == pytest.approx(-log_expit(z[0]))
    with pytest.raises(ShapeError):
        cel_loss(Tensor(cp), np.array([1.0]), head)


def test_predictions():
    rng = np.random.default_rng(3)
    event = init_event(4, rng, tasks=('mortality',))
    cp = rng.normal(size=(5, 4))
    ce_pos = embed_event('mortality', 'positive', event)[1].data
    assert np.allclose(predict_cl(cp, 'mortality', event), expit(cp @ ce_pos))
    assert predict_cl(cp[0], 'mortality', event) == pytest.approx(expit(cp[0] @ ce_pos))

    head = CelHead.init(4, rng)
    proba = predict_cel(cp, head)
    logits = cp @ head.W_c.data.T + head.B_c.data
    assert proba.shape == (5,)
    assert np.allclose(proba, expit(logits[:, 0]))


class ContrastiveLossTest(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(4)
        self.rng = rng
        self.cp_u, self.ce_pos, self.ce_neg = rng.normal(size=(3, 6))
        self.same = rng.normal(size=(4, 6))
        self.other = rng.normal(size=(3, 6))

    def loss(self, same, other, a=0.8, b=0.2):
        return cl_loss(Tensor(self.cp_u), self.ce_pos, self.ce_neg,
                       Tensor(same), Tensor(other), a=a, b=b).item()

    def test_peer_order_does_not_matter(self):
        base = self.loss(self.same, self.other)
        for _ in range(5):
            same = self.same[self.rng.permutation(4)]
            other = self.other[self.rng.permutation(3)]
            self.assertAlmostEqual(self.loss(same, other), base, places=12)

    def test_peers_are_ignored_without_their_weight(self):
        base = self.loss(self.same, self.other, a=1.0, b=0.0)
        shifted = self.loss(self.same * 3.0 - 1.0, self.other[::-1] + 2.0, a=1.0, b=0.0)
        self.assertEqual(shifted, base)
        expected = -log_expit(self.ce_pos @ self.cp_u) - log_expit(-(self.ce_neg @ self.cp_u))
        self.assertAlmostEqual(base, expected, places=12)


def test_peers_are_sampled_uniformly():
    labels = np.array([1] * 11 + [0] * 5)
    rng = np.random.default_rng(5)
    counts = np.zeros(len(labels))
    n_draws = 10 ** 4
    for _ in range(n_draws):
        batch = sample_contrastive_batch(labels, 0, rng, m=2, q=1)
        counts[list(batch.positives)] += 1
    frequencies = counts[1:11] / n_draws
    assert np.all(np.abs(frequencies - 0.2) <= 0.02)
    assert counts[0] == 0
