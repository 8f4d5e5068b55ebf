# -*- coding: utf-8 -*-
from __future__ import absolute_import
import itertools
import unittest
from fractions import Fraction

import numpy as np
import pytest

from ehrcontrast.exceptions import ShapeError, UndefinedMetricError
from ehrcontrast.metrics import auprc, auroc, mean_std, roc_pr_points, silhouette


ALPHABET = (0.1, 0.5, 0.9)


def auroc_oracle(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(Fraction(1) if p > n else Fraction(1, 2) if p == n else Fraction(0)
               for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def auprc_oracle(scores, labels):
    n_pos = sum(labels)
    total, tp, seen = Fraction(0), 0, 0
    for threshold in sorted(set(scores), reverse=True):
        block = [y for s, y in zip(scores, labels) if s == threshold]
        gained = sum(block)
        tp += gained
        seen += len(block)
        total += Fraction(gained, n_pos) * Fraction(tp, seen)
    return total


def labelled_multisets(max_len=8):
    """
    Every multiset of (score, label) pairs over ALPHABET with 1..max_len
    elements, as (scores, labels) lists in a canonical order.
    """
    for counts in itertools.product(range(max_len + 1), repeat=2 * len(ALPHABET)):
        if not 1 <= sum(counts) <= max_len:
            continue
        scores, labels = [], []
        for k, count in enumerate(counts):
            scores += [ALPHABET[k // 2]] * count
            labels += [k % 2] * count
        yield scores, labels


class OracleTest(unittest.TestCase):
    """ Metrics against exact pair-counting / tie-block definitions. """

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def cases(self):
        for scores, labels in labelled_multisets():
            perm = self.rng.permutation(len(scores))
            yield [scores[i] for i in perm], [labels[i] for i in perm]

    def test_auroc_is_exact(self):
        checked = 0
        for scores, labels in self.cases():
            if 0 < sum(labels) < len(labels):
                self.assertEqual(auroc(scores, labels), float(auroc_oracle(scores, labels)))
                checked += 1
        self.assertGreater(checked, 2000)

    def test_auprc_is_exact(self):
        checked = 0
        for scores, labels in self.cases():
            if sum(labels):
                self.assertEqual(auprc(scores, labels), float(auprc_oracle(scores, labels)))
                checked += 1
        self.assertGreater(checked, 2000)

    def test_known_values(self):
        self.assertEqual(auprc([0.1, 0.1, 0.5], [0, 1, 1]), 0.8333333333333334)
        self.assertEqual(auroc([0.1, 0.1, 0.5], [0, 1, 1]), 0.75)


@pytest.mark.slow
def test_every_ordering_matches_oracles():
    for n in range(1, 9):
        oracle = {}
        for scores in itertools.product(ALPHABET, repeat=n):
            for labels in itertools.product((0, 1), repeat=n):
                n_pos = sum(labels)
                if n_pos == 0:
                    continue
                key = tuple(sorted(zip(scores, labels)))
                if key not in oracle:
                    roc = float(auroc_oracle(scores, labels)) if n_pos < n else None
                    oracle[key] = (roc, float(auprc_oracle(scores, labels)))
                roc, pr = oracle[key]
                assert auprc(scores, labels) == pr
                if roc is not None:
                    assert auroc(scores, labels) == roc


def test_metrics_ignore_order():
    rng = np.random.default_rng(2)
    scores = rng.random(50)
    labels = rng.integers(0, 2, 50)
    perm = rng.permutation(50)
    assert auroc(scores, labels) == auroc(scores[perm], labels[perm])
    assert auprc(scores, labels) == auprc(scores[perm], labels[perm])


def test_metrics_ignore_monotone_transforms():
    rng = np.random.default_rng(3)
    scores = rng.normal(size=80)
    labels = (rng.random(80) < 0.3).astype(int)
    for transformed in (np.exp(scores), 3.0 * scores + 1.0, np.arctan(scores)):
        assert auroc(transformed, labels) == auroc(scores, labels)
        assert auprc(transformed, labels) == auprc(scores, labels)


def test_auroc_of_reversed_scores():
    rng = np.random.default_rng(4)
    for _ in range(20):
        scores = rng.choice(ALPHABET, size=30)
        labels = np.r_[[0, 1], rng.integers(0, 2, 28)]
        assert auroc(scores, labels) + auroc(-scores, labels) == pytest.approx(1.0, abs=1e-15)


def test_undefined_metrics():
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        auprc([0.1, 0.2], [0, 0])
    with pytest.raises(UndefinedMetricError):
        silhouette(np.zeros((3, 2)), [0, 0, 1])
    with pytest.raises(UndefinedMetricError):
        roc_pr_points([0.1, 0.2], [0, 0])


def test_bad_inputs():
    with pytest.raises(ShapeError):
        auroc([0.1, 0.2, 0.3], [0, 1])
    with pytest.raises(ValueError):
        auroc([0.1, 0.2], [0, 2])
    with pytest.raises(ShapeError):
        silhouette(np.zeros((3, 2)), [0, 1])


class SilhouetteTest(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.rng = rng
        self.separated = np.vstack([rng.normal(0, 0.1, (10, 3)), rng.normal(5, 0.1, (10, 3))])
        self.labels = np.array([0] * 10 + [1] * 10)

    def test_separated_clusters(self):
        self.assertGreater(silhouette(self.separated, self.labels), 0.9)

    def test_mixed_points(self):
        mixed = self.rng.normal(size=(40, 3))
        self.assertLess(abs(silhouette(mixed, [0, 1] * 20)), 0.2)

    def test_shuffled_labels_lose_the_structure(self):
        real = silhouette(self.separated, self.labels)
        shuffled = [silhouette(self.separated, self.rng.permutation(self.labels))
                    for _ in range(20)]
        self.assertTrue(all(s < real for s in shuffled))
        self.assertLess(abs(np.mean(shuffled)), 0.25)


def test_roc_pr_points():
    points = roc_pr_points([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    roc, pr = points['roc'], points['pr']
    assert roc.shape[1] == 3 and pr.shape[1] == 3
    assert roc[0, :2].tolist() == [0.0, 0.0]
    assert roc[-1, :2].tolist() == [1.0, 1.0]
    assert pr[-1].tolist() == [0.0, 1.0, np.inf]


def test_mean_std():
    assert mean_std([]) == (None, None)
    assert mean_std([0.5]) == (0.5, 0.0)
    mean, std = mean_std([1.0, 2.0, 4.0])
    assert mean == pytest.approx(7 / 3)
    assert std == pytest.approx(np.std([1.0, 2.0, 4.0], ddof=1))
