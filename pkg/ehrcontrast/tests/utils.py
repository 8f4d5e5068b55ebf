# -*- coding: utf-8 -*-
from __future__ import absolute_import
import numpy as np

from ehrcontrast.cohort import BinnedSequence, Cohort, Outcome, PatientRecord, StaticRaw
from ehrcontrast.schema import N_FEATURES, NEGATIVE, POSITIVE, STATIC_DIM


def make_record(pid='p1', admit=0.0, end=48.0, timeline=(), outcomes=None,
                age=60.0, gender='male', race='white', comorbidities=None):
    if timeline:
        times, feats, values = zip(*timeline)
    else:
        times, feats, values = (), (), ()
    static = StaticRaw(age, gender, race, tuple(comorbidities or (0,) * 12))
    if outcomes is None:
        outcomes = {'mortality': Outcome(NEGATIVE)}
    return PatientRecord(pid, admit, end, static, times, feats, values, outcomes)


def positive(event_time):
    return Outcome(POSITIVE, event_time)


def negative():
    return Outcome(NEGATIVE)


def labelled_cohort(n=100, n_positive=30, task='mortality'):
    """ ``n`` empty-timeline patients, the first ``n_positive`` positive. """
    records = []
    for i in range(n):
        outcome = positive(24.0) if i < n_positive else negative()
        records.append(make_record('p%03d' % i, outcomes={task: outcome}))
    return Cohort(records)


def random_sequences(n, n_steps=4, seed=0, n_positive=None, task='mortality', signal=1.5):
    """
    Binned sequences with random values; positives have feature 2 shifted
    by ``signal``.
    """
    rng = np.random.default_rng(seed)
    if n_positive is None:
        n_positive = n // 2
    sequences = []
    for i in range(n):
        label = int(i < n_positive)
        matrix = rng.normal(size=(n_steps, N_FEATURES))
        if label:
            matrix[:, 2] += signal
        static = np.zeros(STATIC_DIM)
        static[0] = rng.normal()
        static[1] = 1.0
        static[4] = 1.0
        sequences.append(BinnedSequence('s%03d' % i, matrix, static, {task: label},
                                        endpoint=float(n_steps * 6)))
    return sequences
