# -*- coding: utf-8 -*-
"""
Feature layout shared by cohort files, binned model inputs and
importance exports.

Timeline features 0-7 are vitals, 8-62 are labs::

    >>> len(DEFAULT_FEATURE_NAMES)
    63
    >>> DEFAULT_FEATURE_NAMES[2]
    'pulse_oximetry'
    >>> STATIC_DIM
    20
"""
from __future__ import absolute_import
import json

from ehrcontrast.exceptions import ContractError


TASKS = ('mortality', 'intubation', 'icu_transfer')

VITAL_NAMES = (
    'heart_rate',
    'respiration_rate',
    'pulse_oximetry',
    'systolic_bp',
    'diastolic_bp',
    'temperature',
    'height',
    'weight',
)
N_LABS = 55
LAB_NAMES = tuple('lab_%02d' % i for i in range(N_LABS))
DEFAULT_FEATURE_NAMES = VITAL_NAMES + LAB_NAMES
N_FEATURES = len(DEFAULT_FEATURE_NAMES)

GENDERS = ('male', 'female')
RACES = ('african_american', 'white', 'asian', 'other', 'unknown')
COMORBIDITIES = (
    'atrial_fibrillation',
    'asthma',
    'coronary_artery_disease',
    'cancer',
    'chronic_kidney_disease',
    'copd',
    'diabetes_mellitus',
    'heart_failure',
    'hypertension',
    'stroke',
    'alcoholism',
    'liver_disease',
)
STATIC_DIM = 1 + len(GENDERS) + len(RACES) + len(COMORBIDITIES)

BIN_HOURS = 6.0
WINDOWS = (24, 48)

# positive / negative event nodes are the two one-hot outcome vectors
POSITIVE, NEGATIVE = 'positive', 'negative'
LABELS = (POSITIVE, NEGATIVE)


def n_bins(window):
    """
    Number of 6-hour bins in a prediction window.

    >>> n_bins(24), n_bins(48)
    (4, 8)
    """
    if window not in WINDOWS:
        raise ContractError("window must be one of %s hours, got %r" % (WINDOWS, window))
    return int(window // BIN_HOURS)


def check_task(task):
    if task not in TASKS:
        raise ContractError("unknown task %r; expected one of %s" % (task, ", ".join(TASKS)))
    return task


def load_feature_schema(path):
    """
    Load a JSON feature schema (``{"0": "heart_rate", ...}``) and return
    a tuple of 63 feature names. Missing indices keep their default names.
    """
    with open(path, 'r', encoding='utf8') as f:
        mapping = json.load(f)
    names = list(DEFAULT_FEATURE_NAMES)
    for key, name in mapping.items():
        idx = int(key)
        if not 0 <= idx < N_FEATURES:
            raise ContractError("feature index %r out of range 0..%d" % (key, N_FEATURES - 1))
        names[idx] = str(name)
    return tuple(names)


def save_feature_schema(path, names=DEFAULT_FEATURE_NAMES):
    if len(names) != N_FEATURES:
        raise ContractError("schema needs %d names, got %d" % (N_FEATURES, len(names)))
    with open(path, 'w', encoding='utf8') as f:
        json.dump({str(i): name for i, name in enumerate(names)}, f, indent=2)
        f.write("\n")
