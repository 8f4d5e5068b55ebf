# -*- coding: utf-8 -*-
"""
Synthetic cohort generator.

Every patient gets a latent severity ``s ~ Normal(0, 1)``. Severity drives
both the outcomes (``P(positive) = sigmoid(slope * s + offset)``, with a
per-task offset calibrated so that the realized positive rate matches the
target) and the trajectories of a few "signal" features.

Each patient has one deterioration onset, drawn within ``event_window``
(a fraction of the stay); positive outcomes of every task happen at the
onset. Signal features start drifting ``signal_lead`` hours before the
onset, ramping linearly up to ``effect_size * s`` at the onset and
staying there afterwards. Negative patients drift the same way around
an onset that never turns into an event. The signal features ranked by
:func:`planted_truth` are the ground truth for importance recovery
checks.

    >>> config = GeneratorConfig(n_patients=50, seed=1)
    >>> cohort = generate_cohort(config)
    >>> len(cohort)
    50
    >>> cohort.positive_rate('mortality')
    0.24
    >>> planted_truth(config)
    [2, 12, 20]
"""
from __future__ import absolute_import
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
from scipy.special import logit

from ehrcontrast.cohort import Cohort, Outcome, PatientRecord, StaticRaw
from ehrcontrast.exceptions import ContractError
from ehrcontrast.schema import (
    COMORBIDITIES,
    GENDERS,
    N_FEATURES,
    NEGATIVE,
    POSITIVE,
    RACES,
    TASKS,
    VITAL_NAMES,
    check_task,
)


logger = logging.getLogger(__name__)

# pulse oximetry and two labs
DEFAULT_SIGNAL_FEATURES = ((2, -2.0), (12, 1.5), (20, 1.0))

VITAL_BASELINES = (
    (85.0, 12.0),    # heart_rate
    (18.0, 4.0),     # respiration_rate
    (96.0, 2.0),     # pulse_oximetry
    (125.0, 18.0),   # systolic_bp
    (75.0, 10.0),    # diastolic_bp
    (37.0, 0.6),     # temperature
    (170.0, 10.0),   # height
    (80.0, 15.0),    # weight
)
RACE_WEIGHTS = (0.2, 0.55, 0.08, 0.12, 0.05)


def _default_rates():
    return {task: 0.25 for task in TASKS}


def _default_slopes():
    return {task: 3.0 for task in TASKS}


@dataclass
class GeneratorConfig:
    """
    Parameters of a synthetic cohort. Times are in hours; stay lengths
    are log-normal with ``stay_log_mean`` / ``stay_log_std`` clipped to
    ``[min_stay, max_stay]``. ``feature_missingness`` overrides
    ``missingness_rate`` for individual feature ids. ``signal_lead`` is
    how many hours before the onset the signal features start to drift.
    """
    n_patients: int = 2000
    positive_rates: Dict[str, float] = field(default_factory=_default_rates)
    severity_slopes: Dict[str, float] = field(default_factory=_default_slopes)
    signal_features: Tuple[Tuple[int, float], ...] = DEFAULT_SIGNAL_FEATURES
    noise_std: float = 1.0
    missingness_rate: float = 0.1
    feature_missingness: Dict[int, float] = field(default_factory=dict)
    stay_log_mean: float = math.log(120.0)
    stay_log_std: float = 0.4
    min_stay: float = 12.0
    max_stay: float = 720.0
    event_window: Tuple[float, float] = (0.6, 1.0)
    vitals_interval: float = 4.0
    labs_interval: float = 12.0
    signal_lead: float = 48.0
    outlier_rate: float = 0.002
    comorbidity_rate: float = 0.15
    seed: int = 0

    def validate(self):
        if self.n_patients < 0:
            raise ContractError("n_patients must be >= 0, got %r" % self.n_patients)
        for task, rate in self.positive_rates.items():
            check_task(task)
            if not 0 < rate < 1:
                raise ContractError("positive rate of %s must be in (0, 1), got %r" % (task, rate))
        for task, slope in self.severity_slopes.items():
            check_task(task)
            if not math.isfinite(slope):
                raise ContractError("severity slope of %s must be finite" % task)
        for feature_id, effect in self.signal_features:
            if not 0 <= feature_id < N_FEATURES:
                raise ContractError("signal feature id %r out of range" % feature_id)
            if not math.isfinite(effect):
                raise ContractError("effect size of feature %d must be finite" % feature_id)
        if not 0 <= self.missingness_rate < 1:
            raise ContractError("missingness_rate must be in [0, 1), got %r" % self.missingness_rate)
        for feature_id, rate in self.feature_missingness.items():
            if not 0 <= feature_id < N_FEATURES or not 0 <= rate <= 1:
                raise ContractError("bad missingness override %r: %r" % (feature_id, rate))
        if self.noise_std < 0:
            raise ContractError("noise_std must be >= 0")
        if not 0 <= self.outlier_rate < 1 or not 0 <= self.comorbidity_rate <= 1:
            raise ContractError("outlier and comorbidity rates must be probabilities")
        if self.vitals_interval <= 0 or self.labs_interval <= 0:
            raise ContractError("measurement intervals must be positive")
        if not self.signal_lead > 0:
            raise ContractError("signal_lead must be positive, got %r" % self.signal_lead)
        if not 0 < self.min_stay <= self.max_stay:
            raise ContractError("stay bounds must satisfy 0 < min_stay <= max_stay")
        low, high = self.event_window
        if not 0 <= low <= high <= 1:
            raise ContractError("event_window must be a sub-range of [0, 1]")
        return self


def planted_truth(config):
    """
    Signal feature ids ranked by ``|effect_size|`` (descending);
    ties go to the smaller feature id.

    >>> planted_truth(GeneratorConfig(signal_features=((10, 0.5), (3, 2.0))))
    [3, 10]
    >>> planted_truth(GeneratorConfig(signal_features=((7, -1.0), (4, 1.0))))
    [4, 7]
    """
    ranked = sorted(config.signal_features, key=lambda fe: (-abs(fe[1]), fe[0]))
    return [int(feature_id) for feature_id, _ in ranked]


def _outcome_thresholds(severity, slope, uniforms):
    # uniform < sigmoid(slope * s + offset)  <=>  threshold < offset
    with np.errstate(divide='ignore'):
        return logit(uniforms) - slope * severity


def _calibrate_offset(thresholds, rate, task, max_iter=200):
    """
    Bisect for an offset at which exactly ``round(rate * n)`` patients
    have ``uniform < sigmoid(slope * s + offset)``, i.e. a threshold
    below the offset. The positive count is non-decreasing in the offset.

    >>> _calibrate_offset(np.array([0.0, 1.0, 2.0, 3.0]), 0.5, 'mortality')
    1.5
    """
    n = len(thresholds)
    k = int(round(rate * n))
    if k == 0 or k == n:
        raise ContractError(
            "can't realize a %s positive rate of %r with %d patients" % (task, rate, n)
        )
    finite = thresholds[np.isfinite(thresholds)]
    if not len(finite):
        raise ContractError("no finite %s outcome thresholds" % task)
    lo, hi = finite.min() - 1.0, finite.max() + 1.0
    for _ in range(max_iter):
        offset = (lo + hi) / 2.0
        count = int((thresholds < offset).sum())
        if count == k:
            return float(offset)
        if count < k:
            lo = offset
        else:
            hi = offset
    raise ContractError("can't separate %s outcomes at rate %r: tied thresholds" % (task, rate))


def _feature_baselines(rng):
    means = np.empty(N_FEATURES)
    scales = np.empty(N_FEATURES)
    n_vitals = len(VITAL_NAMES)
    means[:n_vitals] = [m for m, _ in VITAL_BASELINES]
    scales[:n_vitals] = [s for _, s in VITAL_BASELINES]
    means[n_vitals:] = rng.uniform(1.0, 100.0, size=N_FEATURES - n_vitals)
    scales[n_vitals:] = means[n_vitals:] * rng.uniform(0.1, 0.3, size=N_FEATURES - n_vitals)
    return means, scales


def signal_ramp(times, onset, lead):
    """
    Fraction of the full signal present at ``times``: 0 until ``lead``
    hours before ``onset``, then linear up to 1 at the onset and after.

    >>> signal_ramp(np.array([0.0, 60.0, 84.0, 96.0, 120.0]), 96.0, 48.0).tolist()
    [0.0, 0.25, 0.75, 1.0, 1.0]
    """
    return np.clip(1.0 - (onset - np.asarray(times, dtype=np.float64)) / lead, 0.0, 1.0)


def _measurements(config, means, scales, effects, missing, stay, onset, severity, rng):
    n_vitals = len(VITAL_NAMES)
    vital_times = np.arange(0.0, stay, config.vitals_interval)
    lab_times = np.arange(0.0, stay, config.labs_interval)
    times = np.concatenate([
        np.repeat(vital_times, n_vitals),
        np.repeat(lab_times, N_FEATURES - n_vitals),
    ])
    feats = np.concatenate([
        np.tile(np.arange(n_vitals), len(vital_times)),
        np.tile(np.arange(n_vitals, N_FEATURES), len(lab_times)),
    ])
    drift = effects[feats] * severity * signal_ramp(times, onset, config.signal_lead)
    z = drift + config.noise_std * rng.standard_normal(len(times))
    values = means[feats] + scales[feats] * z
    outliers = rng.random(len(times)) < config.outlier_rate
    values[outliers] *= 10.0
    keep = rng.random(len(times)) >= missing[feats]
    times, feats, values = times[keep], feats[keep], np.round(values[keep], 4)
    order = np.lexsort((feats, times))
    return times[order], feats[order], values[order]


def generate_cohort(config, rng=None):
    """
    Generate a synthetic :class:`~.Cohort`. ``rng`` defaults to a
    generator seeded with ``config.seed``; the result is a deterministic
    function of the config and the generator state.
    """
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = config.n_patients

    means, scales = _feature_baselines(rng)
    effects = np.zeros(N_FEATURES)
    for feature_id, effect in config.signal_features:
        effects[feature_id] = effect
    missing = np.full(N_FEATURES, config.missingness_rate)
    for feature_id, rate in config.feature_missingness.items():
        missing[feature_id] = rate

    severity = rng.standard_normal(n)
    stays = np.round(np.clip(
        rng.lognormal(config.stay_log_mean, config.stay_log_std, size=n),
        config.min_stay, config.max_stay,
    ), 2)

    low, high = config.event_window
    onsets = np.round(rng.uniform(low, high, size=n) * stays, 2)

    positives = {}
    for task in TASKS:
        uniforms = rng.random(n)
        rate = config.positive_rates.get(task)
        if rate is None or n == 0:
            positives[task] = np.zeros(n, dtype=bool)
        else:
            slope = config.severity_slopes.get(task, 3.0)
            thresholds = _outcome_thresholds(severity, slope, uniforms)
            offset = _calibrate_offset(thresholds, rate, task)
            positives[task] = thresholds < offset

    ages = np.round(np.clip(rng.normal(62.0, 16.0, size=n), 18.0, 100.0), 1)
    genders = rng.integers(len(GENDERS), size=n)
    races = rng.choice(len(RACES), size=n, p=RACE_WEIGHTS)
    comorbidities = rng.random((n, len(COMORBIDITIES))) < config.comorbidity_rate

    records = []
    for i in range(n):
        stay = float(stays[i])
        times, feats, values = _measurements(
            config, means, scales, effects, missing, stay, float(onsets[i]), severity[i], rng
        )
        outcomes = {}
        for task in TASKS:
            if task not in config.positive_rates:
                continue
            if positives[task][i]:
                outcomes[task] = Outcome(POSITIVE, float(onsets[i]))
            else:
                outcomes[task] = Outcome(NEGATIVE)
        static = StaticRaw(
            age=float(ages[i]),
            gender=GENDERS[genders[i]],
            race=RACES[races[i]],
            comorbidities=tuple(int(c) for c in comorbidities[i]),
        )
        records.append(PatientRecord(
            'p%05d' % i, 0.0, stay, static, times, feats, values, outcomes,
        ))

    cohort = Cohort(records)
    if n:
        logger.info("generated %d patients; positive rates: %s", n, ", ".join(
            "%s=%.3f" % (task, cohort.positive_rate(task)) for task in config.positive_rates
        ))
    return cohort
