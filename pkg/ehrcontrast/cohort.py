# -*- coding: utf-8 -*-
"""
:mod:`ehrcontrast.cohort` contains the patient data model and the
preprocessing that turns raw patient records into model inputs:

1. :func:`load_cohort` reads a JSONL cohort file into a :class:`Cohort`
   of :class:`PatientRecord` objects.

2. :func:`compute_clip_bounds` and :func:`compute_norm_stats` estimate
   percentile bounds and z-score statistics on a training fold;
   :func:`normalize` applies them (out-of-range measurements are
   dropped, values are z-scored, age is z-scored as well).

3. Positive patients are aligned at their event time; negative patients
   get a reference endpoint drawn by :func:`sample_negative_endpoint`
   from a Gaussian fitted by :func:`estimate_endpoint_stats`.

4. :func:`bin_timeline` averages measurements into 6-hour bins inside a
   24h or 48h window before the endpoint and attaches the static vector
   produced by :func:`encode_statics`.

:class:`CohortPreprocessor` wraps steps 2-4 into a scikit-learn style
transformer which is fit on training patients only.

Cohort files have one JSON object per line::

    {"id": "p1", "admit": 0.0, "end": 72.0,
     "static": {"age": 64.0, "gender": "male", "race": "white",
                "comorbidities": [0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]},
     "timeline": [[1.5, 2, 94.0], [7.0, 40, 1.3]],
     "outcomes": {"mortality": {"label": "positive", "event_time": 60.0},
                  "intubation": {"label": "negative"}}}

"""
from __future__ import absolute_import
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ehrcontrast.exceptions import (
    CohortParseError,
    CohortValidationError,
    ContractError,
)
from ehrcontrast.schema import (
    BIN_HOURS,
    COMORBIDITIES,
    GENDERS,
    LABELS,
    N_FEATURES,
    NEGATIVE,
    POSITIVE,
    RACES,
    STATIC_DIM,
    TASKS,
    check_task,
    n_bins,
)


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Outcome:
    """ Outcome of one task: a label and, for positives, the event time. """
    label: str
    event_time: Optional[float] = None

    @property
    def positive(self):
        return self.label == POSITIVE


@dataclass(frozen=True)
class StaticRaw:
    """ Raw static features. ``age`` is None when missing. """
    age: Optional[float]
    gender: str
    race: str
    comorbidities: Tuple[int, ...]


class PatientRecord(object):
    """
    A patient: admission/end times (hours), static features,
    a timeline of ``(timestamp, feature_id, value)`` measurements
    and per-task outcomes.

    The timeline is stored as three parallel numpy arrays
    (:attr:`times`, :attr:`features`, :attr:`values`).
    """
    __slots__ = ('patient_id', 'admission_time', 'end_time', 'static',
                 'times', 'features', 'values', 'outcomes')

    def __init__(self, patient_id, admission_time, end_time, static,
                 times, features, values, outcomes):
        self.patient_id = patient_id
        self.admission_time = float(admission_time)
        self.end_time = float(end_time)
        self.static = static
        self.times = np.asarray(times, dtype=np.float64).reshape(-1)
        self.features = np.asarray(features, dtype=np.int64).reshape(-1)
        self.values = np.asarray(values, dtype=np.float64).reshape(-1)
        self.outcomes = dict(outcomes)

    @property
    def stay_length(self):
        return self.end_time - self.admission_time

    @property
    def timeline(self):
        """ Timeline as a list of ``(timestamp, feature_id, value)`` tuples. """
        return [(float(t), int(f), float(v))
                for t, f, v in zip(self.times, self.features, self.values)]

    def label(self, task):
        """ 1 for a positive outcome of ``task``, 0 for a negative one. """
        try:
            return int(self.outcomes[task].positive)
        except KeyError:
            raise ContractError("patient %r has no outcome for task %r" % (self.patient_id, task))

    def with_measurements(self, times, features, values, static=None):
        """ Return a copy with a replaced timeline (and, optionally, statics). """
        return PatientRecord(
            self.patient_id, self.admission_time, self.end_time,
            self.static if static is None else static,
            times, features, values, self.outcomes,
        )

    def __eq__(self, other):
        if not isinstance(other, PatientRecord):
            return NotImplemented
        return (
            self.patient_id == other.patient_id and
            self.admission_time == other.admission_time and
            self.end_time == other.end_time and
            self.static == other.static and
            np.array_equal(self.times, other.times) and
            np.array_equal(self.features, other.features) and
            np.array_equal(self.values, other.values) and
            self.outcomes == other.outcomes
        )

    def __ne__(self, other):
        eq = self.__eq__(other)
        return eq if eq is NotImplemented else not eq

    def __repr__(self):
        return "PatientRecord(id=%r, stay=%.1fh, measurements=%d)" % (
            self.patient_id, self.stay_length, len(self.times))


class Cohort(object):
    """ An ordered, read-only collection of :class:`PatientRecord`. """
    def __init__(self, records=()):
        self.records = tuple(records)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, idx):
        return self.records[idx]

    def __eq__(self, other):
        if not isinstance(other, Cohort):
            return NotImplemented
        return self.records == other.records

    def __repr__(self):
        return "Cohort(%d patients)" % len(self)

    def subset(self, indices):
        return Cohort(self.records[i] for i in indices)

    def for_task(self, task):
        """ Patients that have an outcome recorded for ``task``. """
        return Cohort(r for r in self.records if task in r.outcomes)

    def labels(self, task):
        return np.array([r.label(task) for r in self.records], dtype=np.int64)

    def positive_rate(self, task):
        if not self.records:
            return 0.0
        return float(self.labels(task).mean())


@dataclass
class ClipBounds:
    """
    Per-feature percentile bounds; ``present[k]`` is False for features
    without observations (their values pass through unclipped).
    """
    low: np.ndarray
    high: np.ndarray
    present: np.ndarray
    age_low: Optional[float] = None
    age_high: Optional[float] = None


@dataclass
class NormStats:
    """ Clip bounds plus per-feature z-score statistics. """
    bounds: ClipBounds
    mean: np.ndarray
    std: np.ndarray
    age_mean: float = 0.0
    age_std: float = 0.0


@dataclass(frozen=True)
class EndpointStats:
    """ Gaussian of admission-to-event hours among positive patients. """
    task: str
    mean: float
    std: float


@dataclass
class BinnedSequence:
    """
    Model input of a single patient: ``matrix`` is ``n x 63`` (one row per
    6-hour bin, chronological), ``static`` is the 20-dim static vector.
    """
    patient_id: str
    matrix: np.ndarray
    static: np.ndarray
    labels: Dict[str, int] = field(default_factory=dict)
    endpoint: float = 0.0

    @property
    def n_steps(self):
        return self.matrix.shape[0]


# ===== I/O =====

def _parse_record(obj, lineno):
    if not isinstance(obj, dict):
        raise CohortParseError("expected a JSON object", lineno)
    try:
        pid = str(obj['id'])
        admit = float(obj['admit'])
        end = float(obj['end'])
        st = obj['static']
        static = StaticRaw(
            age=None if st.get('age') is None else float(st['age']),
            gender=str(st['gender']),
            race=str(st['race']),
            comorbidities=tuple(int(c) for c in st['comorbidities']),
        )
        timeline = obj.get('timeline', [])
        times = [float(row[0]) for row in timeline]
        feats = [int(row[1]) for row in timeline]
        values = [float(row[2]) for row in timeline]
        outcomes = {}
        for task, out in obj.get('outcomes', {}).items():
            event_time = out.get('event_time')
            outcomes[str(task)] = Outcome(
                label=str(out['label']),
                event_time=None if event_time is None else float(event_time),
            )
    except (KeyError, TypeError, IndexError, ValueError) as e:
        raise CohortParseError("malformed record (%s: %s)" % (type(e).__name__, e), lineno)

    record = PatientRecord(pid, admit, end, static, times, feats, values, outcomes)
    validate_record(record, lineno)
    return record


def validate_record(record, lineno=None):
    """ Check :class:`PatientRecord` invariants; raise CohortValidationError. """
    def fail(msg):
        raise CohortValidationError(msg, patient_id=record.patient_id, lineno=lineno)

    if not (math.isfinite(record.admission_time) and math.isfinite(record.end_time)):
        fail("admission and end times must be finite")
    if record.end_time < record.admission_time:
        fail("end time %r is before admission %r" % (record.end_time, record.admission_time))
    if len(record.static.comorbidities) != len(COMORBIDITIES):
        fail("expected %d comorbidity flags, got %d" % (
            len(COMORBIDITIES), len(record.static.comorbidities)))
    if any(c not in (0, 1) for c in record.static.comorbidities):
        fail("comorbidity flags must be 0 or 1")
    if len(record.times):
        if record.times.min() < record.admission_time or record.times.max() > record.end_time:
            fail("timestamp outside the admission range [%r, %r]" % (
                record.admission_time, record.end_time))
        if record.features.min() < 0 or record.features.max() >= N_FEATURES:
            fail("feature id outside 0..%d" % (N_FEATURES - 1))
        if not np.isfinite(record.values).all():
            fail("measurement values must be finite")
    for task, outcome in record.outcomes.items():
        if task not in TASKS:
            fail("unknown task %r" % task)
        if outcome.label not in LABELS:
            fail("unknown label %r for task %r" % (outcome.label, task))
        if outcome.positive:
            t = outcome.event_time
            if t is None or not record.admission_time <= t <= record.end_time:
                fail("positive %s outcome needs an event time inside the stay" % task)
    return record


def load_cohort(path):
    """
    Load a JSONL cohort file. Blank lines are ignored. Malformed lines
    raise :class:`~.CohortParseError`, invariant breaches raise
    :class:`~.CohortValidationError`; both name the line number.
    """
    records = []
    with open(path, 'r', encoding='utf8') as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except ValueError as e:
                raise CohortParseError("invalid JSON: %s" % e, lineno)
            records.append(_parse_record(obj, lineno))
    logger.debug("loaded %d patients from %s", len(records), path)
    return Cohort(records)


def record_to_json(record):
    outcomes = {}
    for task, out in record.outcomes.items():
        dct = {'label': out.label}
        if out.event_time is not None:
            dct['event_time'] = out.event_time
        outcomes[task] = dct
    return {
        'id': record.patient_id,
        'admit': record.admission_time,
        'end': record.end_time,
        'static': {
            'age': record.static.age,
            'gender': record.static.gender,
            'race': record.static.race,
            'comorbidities': list(record.static.comorbidities),
        },
        'timeline': [list(row) for row in record.timeline],
        'outcomes': outcomes,
    }


def save_cohort(cohort, path):
    """ Write a cohort as JSONL; :func:`load_cohort` reads it back unchanged. """
    with open(path, 'w', encoding='utf8') as f:
        for record in cohort:
            f.write(json.dumps(record_to_json(record), separators=(',', ':')))
            f.write("\n")


# ===== preprocessing statistics =====

def _nearest_rank(sorted_values, percentile):
    n = len(sorted_values)
    rank = max(int(math.ceil(percentile / 100.0 * n)), 1)
    return float(sorted_values[min(rank, n) - 1])


def _concat_timelines(cohort):
    records = list(cohort)
    if not records:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    feats = np.concatenate([r.features for r in records])
    values = np.concatenate([r.values for r in records])
    return feats, values


def compute_clip_bounds(cohort, low=0.5, high=99.5):
    """
    Nearest-rank ``low``/``high`` percentiles of every timeline feature
    and of age, computed over all measurements in ``cohort`` (a training
    fold).
    """
    if not (0 <= low < high <= 100):
        raise ContractError("percentiles must satisfy 0 <= low < high <= 100, got %r, %r" % (low, high))
    feats, values = _concat_timelines(cohort)
    lo = np.zeros(N_FEATURES)
    hi = np.zeros(N_FEATURES)
    present = np.zeros(N_FEATURES, dtype=bool)
    order = np.lexsort((values, feats))
    feats, values = feats[order], values[order]
    starts = np.searchsorted(feats, np.arange(N_FEATURES), side='left')
    ends = np.searchsorted(feats, np.arange(N_FEATURES), side='right')
    for k in range(N_FEATURES):
        column = values[starts[k]:ends[k]]
        if len(column) == 0:
            continue
        present[k] = True
        lo[k] = _nearest_rank(column, low)
        hi[k] = _nearest_rank(column, high)

    ages = np.sort(np.array([r.static.age for r in cohort if r.static.age is not None]), kind='stable')
    age_low = age_high = None
    if len(ages):
        age_low, age_high = _nearest_rank(ages, low), _nearest_rank(ages, high)
    return ClipBounds(low=lo, high=hi, present=present, age_low=age_low, age_high=age_high)


def _in_bounds(feats, values, bounds):
    keep = ~bounds.present[feats] | (
        (values >= bounds.low[feats]) & (values <= bounds.high[feats])
    )
    return keep


def _age_in_bounds(age, bounds):
    if age is None:
        return False
    if bounds.age_low is None:
        return True
    return bounds.age_low <= age <= bounds.age_high


def compute_norm_stats(cohort, bounds):
    """
    Per-feature mean and standard deviation of in-bounds measurements of
    ``cohort``, plus the same for age.

    The deviation is the population one (divided by the count, not the
    count minus one), so measurements 1, 2 and 3 normalize to -1.2247,
    0 and 1.2247.
    """
    feats, values = _concat_timelines(cohort)
    keep = _in_bounds(feats, values, bounds)
    feats, values = feats[keep], values[keep]
    counts = np.bincount(feats, minlength=N_FEATURES).astype(np.float64)
    sums = np.bincount(feats, weights=values, minlength=N_FEATURES)
    with np.errstate(invalid='ignore', divide='ignore'):
        mean = np.where(counts > 0, sums / counts, 0.0)
    sq = np.bincount(feats, weights=(values - mean[feats]) ** 2, minlength=N_FEATURES)
    with np.errstate(invalid='ignore', divide='ignore'):
        std = np.where(counts > 0, np.sqrt(sq / counts), 0.0)

    ages = np.array([r.static.age for r in cohort if _age_in_bounds(r.static.age, bounds)])
    age_mean = float(ages.mean()) if len(ages) else 0.0
    age_std = float(ages.std()) if len(ages) else 0.0
    return NormStats(bounds=bounds, mean=mean, std=std, age_mean=age_mean, age_std=age_std)


def _zscore(values, mean, std):
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, (values - mean) / safe, 0.0)


def normalize_record(record, stats):
    keep = _in_bounds(record.features, record.values, stats.bounds)
    feats = record.features[keep]
    values = _zscore(record.values[keep], stats.mean[feats], stats.std[feats])
    age = record.static.age
    if _age_in_bounds(age, stats.bounds):
        age = float(_zscore(np.array(age), stats.age_mean, stats.age_std))
    else:
        age = None
    static = StaticRaw(age, record.static.gender, record.static.race, record.static.comorbidities)
    return record.with_measurements(record.times[keep], feats, values, static=static)


def normalize(cohort, stats):
    """
    Drop measurements outside the clip bounds and z-score the remaining
    values and the age: ``(value - mean) / std``, or 0 when ``std == 0``.
    Dropped and missing values end up as zeros in binned inputs.
    """
    records = [normalize_record(r, stats) for r in cohort]
    dropped = sum(len(r.values) for r in cohort) - sum(len(r.values) for r in records)
    if dropped:
        logger.debug("dropped %d out-of-range measurements", dropped)
    return Cohort(records)


def encode_statics(record):
    """
    Static vector ``[age_z | gender(2) | race(5) | comorbidities(12)]``.
    ``record`` is expected to be normalized, so its age is a z-score;
    a missing age encodes as 0.
    """
    st = record.static
    if st.gender not in GENDERS:
        raise CohortValidationError("unknown gender %r" % st.gender, patient_id=record.patient_id)
    if st.race not in RACES:
        raise CohortValidationError("unknown race %r" % st.race, patient_id=record.patient_id)
    vec = np.zeros(STATIC_DIM)
    vec[0] = 0.0 if st.age is None else st.age
    vec[1 + GENDERS.index(st.gender)] = 1.0
    vec[1 + len(GENDERS) + RACES.index(st.race)] = 1.0
    vec[1 + len(GENDERS) + len(RACES):] = st.comorbidities
    return vec


# ===== endpoints and binning =====

def estimate_endpoint_stats(cohort, task):
    """
    Sample mean and standard deviation of admission-to-event hours
    among positive patients of ``task``.
    """
    check_task(task)
    elapsed = np.array([
        r.outcomes[task].event_time - r.admission_time
        for r in cohort
        if task in r.outcomes and r.outcomes[task].positive
    ])
    if len(elapsed) < 2:
        raise ContractError(
            "need at least 2 positive %s patients to estimate endpoint stats, got %d" % (task, len(elapsed))
        )
    return EndpointStats(task=task, mean=float(elapsed.mean()), std=float(elapsed.std(ddof=1)))


def is_short_stay(record, window):
    return record.stay_length < window


def sample_negative_endpoint(stats, record, rng, window=24):
    """
    Draw a reference endpoint (hours) for a patient without the event:
    elapsed hours ~ Normal(stats.mean, stats.std), clamped to
    ``[window, stay length]``. Stays shorter than the window end at
    ``end_time``; their bins before admission stay empty.
    """
    outcome = record.outcomes.get(stats.task)
    if outcome is not None and outcome.positive:
        raise ContractError("patient %r is positive for %s" % (record.patient_id, stats.task))
    elapsed = float(rng.normal(stats.mean, stats.std))
    stay = record.stay_length
    if stay < window:
        logger.debug("patient %r: short stay (%.1fh < %dh window)", record.patient_id, stay, window)
        elapsed = stay
    else:
        elapsed = min(max(elapsed, float(window)), stay)
    return record.admission_time + elapsed


def bin_timeline(record, window, endpoint):
    """
    Average measurements into ``window / 6`` chronological bins covering
    ``[endpoint - window, endpoint)``. Bins without measurements of a
    feature hold 0. The result doesn't depend on timeline order.
    """
    n = n_bins(window)
    if endpoint < record.admission_time or endpoint > record.end_time:
        raise ContractError("endpoint %r outside the stay of patient %r" % (endpoint, record.patient_id))
    start = endpoint - window
    mask = (record.times >= start) & (record.times < endpoint)
    bins = np.minimum(((record.times[mask] - start) // BIN_HOURS).astype(np.int64), n - 1)
    feats = record.features[mask]
    values = record.values[mask]
    # canonical order makes the float sums independent of input order
    order = np.lexsort((values, feats, bins))
    bins, feats, values = bins[order], feats[order], values[order]

    sums = np.zeros((n, N_FEATURES))
    counts = np.zeros((n, N_FEATURES))
    np.add.at(sums, (bins, feats), values)
    np.add.at(counts, (bins, feats), 1.0)
    matrix = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)

    labels = {task: int(out.positive) for task, out in record.outcomes.items()}
    return BinnedSequence(
        patient_id=record.patient_id,
        matrix=matrix,
        static=encode_statics(record),
        labels=labels,
        endpoint=float(endpoint),
    )


def restrict_positives(cohort, task, target_rate, rng):
    """
    Randomly remove positive patients of ``task`` so that the positive
    fraction is within one patient of ``target_rate``. Negatives and the
    order of retained patients are unchanged.
    """
    check_task(task)
    labels = cohort.labels(task)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    current = n_pos / float(len(labels)) if len(labels) else 0.0
    if not 0.05 <= target_rate < 1.0:
        raise ContractError("target positive rate must be in [0.05, 1), got %r" % target_rate)
    if target_rate > current + 1e-12:
        raise ContractError("target rate %.4f is above the current %s rate %.4f" % (
            target_rate, task, current))
    keep_pos = min(int(round(target_rate * n_neg / (1.0 - target_rate))), n_pos)
    if keep_pos >= n_pos:
        return cohort
    positives = np.flatnonzero(labels == 1)
    kept = set(rng.choice(positives, size=keep_pos, replace=False).tolist())
    indices = [i for i in range(len(labels)) if labels[i] == 0 or i in kept]
    logger.debug("restricted %s positives %d -> %d", task, n_pos, keep_pos)
    return cohort.subset(indices)


class CohortPreprocessor(BaseEstimator, TransformerMixin):
    """
    Turns patient records into :class:`BinnedSequence` inputs for one
    ``task`` and ``window``.

    :meth:`fit` estimates clip bounds, z-score statistics and endpoint
    statistics on training patients; :meth:`transform` applies them
    without updating them. Positives are aligned at their event time,
    negatives at an endpoint drawn from ``rng`` (or from a generator
    seeded with ``random_state``).
    """
    def __init__(self, task, window=24, clip_low=0.5, clip_high=99.5,
                 random_state=0):
        self.task = task
        self.window = window
        self.clip_low = clip_low
        self.clip_high = clip_high
        self.random_state = random_state

    def fit(self, records, y=None):
        cohort = records if isinstance(records, Cohort) else Cohort(records)
        check_task(self.task)
        n_bins(self.window)
        self.bounds_ = compute_clip_bounds(cohort, self.clip_low, self.clip_high)
        self.stats_ = compute_norm_stats(cohort, self.bounds_)
        self.endpoint_stats_ = estimate_endpoint_stats(cohort, self.task)
        return self

    def transform(self, records, rng=None):
        if rng is None:
            rng = np.random.default_rng(self.random_state)
        sequences = []
        for record in records:
            outcome = record.outcomes[self.task]
            if outcome.positive:
                endpoint = outcome.event_time
            else:
                endpoint = sample_negative_endpoint(self.endpoint_stats_, record, rng, self.window)
            normalized = normalize_record(record, self.stats_)
            sequences.append(bin_timeline(normalized, self.window, endpoint))
        return sequences
