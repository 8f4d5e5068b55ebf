# -*- coding: utf-8 -*-
from __future__ import absolute_import
import unittest

import numpy as np
import pytest

from ehrcontrast.cohort import (
    Cohort,
    CohortPreprocessor,
    EndpointStats,
    bin_timeline,
    compute_clip_bounds,
    compute_norm_stats,
    encode_statics,
    estimate_endpoint_stats,
    load_cohort,
    normalize,
    restrict_positives,
    sample_negative_endpoint,
    save_cohort,
)
from ehrcontrast.exceptions import (
    CohortParseError,
    CohortValidationError,
    ContractError,
)
from ehrcontrast.tests.utils import labelled_cohort, make_record, negative, positive


def _write(tmpdir, text):
    path = str(tmpdir.join('cohort.jsonl'))
    with open(path, 'w') as f:
        f.write(text)
    return path


def test_save_load(tmpdir):
    cohort = Cohort([
        make_record('a', timeline=[(1.5, 2, 94.25), (7.0, 40, 1.3)],
                    outcomes={'mortality': positive(30.5), 'intubation': negative()}),
        make_record('b', admit=2.0, end=20.0, age=None, gender='female', race='asian',
                    comorbidities=(1,) + (0,) * 11),
    ])
    path = str(tmpdir.join('cohort.jsonl'))
    save_cohort(cohort, path)
    assert load_cohort(path) == cohort


def test_load_skips_blank_lines(tmpdir):
    line = ('{"id": "p1", "admit": 0, "end": 10, "static": {"age": 50, "gender": "male", '
            '"race": "white", "comorbidities": [0,0,0,0,0,0,0,0,0,0,0,0]}, '
            '"timeline": [[1, 0, 80.0]], "outcomes": {"mortality": {"label": "negative"}}}')
    cohort = load_cohort(_write(tmpdir, "\n" + line + "\n\n"))
    assert len(cohort) == 1
    assert cohort[0].timeline == [(1.0, 0, 80.0)]
    assert cohort[0].static.age == 50.0


def test_load_reports_line_of_bad_json(tmpdir):
    good = make_record('p1')
    path = str(tmpdir.join('ok.jsonl'))
    save_cohort(Cohort([good]), path)
    with open(path) as f:
        first = f.read()
    with pytest.raises(CohortParseError) as e:
        load_cohort(_write(tmpdir, first + "{not json\n"))
    assert e.value.lineno == 2


def test_load_reports_missing_fields(tmpdir):
    with pytest.raises(CohortParseError) as e:
        load_cohort(_write(tmpdir, '{"id": "p1", "admit": 0}\n'))
    assert e.value.lineno == 1


@pytest.mark.parametrize('record', [
    make_record(end=10.0, timeline=[(12.0, 0, 1.0)]),
    make_record(timeline=[(1.0, 63, 1.0)]),
    make_record(outcomes={'mortality': positive(99.0)}),
    make_record(outcomes={'sepsis': negative()}),
    make_record(comorbidities=(2,) + (0,) * 11),
    make_record(admit=10.0, end=5.0),
])
def test_invalid_records(tmpdir, record):
    path = str(tmpdir.join('bad.jsonl'))
    save_cohort(Cohort([make_record('ok'), record]), path)
    with pytest.raises(CohortValidationError) as e:
        load_cohort(path)
    assert e.value.lineno == 2
    assert e.value.patient_id == 'p1'


def test_norm_stats_use_population_std():
    cohort = Cohort([make_record(timeline=[(1.0, 0, 1.0), (2.0, 0, 2.0), (3.0, 0, 3.0)])])
    bounds = compute_clip_bounds(cohort)
    stats = compute_norm_stats(cohort, bounds)
    assert stats.mean[0] == 2.0
    normalized = normalize(cohort, stats)[0]
    assert np.allclose(normalized.values, [-1.2247449, 0.0, 1.2247449])


def test_clip_bounds_nearest_rank():
    timeline = [(1.0, 0, float(v)) for v in range(1, 201)]
    cohort = Cohort([make_record(end=48.0, timeline=timeline)])
    bounds = compute_clip_bounds(cohort, 0.5, 99.5)
    assert bounds.low[0] == 1.0
    assert bounds.high[0] == 199.0
    assert bounds.present[0] and not bounds.present[1]

    stats = compute_norm_stats(cohort, bounds)
    normalized = normalize(cohort, stats)[0]
    assert len(normalized.values) == 199


def test_unseen_feature_passes_through_as_zero():
    train = Cohort([make_record(timeline=[(1.0, 0, 5.0), (2.0, 0, 7.0)])])
    stats = compute_norm_stats(train, compute_clip_bounds(train))
    test = Cohort([make_record(timeline=[(1.0, 5, 123.0)])])
    normalized = normalize(test, stats)[0]
    assert normalized.features.tolist() == [5]
    assert normalized.values.tolist() == [0.0]


def test_age_is_normalized_and_missing_age_is_zero():
    cohort = Cohort([make_record('a', age=50.0), make_record('b', age=70.0),
                     make_record('c', age=None)])
    stats = compute_norm_stats(cohort, compute_clip_bounds(cohort))
    assert stats.age_mean == 60.0
    normalized = normalize(cohort, stats)
    assert [r.static.age for r in normalized] == [-1.0, 1.0, None]
    assert encode_statics(normalized[2])[0] == 0.0


def test_encode_statics_layout():
    record = make_record(age=0.5, gender='female', race='asian',
                         comorbidities=(0,) * 11 + (1,))
    vec = encode_statics(record)
    assert vec.shape == (20,)
    assert vec[0] == 0.5
    assert vec[1:3].tolist() == [0.0, 1.0]
    assert vec[3:8].tolist() == [0.0, 0.0, 1.0, 0.0, 0.0]
    assert vec[8:].tolist() == [0.0] * 11 + [1.0]


def test_encode_statics_rejects_unknown_categories():
    with pytest.raises(CohortValidationError):
        encode_statics(make_record(gender='unknown'))
    with pytest.raises(CohortValidationError):
        encode_statics(make_record(race='martian'))


def test_endpoint_stats():
    cohort = Cohort([
        make_record('a', outcomes={'mortality': positive(10.0)}),
        make_record('b', outcomes={'mortality': positive(20.0)}),
        make_record('c', admit=5.0, outcomes={'mortality': positive(35.0)}),
        make_record('d'),
    ])
    stats = estimate_endpoint_stats(cohort, 'mortality')
    assert stats.mean == 20.0
    assert stats.std == 10.0

    with pytest.raises(ContractError):
        estimate_endpoint_stats(cohort.subset([0, 3]), 'mortality')


def test_negative_endpoint_is_clamped():
    rng = np.random.default_rng(0)
    record = make_record(admit=10.0, end=100.0)
    late = EndpointStats('mortality', mean=1000.0, std=1.0)
    early = EndpointStats('mortality', mean=-1000.0, std=1.0)
    assert sample_negative_endpoint(late, record, rng, window=24) == 100.0
    assert sample_negative_endpoint(early, record, rng, window=24) == 34.0
    assert sample_negative_endpoint(early, record, rng, window=48) == 58.0


def test_negative_endpoint_of_short_stay():
    rng = np.random.default_rng(0)
    record = make_record(end=10.0)
    stats = EndpointStats('mortality', mean=30.0, std=5.0)
    assert sample_negative_endpoint(stats, record, rng, window=24) == 10.0


def test_negative_endpoint_needs_negative_patient():
    rng = np.random.default_rng(0)
    record = make_record(outcomes={'mortality': positive(12.0)})
    with pytest.raises(ContractError):
        sample_negative_endpoint(EndpointStats('mortality', 20.0, 5.0), record, rng)


def test_bin_timeline():
    timeline = [
        (5.9, 3, 1.0),     # before the window
        (6.0, 0, 1.0),
        (11.9, 0, 3.0),
        (12.0, 1, 5.0),
        (29.99, 2, 7.0),
        (30.0, 2, 9.0),    # at the endpoint, excluded
    ]
    record = make_record(end=48.0, timeline=timeline,
                         outcomes={'mortality': positive(30.0)})
    seq = bin_timeline(record, 24, 30.0)
    assert seq.matrix.shape == (4, 63)
    assert seq.n_steps == 4
    expected = np.zeros((4, 63))
    expected[0, 0] = 2.0
    expected[1, 1] = 5.0
    expected[3, 2] = 7.0
    assert np.array_equal(seq.matrix, expected)
    assert seq.labels == {'mortality': 1}
    assert seq.static.shape == (20,)


def test_bin_timeline_ignores_timeline_order():
    rng = np.random.default_rng(1)
    n = 300
    timeline = list(zip(rng.uniform(0, 48, n).round(2), rng.integers(0, 63, n),
                        rng.normal(size=n)))
    record = make_record(timeline=timeline)
    shuffled = make_record(timeline=[timeline[i] for i in rng.permutation(n)])
    for window in (24, 48):
        a = bin_timeline(record, window, 48.0).matrix
        b = bin_timeline(shuffled, window, 48.0).matrix
        assert np.array_equal(a, b)


def test_bin_timeline_short_stay():
    record = make_record(end=10.0, timeline=[(1.0, 4, 2.0)])
    seq = bin_timeline(record, 24, 10.0)
    assert seq.matrix[2, 4] == 2.0
    assert seq.matrix.sum() == 2.0


def test_bin_timeline_checks_endpoint():
    record = make_record(admit=0.0, end=48.0)
    with pytest.raises(ContractError):
        bin_timeline(record, 24, 50.0)
    with pytest.raises(ContractError):
        bin_timeline(record, 12, 30.0)


class RestrictPositivesTest(unittest.TestCase):

    def setUp(self):
        self.cohort = labelled_cohort(100, 30)
        self.rng = np.random.default_rng(0)

    def test_keeps_negatives_and_order(self):
        restricted = restrict_positives(self.cohort, 'mortality', 0.1, self.rng)
        self.assertEqual(len(restricted), 78)
        self.assertEqual(restricted.labels('mortality').sum(), 8)
        ids = [r.patient_id for r in restricted]
        self.assertEqual(ids, sorted(ids))
        self.assertEqual([r.patient_id for r in restricted if not r.label('mortality')],
                         ['p%03d' % i for i in range(30, 100)])

    def test_rate_within_one_patient(self):
        cohort = labelled_cohort(1000, 230)
        restricted = restrict_positives(cohort, 'mortality', 0.07, self.rng)
        self.assertEqual(restricted.labels('mortality').sum(), 58)
        self.assertEqual(len(restricted), 828)
        self.assertLess(abs(restricted.positive_rate('mortality') - 0.07), 1.0 / 828)

    def test_current_rate_is_a_no_op(self):
        self.assertEqual(restrict_positives(self.cohort, 'mortality', 0.3, self.rng), self.cohort)

    def test_rate_bounds(self):
        for rate in (0.04, 0.5, 1.0, 1.5):
            with self.assertRaises(ContractError):
                restrict_positives(self.cohort, 'mortality', rate, self.rng)

    def test_all_positive_cohort(self):
        cohort = labelled_cohort(10, 10)
        with self.assertRaises(ContractError):
            restrict_positives(cohort, 'mortality', 1.0, self.rng)


class ClipBoundsTest(unittest.TestCase):

    def test_uniform_sample(self):
        rng = np.random.default_rng(21)
        values = rng.random(1000)
        timeline = list(zip(np.sort(rng.uniform(0, 48, 1000)), [0] * 1000, values))
        bounds = compute_clip_bounds(Cohort([make_record(timeline=timeline)]))
        ordered = np.sort(values)
        self.assertEqual(bounds.low[0], ordered[4])
        self.assertEqual(bounds.high[0], ordered[994])
        self.assertLess(abs(bounds.low[0] - 0.005), 0.01)
        self.assertLess(abs(bounds.high[0] - 0.995), 0.01)

    def test_constant_feature(self):
        cohort = Cohort([make_record(timeline=[(t, 3, 7.5) for t in (1.0, 2.0, 3.0)])])
        bounds = compute_clip_bounds(cohort)
        self.assertEqual((bounds.low[3], bounds.high[3]), (7.5, 7.5))
        normalized = normalize(cohort, compute_norm_stats(cohort, bounds))[0]
        self.assertEqual(normalized.values.tolist(), [0.0, 0.0, 0.0])


def test_negative_endpoint_mean():
    rng = np.random.default_rng(22)
    record = make_record(end=500.0)
    stats = EndpointStats('mortality', mean=100.0, std=10.0)
    draws = [sample_negative_endpoint(stats, record, rng, window=24) for _ in range(10 ** 5)]
    assert abs(np.mean(draws) - 100.0) < 1.0


def _preprocessing_cohort(n=40):
    rng = np.random.default_rng(5)
    records = []
    for i in range(n):
        end = float(round(rng.uniform(30, 90), 2))
        times = np.sort(rng.uniform(0, end, 50)).round(2)
        timeline = list(zip(times, rng.integers(0, 63, 50), rng.normal(50, 10, 50)))
        if i % 4 == 0:
            outcome = positive(float(round(end * 0.8, 2)))
        else:
            outcome = negative()
        records.append(make_record('p%02d' % i, end=end, timeline=timeline,
                                   outcomes={'mortality': outcome},
                                   age=float(rng.uniform(20, 90))))
    return Cohort(records)


def test_preprocessor_fits_on_training_part_only():
    cohort = _preprocessing_cohort()
    train, test = cohort.subset(range(30)), cohort.subset(range(30, 40))
    pre = CohortPreprocessor('mortality', window=24).fit(train)
    mean = pre.stats_.mean.copy()
    endpoint = pre.endpoint_stats_
    sequences = pre.transform(test, np.random.default_rng(1))
    assert np.array_equal(pre.stats_.mean, mean)
    assert pre.endpoint_stats_ == endpoint
    assert len(sequences) == 10
    for record, seq in zip(test, sequences):
        assert seq.patient_id == record.patient_id
        assert seq.matrix.shape == (4, 63)
        outcome = record.outcomes['mortality']
        if outcome.positive:
            assert seq.endpoint == outcome.event_time
        else:
            assert record.admission_time + 24 <= seq.endpoint <= record.end_time


def test_preprocessor_is_deterministic():
    cohort = _preprocessing_cohort()
    pre = CohortPreprocessor('mortality', window=48).fit(cohort)
    a = pre.transform(cohort, np.random.default_rng(3))
    b = pre.transform(cohort, np.random.default_rng(3))
    assert all(np.array_equal(x.matrix, y.matrix) for x, y in zip(a, b))
    assert [x.endpoint for x in a] == [y.endpoint for y in b]


def test_cohort_helpers():
    cohort = Cohort([
        make_record('a', outcomes={'mortality': positive(10.0)}),
        make_record('b', outcomes={'intubation': negative()}),
    ])
    assert len(cohort.for_task('mortality')) == 1
    assert cohort.for_task('intubation')[0].patient_id == 'b'
    assert cohort.for_task('mortality').positive_rate('mortality') == 1.0
    with pytest.raises(ContractError):
        cohort.labels('mortality')
