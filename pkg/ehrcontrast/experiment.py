# -*- coding: utf-8 -*-
"""
:mod:`ehrcontrast.experiment` runs the cross-validation grid.

For every task, positive-rate regime and window the (possibly
down-sampled) cohort is split into ``k`` stratified folds. Each fold is
preprocessed with statistics of its training part only, every
encoder/loss combination is trained on the training part, and the
held-out part is scored. Folds run as independent joblib tasks; results
are collected in fold order into a :class:`MetricsReport`.

Seeds: positive down-sampling and the fold split use ``config.seed``;
everything inside fold ``i`` (negative endpoints, initialization, batch
sampling) uses ``config.seed + i``.
"""
from __future__ import absolute_import
import json
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.model_selection import StratifiedKFold

from ehrcontrast.cohort import CohortPreprocessor, load_cohort, restrict_positives
from ehrcontrast.config import save_config
from ehrcontrast.exceptions import ContractError, FoldFailedError, UndefinedMetricError
from ehrcontrast.interpret import heatmap_from_mean, write_heatmap_csv, write_ranking_csv
from ehrcontrast.metrics import auprc, auroc, mean_std, roc_pr_points, silhouette
from ehrcontrast.schema import DEFAULT_FEATURE_NAMES, load_feature_schema
from ehrcontrast.synthgen import generate_cohort
from ehrcontrast.training import train, write_loss_trace
from ehrcontrast.utils import ensure_dir, folds_progress


logger = logging.getLogger(__name__)

METRICS = ('auroc', 'auprc', 'silhouette')
TOP_FEATURES = 10


@dataclass
class FoldAssignment:
    """ Fold index of every patient (0..k-1). """
    folds: np.ndarray
    k: int

    def split(self, fold):
        """ ``(train_indices, test_indices)`` of ``fold``. """
        if not 0 <= fold < self.k:
            raise ContractError("fold %r outside 0..%d" % (fold, self.k - 1))
        return np.flatnonzero(self.folds != fold), np.flatnonzero(self.folds == fold)

    def sizes(self):
        return np.bincount(self.folds, minlength=self.k)


def kfold_split(labels, k=10, seed=0):
    """
    Stratified ``k``-fold assignment of patients with 0/1 ``labels``:
    fold sizes differ by at most one and every fold gets a near-equal
    share of positives.

    >>> folds = kfold_split([0] * 90 + [1] * 10, k=10, seed=0)
    >>> folds.sizes().tolist()
    [10, 10, 10, 10, 10, 10, 10, 10, 10, 10]
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ContractError("k must be >= 2, got %r" % k)
    if len(labels) < k:
        raise ContractError("can't split %d patients into %d folds" % (len(labels), k))
    folds = np.empty(len(labels), dtype=np.int64)
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    for fold, (_, test) in enumerate(splitter.split(np.zeros(len(labels)), labels)):
        folds[test] = fold
    return FoldAssignment(folds=folds, k=k)


def cell_name(task, encoder, loss, window, regime):
    """
    >>> cell_name('mortality', 'retain', 'cl', 24, 'restricted')
    'mortality-retain-cl-24h-restricted'
    """
    return '%s-%s-%s-%dh-%s' % (task, encoder, loss, window, regime)


@dataclass
class FoldMetrics:
    fold: int
    n_test: int
    n_positive: int
    auroc: Optional[float] = None
    auprc: Optional[float] = None
    silhouette: Optional[float] = None
    undefined: Dict[str, str] = field(default_factory=dict)
    top_features: Optional[List[int]] = None


@dataclass
class FoldOutput:
    """ Held-out predictions and artifacts of one cell in one fold. """
    cell: str
    task: str
    encoder: str
    loss: str
    window: int
    regime: str
    metrics: FoldMetrics
    patient_ids: List[str]
    labels: np.ndarray
    scores: np.ndarray
    embeddings: np.ndarray
    loss_trace: List[float]
    importance_sum: Optional[np.ndarray] = None
    model: Any = None


@dataclass
class CellResult:
    task: str
    encoder: str
    loss: str
    window: int
    regime: str
    folds: List[FoldMetrics] = field(default_factory=list)

    def values(self, metric):
        return [getattr(f, metric) for f in self.folds]

    def summary(self, metric):
        defined = [v for v in self.values(metric) if v is not None]
        mean, std = mean_std(defined)
        return OrderedDict([('folds', self.values(metric)), ('mean', mean), ('std', std)])

    def to_dict(self):
        result = OrderedDict([
            ('task', self.task), ('encoder', self.encoder), ('loss', self.loss),
            ('window', self.window), ('regime', self.regime),
            ('n_test', [f.n_test for f in self.folds]),
            ('positives', [f.n_positive for f in self.folds]),
        ])
        for metric in METRICS:
            result[metric] = self.summary(metric)
        if self.encoder == 'retain':
            result['top_features'] = [f.top_features for f in self.folds]
        undefined = OrderedDict(
            ('fold %d' % f.fold, f.undefined) for f in self.folds if f.undefined
        )
        if undefined:
            result['undefined'] = undefined
        return result


@dataclass
class MetricsReport:
    """
    Per-cell fold metrics (AUROC, AUPRC, silhouette, RETAIN top features)
    with mean and sample standard deviation. ``outputs`` keeps the fold
    artifacts (predictions, embeddings, importance sums) for export.
    """
    k: int
    seed: int
    cells: Dict[str, CellResult] = field(default_factory=OrderedDict)
    outputs: List[FoldOutput] = field(default_factory=list)

    def add(self, output):
        cell = self.cells.get(output.cell)
        if cell is None:
            cell = CellResult(output.task, output.encoder, output.loss,
                              output.window, output.regime)
            self.cells[output.cell] = cell
        cell.folds.append(output.metrics)
        self.outputs.append(output)

    def cell_outputs(self, name):
        return [out for out in self.outputs if out.cell == name]

    def heatmap(self, name, feature_names=DEFAULT_FEATURE_NAMES):
        """ Cohort heatmap of a RETAIN cell over all held-out patients. """
        outputs = [out for out in self.cell_outputs(name) if out.importance_sum is not None]
        if not outputs:
            raise ContractError("cell %s has no importance scores" % name)
        total = sum(out.importance_sum for out in outputs)
        count = sum(len(out.patient_ids) for out in outputs)
        return heatmap_from_mean(total / count, count, feature_names)

    def to_dict(self):
        return OrderedDict([
            ('k', self.k),
            ('seed', self.seed),
            ('cells', OrderedDict((name, cell.to_dict()) for name, cell in self.cells.items())),
            ('comparisons', compare_losses(self)),
        ])


def compare_losses(report):
    """
    Paired per-fold differences CL - CEL of AUROC and AUPRC for every
    (task, encoder, window, regime) that has both losses.
    """
    result = OrderedDict()
    for name, cl in report.cells.items():
        if cl.loss != 'cl':
            continue
        cel = report.cells.get(cell_name(cl.task, cl.encoder, 'cel', cl.window, cl.regime))
        if cel is None:
            continue
        key = '%s-%s-%dh-%s' % (cl.task, cl.encoder, cl.window, cl.regime)
        entry = OrderedDict()
        for metric in ('auroc', 'auprc'):
            diffs = [a - b for a, b in zip(cl.values(metric), cel.values(metric))
                     if a is not None and b is not None]
            mean, std = mean_std(diffs)
            entry[metric] = OrderedDict([('folds', diffs), ('mean', mean), ('std', std)])
        result[key] = entry
    return result


def write_report(report, path):
    """ Write the report as JSON (sorted keys, two-space indent). """
    with open(path, 'w', encoding='utf8') as f:
        json.dump(report.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")


# ===== running =====

def prepare_cohort(config):
    """ Load ``config.cohort_path`` or generate a cohort from ``config.generator``. """
    if config.cohort_path:
        return load_cohort(config.cohort_path)
    return generate_cohort(config.generator)


def regime_cohort(cohort, task, target_rate, seed):
    """ Down-sample positives of ``task`` to ``target_rate`` (None keeps all). """
    if target_rate is None:
        return cohort
    current = cohort.positive_rate(task)
    if target_rate >= current:
        logger.info("%s positive rate %.4f is already at or below %.4f; keeping all patients",
                    task, current, target_rate)
        return cohort
    return restrict_positives(cohort, task, target_rate, np.random.default_rng(seed))


def fold_sequences(cohort, task, window, folds, fold, config):
    """
    Preprocess fold ``fold``: fit clip, normalization and endpoint
    statistics on the training part; return binned
    ``(train_sequences, test_sequences)``.
    """
    train_idx, test_idx = folds.split(fold)
    rng = np.random.default_rng(config.seed + fold)
    train_part, test_part = cohort.subset(train_idx), cohort.subset(test_idx)
    pre = CohortPreprocessor(task, window, config.clip_low, config.clip_high)
    pre.fit(train_part)
    return pre.transform(train_part, rng), pre.transform(test_part, rng)


def _metric(undefined, name, func, *args):
    try:
        return func(*args)
    except UndefinedMetricError as e:
        undefined[name] = str(e)
        return None


def _evaluate(model, test, task, fold):
    labels = np.array([seq.labels[task] for seq in test], dtype=np.int64)
    scores = model.predict_positive(test)
    embeddings = model.embed(test)
    metrics = FoldMetrics(fold=fold, n_test=len(test), n_positive=int(labels.sum()))
    metrics.auroc = _metric(metrics.undefined, 'auroc', auroc, scores, labels)
    metrics.auprc = _metric(metrics.undefined, 'auprc', auprc, scores, labels)
    metrics.silhouette = _metric(metrics.undefined, 'silhouette', silhouette, embeddings, labels)

    importance_sum = None
    if model.encoder.kind == 'retain' and test:
        matrices = model.explain(test)
        importance_sum = np.sum([np.abs(m.values) for m in matrices], axis=0)
        fold_map = heatmap_from_mean(importance_sum / len(matrices), len(matrices))
        metrics.top_features = fold_map.top(TOP_FEATURES)
    return metrics, labels, scores, embeddings, importance_sum


def run_fold(cohort, task, regime, window, folds, fold, config):
    """ Train and evaluate every encoder/loss cell on one fold. """
    try:
        train_seqs, test_seqs = fold_sequences(cohort, task, window, folds, fold, config)
        outputs = []
        for encoder in config.encoders:
            for loss in config.losses:
                rng = np.random.default_rng(config.seed + fold)
                model = train(train_seqs, encoder, loss, task, config.train, rng)
                metrics, labels, scores, embeddings, importance_sum = _evaluate(
                    model, test_seqs, task, fold)
                name = cell_name(task, encoder, loss, window, regime)
                logger.info("%s fold %d: AUROC %s, AUPRC %s", name, fold,
                            metrics.auroc, metrics.auprc)
                outputs.append(FoldOutput(
                    cell=name, task=task, encoder=encoder, loss=loss,
                    window=window, regime=regime, metrics=metrics,
                    patient_ids=[seq.patient_id for seq in test_seqs],
                    labels=labels, scores=scores, embeddings=embeddings,
                    loss_trace=list(model.loss_trace),
                    importance_sum=importance_sum,
                    model=model if fold in config.checkpoint_folds else None,
                ))
        return outputs
    except Exception as e:
        raise FoldFailedError(fold, e) from e


def run_experiment(config, cohort=None, jobs=None, verbose=False):
    """
    Run the whole grid of ``config`` and return a :class:`MetricsReport`.
    ``cohort`` overrides the cohort source of the config; ``jobs``
    overrides ``config.jobs`` (joblib ``n_jobs``, folds in parallel).
    """
    config.validate()
    if cohort is None:
        cohort = prepare_cohort(config)
    n_jobs = config.jobs if jobs is None else jobs
    report = MetricsReport(k=config.k, seed=config.seed)

    for task in config.tasks:
        task_cohort = cohort.for_task(task)
        for regime, rates in config.regimes.items():
            sub = regime_cohort(task_cohort, task, rates.get(task), config.seed)
            folds = kfold_split(sub.labels(task), config.k, config.seed)
            logger.info("%s / %s: %d patients, positive rate %.4f", task, regime,
                        len(sub), sub.positive_rate(task))
            for window in config.windows:
                fold_ids = folds_progress(range(config.k), disable=not verbose,
                                          desc='%s-%dh-%s' % (task, window, regime))
                results = Parallel(n_jobs=n_jobs)(
                    delayed(run_fold)(sub, task, regime, window, folds, fold, config)
                    for fold in fold_ids
                )
                for outputs in results:
                    for output in outputs:
                        report.add(output)
    return report


def heldout_sequences(config, meta, cohort=None):
    """
    Rebuild the held-out sequences a checkpoint was evaluated on, from the
    run settings stored in its metadata.
    """
    try:
        task, regime, window, fold = meta['task'], meta['regime'], meta['window'], meta['fold']
        seed, k = meta['seed'], meta['k']
    except KeyError as e:
        raise ContractError("checkpoint metadata has no %s" % e)
    if cohort is None:
        cohort = prepare_cohort(config)
    run_config = replace(config, seed=seed, k=k,
                         clip_low=meta.get('clip_low', config.clip_low),
                         clip_high=meta.get('clip_high', config.clip_high))
    sub = regime_cohort(cohort.for_task(task), task, meta.get('target_rate'), seed)
    folds = kfold_split(sub.labels(task), k, seed)
    return fold_sequences(sub, task, window, folds, fold, run_config)[1]


# ===== exports =====

def embeddings_frame(patient_ids, labels, embeddings):
    embeddings = np.asarray(embeddings, dtype=np.float64)
    frame = pd.DataFrame(embeddings, columns=['c%d' % i for i in range(embeddings.shape[1])])
    frame.insert(0, 'label', np.asarray(labels, dtype=np.int64))
    frame.insert(0, 'patient_id', list(patient_ids))
    return frame


def export_embeddings(model, sequences, path):
    """
    Write fused representations of ``sequences`` as CSV with columns
    ``patient_id, label, c0 .. c{l-1}``; return the frame.
    """
    sequences = list(sequences)
    labels = [seq.labels[model.task] for seq in sequences]
    frame = embeddings_frame([seq.patient_id for seq in sequences], labels, model.embed(sequences))
    frame.to_csv(path, index=False)
    return frame


def curves_frame(outputs):
    rows = []
    for out in outputs:
        try:
            points = roc_pr_points(out.scores, out.labels)
        except UndefinedMetricError:
            continue
        for curve in ('roc', 'pr'):
            for x, y, threshold in points[curve]:
                rows.append((curve, out.metrics.fold, x, y, threshold))
    return pd.DataFrame(rows, columns=['curve', 'fold', 'x', 'y', 'threshold'])


def checkpoint_meta(config, output):
    rates = config.regimes.get(output.regime, {})
    return {
        'regime': output.regime,
        'target_rate': rates.get(output.task),
        'fold': output.metrics.fold,
        'k': config.k,
        'seed': config.seed,
        'clip_low': config.clip_low,
        'clip_high': config.clip_high,
    }


def write_outputs(report, config, out_dir):
    """
    Write every artifact of a run into ``out_dir``: ``report.json``,
    ``config.ini`` and ``curves/``, ``embeddings/``, ``heatmaps/``,
    ``traces/``, ``checkpoints/`` subdirectories.
    """
    ensure_dir(out_dir)
    feature_names = DEFAULT_FEATURE_NAMES
    if config.schema_path:
        feature_names = load_feature_schema(config.schema_path)

    write_report(report, os.path.join(out_dir, 'report.json'))
    save_config(config, os.path.join(out_dir, 'config.ini'))
    for name, cell in report.cells.items():
        outputs = report.cell_outputs(name)
        curves_dir = ensure_dir(os.path.join(out_dir, 'curves'))
        curves_frame(outputs).to_csv(os.path.join(curves_dir, '%s.csv' % name), index=False)
        for out in outputs:
            fold = out.metrics.fold
            emb_dir = ensure_dir(os.path.join(out_dir, 'embeddings', name))
            embeddings_frame(out.patient_ids, out.labels, out.embeddings).to_csv(
                os.path.join(emb_dir, 'fold%d.csv' % fold), index=False)
            trace_dir = ensure_dir(os.path.join(out_dir, 'traces', name))
            write_loss_trace(out.loss_trace, os.path.join(trace_dir, 'fold%d.csv' % fold))
            if out.model is not None:
                ckpt_dir = ensure_dir(os.path.join(out_dir, 'checkpoints', name))
                out.model.save(os.path.join(ckpt_dir, 'fold%d.json' % fold),
                               **checkpoint_meta(config, out))
        if cell.encoder == 'retain' and any(o.importance_sum is not None for o in outputs):
            heat_dir = ensure_dir(os.path.join(out_dir, 'heatmaps'))
            heatmap = report.heatmap(name, feature_names)
            write_heatmap_csv(heatmap, os.path.join(heat_dir, '%s.csv' % name))
            write_ranking_csv(heatmap, os.path.join(heat_dir, '%s.ranking.csv' % name))
