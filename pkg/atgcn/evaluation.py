"""
Metrics and repeated, stratified, video-grouped cross-validation.

Every repeat draws a new fold plan over videos; each fold trains on the
cycles of the other folds and is evaluated per video on its own. Means and
standard deviations are taken over all (repeat, fold) cells.
"""
from collections import OrderedDict, namedtuple

import numpy as np
from scipy.stats import pearsonr
from sklearn.metrics import accuracy_score, f1_score, mean_absolute_error, mean_squared_error, roc_auc_score
from sklearn.model_selection import StratifiedKFold

from atgcn.concurrent_base import ConcurrentBase
from atgcn.errors import ParameterError, ShapeError, TrainingError, UndefinedMetricError
from atgcn.model import CLASSIFICATION, attach_head, build_backbone, parameter_count, truncate
from atgcn.skeleton import ATAXIC
from atgcn.st_graph import graph_from_cycles
from atgcn.training import DECISION_THRESHOLD, finetune, predict

CLASSIFICATION_METRICS = ('accuracy', 'f1', 'roc_auc')
REGRESSION_METRICS = ('mae', 'mse', 'pearson')

PERCENT = 100.0


def _binary_labels(labels):
    return np.array([1 if label in (1, ATAXIC) else 0 for label in labels], dtype=np.int64)


def roc_auc(pred_probs, labels):
    labels = _binary_labels(labels)
    if np.unique(labels).size < 2:
        raise UndefinedMetricError('ROC AUC needs both classes among the labels')
    return PERCENT * roc_auc_score(labels, np.asarray(pred_probs, dtype=np.float64))


def metrics_classification(pred_probs, labels):
    """
    Accuracy, F1 (ataxic positive) and ROC AUC, all in percent. ROC AUC is
    None when the labels hold a single class.
    """
    probs = np.asarray(pred_probs, dtype=np.float64)
    labels = _binary_labels(labels)
    if probs.shape != labels.shape:
        raise ShapeError('%d probabilities for %d labels' % (probs.size, labels.size))
    if probs.size == 0:
        raise UndefinedMetricError('classification metrics need at least one sample')
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise ParameterError('probabilities must be in [0, 1]')
    predicted = (probs >= DECISION_THRESHOLD).astype(np.int64)
    try:
        auc = roc_auc(probs, labels)
    except UndefinedMetricError:
        auc = None
    return OrderedDict([
        ('accuracy', PERCENT * accuracy_score(labels, predicted)),
        ('f1', PERCENT * f1_score(labels, predicted, pos_label=1, zero_division=0)),
        ('roc_auc', auc),
    ])


def pearson(pred, target):
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.size < 2 or np.ptp(pred) == 0 or np.ptp(target) == 0:
        raise UndefinedMetricError("Pearson's coefficient needs two or more values with non-zero variance")
    return float(pearsonr(pred, target)[0])


def metrics_regression(pred, target):
    """
    MAE, MSE and Pearson's coefficient; the coefficient is None when either
    side has no variance.
    """
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError('%d predictions for %d targets' % (pred.size, target.size))
    if pred.size == 0:
        raise UndefinedMetricError('regression metrics need at least one sample')
    try:
        coefficient = pearson(pred, target)
    except UndefinedMetricError:
        coefficient = None
    return OrderedDict([
        ('mae', float(mean_absolute_error(target, pred))),
        ('mse', float(mean_squared_error(target, pred))),
        ('pearson', coefficient),
    ])


def video_metrics(videos, task):
    if task == CLASSIFICATION:
        return metrics_classification([video.value for video in videos], [video.label for video in videos])
    return metrics_regression([video.value for video in videos], [video.severity for video in videos])


class FoldPlan(object):

    def __init__(self, fold_count, assignments, seed, stratified=True, grouped=True):
        self.fold_count = fold_count
        self.assignments = OrderedDict(assignments)
        self.seed = seed
        self.stratified = stratified
        self.grouped = grouped

    def videos_in(self, fold):
        return [video_id for video_id, assigned in self.assignments.items() if assigned == fold]

    def folds(self):
        return [self.videos_in(fold) for fold in range(self.fold_count)]


def make_folds(videos, fold_count, seed):
    """
    @param videos: (video_id, label) pairs; repeated ids are one video
    """
    labels = OrderedDict()
    for video_id, label in videos:
        labels.setdefault(video_id, label)
    if fold_count < 2:
        raise ParameterError('cross-validation needs at least 2 folds, got %s' % fold_count)
    if len(labels) < fold_count:
        raise ParameterError('%d videos cannot fill %d folds' % (len(labels), fold_count))
    ids = list(labels)
    classes = [str(label) for label in labels.values()]
    splitter = StratifiedKFold(n_splits=fold_count, shuffle=True, random_state=seed)
    assignments = OrderedDict()
    for fold, (_, held_out) in enumerate(splitter.split(np.zeros(len(ids)), classes)):
        for index in held_out:
            assignments[ids[index]] = fold
    return FoldPlan(fold_count, OrderedDict((video_id, assignments[video_id]) for video_id in ids), seed)


class MetricReport(object):
    """
    Raw per-cell values of every metric; None marks a cell where the metric
    was undefined, which mean and std leave out.
    """

    def __init__(self, cells, values, parameter_count=None):
        self.cells = list(cells)
        self.values = OrderedDict((metric, list(raw)) for metric, raw in values.items())
        self.parameter_count = parameter_count

    def defined(self, metric):
        return [value for value in self.values[metric] if value is not None]

    def mean(self, metric):
        defined = self.defined(metric)
        return float(np.mean(defined)) if defined else None

    def std(self, metric):
        defined = self.defined(metric)
        return float(np.std(defined)) if defined else None

    def rows(self):
        for metric in self.values:
            yield OrderedDict([
                ('metric', metric),
                ('mean', self.mean(metric)),
                ('std', self.std(metric)),
                ('cells', len(self.defined(metric))),
                ('parameter_count', self.parameter_count),
            ])


Recipe = namedtuple('Recipe', ['level', 'config', 'layout'])
CellResult = namedtuple('CellResult', ['repeat', 'fold', 'train_videos', 'eval_videos', 'videos', 'metrics',
                                       'parameter_count'])


def fit_level(train_cycles, recipe, seed):
    """
    The default cell recipe: a backbone on the gravity radii of the
    training cycles, truncated at recipe.level, headed and fine-tuned.
    @return: (predictor mapping cycles to video predictions, parameter count)
    """
    graph = graph_from_cycles(recipe.layout, train_cycles)
    config = recipe.config.for_unit('cell', seed)
    model = attach_head(truncate(build_backbone(graph, seed), recipe.level), config.task, seed)
    model, _ = finetune(model, train_cycles, config)
    return (lambda cycles: predict(model, cycles).videos), parameter_count(model)


class CellRunner(ConcurrentBase):

    def __init__(self, cycles, recipe, monitor, workers=1, fit_fn=fit_level):
        super(CellRunner, self).__init__(monitor, workers)
        self._cycles = cycles
        self._recipe = recipe
        self._fit_fn = fit_fn

    def run_cell(self, repeat, fold, plan, seed):
        self._put((repeat, fold), self._run_cell, (repeat, fold, plan, seed))

    def _run_cell(self, args):
        repeat, fold, plan, seed = args
        held_out = set(plan.videos_in(fold))
        train = [cycle for cycle in self._cycles if cycle.source_video_id not in held_out]
        held = [cycle for cycle in self._cycles if cycle.source_video_id in held_out]
        predictor, count = self._fit_fn(train, self._recipe, seed)
        videos = predictor(held)
        metrics = video_metrics(videos, self._recipe.config.task)
        self._debug('repeat %d fold %d: %s' % (repeat, fold, ', '.join(
            '%s %s' % (name, 'n/a' if value is None else '%.4f' % value) for name, value in metrics.items())))
        train_videos = sorted(set(cycle.source_video_id for cycle in train))
        return CellResult(repeat, fold, train_videos, sorted(held_out), videos, metrics, count)

    def _annotate_failure(self, key, error):
        annotated = TrainingError(str(error), context='repeat %d fold %d' % key)
        annotated.__cause__ = error
        return annotated


def cross_validate(cycles, recipe, monitor, fold_count=10, repeats=20, base_seed=0, workers=1, fit_fn=fit_level):
    """
    @param fit_fn: (train cycles, recipe, seed) -> (predictor, parameter count)
    @return: (MetricReport, list of CellResult)
    """
    if not cycles:
        raise TrainingError('cross-validation needs a labelled dataset')
    if repeats < 1:
        raise ParameterError('repeats must be at least 1, got %s' % repeats)
    videos = [(cycle.source_video_id, cycle.label) for cycle in cycles]
    runner = CellRunner(cycles, recipe, monitor, workers, fit_fn)
    for repeat in range(repeats):
        seed = base_seed + repeat
        plan = make_folds(videos, fold_count, seed)
        for fold in range(fold_count):
            runner.run_cell(repeat, fold, plan, seed)
    runner.finish()
    runner.wait_for_finish()
    monitor.wait_for(CellRunner, runner.FINISHED_PROCESSING)
    results = [result for _, result in runner.results()]
    metric_names = CLASSIFICATION_METRICS if recipe.config.task == CLASSIFICATION else REGRESSION_METRICS
    values = OrderedDict((metric, [result.metrics[metric] for result in results]) for metric in metric_names)
    report = MetricReport([(result.repeat, result.fold) for result in results], values,
                          results[0].parameter_count)
    monitor.debug('cross-validation: %d cells, %s' % (len(results), ', '.join(
        '%s %s' % (metric, report.mean(metric)) for metric in metric_names)))
    return report, results