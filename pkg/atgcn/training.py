"""
Fine-tuning and the truncation search.

The search truncates a fresh copy of the backbone at every level, attaches a
freshly initialized head, fine-tunes everything and scores on the validation
cycles; the best level wins, the smallest one on ties.
"""
from collections import OrderedDict, namedtuple

import numpy as np
from sklearn.model_selection import train_test_split

from atgcn.concurrent_base import ConcurrentBase
from atgcn.errors import ParameterError, TrainingError
from atgcn.model import CLASSIFICATION, REGRESSION, TASKS, attach_head, truncate
from atgcn.monitor import MONITOR_VERBOSE_DMSG_LEVEL
from atgcn.skeleton import ATAXIC, HEALTHY
from atgcn.tensor import EVAL, TRAIN, make_rng, mse_loss, probabilities, sgd_step, softmax_cross_entropy

LOSSES = OrderedDict([(CLASSIFICATION, 'cross_entropy'), (REGRESSION, 'mse')])
DECISION_THRESHOLD = 0.5
INFERENCE_BATCH_SIZE = 64


class TrainConfig(object):

    def __init__(self, lr=3e-5, batch_size=64, epochs=500, seed=0, task=CLASSIFICATION, shuffle=True, stream=()):
        if not lr >= 0:
            raise ParameterError('learning rate must be non-negative, got %s' % lr)
        if batch_size < 1:
            raise ParameterError('batch size must be at least 1, got %s' % batch_size)
        if epochs < 1:
            raise ParameterError('epochs must be at least 1, got %s' % epochs)
        if task not in TASKS:
            raise ParameterError("task must be one of %s, got '%s'" % (', '.join(TASKS), task))
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.task = task
        self.shuffle = shuffle
        self.stream = tuple(stream)

    @property
    def loss(self):
        return LOSSES[self.task]

    @classmethod
    def from_profile(cls, settings, **overrides):
        fields = dict((key, settings[key]) for key in ('lr', 'batch_size', 'epochs'))
        fields.update((key, value) for key, value in overrides.items() if value is not None)
        return cls(**fields)

    def for_unit(self, *labels):
        """
        The same configuration drawing from its own random streams.
        """
        return TrainConfig(self.lr, self.batch_size, self.epochs, self.seed, self.task, self.shuffle,
                           self.stream + labels)

    def as_dict(self):
        return OrderedDict([
            ('lr', self.lr),
            ('batch_size', self.batch_size),
            ('epochs', self.epochs),
            ('seed', self.seed),
            ('task', self.task),
            ('loss', self.loss),
            ('shuffle', self.shuffle),
        ])


class TrainingHistory(object):

    def __init__(self):
        self.epoch_losses = []
        self.steps = 0

    def counters(self):
        return OrderedDict([('epochs', len(self.epoch_losses)), ('steps', self.steps)])


CyclePrediction = namedtuple('CyclePrediction', ['video_id', 'start_frame', 'end_frame', 'value'])
VideoPrediction = namedtuple('VideoPrediction', ['video_id', 'value', 'decision', 'cycle_count', 'label',
                                                 'severity'])
Prediction = namedtuple('Prediction', ['task', 'cycles', 'videos'])


def stack_inputs(cycles):
    return np.stack([cycle.model_input() for cycle in cycles])


def cycle_targets(cycles, task):
    if task == CLASSIFICATION:
        labels = [cycle.label for cycle in cycles]
        if any(label not in (HEALTHY, ATAXIC) for label in labels):
            raise TrainingError('classification needs every cycle labelled healthy or ataxic')
        return np.array([1 if label == ATAXIC else 0 for label in labels], dtype=np.int64)
    severities = [cycle.severity for cycle in cycles]
    if any(severity is None for severity in severities):
        raise TrainingError('regression needs a severity on every cycle')
    return np.array(severities, dtype=np.float64)


def _loss(outputs, targets, task):
    if task == CLASSIFICATION:
        return softmax_cross_entropy(outputs, targets)
    return mse_loss(outputs, targets)


def finetune(model, train_set, config, monitor=None):
    """
    Plain SGD over every parameter of model, in place.
    @return: (model, TrainingHistory)
    """
    if not train_set:
        raise TrainingError('the training set is empty')
    if model.spec.head != config.task:
        raise TrainingError("a %s run needs a %s head, the model has '%s'" % (config.task, config.task,
                                                                             model.spec.head))
    inputs, targets = stack_inputs(train_set), cycle_targets(train_set, config.task)
    model.unfreeze()
    params = model.parameters()
    shuffle_rng = make_rng(config.seed, 'shuffle', *config.stream)
    dropout_rng = make_rng(config.seed, 'dropout', *config.stream)
    history = TrainingHistory()
    count = len(train_set)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(count) if config.shuffle else np.arange(count)
        epoch_loss = 0.0
        for start in range(0, count, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss = _loss(model.forward(inputs[batch], TRAIN, dropout_rng), targets[batch], config.task)
            loss.backward()
            sgd_step(params, config.lr)
            history.steps += 1
            epoch_loss += float(loss.value) * len(batch)
            if monitor is not None:
                monitor.debug('epoch %d, step %d: loss %.6f' % (epoch + 1, history.steps, float(loss.value)),
                              MONITOR_VERBOSE_DMSG_LEVEL)
        history.epoch_losses.append(epoch_loss / count)
        if monitor is not None:
            monitor.debug('level %d epoch %d/%d: mean loss %.6f' % (model.level, epoch + 1, config.epochs,
                                                                   history.epoch_losses[-1]))
    return model, history


def predict_values(model, cycles):
    """
    Per-cycle outputs in eval mode: the ataxic probability for a
    classification head, the severity for a regression head.
    """
    values = []
    for start in range(0, len(cycles), INFERENCE_BATCH_SIZE):
        outputs = model.forward(stack_inputs(cycles[start:start + INFERENCE_BATCH_SIZE]), EVAL).value
        if model.spec.head == CLASSIFICATION:
            values.extend(probabilities(outputs)[:, 1].tolist())
        else:
            values.extend(outputs[:, 0].tolist())
    return values


def aggregate_videos(cycles, values, task):
    """
    Video level outputs: the mean over the video's cycles, in order of first
    appearance. Classification decides ataxic at a mean probability of 0.5.
    """
    grouped = OrderedDict()
    for cycle, value in zip(cycles, values):
        grouped.setdefault(cycle.source_video_id, []).append((cycle, float(value)))
    videos = []
    for video_id, members in grouped.items():
        value = float(np.mean([value for _, value in members]))
        if task == CLASSIFICATION:
            decision = ATAXIC if value >= DECISION_THRESHOLD else HEALTHY
        else:
            decision = value
        first = members[0][0]
        videos.append(VideoPrediction(video_id, value, decision, len(members), first.label, first.severity))
    return videos


def predict(model, cycles, monitor=None):
    if not cycles:
        return Prediction(model.spec.head, [], [])
    values = predict_values(model, cycles)
    per_cycle = [CyclePrediction(cycle.source_video_id, cycle.start_frame, cycle.end_frame, value)
                 for cycle, value in zip(cycles, values)]
    videos = aggregate_videos(cycles, values, model.spec.head)
    if monitor is not None:
        monitor.debug('predicted %d cycles from %d videos' % (len(per_cycle), len(videos)))
    return Prediction(model.spec.head, per_cycle, videos)


def score_videos(videos, task):
    """
    Accuracy for classification, negated mean absolute error for
    regression, so that higher is better for both.
    """
    if task == CLASSIFICATION:
        return float(np.mean([video.decision == video.label for video in videos]))
    return -float(np.mean([abs(video.value - video.severity) for video in videos]))


def score(model, val_set, task):
    if not val_set:
        raise TrainingError('the validation set is empty')
    cycle_targets(val_set, task)
    return score_videos(predict(model, val_set).videos, task)


class SearchResult(object):

    def __init__(self, scores, models, histories):
        self.scores = OrderedDict(sorted(scores.items()))
        self.models = models
        self.histories = histories

    @property
    def best_level(self):
        best = None
        for level, level_score in self.scores.items():
            if best is None or level_score > self.scores[best]:
                best = level
        return best

    @property
    def best_model(self):
        return self.models[self.best_level]


class LevelTrainer(ConcurrentBase):
    """
    Trains one truncation level per unit, each on its own copy of the
    backbone.
    """

    def __init__(self, backbone, train_set, val_set, config, monitor, workers=1, finetune_fn=finetune,
                 score_fn=score):
        super(LevelTrainer, self).__init__(monitor, workers)
        self._backbone = backbone
        self._train_set = train_set
        self._val_set = val_set
        self._config = config
        self._finetune_fn = finetune_fn
        self._score_fn = score_fn

    def train_level(self, level):
        self._put(level, self._train_level, level)

    def _train_level(self, level):
        config = self._config.for_unit('level', level)
        model = attach_head(truncate(self._backbone, level), config.task, config.seed, ('level', level))
        self._debug('level %d: fine-tuning on %d cycles' % (level, len(self._train_set)))
        model, history = self._finetune_fn(model, self._train_set, config, self._monitor)
        level_score = self._score_fn(model, self._val_set, config.task)
        self._debug('level %d: score %.4f' % (level, level_score))
        return level_score, model, history

    def _annotate_failure(self, key, error):
        annotated = TrainingError(str(error), context='truncation level %d' % key)
        annotated.__cause__ = error
        return annotated


def truncation_search(backbone, train_set, val_set, config, monitor, levels=None, workers=1,
                      finetune_fn=finetune, score_fn=score):
    """
    @param levels: truncation levels to try, all blocks of the backbone by default
    @rtype: SearchResult
    """
    if levels is None:
        levels = range(1, backbone.level + 1)
    trainer = LevelTrainer(backbone, train_set, val_set, config, monitor, workers, finetune_fn, score_fn)
    for level in levels:
        trainer.train_level(level)
    trainer.finish()
    trainer.wait_for_finish()
    monitor.wait_for(LevelTrainer, trainer.FINISHED_PROCESSING)
    scores, models, histories = OrderedDict(), OrderedDict(), OrderedDict()
    for level, (level_score, model, history) in trainer.results():
        scores[level], models[level], histories[level] = level_score, model, history
    result = SearchResult(scores, models, histories)
    monitor.debug('truncation search: best level %d of %s' % (result.best_level, list(scores)))
    return result


def split_by_video(cycles, val_fraction, seed):
    """
    Video level train/validation split, stratified by label where every
    class has at least two videos.
    @return: (train cycles, validation cycles)
    """
    if not 0.0 < val_fraction < 1.0:
        raise ParameterError('validation fraction must be in (0, 1), got %s' % val_fraction)
    videos = OrderedDict()
    for cycle in cycles:
        videos.setdefault(cycle.source_video_id, cycle.label)
    if len(videos) < 2:
        raise TrainingError('a train/validation split needs at least 2 videos, got %d' % len(videos))
    ids, labels = list(videos), [str(label) for label in videos.values()]
    stratify = labels if min(labels.count(label) for label in set(labels)) >= 2 else None
    try:
        train_ids, val_ids = train_test_split(ids, test_size=val_fraction, random_state=seed, stratify=stratify)
    except ValueError:
        train_ids, val_ids = train_test_split(ids, test_size=val_fraction, random_state=seed)
    train_ids, val_ids = set(train_ids), set(val_ids)
    return ([cycle for cycle in cycles if cycle.source_video_id in train_ids],
            [cycle for cycle in cycles if cycle.source_video_id in val_ids])
