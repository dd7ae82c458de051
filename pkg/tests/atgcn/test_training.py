from mock import Mock
import numpy as np
import pytest

from atgcn.cycles import extract_cycles
from atgcn.errors import ParameterError, TrainingError
from atgcn.model import CLASSIFICATION, REGRESSION, attach_head, build_backbone, truncate
from atgcn.settings import DESK_PROFILE, PAPER_PROFILE, profile_settings
from atgcn.skeleton import ATAXIC, HEALTHY, OPENPOSE_LAYOUT, read_manifest
from atgcn.st_graph import graph_from_cycles
from atgcn.synth_gait import generate_dataset
from atgcn.training import SearchResult, TrainConfig, TrainingHistory, aggregate_videos, cycle_targets, finetune, \
    predict, score, score_videos, split_by_video, truncation_search

from builders import labelled_cycles, slow, tiny_model


class TestTrainConfig:

    def test_from_profile(self):
        config = TrainConfig.from_profile(profile_settings(PAPER_PROFILE), epochs=3, lr=None, task=REGRESSION)
        assert (config.lr, config.batch_size, config.epochs, config.task) == (3e-5, 64, 3, REGRESSION)
        assert config.loss == 'mse'

    def test_validation(self):
        with pytest.raises(ParameterError):
            TrainConfig(batch_size=0)
        with pytest.raises(ParameterError):
            TrainConfig(task='ranking')

    def test_for_unit_extends_the_stream(self):
        config = TrainConfig(stream=('cell',)).for_unit('level', 3)
        assert config.stream == ('cell', 'level', 3)
        assert config.as_dict()['loss'] == 'cross_entropy'


class TestTargets:

    def test_classification_targets(self):
        cycles = labelled_cycles(4, cycles_per_video=1)
        assert cycle_targets(cycles, CLASSIFICATION).tolist() == [0, 1, 0, 1]
        assert cycle_targets(cycles, REGRESSION).tolist() == [0.0, 1.0, 0.0, 2.0]

    def test_missing_labels(self):
        cycles = labelled_cycles(2, cycles_per_video=1)
        cycles[1].label, cycles[1].severity = None, None
        with pytest.raises(TrainingError):
            cycle_targets(cycles, CLASSIFICATION)
        with pytest.raises(TrainingError):
            cycle_targets(cycles, REGRESSION)


class TestFinetune:

    def setup_method(self, method):
        self.cycles = labelled_cycles(4)
        self.config = TrainConfig(lr=0.05, batch_size=4, epochs=20, seed=3)

    def test_loss_goes_down(self):
        model, history = finetune(tiny_model(), self.cycles, self.config)
        assert len(history.epoch_losses) == 20
        assert history.steps == 40
        assert history.counters() == {'epochs': 20, 'steps': 40}
        assert min(history.epoch_losses[-5:]) < history.epoch_losses[0]

    def test_same_seed_same_run(self):
        config = TrainConfig(lr=0.05, batch_size=3, epochs=2, seed=3)
        first, first_history = finetune(tiny_model(), self.cycles, config)
        second, second_history = finetune(tiny_model(), self.cycles, config)
        assert first_history.epoch_losses == second_history.epoch_losses
        for name, param in first.named_parameters().items():
            assert np.array_equal(param.value, second.named_parameters()[name].value)

    def test_zero_learning_rate_changes_no_weight(self):
        model = tiny_model()
        before = dict((name, param.value.copy()) for name, param in model.named_parameters().items())
        model, history = finetune(model, self.cycles, TrainConfig(lr=0.0, batch_size=3, epochs=2, seed=3))
        assert history.steps == 6
        for name, param in model.named_parameters().items():
            assert np.array_equal(param.value, before[name]), name

    def test_monitor_hears_every_epoch(self):
        monitor = Mock()
        finetune(tiny_model(), self.cycles, TrainConfig(lr=0.01, batch_size=8, epochs=2), monitor)
        assert monitor.debug.call_count == 4

    def test_head_must_match_task(self):
        with pytest.raises(TrainingError):
            finetune(tiny_model(head=REGRESSION), self.cycles, self.config)

    def test_empty_training_set(self):
        with pytest.raises(TrainingError):
            finetune(tiny_model(), [], self.config)


class TestPrediction:

    def test_predict(self):
        cycles = labelled_cycles(3)
        prediction = predict(tiny_model(), cycles)
        assert prediction.task == CLASSIFICATION
        assert len(prediction.cycles) == 6
        assert [video.video_id for video in prediction.videos] == ['video00', 'video01', 'video02']
        assert all(0.0 <= cycle.value <= 1.0 for cycle in prediction.cycles)
        assert prediction.videos[0].value == pytest.approx(np.mean([c.value for c in prediction.cycles[:2]]))
        assert prediction.videos[1].cycle_count == 2

    def test_predict_nothing(self):
        prediction = predict(tiny_model(), [])
        assert prediction.cycles == [] and prediction.videos == []

    def test_aggregate_videos(self):
        cycles = labelled_cycles(2)
        videos = aggregate_videos(cycles, [0.2, 0.6, 0.5, 0.5], CLASSIFICATION)
        assert [(video.video_id, video.decision) for video in videos] == [('video00', HEALTHY),
                                                                          ('video01', ATAXIC)]
        assert videos[0].value == pytest.approx(0.4)
        regression = aggregate_videos(cycles, [0.0, 1.0, 2.0, 3.0], REGRESSION)
        assert [video.decision for video in regression] == [0.5, 2.5]

    def test_scores(self):
        cycles = labelled_cycles(4, cycles_per_video=1)
        videos = aggregate_videos(cycles, [0.1, 0.9, 0.7, 0.2], CLASSIFICATION)
        assert score_videos(videos, CLASSIFICATION) == 0.5
        videos = aggregate_videos(cycles, [0.0, 1.5, 1.0, 2.0], REGRESSION)
        assert score_videos(videos, REGRESSION) == pytest.approx(-0.375)

    def test_score_needs_validation_cycles(self):
        with pytest.raises(TrainingError):
            score(tiny_model(), [], CLASSIFICATION)


class TestTruncationSearch:

    def setup_method(self, method):
        self.monitor = Mock()
        self.cycles = labelled_cycles(4, cycles_per_video=1)
        self.config = TrainConfig(epochs=1)

    def finetune_stub(self, model, train_set, config, monitor):
        return model, TrainingHistory()

    def test_best_level(self):
        scores = {1: 0.5, 2: 0.75, 3: 0.75}
        result = truncation_search(tiny_model(), self.cycles, self.cycles, self.config, self.monitor, workers=2,
                                   finetune_fn=self.finetune_stub,
                                   score_fn=lambda model, val_set, task: scores[model.level])
        assert list(result.scores.items()) == [(1, 0.5), (2, 0.75), (3, 0.75)]
        assert result.best_level == 2
        assert result.best_model.level == 2
        assert all(result.models[level].spec.head == CLASSIFICATION for level in (1, 2, 3))

    def test_levels_get_their_own_heads(self):
        result = truncation_search(tiny_model(), self.cycles, self.cycles, self.config, self.monitor, levels=[2, 3],
                                   finetune_fn=self.finetune_stub, score_fn=lambda model, val_set, task: 0.0)
        assert list(result.scores) == [2, 3]
        assert result.best_level == 2

    def test_failing_level(self):

        def score_fn(model, val_set, task):
            if model.level == 2:
                raise ValueError('diverged')
            return 1.0

        with pytest.raises(TrainingError) as info:
            truncation_search(tiny_model(), self.cycles, self.cycles, self.config, self.monitor,
                              finetune_fn=self.finetune_stub, score_fn=score_fn)
        assert info.value.context == 'truncation level 2'

    def test_real_search(self):
        train, val = labelled_cycles(6, seed=1), labelled_cycles(4, seed=2)
        config = TrainConfig(lr=0.05, batch_size=4, epochs=2, seed=1)
        result = truncation_search(tiny_model(), train, val, config, self.monitor, workers=2)
        assert list(result.scores) == [1, 2, 3]
        assert all(0.0 <= level_score <= 1.0 for level_score in result.scores.values())
        for level in (1, 2, 3):
            assert result.models[level].level == level
            assert result.histories[level].counters() == {'epochs': 2, 'steps': 6}
        assert result.scores[result.best_level] == max(result.scores.values())

    def test_search_result_ties(self):
        result = SearchResult({3: 0.9, 1: 0.9, 2: 0.1}, {}, {})
        assert list(result.scores) == [1, 2, 3]
        assert result.best_level == 1


class TestSeparability:

    @slow
    def test_level_two_separates_synthetic_walkers(self, tmpdir):
        manifest = generate_dataset(str(tmpdir), 20, seed=0)
        cycles = [cycle for row in read_manifest(manifest) for cycle in extract_cycles(row.load())[0]]
        assert len(cycles) >= 150
        train, val = split_by_video(cycles, 0.2, seed=0)
        backbone = build_backbone(graph_from_cycles(OPENPOSE_LAYOUT, train), seed=0)
        model = attach_head(truncate(backbone, 2), CLASSIFICATION, 0)
        config = TrainConfig.from_profile(profile_settings(DESK_PROFILE))
        model, history = finetune(model, train, config)
        assert history.epoch_losses[-1] < history.epoch_losses[0]
        assert score(model, val, CLASSIFICATION) >= 0.95


class TestSplitByVideo:

    def test_videos_stay_together(self):
        cycles = labelled_cycles(10)
        train, val = split_by_video(cycles, 0.2, seed=0)
        train_videos = set(cycle.source_video_id for cycle in train)
        val_videos = set(cycle.source_video_id for cycle in val)
        assert not train_videos & val_videos
        assert len(train) + len(val) == len(cycles)
        assert len(val_videos) == 2
        assert set(cycle.label for cycle in val) == {HEALTHY, ATAXIC}

    def test_same_seed_same_split(self):
        cycles = labelled_cycles(10)
        first = [cycle.source_video_id for cycle in split_by_video(cycles, 0.3, seed=5)[1]]
        assert first == [cycle.source_video_id for cycle in split_by_video(cycles, 0.3, seed=5)[1]]

    def test_bad_splits(self):
        with pytest.raises(ParameterError):
            split_by_video(labelled_cycles(4), 1.0, seed=0)
        with pytest.raises(TrainingError):
            split_by_video(labelled_cycles(1), 0.5, seed=0)
