"""
Small models, graphs and cycle sets shared by the test modules.
"""
import numpy as np
import pytest

from atgcn.cycles import GaitCycle
from atgcn.model import CLASSIFICATION, BlockConfig, Model, ModelSpec
from atgcn.settings import RUN_SLOW
from atgcn.skeleton import ATAXIC, HEALTHY, JOINT_COUNT, OPENPOSE_LAYOUT
from atgcn.st_graph import build_partitioned_adjacency, radii_from_positions
from atgcn.synth_gait import REST_POSE
from atgcn.utils import env_var_active

TINY_LENGTH = 16


def rest_graph():
    return build_partitioned_adjacency(OPENPOSE_LAYOUT, radii_from_positions(REST_POSE[None]))


def tiny_spec(head=CLASSIFICATION):
    blocks = [BlockConfig(3, 4, residual=False, dropout_p=0.5),
              BlockConfig(4, 8, temporal_stride=2),
              BlockConfig(8, 8)]
    return ModelSpec(blocks, head, temporal_kernel=3)


def tiny_model(seed=0, head=CLASSIFICATION):
    return Model(tiny_spec(head), rest_graph(), seed)


def tiny_batch(count=2, seed=1):
    return np.random.RandomState(seed).standard_normal((count, 3, TINY_LENGTH, JOINT_COUNT)) * 0.3


def labelled_cycles(video_count, cycles_per_video=2, length=TINY_LENGTH, seed=0):
    """
    Even numbered videos are healthy, odd ones ataxic with severity 1 + (index // 2) % 3.
    Ataxic skeletons are spread wider, so the classes are easy to tell apart.
    """
    rng = np.random.RandomState(seed)
    cycles = []
    for video in range(video_count):
        ataxic = video % 2 == 1
        label, severity = (ATAXIC, 1 + (video // 2) % 3) if ataxic else (HEALTHY, 0)
        for index in range(cycles_per_video):
            keypoints = np.repeat(REST_POSE[None, :, :], length, axis=0) * (1.0 + 0.5 * severity)
            keypoints = keypoints + 0.01 * rng.standard_normal(keypoints.shape)
            keypoints = np.concatenate([keypoints, np.full((length, JOINT_COUNT, 1), 0.95)], axis=2)
            start = 100 * index
            cycles.append(GaitCycle(keypoints, 'video%02d' % video, start, start + 30, label=label,
                                    severity=severity, subject_id='subject%02d' % video, site_id='lab'))
    return cycles


slow = pytest.mark.skipif(not env_var_active(RUN_SLOW), reason='set %s=1 to run the slow tests' % RUN_SLOW)
