"""
A kinematic cartoon of a person walking away from a static camera.

Seen from behind, the forward swing of the feet shows up as opposite
vertical displacement of the ankles, so the inter-ankle distance peaks twice
per gait cycle. Ataxic walkers get a wider base, more trunk sway and more
irregular steps as severity grows. Good for exercising the pipeline, not
for clinical claims.
"""
from collections import OrderedDict
import os

import numpy as np

from atgcn.errors import ParameterError, ValidationError
from atgcn.skeleton import ATAXIC, HEALTHY, JOINT_COUNT, MAX_SEVERITY, ManifestRow, SkeletonSequence, \
    serialize_sequence, write_manifest
from atgcn.tensor import make_rng
from atgcn.utils import ensure_dir

FRAME_WIDTH = 640
FRAME_HEIGHT = 480
CONFIDENCE = 0.95

# per severity level, relative to the healthy walker
STEP_WIDTH_GAIN = 0.6
SWAY_GAIN = 1.0
VARIABILITY_GAIN = 0.05

# standing pose in normalized coordinates, x to the right, y down
REST_POSE = np.array([
    [0.00, -0.62],   # nose
    [0.00, -0.45],   # neck
    [-0.12, -0.45],  # right shoulder
    [-0.15, -0.25],  # right elbow
    [-0.15, -0.08],  # right wrist
    [0.12, -0.45],   # left shoulder
    [0.15, -0.25],   # left elbow
    [0.15, -0.08],   # left wrist
    [-0.07, 0.00],   # right hip
    [-0.07, 0.30],   # right knee
    [0.00, 0.60],    # right ankle, x set by the step width
    [0.07, 0.00],    # left hip
    [0.07, 0.30],    # left knee
    [0.00, 0.60],    # left ankle
    [-0.03, -0.65],  # right eye
    [0.03, -0.65],   # left eye
    [-0.06, -0.63],  # right ear
    [0.06, -0.63],   # left ear
])
RIGHT_ANKLE, LEFT_ANKLE = 10, 13
RIGHT_KNEE, LEFT_KNEE = 9, 12

# how much of the trunk sway each joint follows
SWAY_SHARE = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.25, 0.0, 0.5, 0.25, 0.0, 1.0, 1.0, 1.0, 1.0])


class GaitParams(object):

    def __init__(self, cadence=1.0, step_width=0.12, sway_amplitude=0.01, step_variability=0.0, noise_sigma=0.0,
                 duration=6.0, fps=30.0, class_label=HEALTHY, severity=0, seed=0, stride_amplitude=0.08):
        self.cadence = cadence
        self.step_width = step_width
        self.sway_amplitude = sway_amplitude
        self.step_variability = step_variability
        self.noise_sigma = noise_sigma
        self.duration = duration
        self.fps = fps
        self.class_label = class_label
        self.severity = severity
        self.seed = seed
        self.stride_amplitude = stride_amplitude
        self._validate()

    def _validate(self):
        for name in ('cadence', 'fps', 'duration', 'stride_amplitude'):
            if not getattr(self, name) > 0:
                raise ParameterError('%s must be positive, got %s' % (name, getattr(self, name)))
        for name in ('step_width', 'sway_amplitude', 'step_variability', 'noise_sigma'):
            if not getattr(self, name) >= 0:
                raise ParameterError('%s must be non-negative, got %s' % (name, getattr(self, name)))
        if self.class_label not in (HEALTHY, ATAXIC):
            raise ParameterError("class label must be '%s' or '%s', got '%s'" % (HEALTHY, ATAXIC, self.class_label))
        if self.severity not in range(MAX_SEVERITY + 1):
            raise ParameterError('severity must be an integer in [0, %d], got %s' % (MAX_SEVERITY, self.severity))
        if self.class_label == HEALTHY and self.severity != 0:
            raise ParameterError('a healthy walker has severity 0, got %s' % self.severity)
        if self.frame_count < 2:
            raise ParameterError('duration %s s at %s fps gives fewer than 2 frames' % (self.duration, self.fps))

    @property
    def frame_count(self):
        return int(round(self.duration * self.fps))

    def realized(self):
        """
        Step width, sway and variability after severity scaling.
        """
        return (self.step_width * (1.0 + STEP_WIDTH_GAIN * self.severity),
                self.sway_amplitude * (1.0 + SWAY_GAIN * self.severity),
                self.step_variability + VARIABILITY_GAIN * self.severity)

    def as_dict(self):
        return OrderedDict((name, getattr(self, name)) for name in (
            'cadence', 'step_width', 'sway_amplitude', 'step_variability', 'noise_sigma', 'duration', 'fps',
            'class_label', 'severity', 'seed', 'stride_amplitude'))


def _gait_phase(times, cadence, variability, rng):
    if variability == 0:
        return 2.0 * np.pi * cadence * times
    # one step per half cycle, every step with its own duration
    steps = int(np.ceil(times[-1] * 2.0 * cadence)) + 2
    durations = np.clip(1.0 + variability * rng.standard_normal(steps), 0.5, 1.5) / (2.0 * cadence)
    boundaries = np.concatenate([[0.0], np.cumsum(durations)])
    return np.interp(times, boundaries, np.pi * np.arange(steps + 1))


def generate_sequence(params, video_id='', subject_id='', site_id=''):
    rng = make_rng(params.seed, 'walker')
    step_width, sway, variability = params.realized()
    times = np.arange(params.frame_count) / float(params.fps)
    phase = _gait_phase(times, params.cadence, variability, rng)

    xy = np.repeat(REST_POSE[None, :, :], params.frame_count, axis=0)
    xy[:, :, 0] += sway * np.sin(phase)[:, None] * SWAY_SHARE[None, :]
    swing = params.stride_amplitude * np.sin(phase)
    xy[:, RIGHT_ANKLE, 0] = -step_width / 2.0
    xy[:, LEFT_ANKLE, 0] = step_width / 2.0
    xy[:, LEFT_ANKLE, 1] += swing
    xy[:, RIGHT_ANKLE, 1] -= swing
    xy[:, LEFT_KNEE, 1] += swing / 2.0
    xy[:, RIGHT_KNEE, 1] -= swing / 2.0
    if params.noise_sigma > 0:
        xy += params.noise_sigma * rng.standard_normal(xy.shape)

    keypoints = np.empty((params.frame_count, JOINT_COUNT, 3))
    keypoints[:, :, 0] = (xy[:, :, 0] + 1.0) / 2.0 * FRAME_WIDTH
    keypoints[:, :, 1] = (xy[:, :, 1] + 1.0) / 2.0 * FRAME_HEIGHT
    keypoints[:, :, 2] = CONFIDENCE
    return SkeletonSequence(keypoints, np.arange(params.frame_count), params.fps, FRAME_WIDTH, FRAME_HEIGHT,
                            subject_id=subject_id, video_id=video_id, site_id=site_id, label=params.class_label,
                            severity=params.severity)


def _sub_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _dataset_plan(n_per_class, severity_mix):
    if severity_mix is None:
        if n_per_class < 1:
            raise ParameterError('n_per_class must be at least 1, got %s' % n_per_class)
        plan = [(HEALTHY, 0)] * n_per_class
        plan += [(ATAXIC, 1 + index % MAX_SEVERITY) for index in range(n_per_class)]
        return plan
    plan = []
    for severity, count in sorted(severity_mix.items()):
        if severity not in range(MAX_SEVERITY + 1):
            raise ParameterError('severity must be an integer in [0, %d], got %s' % (MAX_SEVERITY, severity))
        plan += [(HEALTHY if severity == 0 else ATAXIC, severity)] * count
    if not plan:
        raise ParameterError('the severity mix is empty')
    return plan


def generate_dataset(out_dir, n_per_class, severity_mix=None, seed=0, base_params=None, manifest_name='manifest.csv'):
    """
    Writes one keypoint file per walker plus the dataset manifest.

    @param severity_mix: severity -> number of videos; severity 0 videos are
        healthy. Overrides n_per_class, which otherwise gives n healthy and n
        ataxic walkers with severities cycling 1..3.
    @return: manifest path
    """
    if base_params is None:
        base_params = GaitParams()
    plan = _dataset_plan(n_per_class, severity_mix)
    try:
        ensure_dir(out_dir)
    except (IOError, OSError) as e:
        raise ValidationError("cannot write the dataset to '%s' - %s" % (out_dir, e))
    variation = make_rng(seed, 'dataset')
    rows = []
    for index, (label, severity) in enumerate(plan):
        fields = base_params.as_dict()
        fields.update(class_label=label, severity=severity, seed=_sub_seed(seed, index),
                      cadence=base_params.cadence * variation.uniform(0.85, 1.15))
        video_id = 'synth%04d' % index
        seq = generate_sequence(GaitParams(**fields), video_id=video_id, subject_id='subject%04d' % index,
                                site_id='synthetic')
        file_name = video_id + '.jsonl'
        try:
            serialize_sequence(seq, os.path.join(out_dir, file_name))
        except (IOError, OSError) as e:
            raise ValidationError("cannot write '%s' - %s" % (file_name, e))
        rows.append(ManifestRow(file_name, video_id, seq.subject_id, seq.site_id, label, severity))
    return write_manifest(rows, os.path.join(out_dir, manifest_name))
