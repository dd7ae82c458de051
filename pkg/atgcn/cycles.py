"""
Gait cycles from the distance between the ankles.

The inter-ankle distance of a walker oscillates twice per gait cycle, so
three consecutive peaks of the smoothed signal bound one cycle. Cycles are
paired without overlap, [p1, p3], [p3, p5], ..., and resampled to a fixed
number of frames.
"""
from collections import OrderedDict, namedtuple
import csv
import json
import os

import numpy as np
from scipy.interpolate import interp1d
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks, peak_prominences, savgol_filter

from atgcn.errors import ParameterError
from atgcn.monitor import MONITOR_VERBOSE_DMSG_LEVEL
from atgcn.skeleton import (JOINT_COUNT, OPENPOSE_LAYOUT, frame_record, mask_low_confidence,
                            normalize_coordinates, read_keypoint_records)
from atgcn.utils import ensure_dir, open_input, relative_to

CYCLE_LENGTH = 64
CYCLE_RECORD = 'cycle'

DEFAULT_SG_WINDOW = 11
DEFAULT_SG_POLYORDER = 3
DEFAULT_MA_WINDOW = 5
DEFAULT_SEPARATION_SECONDS = 0.25
DEFAULT_PROMINENCE_FRACTION = 0.05
DEFAULT_CONFIDENCE_THRESHOLD = 0.1

CYCLE_MANIFEST_HEADER = ['path', 'video_id', 'subject_id', 'site_id', 'label', 'severity',
                         'start_frame', 'end_frame']


class DistanceSignal(object):

    def __init__(self, values, fps):
        self.values = np.asarray(values, dtype=np.float64)
        self.fps = float(fps)

    def __len__(self):
        return self.values.shape[0]

    def with_values(self, values):
        return DistanceSignal(values, self.fps)


class GaitCycle(object):
    """
    One resampled gait cycle. keypoints is shaped [length, joints, 3] in
    normalized coordinates; start_frame and end_frame are source frame
    numbers.
    """

    def __init__(self, keypoints, source_video_id, start_frame, end_frame, label=None, severity=None,
                 subject_id='', site_id=''):
        self.keypoints = np.asarray(keypoints, dtype=np.float64)
        self.source_video_id = source_video_id
        self.start_frame = int(start_frame)
        self.end_frame = int(end_frame)
        self.label = label
        self.severity = severity
        self.subject_id = subject_id
        self.site_id = site_id
        if self.start_frame >= self.end_frame:
            raise ParameterError('cycle start %d is not before its end %d' % (self.start_frame, self.end_frame))

    @property
    def length(self):
        return self.keypoints.shape[0]

    def model_input(self):
        """
        Channels first, the [3, T, J] layout the network consumes.
        """
        return np.transpose(self.keypoints, (2, 0, 1))


CycleTrace = namedtuple('CycleTrace', ['raw', 'smoothed', 'peaks'])


class CycleConfig(object):
    """
    Parameters of the extraction pipeline. None means derived from the
    signal: separation from fps, prominence from the signal range.
    """

    def __init__(self, sg_window=DEFAULT_SG_WINDOW, sg_polyorder=DEFAULT_SG_POLYORDER, ma_window=DEFAULT_MA_WINDOW,
                 min_separation=None, min_prominence=None, confidence_threshold=DEFAULT_CONFIDENCE_THRESHOLD,
                 length=CYCLE_LENGTH, layout=OPENPOSE_LAYOUT):
        self.sg_window = sg_window
        self.sg_polyorder = sg_polyorder
        self.ma_window = ma_window
        self.min_separation = min_separation
        self.min_prominence = min_prominence
        self.confidence_threshold = confidence_threshold
        self.length = length
        self.layout = layout

    def as_dict(self):
        return OrderedDict([
            ('sg_window', self.sg_window),
            ('sg_polyorder', self.sg_polyorder),
            ('ma_window', self.ma_window),
            ('min_separation', self.min_separation),
            ('min_prominence', self.min_prominence),
            ('confidence_threshold', self.confidence_threshold),
            ('length', self.length),
        ])


def ankle_distance(seq, layout=OPENPOSE_LAYOUT):
    left = seq.keypoints[:, layout.left_ankle_index, :2]
    right = seq.keypoints[:, layout.right_ankle_index, :2]
    return DistanceSignal(np.linalg.norm(left - right, axis=1), seq.fps)


def savitzky_golay(signal, window, polyorder):
    """
    The first and last window // 2 frames take the value of a polynomial
    fitted to the edge window, so any polynomial up to polyorder comes back
    unchanged across the whole signal.
    """
    if window % 2 == 0:
        raise ParameterError('Savitzky-Golay window must be odd, got %d' % window)
    if window <= polyorder:
        raise ParameterError('Savitzky-Golay window %d must exceed polyorder %d' % (window, polyorder))
    if window > len(signal):
        raise ParameterError('Savitzky-Golay window %d is longer than the signal (%d)' % (window, len(signal)))
    return signal.with_values(savgol_filter(signal.values, window, polyorder, mode='interp'))


def moving_average(signal, window):
    if not 1 <= window <= len(signal):
        raise ParameterError('moving average window must be in [1, %d], got %d' % (len(signal), window))
    if window % 2 == 0:
        raise ParameterError('moving average window must be odd to stay centred, got %d' % window)
    return signal.with_values(uniform_filter1d(signal.values, window, mode='mirror'))


def detect_peaks(signal, min_separation, min_prominence):
    """
    Strict local maxima with at least min_prominence, thinned so that no two
    kept peaks are closer than min_separation frames. The higher peak of a
    close pair wins, the earlier one on a tie. Flat tops are not peaks.
    @rtype: list of frame positions, ascending
    """
    values = signal.values
    if values.shape[0] < 3:
        return []
    candidates = find_peaks(values)[0]
    candidates = candidates[(values[candidates - 1] < values[candidates]) &
                            (values[candidates] > values[candidates + 1])]
    if candidates.size == 0:
        return []
    prominences = peak_prominences(values, candidates)[0]
    candidates = candidates[prominences >= min_prominence]
    kept = []
    for index in sorted(candidates.tolist(), key=lambda i: (-values[i], i)):
        if all(abs(index - other) >= min_separation for other in kept):
            kept.append(index)
    return sorted(kept)


def resample(keypoints, start, end, length):
    source = interp1d(np.arange(start, end + 1), keypoints[start:end + 1], axis=0)
    return source(np.linspace(start, end, length))


def segment_cycles(seq, peaks, length=CYCLE_LENGTH):
    cycles = []
    for first, last in zip(peaks[:-2:2], peaks[2::2]):
        cycles.append(GaitCycle(resample(seq.keypoints, first, last, length), seq.video_id,
                                seq.frame_indices[first], seq.frame_indices[last],
                                label=seq.label, severity=seq.severity, subject_id=seq.subject_id,
                                site_id=seq.site_id))
    return cycles


def whole_sequence_sample(seq, length=CYCLE_LENGTH):
    """
    The whole sequence as one sample, for training without cycle splitting.
    """
    return GaitCycle(resample(seq.keypoints, 0, seq.frame_count - 1, length), seq.video_id,
                     seq.frame_indices[0], seq.frame_indices[-1], label=seq.label, severity=seq.severity,
                     subject_id=seq.subject_id, site_id=seq.site_id)


def prepare_sequence(seq, config):
    return mask_low_confidence(normalize_coordinates(seq), config.confidence_threshold, config.layout)


def smooth_distance(seq, config):
    raw = ankle_distance(seq, config.layout)
    smoothed = moving_average(savitzky_golay(raw, config.sg_window, config.sg_polyorder), config.ma_window)
    return raw, smoothed


def peak_thresholds(signal, config):
    min_separation = config.min_separation
    if min_separation is None:
        min_separation = DEFAULT_SEPARATION_SECONDS * signal.fps
    min_prominence = config.min_prominence
    if min_prominence is None:
        min_prominence = DEFAULT_PROMINENCE_FRACTION * (signal.values.max() - signal.values.min())
    return min_separation, min_prominence


def extract_cycles(seq, config=None, monitor=None):
    """
    Runs the whole pipeline on a raw (pixel coordinate) sequence.
    @return: (list of GaitCycle, CycleTrace)
    """
    if config is None:
        config = CycleConfig()
    seq = prepare_sequence(seq, config)
    raw, smoothed = smooth_distance(seq, config)
    peaks = detect_peaks(smoothed, *peak_thresholds(smoothed, config))
    cycles = segment_cycles(seq, peaks, config.length)
    if monitor is not None:
        monitor.debug('video %s: %d peaks, %d cycles' % (seq.video_id, len(peaks), len(cycles)),
                      MONITOR_VERBOSE_DMSG_LEVEL)
    return cycles, CycleTrace(raw, smoothed, peaks)


def _cycle_header(cycle, fps):
    return OrderedDict([
        ('record', CYCLE_RECORD),
        ('joint_count', cycle.keypoints.shape[1]),
        ('fps', fps),
        ('source_video_id', cycle.source_video_id),
        ('subject_id', cycle.subject_id),
        ('site_id', cycle.site_id),
        ('start_frame', cycle.start_frame),
        ('end_frame', cycle.end_frame),
        ('label', cycle.label),
        ('severity', cycle.severity),
    ])


def write_cycle(cycle, path, fps=None):
    with open(path, 'w') as f:
        f.write(json.dumps(_cycle_header(cycle, fps)) + '\n')
        for frame_index, keypoints in enumerate(cycle.keypoints):
            f.write(frame_record(frame_index, keypoints) + '\n')
    return path


def parse_cycle(path, joint_count=JOINT_COUNT):
    header, _, keypoints = read_keypoint_records(path, joint_count, header_record=CYCLE_RECORD)
    return GaitCycle(keypoints, header.get('source_video_id', ''), header['start_frame'], header['end_frame'],
                     label=header.get('label'), severity=header.get('severity'),
                     subject_id=header.get('subject_id', ''), site_id=header.get('site_id', ''))


def write_cycles(cycles, out_dir, manifest_name='cycles.csv'):
    """
    Writes one keypoint file per cycle plus the cycle manifest.
    @return: manifest path
    """
    ensure_dir(out_dir)
    manifest_path = os.path.join(out_dir, manifest_name)
    with open(manifest_path, 'w') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(CYCLE_MANIFEST_HEADER)
        for cycle in cycles:
            file_name = '%s_%06d_%06d.jsonl' % (cycle.source_video_id, cycle.start_frame, cycle.end_frame)
            write_cycle(cycle, os.path.join(out_dir, file_name))
            writer.writerow([file_name, cycle.source_video_id, cycle.subject_id, cycle.site_id,
                             cycle.label or '', '' if cycle.severity is None else cycle.severity,
                             cycle.start_frame, cycle.end_frame])
    return manifest_path


def read_cycle_manifest(path):
    cycles = []
    with open_input(path) as f:
        for row in csv.DictReader(f):
            cycles.append(parse_cycle(relative_to(path, row['path'])))
    return cycles


def cycle_manifest_paths(path):
    """
    The cycle files a manifest points at, resolved against its directory.
    """
    with open_input(path) as f:
        return [relative_to(path, row['path']) for row in csv.DictReader(f)]
