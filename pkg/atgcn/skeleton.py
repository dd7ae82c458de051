"""
Pose keypoint files in, validated skeleton sequences out.

A keypoint file is JSON lines: a leading meta record followed by one frame
record per frame::

    {"record": "meta", "joint_count": 18, "fps": 30.0, "frame_width": 640, "frame_height": 480,
     "subject_id": "s01", "video_id": "v01", "site_id": "a", "label": "ataxic", "severity": 2}
    {"record": "frame", "frame_index": 0, "keypoints": [x0, y0, c0, ..., x17, y17, c17]}

The dataset manifest is a csv file with the columns of MANIFEST_HEADER, paths
relative to the manifest.
"""
from collections import OrderedDict, namedtuple
import csv
import json

import numpy as np

from atgcn.errors import OrderingError, ParseError, SchemaError, UnusableJointError, ValidationError
from atgcn.utils import open_input, relative_to

HEALTHY = 'healthy'
ATAXIC = 'ataxic'
LABELS = (HEALTHY, ATAXIC)

MAX_SEVERITY = 3
MAX_SARA_GAIT_SCORE = 8

META_RECORD = 'meta'
FRAME_RECORD = 'frame'

MANIFEST_HEADER = ['path', 'video_id', 'subject_id', 'site_id', 'label', 'severity']

Keypoint = namedtuple('Keypoint', ['x', 'y', 'confidence'])
SkeletonFrame = namedtuple('SkeletonFrame', ['keypoints', 'frame_index'])


class SkeletonLayout(object):
    """
    Joint names plus the anatomical edges between them. The edges must form
    a tree, anything else is rejected when the layout is built.
    """

    def __init__(self, joint_names, edge_set, left_ankle_index=None, right_ankle_index=None):
        self.joint_names = list(joint_names)
        self.joint_count = len(self.joint_names)
        self.edge_set = [tuple(edge) for edge in edge_set]
        self.left_ankle_index = left_ankle_index
        self.right_ankle_index = right_ankle_index
        self._validate()

    def _validate(self):
        joint_count = self.joint_count
        if joint_count < 1:
            raise ValidationError('a layout needs at least one joint')
        if len(self.edge_set) != joint_count - 1:
            raise ValidationError('a tree over %d joints has %d edges, got %d'
                                  % (joint_count, joint_count - 1, len(self.edge_set)))
        parent = list(range(joint_count))

        def root(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i, j in self.edge_set:
            if not (0 <= i < joint_count and 0 <= j < joint_count):
                raise ValidationError('edge (%d, %d) is outside [0, %d)' % (i, j, joint_count))
            if i == j:
                raise ValidationError('self-loop on joint %d' % i)
            root_i, root_j = root(i), root(j)
            if root_i == root_j:
                raise ValidationError('edge (%d, %d) closes a cycle' % (i, j))
            parent[root_i] = root_j
        for ankle in (self.left_ankle_index, self.right_ankle_index):
            if ankle is not None and not 0 <= ankle < joint_count:
                raise ValidationError('ankle index %d is outside [0, %d)' % (ankle, joint_count))
        if self.left_ankle_index is not None and self.left_ankle_index == self.right_ankle_index:
            raise ValidationError('left and right ankle share index %d' % self.left_ankle_index)

    def __repr__(self):
        return 'SkeletonLayout(joints=%d, edges=%d)' % (self.joint_count, len(self.edge_set))


# 18 keypoints in the order the pose estimator emits them
OPENPOSE_LAYOUT = SkeletonLayout(
    joint_names=[
        'nose',            # 0
        'neck',            # 1
        'right_shoulder',  # 2
        'right_elbow',     # 3
        'right_wrist',     # 4
        'left_shoulder',   # 5
        'left_elbow',      # 6
        'left_wrist',      # 7
        'right_hip',       # 8
        'right_knee',      # 9
        'right_ankle',     # 10
        'left_hip',        # 11
        'left_knee',       # 12
        'left_ankle',      # 13
        'right_eye',       # 14
        'left_eye',        # 15
        'right_ear',       # 16
        'left_ear',        # 17
    ],
    edge_set=[
        (4, 3), (3, 2), (7, 6), (6, 5), (13, 12), (12, 11), (10, 9), (9, 8),
        (11, 5), (8, 2), (5, 1), (2, 1), (0, 1), (15, 0), (14, 0), (17, 15), (16, 14),
    ],
    left_ankle_index=13,
    right_ankle_index=10,
)

JOINT_COUNT = OPENPOSE_LAYOUT.joint_count


class SkeletonSequence(object):
    """
    A tracked subject's keypoints over time.

    keypoints is a float array shaped [frames, joints, 3] holding x, y and
    confidence; frame_indices the source frame number of every row. The
    arrays are made read-only, the transformations below return new
    sequences.
    """

    def __init__(self, keypoints, frame_indices, fps, frame_width, frame_height,
                 subject_id='', video_id='', site_id='', label=None, severity=None):
        keypoints = np.array(keypoints, dtype=np.float64)
        frame_indices = np.array(frame_indices, dtype=np.int64)
        keypoints.setflags(write=False)
        frame_indices.setflags(write=False)
        self.keypoints = keypoints
        self.frame_indices = frame_indices
        self.fps = float(fps)
        self.frame_width = frame_width
        self.frame_height = frame_height
        self.subject_id = subject_id
        self.video_id = video_id
        self.site_id = site_id
        self.label = label
        self.severity = severity
        self._validate()

    def _validate(self):
        if self.keypoints.ndim != 3 or self.keypoints.shape[2] != 3:
            raise SchemaError('keypoints must be shaped [frames, joints, 3], got %s' % (self.keypoints.shape,))
        if self.keypoints.shape[0] != self.frame_indices.shape[0]:
            raise SchemaError('%d keypoint rows for %d frame indices'
                              % (self.keypoints.shape[0], self.frame_indices.shape[0]))
        if self.keypoints.shape[0] < 2:
            raise ValidationError('a sequence needs at least 2 frames, got %d' % self.keypoints.shape[0])
        if np.any(self.frame_indices < 0):
            raise OrderingError('negative frame index')
        steps = np.diff(self.frame_indices)
        if np.any(steps <= 0):
            at = int(np.argmax(steps <= 0)) + 1
            raise OrderingError('frame index %d at position %d does not increase'
                                % (self.frame_indices[at], at))
        if not np.all(np.isfinite(self.keypoints)):
            raise ValidationError('keypoint coordinates must be finite')
        confidence = self.keypoints[:, :, 2]
        if np.any(confidence < 0.0) or np.any(confidence > 1.0):
            raise ValidationError('keypoint confidence outside [0, 1]')
        if not self.fps > 0:
            raise ValidationError('fps must be positive, got %s' % self.fps)
        _validate_labels(self.label, self.severity)

    @property
    def frame_count(self):
        return self.keypoints.shape[0]

    @property
    def joint_count(self):
        return self.keypoints.shape[1]

    @property
    def frames(self):
        return [SkeletonFrame([Keypoint(*row) for row in self.keypoints[f].tolist()], int(self.frame_indices[f]))
                for f in range(self.frame_count)]

    def meta(self):
        return OrderedDict([
            ('fps', self.fps),
            ('frame_width', self.frame_width),
            ('frame_height', self.frame_height),
            ('subject_id', self.subject_id),
            ('video_id', self.video_id),
            ('site_id', self.site_id),
            ('label', self.label),
            ('severity', self.severity),
        ])

    def replace_keypoints(self, keypoints, **meta_changes):
        meta = self.meta()
        meta.update(meta_changes)
        return SkeletonSequence(keypoints, self.frame_indices, **meta)


def _validate_labels(label, severity):
    if label is not None and label not in LABELS:
        raise ValidationError("label must be one of %s, got '%s'" % (LABELS, label))
    if severity is None:
        return
    if severity not in range(MAX_SEVERITY + 1):
        raise ValidationError('severity must be an integer in [0, %d], got %s' % (MAX_SEVERITY, severity))
    if label is None:
        raise ValidationError('severity given without a label')
    if label == HEALTHY and severity != 0:
        raise ValidationError('healthy sequences have severity 0, got %d' % severity)


def group_severity(sara_gait_score):
    """
    SARA gait scores of 3 and above are too rare to learn apart, they share
    the top severity group.
    """
    if sara_gait_score not in range(MAX_SARA_GAIT_SCORE + 1):
        raise ValidationError('SARA gait score must be an integer in [0, %d], got %s'
                              % (MAX_SARA_GAIT_SCORE, sara_gait_score))
    return min(sara_gait_score, MAX_SEVERITY)


def _reject_constant(constant):
    raise ValueError('non-finite number %s' % constant)


def _load_record(path, line_number, line):
    try:
        record = json.loads(line, parse_constant=_reject_constant)
    except ValueError as e:
        raise ParseError(path, line_number, 'malformed record - %s' % e)
    if not isinstance(record, dict) or 'record' not in record:
        raise ParseError(path, line_number, "record is not an object with a 'record' field")
    return record


def _meta_from_record(path, record, joint_count):
    try:
        declared_joints = int(record.get('joint_count', joint_count))
        severity = record.get('severity')
        if severity is None and record.get('sara_gait_score') is not None:
            severity = group_severity(int(record['sara_gait_score']))
        meta = OrderedDict([
            ('fps', float(record['fps'])),
            ('frame_width', record['frame_width']),
            ('frame_height', record['frame_height']),
            ('subject_id', str(record.get('subject_id', ''))),
            ('video_id', str(record.get('video_id', ''))),
            ('site_id', str(record.get('site_id', ''))),
            ('label', record.get('label')),
            ('severity', None if severity is None else int(severity)),
        ])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(path, 1, 'bad meta record - %s' % e)
    if declared_joints != joint_count:
        raise SchemaError('%s declares %d joints, expected %d' % (path, declared_joints, joint_count))
    return meta


def read_keypoint_records(path, joint_count=JOINT_COUNT, header_record=META_RECORD):
    """
    Reads a keypoint file into (header record, frame indices, keypoints).
    Shared by sequence and cycle files, which differ only in their header.
    """
    header, frame_indices, rows = None, [], []
    with open_input(path) as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            record = _load_record(path, line_number, line)
            kind = record['record']
            if header is None:
                if kind != header_record:
                    raise ParseError(path, line_number, "first record must be '%s', got '%s'" % (header_record, kind))
                header = record
                continue
            if kind != FRAME_RECORD:
                raise ParseError(path, line_number, "unexpected '%s' record" % kind)
            frame_index = record.get('frame_index')
            values = record.get('keypoints')
            if not isinstance(frame_index, int) or not isinstance(values, list):
                raise ParseError(path, line_number, 'frame record needs an integer frame_index and a keypoints list',
                                 frame_index)
            if len(values) != 3 * joint_count:
                raise SchemaError('%s line %d (frame %d): %d values, expected %d joints x 3'
                                  % (path, line_number, frame_index, len(values), joint_count))
            try:
                rows.append(np.array(values, dtype=np.float64).reshape(joint_count, 3))
            except (TypeError, ValueError) as e:
                raise ParseError(path, line_number, 'non-numeric keypoint - %s' % e, frame_index)
            frame_indices.append(frame_index)
    if header is None:
        raise ParseError(path, 1, 'empty keypoint file')
    keypoints = np.stack(rows) if rows else np.zeros((0, joint_count, 3))
    return header, frame_indices, keypoints


def parse_sequence(path, joint_count=JOINT_COUNT):
    header, frame_indices, keypoints = read_keypoint_records(path, joint_count)
    meta = _meta_from_record(path, header, joint_count)
    return SkeletonSequence(keypoints, frame_indices, **meta)


def frame_record(frame_index, keypoints):
    return json.dumps(OrderedDict([('record', FRAME_RECORD), ('frame_index', int(frame_index)),
                                   ('keypoints', keypoints.reshape(-1).tolist())]))


def serialize_sequence(seq, path):
    header = OrderedDict([('record', META_RECORD), ('joint_count', seq.joint_count)])
    header.update(seq.meta())
    with open(path, 'w') as f:
        f.write(json.dumps(header) + '\n')
        for frame_index, keypoints in zip(seq.frame_indices, seq.keypoints):
            f.write(frame_record(frame_index, keypoints) + '\n')
    return path


def normalize_coordinates(seq):
    """
    Maps pixel coordinates into [-1, 1] using the frame dimensions:
    x' = 2x / frame_width - 1, y' = 2y / frame_height - 1.
    """
    width, height = seq.frame_width, seq.frame_height
    if not (width > 0 and height > 0):
        raise ValidationError('frame dimensions must be positive, got %sx%s' % (width, height))
    keypoints = np.array(seq.keypoints)
    keypoints[:, :, 0] = 2.0 * keypoints[:, :, 0] / width - 1.0
    keypoints[:, :, 1] = 2.0 * keypoints[:, :, 1] / height - 1.0
    return seq.replace_keypoints(keypoints)


def mask_low_confidence(seq, threshold, layout=None):
    """
    Repairs keypoints whose confidence is below threshold by linear
    interpolation over time from the same joint's valid observations,
    holding the nearest value past either end. Confidences are kept.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError('confidence threshold must be in [0, 1], got %s' % threshold)
    keypoints = np.array(seq.keypoints)
    valid = keypoints[:, :, 2] >= threshold
    if valid.all():
        return seq
    times = np.asarray(seq.frame_indices, dtype=np.float64)
    for joint in range(seq.joint_count):
        joint_valid = valid[:, joint]
        if joint_valid.all():
            continue
        if not joint_valid.any():
            name = layout.joint_names[joint] if layout is not None else None
            raise UnusableJointError(joint, name)
        for axis in (0, 1):
            keypoints[~joint_valid, joint, axis] = np.interp(times[~joint_valid], times[joint_valid],
                                                             keypoints[joint_valid, joint, axis])
    return seq.replace_keypoints(keypoints)


class ManifestRow(namedtuple('ManifestRow', MANIFEST_HEADER)):

    def load(self):
        return parse_sequence(self.path)


def _optional_int(value):
    return None if value in (None, '') else int(value)


def read_manifest(path):
    rows = []
    with open_input(path) as f:
        reader = csv.DictReader(f)
        missing = [column for column in MANIFEST_HEADER if column not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError('%s is missing manifest columns %s' % (path, ', '.join(missing)))
        for line_number, row in enumerate(reader, 2):
            try:
                rows.append(ManifestRow(relative_to(path, row['path']), row['video_id'], row['subject_id'],
                                        row['site_id'], row['label'] or None, _optional_int(row['severity'])))
            except ValueError as e:
                raise ParseError(path, line_number, 'bad manifest row - %s' % e)
    return rows


def write_manifest(rows, path):
    with open(path, 'w') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(MANIFEST_HEADER)
        for row in rows:
            writer.writerow(['' if value is None else value for value in row])
    return path
