import json
import os

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from atgcn.errors import EXIT_DATA, InputFileError, OrderingError, ParseError, SchemaError, UnusableJointError, \
    ValidationError
from atgcn.skeleton import ATAXIC, HEALTHY, JOINT_COUNT, OPENPOSE_LAYOUT, ManifestRow, SkeletonLayout, \
    SkeletonSequence, group_severity, mask_low_confidence, normalize_coordinates, parse_sequence, read_manifest, \
    serialize_sequence, write_manifest


def make_sequence(frames=4, label=ATAXIC, severity=2, confidence=0.9):
    keypoints = np.zeros((frames, JOINT_COUNT, 3))
    keypoints[:, :, 0] = np.arange(frames)[:, None] * 10.0
    keypoints[:, :, 1] = np.arange(JOINT_COUNT)[None, :] * 5.0
    keypoints[:, :, 2] = confidence
    return SkeletonSequence(keypoints, np.arange(frames), 30.0, 640, 480, subject_id='s01', video_id='v01',
                            site_id='a', label=label, severity=severity)


def meta_line(**changes):
    meta = {'record': 'meta', 'joint_count': JOINT_COUNT, 'fps': 30.0, 'frame_width': 640, 'frame_height': 480,
            'subject_id': 's01', 'video_id': 'v01', 'site_id': 'a', 'label': 'ataxic', 'severity': 1}
    meta.update(changes)
    return json.dumps(meta)


def frame_line(frame_index, value=1.0, joints=JOINT_COUNT):
    return json.dumps({'record': 'frame', 'frame_index': frame_index, 'keypoints': [value, value, 0.5] * joints})


class TestSkeletonLayout:

    def test_openpose_layout(self):
        assert OPENPOSE_LAYOUT.joint_count == 18
        assert len(OPENPOSE_LAYOUT.edge_set) == 17
        assert OPENPOSE_LAYOUT.joint_names[OPENPOSE_LAYOUT.left_ankle_index] == 'left_ankle'
        assert OPENPOSE_LAYOUT.joint_names[OPENPOSE_LAYOUT.right_ankle_index] == 'right_ankle'

    def test_cycle_is_rejected(self):
        with pytest.raises(ValidationError):
            SkeletonLayout(['a', 'b', 'c'], [(0, 1), (1, 0)])

    def test_forest_is_rejected(self):
        with pytest.raises(ValidationError):
            SkeletonLayout(['a', 'b', 'c', 'd'], [(0, 1), (2, 3), (3, 2)])

    def test_self_loop_is_rejected(self):
        with pytest.raises(ValidationError):
            SkeletonLayout(['a', 'b'], [(1, 1)])


class TestSkeletonSequence:

    def test_arrays_are_read_only(self):
        seq = make_sequence()
        with pytest.raises(ValueError):
            seq.keypoints[0, 0, 0] = 1.0

    def test_frames_view(self):
        frame = make_sequence().frames[1]
        assert frame.frame_index == 1
        assert frame.keypoints[3].x == 10.0
        assert frame.keypoints[3].y == 15.0

    def test_frame_indices_must_increase(self):
        keypoints = np.full((3, JOINT_COUNT, 3), 0.5)
        with pytest.raises(OrderingError):
            SkeletonSequence(keypoints, [0, 2, 2], 30.0, 640, 480)

    def test_single_frame_is_rejected(self):
        with pytest.raises(ValidationError):
            make_sequence(frames=1)

    def test_confidence_range(self):
        with pytest.raises(ValidationError):
            make_sequence(confidence=1.5)

    def test_healthy_with_severity_is_rejected(self):
        with pytest.raises(ValidationError):
            make_sequence(label=HEALTHY, severity=1)

    def test_unknown_label(self):
        with pytest.raises(ValidationError):
            make_sequence(label='limping', severity=None)

    def test_group_severity(self):
        assert [group_severity(score) for score in range(9)] == [0, 1, 2, 3, 3, 3, 3, 3, 3]
        with pytest.raises(ValidationError):
            group_severity(9)


class TestKeypointFiles:

    def write(self, tmpdir, lines, name='walk.jsonl'):
        path = tmpdir.join(name)
        path.write('\n'.join(lines) + '\n')
        return str(path)

    def test_serialize_then_parse(self, tmpdir):
        seq = make_sequence()
        path = serialize_sequence(seq, os.path.join(str(tmpdir), 'walk.jsonl'))
        parsed = parse_sequence(path)
        assert np.array_equal(parsed.keypoints, seq.keypoints)
        assert parsed.meta() == seq.meta()

    def test_blank_lines_are_skipped(self, tmpdir):
        seq = parse_sequence(self.write(tmpdir, [meta_line(), '', frame_line(0), frame_line(5)]))
        assert seq.frame_indices.tolist() == [0, 5]

    def test_malformed_record_reports_line(self, tmpdir):
        path = self.write(tmpdir, [meta_line(), frame_line(0), '{"record": "frame", '])
        with pytest.raises(ParseError) as info:
            parse_sequence(path)
        assert info.value.line_number == 3
        assert info.value.path == path

    def test_nan_is_rejected(self, tmpdir):
        bad = '{"record": "frame", "frame_index": 1, "keypoints": [NaN' + ', 0.5' * (3 * JOINT_COUNT - 1) + ']}'
        with pytest.raises(ParseError):
            parse_sequence(self.write(tmpdir, [meta_line(), frame_line(0), bad]))

    def test_wrong_joint_count(self, tmpdir):
        with pytest.raises(SchemaError):
            parse_sequence(self.write(tmpdir, [meta_line(), frame_line(0), frame_line(1, joints=17)]))

    def test_missing_meta(self, tmpdir):
        with pytest.raises(ParseError):
            parse_sequence(self.write(tmpdir, [frame_line(0), frame_line(1)]))

    def test_out_of_order_frames(self, tmpdir):
        with pytest.raises(OrderingError):
            parse_sequence(self.write(tmpdir, [meta_line(), frame_line(3), frame_line(1)]))

    def test_sara_gait_score_is_grouped(self, tmpdir):
        lines = [meta_line(severity=None, sara_gait_score=5), frame_line(0), frame_line(1)]
        assert parse_sequence(self.write(tmpdir, lines)).severity == 3

    def test_manifest(self, tmpdir):
        serialize_sequence(make_sequence(), os.path.join(str(tmpdir), 'walk.jsonl'))
        rows = [ManifestRow('walk.jsonl', 'v01', 's01', 'a', ATAXIC, 2),
                ManifestRow('other.jsonl', 'v02', 's02', 'b', None, None)]
        path = write_manifest(rows, os.path.join(str(tmpdir), 'manifest.csv'))
        read = read_manifest(path)
        assert read[0].path == os.path.join(str(tmpdir), 'walk.jsonl')
        assert read[0].severity == 2
        assert read[1].label is None and read[1].severity is None
        assert read[0].load().video_id == 'v01'

    def test_missing_file(self, tmpdir):
        with pytest.raises(InputFileError) as info:
            parse_sequence(os.path.join(str(tmpdir), 'gone.jsonl'))
        assert info.value.exit_code == EXIT_DATA
        assert 'gone.jsonl' in str(info.value)
        with pytest.raises(InputFileError):
            read_manifest(os.path.join(str(tmpdir), 'gone.csv'))

    def test_manifest_columns(self, tmpdir):
        path = tmpdir.join('manifest.csv')
        path.write('path,video_id\nwalk.jsonl,v01\n')
        with pytest.raises(SchemaError):
            read_manifest(str(path))


class TestCoordinates:

    def test_normalize_maps_frame_corners(self):
        keypoints = np.full((2, JOINT_COUNT, 3), 0.9)
        keypoints[0, :, :2] = 0.0
        keypoints[1, :, 0], keypoints[1, :, 1] = 640.0, 480.0
        seq = normalize_coordinates(SkeletonSequence(keypoints, [0, 1], 30.0, 640, 480))
        assert np.allclose(seq.keypoints[0, :, :2], -1.0)
        assert np.allclose(seq.keypoints[1, :, :2], 1.0)
        assert np.allclose(seq.keypoints[:, :, 2], 0.9)

    def test_mask_interpolates_and_holds_ends(self):
        seq = make_sequence(frames=5)
        keypoints = np.array(seq.keypoints)
        keypoints[0, 4, 2] = 0.0
        keypoints[2, 4, 2] = 0.05
        keypoints[4, 4, 2] = 0.0
        masked = mask_low_confidence(seq.replace_keypoints(keypoints), 0.1)
        assert masked.keypoints[:, 4, 0].tolist() == [10.0, 10.0, 20.0, 30.0, 30.0]
        assert masked.keypoints[2, 4, 2] == 0.05

    def test_mask_interpolates_over_frame_time(self):
        keypoints = np.zeros((3, JOINT_COUNT, 3))
        keypoints[:, :, 2] = 0.9
        keypoints[:, 4, 0] = [0.0, 999.0, 11.0]
        keypoints[1, 4, 2] = 0.0
        seq = SkeletonSequence(keypoints, np.array([0, 10, 11]), 30.0, 640, 480)
        masked = mask_low_confidence(seq, 0.1)
        assert masked.keypoints[1, 4, 0] == pytest.approx(10.0)

    def test_mask_leaves_confident_sequence(self):
        seq = make_sequence()
        assert mask_low_confidence(seq, 0.5) is seq

    def test_unusable_joint(self):
        seq = make_sequence()
        keypoints = np.array(seq.keypoints)
        keypoints[:, 13, 2] = 0.0
        with pytest.raises(UnusableJointError) as info:
            mask_low_confidence(seq.replace_keypoints(keypoints), 0.1, OPENPOSE_LAYOUT)
        assert info.value.joint_index == 13
        assert 'left_ankle' in str(info.value)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.booleans(), min_size=3, max_size=12).filter(any), st.floats(0.05, 1.0))
    def test_mask_keeps_valid_keypoints(self, valid, threshold):
        frames = len(valid)
        keypoints = np.random.RandomState(frames).uniform(0, 400, (frames, JOINT_COUNT, 3))
        keypoints[:, :, 2] = 1.0
        keypoints[~np.array(valid), 0, 2] = threshold / 2.0
        seq = SkeletonSequence(keypoints, np.arange(frames), 30.0, 640, 480)
        masked = mask_low_confidence(seq, threshold)
        assert np.array_equal(masked.keypoints[np.array(valid)], keypoints[np.array(valid)])
        assert np.array_equal(masked.keypoints[:, 1:], keypoints[:, 1:])
        low, high = keypoints[np.array(valid), 0, 0].min(), keypoints[np.array(valid), 0, 0].max()
        assert np.all(masked.keypoints[:, 0, 0] >= low) and np.all(masked.keypoints[:, 0, 0] <= high)
