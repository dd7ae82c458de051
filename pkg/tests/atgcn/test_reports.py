from collections import OrderedDict, namedtuple
import os

import mock

from atgcn.cycles import extract_cycles
from atgcn.reports import BUILD_DIR_NAME, ReportTable, plot_distance, plot_losses, write_table
from atgcn.synth_gait import GaitParams, generate_sequence
from atgcn.utils import file_sha256

Row = namedtuple('Row', ['video_id', 'probability'])


class TestReportTable:

    def setup_method(self, method):
        self._monitor = mock.Mock()
        self._header = OrderedDict([('video', 'video_id'), ('p_ataxic', 'probability')])

    def test_rows_from_mappings_and_objects(self, tmpdir):
        table = ReportTable('predictions.csv', self._header, str(tmpdir), self._monitor)
        table.add({'video_id': 'v1', 'probability': 0.25})
        table.add(Row('v2', None))
        path = table.finish()
        assert path == os.path.join(str(tmpdir), 'predictions.csv')
        assert open(path).read() == 'video,p_ataxic\nv1,0.25\nv2,\n'
        assert not os.path.exists(os.path.join(str(tmpdir), BUILD_DIR_NAME, 'predictions.csv'))
        assert self._monitor.debug.call_count == 1

    def test_nothing_published_before_finish(self, tmpdir):
        table = ReportTable('scores.csv', self._header, str(tmpdir), self._monitor)
        table.add(Row('v1', 0.5))
        assert not os.path.exists(os.path.join(str(tmpdir), 'scores.csv'))
        table.finish()
        assert os.path.exists(os.path.join(str(tmpdir), 'scores.csv'))

    def test_empty_table_has_a_header(self, tmpdir):
        path = write_table('empty.csv', self._header, [], str(tmpdir), self._monitor)
        assert open(path).read() == 'video,p_ataxic\n'

    def test_floats_keep_full_precision(self, tmpdir):
        path = write_table('x.csv', self._header, [Row('v', 1.0 / 3.0)], str(tmpdir), self._monitor)
        assert float(open(path).read().splitlines()[1].split(',')[1]) == 1.0 / 3.0


class TestPlots:

    def test_distance_plot(self, tmpdir):
        _, trace = extract_cycles(generate_sequence(GaitParams(cadence=0.5, duration=10.0)))
        first = plot_distance(trace, os.path.join(str(tmpdir), 'first.svg'), 'walker')
        second = plot_distance(trace, os.path.join(str(tmpdir), 'second.svg'), 'walker')
        assert open(first).read().lstrip().startswith('<?xml')
        assert file_sha256(first) == file_sha256(second)

    def test_loss_plot(self, tmpdir):
        path = plot_losses([0.7, 0.5, 0.45], os.path.join(str(tmpdir), 'loss.svg'))
        assert os.path.getsize(path) > 0
