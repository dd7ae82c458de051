import csv
import os.path
import shutil

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt

from atgcn.utils import ensure_dir

BUILD_DIR_NAME = '.build'

# fixed ids and no timestamp, so equal inputs give byte-identical svg files
matplotlib.rcParams['svg.hashsalt'] = 'atgcn'


class ReportTable:
    """
    A csv table whose columns are declared as header -> field, where field
    names a key of the row mappings (or an attribute of the row objects)
    handed to add(). Rows go to a file in a build directory, finish() moves
    the complete file into the output directory.
    """

    def __init__(self, file_name, header_fields, out_dir, monitor, build_dir=None):
        self.__klass = type(self)
        self.__klass_name = self.__klass.__name__
        self.__monitor = monitor
        self.__file_name = file_name
        self.__header_fields = header_fields
        self.__out_dir = out_dir
        self.__build_dir = build_dir if build_dir is not None else os.path.join(out_dir, BUILD_DIR_NAME)
        self.__build_file = None
        self.__build_file_name = None
        self.__build_file_writer = None
        self.__row_count = 0

    def add(self, row):
        if self.__build_file_writer is None:
            self.__open_build_file()
        self.__build_file_writer.writerow([_format(_field(row, field)) for field in self.__header_fields.values()])
        self.__row_count += 1

    def add_all(self, rows):
        for row in rows:
            self.add(row)
        return self

    def __debug(self, msg, debug_level=None):
        self.__monitor.debug('{0}: {1}'.format(self.__klass_name, msg), debug_level)

    def finish(self):
        """
        @return: path of the published table
        """
        if self.__build_file_writer is None:
            self.__open_build_file()
        self.__build_file.close()
        ensure_dir(self.__out_dir)
        release_name = os.path.join(self.__out_dir, self.__file_name)
        shutil.move(self.__build_file_name, release_name)
        self.__debug('wrote %d rows to %s' % (self.__row_count, release_name))
        return release_name

    def __open_build_file(self):
        ensure_dir(self.__build_dir)
        self.__build_file_name = os.path.join(self.__build_dir, self.__file_name)
        self.__build_file = open(self.__build_file_name, 'w')
        self.__build_file_writer = csv.writer(self.__build_file, lineterminator='\n')
        self.__build_file_writer.writerow(list(self.__header_fields.keys()))


def _field(row, field):
    if isinstance(row, dict):
        return row[field]
    return getattr(row, field)


def _format(value):
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return value


def write_table(file_name, header_fields, rows, out_dir, monitor):
    return ReportTable(file_name, header_fields, out_dir, monitor).add_all(rows).finish()


def _save_svg(figure, path):
    figure.savefig(path, format='svg', metadata={'Date': None})
    plt.close(figure)
    return path


def plot_distance(trace, path, title=''):
    """
    Raw and smoothed inter-ankle distance with the detected peaks marked.
    """
    frames = range(len(trace.raw))
    figure, axes = plt.subplots(figsize=(10, 4))
    axes.plot(frames, trace.raw.values, color='0.6', linewidth=1, label='raw')
    axes.plot(frames, trace.smoothed.values, color='C0', linewidth=1.5, label='smoothed')
    axes.plot(trace.peaks, trace.smoothed.values[trace.peaks], 'v', color='C3', label='peaks')
    axes.set_xlabel('frame')
    axes.set_ylabel('ankle distance')
    axes.set_title(title)
    axes.legend(loc='upper right')
    return _save_svg(figure, path)


def plot_losses(epoch_losses, path, title=''):
    figure, axes = plt.subplots(figsize=(8, 4))
    axes.plot(range(1, len(epoch_losses) + 1), epoch_losses, color='C0')
    axes.set_xlabel('epoch')
    axes.set_ylabel('mean training loss')
    axes.set_title(title)
    return _save_svg(figure, path)
