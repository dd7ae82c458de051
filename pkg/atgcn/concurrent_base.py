
import gevent
from gevent.queue import JoinableQueue

from atgcn.monitor import MONITOR_VERBOSE_DMSG_LEVEL


class ThrowawayCommandsQueue:
    """
    Stands in for the commands queue once finish() was requested.
    """

    def put(self, _):
        pass


class ConcurrentBase(object):
    """
    Runs units of work (a truncation level, a cross-validation cell) on a
    pool of worker greenlets. Provides the following useful methods to its
    inheriting classes:

    + _debug()
    + _notify()
    + _put()
    + _store_result()
    + finish()
    + wait_for_finish()

    Results are keyed by unit, so the order the workers happen to run them in
    never shows up in what results() returns.
    """

    def __init__(self, monitor, workers=1):
        self.klass = type(self)
        self.klass_name = self.klass.__name__
        self.FINISHED_PROCESSING = '{0}: finished processing'.format(self.klass_name)
        self._monitor = monitor
        self._workers_to_start = workers
        self._read_commands_q, self._write_commands_q = None, None
        self._results = {}
        self._failures = []
        self._finisher = None
        self._workers = []
        self._setup_command_system()

    def _debug(self, msg, debug_level=None):
        self._monitor.debug('{0}: {1}'.format(self.klass_name, msg), debug_level)

    def finish(self):
        self._prevent_new_requests_from_being_processed()
        self._finisher = gevent.spawn(self._wait_for_processing_to_finish)
        gevent.sleep(0)

    def _notify(self, notification_msg):
        self._monitor.notify(self.klass, notification_msg)

    def _prevent_new_requests_from_being_processed(self):
        # don't accept new commands after receiving a finish command
        self._write_commands_q = ThrowawayCommandsQueue()

    def _process_commands(self):
        while True:
            key, func, args = self._read_commands_q.get()
            try:
                self._store_result(key, func(args))
            except Exception as e:
                self._debug('unit %s failed - %s' % (key, e))
                self._failures.append((key, e))
            finally:
                self._read_commands_q.task_done()

    def _put(self, key, method, args):
        ## tell some worker to do arbitrary command
        self._debug('queued unit %s' % (key,), MONITOR_VERBOSE_DMSG_LEVEL)
        self._write_commands_q.put((key, method, args))

    def results(self):
        return [(key, self._results[key]) for key in sorted(self._results)]

    def _setup_command_system(self):
        # we have two refs to the commands queue,
        # but write_commands_q will switch to throwaway
        # after we receive a finish command
        self._read_commands_q = JoinableQueue(None)
        self._write_commands_q = self._read_commands_q
        self._workers = [gevent.spawn(self._process_commands) for x in range(self._workers_to_start)]

    def _store_result(self, key, result):
        self._results[key] = result

    def wait_for_finish(self):
        """
        Waits for the queued units; re-raises the failure of the lowest unit key.
        """
        if self._finisher is None:
            self.finish()
        self._finisher.join()
        if self._failures:
            key, error = sorted(self._failures, key=lambda failure: failure[0])[0]
            raise self._annotate_failure(key, error)

    def _annotate_failure(self, key, error):
        return error

    def _wait_for_processing_to_finish(self):
        self._read_commands_q.join()
        # the workers loop on the queue until killed
        gevent.killall(self._workers)
        self._notify(self.FINISHED_PROCESSING)
