
import gevent
from gevent.queue import Queue, Empty
from datetime import datetime

MONITOR_DEFAULT_DMSG_LEVEL = 1
MONITOR_VERBOSE_DMSG_LEVEL = 2


class Monitor:
    """
    Provides capabilities for monitoring a run:
        logging:
            debug, at a default or verbose level
        notifications:
            components announce they finished, whoever drives them listens
    """

    def __init__(self, log, no_debug_msgs=False, verbose_debug_mode=False):
        self._log = log
        self._debug_msgs = not no_debug_msgs
        self._debug_msg_level = MONITOR_VERBOSE_DMSG_LEVEL if verbose_debug_mode else MONITOR_DEFAULT_DMSG_LEVEL
        self._messages = self._setup_msg_system()
        self._notifications = Queue(None)

    def debug(self, msg, debug_level=None):
        if debug_level is None:
            debug_level = MONITOR_DEFAULT_DMSG_LEVEL
        if self._debug_msgs and debug_level <= self._debug_msg_level:
            self._debug(datetime.now(), msg)

    def _debug(self, timestamp, msg):
        self._messages.put((timestamp, msg))
        gevent.sleep(0)

    def flush(self):
        """
        Hands every queued message to the log; called before the process exits.
        """
        while True:
            try:
                self._write(self._messages.get_nowait())
            except Empty:
                return

    def notification(self, timeout=None):
        return self._notifications.get(timeout=timeout)

    def notify(self, notifier, msg=''):
        self._notifications.put((notifier, msg))
        gevent.sleep(0)

    def wait_for(self, notifier, msg, timeout=None):
        """
        Blocks until notifier announces msg; notifications from others are
        logged and dropped.
        """
        while True:
            received_notifier, received_msg = self.notification(timeout)
            if received_notifier == notifier and received_msg == msg:
                return
            self.debug('ignored notification from %s - %s' % (getattr(received_notifier, '__name__', received_notifier),
                                                              received_msg), MONITOR_VERBOSE_DMSG_LEVEL)

    def _process_msgs(self):
        while True:
            self._write(self._messages.get())

    def _setup_msg_system(self):
        messages = Queue(None)
        gevent.spawn(self._process_msgs)
        return messages

    def _write(self, msg):
        timestamp, text = msg
        self._log.debug('%s - %s' % (timestamp, text))
