from collections import OrderedDict
import os

from atgcn.errors import UsageError
from atgcn.utils import convert_to_int, env_var_active

#
# The values in these next two constants configure features, which are loaded in from environment variables
#
# The CONTROL IDS contain parametrization values for features
#
# The SWITCH IDS are used to turn on and off features
#
PROFILE = 'ATGCN_PROFILE'
WORKERS = 'ATGCN_WORKERS'
VERBOSE = 'ATGCN_VERBOSE'
NO_DEBUG_MSGS = 'ATGCN_NO_DEBUG_MSGS'
RUN_SLOW = 'ATGCN_RUN_SLOW'

FEATURE_CONTROL_IDS = [PROFILE, WORKERS]
FEATURE_SWITCH_IDS = [VERBOSE, NO_DEBUG_MSGS, RUN_SLOW]

PAPER_PROFILE = 'paper'
DESK_PROFILE = 'desk'

PROFILES = OrderedDict([
    (PAPER_PROFILE, OrderedDict([
        ('lr', 3e-5),
        ('batch_size', 64),
        ('epochs', 500),
        ('folds', 10),
        ('repeats', 20),
        ('level', 6),
    ])),
    # quick enough for CI on synthetic data; the paper profile assumes pre-trained weights
    (DESK_PROFILE, OrderedDict([
        ('lr', 1e-3),
        ('batch_size', 16),
        ('epochs', 100),
        ('folds', 10),
        ('repeats', 2),
        ('level', 2),
    ])),
])

DEFAULT_WORKERS = 1


def default_profile_name():
    return os.environ.get(PROFILE) or DESK_PROFILE


def feature_controls():
    controls = OrderedDict((control, os.environ.get(control)) for control in FEATURE_CONTROL_IDS)
    for switch in FEATURE_SWITCH_IDS:
        controls[switch] = env_var_active(switch)
    return controls


def profile_settings(name=None):
    """
    Returns a fresh copy of the named profile's hyperparameters.
    @param name: 'paper' or 'desk', defaults to ATGCN_PROFILE or desk
    @rtype: OrderedDict
    """
    if name is None:
        name = default_profile_name()
    if name not in PROFILES:
        raise UsageError("unknown profile '%s', expected one of %s" % (name, ', '.join(PROFILES)))
    return OrderedDict(PROFILES[name])


def worker_count():
    return max(1, convert_to_int(os.environ.get(WORKERS), DEFAULT_WORKERS))
