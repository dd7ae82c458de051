#!/usr/bin/env python

import logging
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from atgcn.cli import run

logging.basicConfig(level=logging.DEBUG, format='%(message)s')

if __name__ == '__main__':
    sys.exit(run(sys.argv[1:]))
