"""
run_manifest.json: what a run was asked to do and what it read and wrote,
enough to repeat it and check the repeat produced the same bytes.
"""
from collections import OrderedDict
import json
import os

from atgcn.utils import file_sha256

RUN_MANIFEST_NAME = 'run_manifest.json'


def _hashes(paths):
    hashes = OrderedDict()
    for path in paths:
        if os.path.isfile(path):
            hashes[path] = file_sha256(path)
    return hashes


def write_run_manifest(out_dir, argv, subcommand, config, seed, inputs=(), artifacts=()):
    manifest = OrderedDict([
        ('argv', list(argv)),
        ('subcommand', subcommand),
        ('seed', seed),
        ('config', config),
        ('inputs', _hashes(inputs)),
        ('artifacts', _hashes(artifacts)),
    ])
    path = os.path.join(out_dir, RUN_MANIFEST_NAME)
    with open(path, 'w') as f:
        json.dump(manifest, f, indent=2)
        f.write('\n')
    return path


def read_run_manifest(out_dir):
    with open(os.path.join(out_dir, RUN_MANIFEST_NAME), 'r') as f:
        return json.load(f, object_pairs_hook=OrderedDict)
