"""
Checkpoint container.

One file: a magic line, a single line of JSON manifest, then the payload of
every tensor as little-endian 64-bit floats, back to back. The manifest
lists each tensor's name, shape, kind and byte offset into the payload, plus
the model spec, the seed, training counters and the gravity radii the graph
was built from, so a checkpoint is loadable without the training data.
"""
from collections import OrderedDict
import json

import numpy as np

from atgcn.errors import CheckpointShapeError, ManifestError, TruncatedPayloadError
from atgcn.model import Model, ModelSpec
from atgcn.skeleton import OPENPOSE_LAYOUT
from atgcn.st_graph import GravityRadii, build_partitioned_adjacency
from atgcn.utils import open_input

MAGIC = b'ATGCN-CHECKPOINT\n'
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype('<f8')


def _manifest(model, seed, counters):
    tensors, offset = [], 0
    for name, (kind, value) in model.named_tensors().items():
        tensors.append(OrderedDict([('name', name), ('kind', kind), ('shape', list(value.shape)),
                                    ('offset', offset)]))
        offset += value.size * PAYLOAD_DTYPE.itemsize
    return OrderedDict([
        ('format_version', FORMAT_VERSION),
        ('spec', model.spec.as_dict()),
        ('seed', model.seed if seed is None else seed),
        ('counters', OrderedDict(counters or {})),
        ('radii', model.graph.radii.r.tolist()),
        ('tensors', tensors),
        ('payload_bytes', offset),
    ])


def save(model, path, seed=None, counters=None):
    """
    @param counters: training state to keep alongside, e.g. epochs and steps
    @return: path
    """
    manifest = _manifest(model, seed, counters)
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(json.dumps(manifest).encode('utf-8') + b'\n')
        for kind, value in model.named_tensors().values():
            f.write(np.ascontiguousarray(value, dtype=PAYLOAD_DTYPE).tobytes())
    return path


def read_manifest(path):
    """
    @return: (manifest, payload bytes)
    """
    with open_input(path, 'rb') as f:
        magic = f.readline()
        if magic != MAGIC:
            raise ManifestError("'%s' is not a checkpoint file" % path)
        line = f.readline()
        payload = f.read()
    try:
        manifest = json.loads(line.decode('utf-8'))
    except ValueError as e:
        raise ManifestError("'%s' has a corrupt manifest - %s" % (path, e))
    missing = [key for key in ('spec', 'tensors', 'radii') if key not in manifest]
    if missing:
        raise ManifestError("'%s' manifest lacks %s" % (path, ', '.join(missing)))
    if manifest.get('format_version') != FORMAT_VERSION:
        raise ManifestError("'%s' has format version %s, expected %d"
                            % (path, manifest.get('format_version'), FORMAT_VERSION))
    return manifest, payload


def _spec_difference(expected, stored):
    expected, stored = expected.as_dict(), stored.as_dict()
    if len(expected['blocks']) != len(stored['blocks']):
        return '%d blocks stored, %d expected' % (len(stored['blocks']), len(expected['blocks']))
    for key in expected:
        if expected[key] != stored[key]:
            return "'%s' is %s, expected %s" % (key, stored[key], expected[key])
    return None


def load(path, graph=None, expected_spec=None, layout=OPENPOSE_LAYOUT):
    """
    Rebuilds the model a checkpoint was saved from. Without a graph, the
    graph is rebuilt from the stored radii on layout.
    @param expected_spec: when given, a checkpoint of any other spec is rejected
    @rtype: Model, with the manifest's seed and counters on it
    """
    manifest, payload = read_manifest(path)
    try:
        spec = ModelSpec.from_dict(manifest['spec'])
    except (TypeError, KeyError, ValueError) as e:
        raise ManifestError("'%s' has an invalid model spec - %s" % (path, e))
    if expected_spec is not None:
        difference = _spec_difference(expected_spec, spec)
        if difference is not None:
            raise CheckpointShapeError("'%s' does not match the expected model: %s" % (path, difference))
    if graph is None:
        graph = build_partitioned_adjacency(layout, GravityRadii(manifest['radii']))
    model = Model(spec, graph, seed=manifest.get('seed') or 0)
    entries = OrderedDict()
    for entry in manifest['tensors']:
        if entry.get('name') in entries:
            raise ManifestError("'%s' lists tensor '%s' twice" % (path, entry.get('name')))
        entries[entry.get('name')] = entry
    expected = model.named_tensors()
    unknown = [name for name in entries if name not in expected]
    if unknown:
        raise ManifestError("'%s' has tensors the model does not: %s" % (path, ', '.join(unknown)))
    for name, (kind, current) in expected.items():
        if name not in entries:
            raise ManifestError("'%s' is missing tensor '%s'" % (path, name))
        entry = entries[name]
        shape = tuple(entry['shape'])
        if shape != current.shape:
            raise CheckpointShapeError("tensor '%s' is stored as %s, the model needs %s" % (name, shape, current.shape))
        start = entry['offset']
        end = start + current.size * PAYLOAD_DTYPE.itemsize
        if end > len(payload):
            raise TruncatedPayloadError("'%s' payload ends at byte %d, tensor '%s' needs bytes %d-%d"
                                        % (path, len(payload), name, start, end))
        model.assign_tensor(name, np.frombuffer(payload[start:end], dtype=PAYLOAD_DTYPE).astype(np.float64)
                            .reshape(shape))
    model.counters = manifest.get('counters', {})
    return model
