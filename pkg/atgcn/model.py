"""
ST-GCN blocks, the 10 block backbone and its truncated variants.

A block is a spatial graph convolution (with per-subset bias and a learnable
edge importance mask), batch norm and ReLU, then a 9 frame temporal
convolution, batch norm and dropout, plus a residual path and a final ReLU.
The residual is absent on the first block, the identity where shapes match
and a strided 1x1 projection with batch norm elsewhere.
"""
from collections import OrderedDict
import copy

import numpy as np

from atgcn.errors import CheckpointError, CheckpointShapeError, ManifestError, ParameterError, ShapeError, UsageError
from atgcn.skeleton import JOINT_COUNT
from atgcn.st_graph import DEFAULT_TEMPORAL_RANGE, SUBSET_COUNT
from atgcn.tensor import (EVAL, TRAIN, Parameter, Tensor, RunningStats, add, as_tensor, batch_norm, dropout,
                          global_avg_pool, graph_conv, linear_1x1, make_rng, relu, reshape, temporal_conv,
                          transpose)

CLASSIFICATION = 'classification'
REGRESSION = 'regression'
BACKBONE_FCN = 'backbone_fcn'
HEAD_OUTPUTS = OrderedDict([(CLASSIFICATION, 2), (REGRESSION, 1), (BACKBONE_FCN, 400)])
TASKS = (CLASSIFICATION, REGRESSION)

INPUT_CHANNELS = 3
BACKBONE_CHANNELS = (64, 64, 64, 64, 128, 128, 128, 256, 256, 256)
BACKBONE_BLOCKS = len(BACKBONE_CHANNELS)
DROPOUT_BLOCKS = 4
BACKBONE_DROPOUT = 0.5

# reference parameter counts per number of kept blocks (regression head);
# 10 is the complete backbone with its 400-way classifier
REFERENCE_PARAMETER_COUNTS = OrderedDict([
    (1, 48000),
    (2, 98000),
    (3, 147000),
    (4, 197000),
    (5, 379000),
    (6, 576000),
    (7, 774000),
    (8, 1497000),
    (9, 2286000),
    (10, 3177000),
])


class BlockConfig(object):

    def __init__(self, in_channels, out_channels, temporal_stride=1, residual=True, dropout_p=0.0):
        if in_channels < 1 or out_channels < 1:
            raise ParameterError('block channels must be positive, got %s -> %s' % (in_channels, out_channels))
        if temporal_stride not in (1, 2):
            raise ParameterError('temporal stride must be 1 or 2, got %s' % temporal_stride)
        if not 0.0 <= dropout_p < 1.0:
            raise ParameterError('dropout probability must be in [0, 1), got %s' % dropout_p)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.temporal_stride = temporal_stride
        self.residual = residual
        self.dropout_p = dropout_p

    @property
    def projected(self):
        return self.residual and (self.in_channels != self.out_channels or self.temporal_stride != 1)

    def as_dict(self):
        return OrderedDict([
            ('in_channels', self.in_channels),
            ('out_channels', self.out_channels),
            ('temporal_stride', self.temporal_stride),
            ('residual', self.residual),
            ('dropout_p', self.dropout_p),
        ])

    def __eq__(self, other):
        return isinstance(other, BlockConfig) and self.as_dict() == other.as_dict()

    def __ne__(self, other):
        return not self == other


class ModelSpec(object):

    def __init__(self, blocks, head=None, temporal_kernel=DEFAULT_TEMPORAL_RANGE, input_channels=INPUT_CHANNELS,
                 joint_count=JOINT_COUNT, edge_importance=True):
        self.blocks = list(blocks)
        self.head = head
        self.temporal_kernel = temporal_kernel
        self.input_channels = input_channels
        self.joint_count = joint_count
        self.edge_importance = edge_importance
        self._validate()

    def _validate(self):
        if not self.blocks:
            raise ParameterError('a model needs at least one block')
        if self.head is not None and self.head not in HEAD_OUTPUTS:
            raise ParameterError("head must be one of %s, got '%s'" % (', '.join(HEAD_OUTPUTS), self.head))
        channels = self.input_channels
        for index, block in enumerate(self.blocks):
            if block.in_channels != channels:
                raise ParameterError('block %d expects %d input channels, the previous layer gives %d'
                                     % (index + 1, block.in_channels, channels))
            channels = block.out_channels

    @property
    def level(self):
        return len(self.blocks)

    @property
    def output_channels(self):
        return self.blocks[-1].out_channels

    def truncated(self, level):
        return ModelSpec(self.blocks[:level], None, self.temporal_kernel, self.input_channels, self.joint_count,
                         self.edge_importance)

    def with_head(self, head):
        return ModelSpec(self.blocks, head, self.temporal_kernel, self.input_channels, self.joint_count,
                         self.edge_importance)

    def as_dict(self):
        return OrderedDict([
            ('blocks', [block.as_dict() for block in self.blocks]),
            ('head', self.head),
            ('temporal_kernel', self.temporal_kernel),
            ('input_channels', self.input_channels),
            ('joint_count', self.joint_count),
            ('edge_importance', self.edge_importance),
        ])

    @classmethod
    def from_dict(cls, fields):
        fields = dict(fields)
        blocks = [BlockConfig(**block) for block in fields.pop('blocks')]
        return cls(blocks, **fields)

    def __eq__(self, other):
        return isinstance(other, ModelSpec) and self.as_dict() == other.as_dict()

    def __ne__(self, other):
        return not self == other


def backbone_spec(joint_count=JOINT_COUNT, edge_importance=True, head=BACKBONE_FCN):
    blocks, in_channels = [], INPUT_CHANNELS
    for index, out_channels in enumerate(BACKBONE_CHANNELS):
        # stride where the channel count doubles
        stride = 2 if index > 0 and out_channels != BACKBONE_CHANNELS[index - 1] else 1
        blocks.append(BlockConfig(in_channels, out_channels, temporal_stride=stride, residual=index > 0,
                                  dropout_p=BACKBONE_DROPOUT if index < DROPOUT_BLOCKS else 0.0))
        in_channels = out_channels
    return ModelSpec(blocks, head, joint_count=joint_count, edge_importance=edge_importance)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class StGcnBlock(object):

    def __init__(self, config, index, joint_count, temporal_kernel, edge_importance, rng):
        self.config = config
        self.index = index
        self.prefix = 'blocks.%d.' % index
        cin, cout = config.in_channels, config.out_channels
        self.params = OrderedDict()
        self.stats = OrderedDict()
        self._add('gcn.weight', _uniform(rng, (SUBSET_COUNT, cin, cout), cin))
        self._add('gcn.bias', np.zeros((SUBSET_COUNT, cout)))
        if edge_importance:
            self._add('edge_importance', np.ones((SUBSET_COUNT, joint_count, joint_count)))
        self._add_batch_norm('gcn_bn', cout)
        self._add('tcn.weight', _uniform(rng, (cout, cout, temporal_kernel), cout * temporal_kernel))
        self._add('tcn.bias', np.zeros(cout))
        self._add_batch_norm('tcn_bn', cout)
        if config.projected:
            self._add('residual.weight', _uniform(rng, (cout, cin, 1), cin))
            self._add('residual.bias', np.zeros(cout))
            self._add_batch_norm('residual_bn', cout)

    def _add(self, name, value):
        self.params[name] = Parameter(value, name=self.prefix + name)

    def _add_batch_norm(self, name, channels):
        self._add(name + '.gamma', np.ones(channels))
        self._add(name + '.beta', np.zeros(channels))
        self.stats[name] = RunningStats(channels)

    def _batch_norm(self, x, name, mode):
        return batch_norm(x, self.params[name + '.gamma'], self.params[name + '.beta'], self.stats[name], mode)

    def forward(self, x, adjacency, mode, rng):
        p = self.params
        h = graph_conv(x, adjacency, p['gcn.weight'], p.get('edge_importance'), p['gcn.bias'])
        h = relu(self._batch_norm(h, 'gcn_bn', mode))
        h = temporal_conv(h, p['tcn.weight'], p['tcn.bias'], self.config.temporal_stride)
        h = self._batch_norm(h, 'tcn_bn', mode)
        h = dropout(h, self.config.dropout_p, mode, rng)
        if self.config.projected:
            shortcut = temporal_conv(x, p['residual.weight'], p['residual.bias'], self.config.temporal_stride)
            h = add(h, self._batch_norm(shortcut, 'residual_bn', mode))
        elif self.config.residual:
            h = add(h, x)
        return relu(h)


class Model(object):
    """
    Input batch norm over joints x channels, the blocks, and an optional
    head of global average pooling plus a 1x1 map to the outputs.
    """

    def __init__(self, spec, graph, seed=0, head_stream=()):
        if graph.joint_count != spec.joint_count:
            raise ShapeError('graph has %d joints, the model expects %d' % (graph.joint_count, spec.joint_count))
        self.spec = spec
        self.graph = graph
        self.seed = seed
        self.counters = {}
        stem_channels = spec.input_channels * spec.joint_count
        self.stem = OrderedDict([
            ('stem_bn.gamma', Parameter(np.ones(stem_channels), name='stem_bn.gamma')),
            ('stem_bn.beta', Parameter(np.zeros(stem_channels), name='stem_bn.beta')),
        ])
        self.stem_stats = RunningStats(stem_channels)
        self.blocks = [StGcnBlock(config, index, spec.joint_count, spec.temporal_kernel, spec.edge_importance,
                                  make_rng(seed, 'block', index))
                       for index, config in enumerate(spec.blocks)]
        self.head = OrderedDict()
        if spec.head is not None:
            self.head = _head_parameters(spec.output_channels, spec.head, make_rng(seed, 'head', *head_stream))

    @property
    def level(self):
        return self.spec.level

    def named_parameters(self):
        params = OrderedDict(self.stem)
        for block in self.blocks:
            for name, param in block.params.items():
                params[block.prefix + name] = param
        params.update(self.head)
        return params

    def parameters(self):
        return list(self.named_parameters().values())

    def named_stats(self):
        stats = OrderedDict([('stem_bn', self.stem_stats)])
        for block in self.blocks:
            for name, running in block.stats.items():
                stats[block.prefix + name] = running
        return stats

    def named_tensors(self):
        """
        Every array a checkpoint has to carry, as name -> (kind, array).
        """
        tensors = OrderedDict()
        for name, param in self.named_parameters().items():
            tensors[name] = ('parameter', param.value)
        for name, running in self.named_stats().items():
            tensors[name + '.running_mean'] = ('running_mean', running.mean)
            tensors[name + '.running_var'] = ('running_var', running.var)
        return tensors

    def assign_tensor(self, name, value):
        params = self.named_parameters()
        if name in params:
            params[name].assign(value)
            return
        stats_name, _, kind = name.rpartition('.')
        stats = self.named_stats()
        if stats_name not in stats or kind not in ('running_mean', 'running_var'):
            raise ManifestError("unknown tensor '%s'" % name)
        running = stats[stats_name]
        current = running.mean if kind == 'running_mean' else running.var
        value = np.array(value, dtype=current.dtype)
        if value.shape != current.shape:
            raise CheckpointShapeError("tensor '%s' has shape %s, the model expects %s"
                                       % (name, value.shape, current.shape))
        setattr(running, 'mean' if kind == 'running_mean' else 'var', value)

    @property
    def dtype(self):
        return self.stem['stem_bn.gamma'].value.dtype

    def forward(self, batch, mode=EVAL, rng=None):
        if not isinstance(batch, Tensor):
            batch = np.asarray(batch, dtype=self.dtype)
        x = as_tensor(batch)
        expected = (self.spec.input_channels, self.spec.joint_count)
        if x.ndim != 4 or (x.shape[1], x.shape[3]) != expected:
            raise ShapeError('model input must be [N, %d, T, %d], got %s' % (expected + (x.shape,)))
        if mode == TRAIN and rng is None:
            raise ParameterError('training mode forward needs a random generator for dropout')
        n, c, t, j = x.shape
        h = reshape(transpose(x, (0, 3, 1, 2)), (n, j * c, t, 1))
        h = batch_norm(h, self.stem['stem_bn.gamma'], self.stem['stem_bn.beta'], self.stem_stats, mode)
        h = transpose(reshape(h, (n, j, c, t)), (0, 2, 3, 1))
        for block in self.blocks:
            h = block.forward(h, self.graph.adjacency, mode, rng)
        if not self.head:
            return h
        return linear_1x1(global_avg_pool(h), self.head['head.weight'], self.head['head.bias'])

    def __call__(self, batch, mode=EVAL, rng=None):
        return self.forward(batch, mode, rng)

    def copy(self):
        return copy.deepcopy(self)

    def freeze(self):
        for param in self.parameters():
            param.trainable = False
        return self

    def unfreeze(self):
        for param in self.parameters():
            param.trainable = True
        return self

    def for_inference(self):
        """
        A frozen copy computing in 32-bit floats.
        """
        model = self.copy().freeze()
        for param in model.parameters():
            param.assign(param.value.astype(np.float32))
        for running in model.named_stats().values():
            running.mean = running.mean.astype(np.float32)
            running.var = running.var.astype(np.float32)
        return model

    def __deepcopy__(self, memo):
        # the graph is read-only and shared between copies
        memo[id(self.graph)] = self.graph
        clone = Model.__new__(Model)
        memo[id(self)] = clone
        for key, value in self.__dict__.items():
            setattr(clone, key, copy.deepcopy(value, memo))
        return clone


def _head_parameters(channels, head, rng):
    outputs = HEAD_OUTPUTS[head]
    return OrderedDict([
        ('head.weight', Parameter(_uniform(rng, (channels, outputs), channels), name='head.weight')),
        ('head.bias', Parameter(np.zeros(outputs), name='head.bias')),
    ])


def build_backbone(graph, seed=0, edge_importance=True):
    return Model(backbone_spec(graph.joint_count, edge_importance), graph, seed)


def truncate(model, level):
    """
    Keeps the stem and the first level blocks, drops the rest and the head.
    Retained weights are copied unchanged.
    """
    if not 1 <= level <= model.level:
        raise UsageError('truncation level must be in [1, %d], got %s' % (model.level, level))
    truncated = model.copy()
    truncated.spec = model.spec.truncated(level)
    truncated.blocks = truncated.blocks[:level]
    truncated.head = OrderedDict()
    return truncated


def attach_head(model, head, seed, stream=()):
    if model.head:
        raise UsageError('model already has a %s head' % model.spec.head)
    if head not in HEAD_OUTPUTS:
        raise UsageError("head must be one of %s, got '%s'" % (', '.join(HEAD_OUTPUTS), head))
    headed = model.copy()
    headed.spec = model.spec.with_head(head)
    headed.head = _head_parameters(model.spec.output_channels, head, make_rng(seed, 'head', *stream))
    return headed


def parameter_count(model):
    """
    Learnable scalars: convolution weights and biases, edge masks and batch
    norm affine terms. Running statistics are not counted.
    """
    return int(sum(param.value.size for param in model.parameters()))


def ablation_rows(graph, levels=None, head=REGRESSION, seed=0):
    """
    Parameter count of every truncation level next to the reference count.
    @rtype: list of OrderedDict
    """
    backbone = build_backbone(graph, seed)
    if levels is None:
        levels = range(1, BACKBONE_BLOCKS)
    rows, previous = [], None
    for level in levels:
        if level == BACKBONE_BLOCKS:
            count = parameter_count(backbone)
        else:
            count = parameter_count(attach_head(truncate(backbone, level), head, seed))
        reference = REFERENCE_PARAMETER_COUNTS.get(level)
        rows.append(OrderedDict([
            ('level', level),
            ('parameter_count', count),
            ('reference_count', reference),
            ('relative_difference', None if reference is None else (count - reference) / float(reference)),
            ('delta', None if previous is None else count - previous),
        ]))
        previous = count
    return rows


# key layout of converted upstream ST-GCN state dicts, mapped onto
# our names; conv weights carry trailing 1x1 kernel dims
_EXTERNAL_BATCH_NORM = OrderedDict([
    ('weight', 'gamma'),
    ('bias', 'beta'),
    ('running_mean', 'running_mean'),
    ('running_var', 'running_var'),
])


def _external_name_map(model):
    names = OrderedDict()
    for external, ours in _EXTERNAL_BATCH_NORM.items():
        names['data_bn.' + external] = ('stem_bn.' + ours, None)
    for block in model.blocks:
        b, ours = block.index, block.prefix
        external = 'st_gcn_networks.%d.' % b
        cin, cout = block.config.in_channels, block.config.out_channels
        names[external + 'gcn.conv.weight'] = (
            ours + 'gcn.weight', lambda w, cin=cin, cout=cout: w.reshape(SUBSET_COUNT, cout, cin).transpose(0, 2, 1))
        names[external + 'gcn.conv.bias'] = (
            ours + 'gcn.bias', lambda w, cout=cout: w.reshape(SUBSET_COUNT, cout))
        names['edge_importance.%d' % b] = (ours + 'edge_importance', lambda w: w.transpose(0, 2, 1))
        for index, bn in (('0', 'gcn_bn'), ('3', 'tcn_bn')):
            for ext, own in _EXTERNAL_BATCH_NORM.items():
                names['%stcn.%s.%s' % (external, index, ext)] = ('%s%s.%s' % (ours, bn, own), None)
        names[external + 'tcn.2.weight'] = (ours + 'tcn.weight', lambda w: w.reshape(w.shape[:3]))
        names[external + 'tcn.2.bias'] = (ours + 'tcn.bias', None)
        if block.config.projected:
            names[external + 'residual.0.weight'] = (ours + 'residual.weight', lambda w: w.reshape(w.shape[:3]))
            names[external + 'residual.0.bias'] = (ours + 'residual.bias', None)
            for ext, own in _EXTERNAL_BATCH_NORM.items():
                names[external + 'residual.1.' + ext] = ('%sresidual_bn.%s' % (ours, own), None)
    if model.spec.head == BACKBONE_FCN:
        names['fcn.weight'] = ('head.weight', lambda w: w.reshape(w.shape[:2]).T)
        names['fcn.bias'] = ('head.bias', None)
    return names


def import_external_weights(model, npz_path, strict=True):
    """
    Loads an archive converted from an upstream ST-GCN state
    dict (numpy .npz, one array per state dict key) into model. Batch
    counters are ignored; with strict, any other unknown key is an error.
    @return: names of the model tensors that were set
    """
    try:
        archive = np.load(npz_path)
    except (IOError, OSError, ValueError) as e:
        raise CheckpointError("cannot read weight archive '%s' - %s" % (npz_path, e))
    names = _external_name_map(model)
    expected = model.named_tensors()
    loaded = []
    with archive:
        for key in archive.files:
            if key.endswith('num_batches_tracked'):
                continue
            if key not in names:
                if strict:
                    raise ManifestError("weight archive has unknown tensor '%s'" % key)
                continue
            ours, convert = names[key]
            value = archive[key]
            try:
                value = convert(value) if convert is not None else value
            except ValueError as e:
                raise CheckpointShapeError("tensor '%s' has shape %s - %s" % (key, archive[key].shape, e))
            if value.shape != expected[ours][1].shape:
                raise CheckpointShapeError("tensor '%s' maps to shape %s, '%s' needs %s"
                                           % (key, value.shape, ours, expected[ours][1].shape))
            model.assign_tensor(ours, value.astype(np.float64))
            loaded.append(ours)
    return loaded
