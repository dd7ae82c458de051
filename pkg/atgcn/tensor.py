"""
Dense tensors with reverse-mode differentiation, just enough to train the
graph convolution network on a CPU.

Every op returns a Tensor remembering its parents and a function mapping
the output gradient to one gradient per parent. backward() walks the
recorded graph from a scalar loss and accumulates into Parameter.grad;
intermediate gradients are never stored on the nodes, so the same graph can
be walked again.
"""
import hashlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import logsumexp, softmax

from atgcn.errors import BackwardError, NonFiniteError, ParameterError, ShapeError

BATCH_NORM_EPSILON = 1e-5
BATCH_NORM_MOMENTUM = 0.1

TRAIN = 'train'
EVAL = 'eval'
MODES = (TRAIN, EVAL)


def _as_array(value):
    array = np.asarray(value)
    if array.dtype not in (np.float32, np.float64):
        array = array.astype(np.float64)
    return array


class Tensor(object):

    def __init__(self, value, parents=(), backward_fn=None):
        value = _as_array(value)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError('non-finite value produced, shape %s' % (value.shape,))
        self.value = value
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        self._requires_grad = any(parent.requires_grad for parent in self._parents)

    @property
    def requires_grad(self):
        return self._requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return '%s(shape=%s)' % (type(self).__name__, self.shape)

    def backward(self):
        """
        Accumulates d(self)/d(p) into p.grad for every trainable parameter
        the recorded computation of self depends on.
        """
        if self._backward_fn is None:
            raise BackwardError('backward needs a loss produced by a recorded forward computation')
        if self.value.size != 1:
            raise BackwardError('backward needs a scalar loss, got shape %s' % (self.shape,))
        grads = {id(self): np.ones_like(self.value)}
        for node in reversed(_topological_order(self)):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if isinstance(node, Parameter):
                node.grad += grad
                continue
            if node._backward_fn is None:
                continue
            for parent, parent_grad in zip(node._parents, node._backward_fn(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + parent_grad
                else:
                    grads[id(parent)] = parent_grad


class Parameter(Tensor):
    """
    A learnable leaf. Frozen parameters take part in the forward pass but
    record no graph and never receive gradient.
    """

    def __init__(self, value, name=None, trainable=True):
        super(Parameter, self).__init__(value)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.value)

    @property
    def requires_grad(self):
        return self.trainable

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def assign(self, value):
        value = _as_array(value)
        if value.shape != self.value.shape:
            raise ShapeError('cannot assign shape %s to parameter %s of shape %s'
                             % (value.shape, self.name, self.value.shape))
        if not np.all(np.isfinite(value)):
            raise NonFiniteError('non-finite value assigned to parameter %s' % self.name)
        self.value = value
        self.grad = np.zeros_like(value)


def _topological_order(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(value, parents, backward_fn):
    if any(parent.requires_grad for parent in parents):
        return Tensor(value, parents, backward_fn)
    return Tensor(value)


def _check_shape(tensor, ndim, what):
    if tensor.ndim != ndim:
        raise ShapeError('%s must have %d dimensions, got shape %s' % (what, ndim, tensor.shape))


def make_rng(seed, *stream):
    """
    Counter based generator keyed by seed plus stream labels, so every
    consumer (dropout, a block's initializer, a fold) draws from its own
    reproducible stream.
    """
    words = [int(seed)] + [_stream_word(label) for label in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def _stream_word(label):
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ParameterError('stream labels must be non-negative, got %d' % label)
        return int(label)
    return int(hashlib.sha256(str(label).encode('utf-8')).hexdigest()[:8], 16)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError('add needs equal shapes, got %s and %s' % (a.shape, b.shape))
    return _result(a.value + b.value, (a, b), lambda g: (g, g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError('mul needs equal shapes, got %s and %s' % (a.shape, b.shape))
    return _result(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value))


def total(x):
    x = as_tensor(x)
    return _result(x.value.sum(), (x,), lambda g: (np.full(x.shape, g, dtype=x.value.dtype),))


def reshape(x, shape):
    x = as_tensor(x)
    try:
        value = x.value.reshape(shape)
    except ValueError as e:
        raise ShapeError('cannot reshape %s to %s - %s' % (x.shape, shape, e))
    return _result(value, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return _result(x.value.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def relu(x):
    x = as_tensor(x)
    positive = x.value > 0
    return _result(np.where(positive, x.value, 0.0).astype(x.value.dtype), (x,), lambda g: (g * positive,))


def dropout(x, p, mode, rng):
    """
    Inverted dropout: survivors are scaled by 1 / (1 - p) in training so
    that eval mode is the identity.
    """
    if not 0.0 <= p < 1.0:
        raise ParameterError('dropout probability must be in [0, 1), got %s' % p)
    x = as_tensor(x)
    if mode != TRAIN or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.value.dtype) / (1.0 - p)
    return _result(x.value * keep, (x,), lambda g: (g * keep,))


def global_avg_pool(x):
    x = as_tensor(x)
    _check_shape(x, 4, 'pooling input')
    positions = x.shape[2] * x.shape[3]

    def backward_fn(g):
        return (np.broadcast_to(g[:, :, None, None] / positions, x.shape).copy(),)

    return _result(x.value.mean(axis=(2, 3)), (x,), backward_fn)


def linear_1x1(x, W, b=None):
    """
    @param x: [N, C]
    @param W: [C, out]
    @param b: [out] or None
    """
    x = as_tensor(x)
    _check_shape(x, 2, 'linear input')
    if W.ndim != 2 or W.shape[0] != x.shape[1]:
        raise ShapeError('linear weight %s does not fit input %s' % (W.shape, x.shape))
    value = x.value.dot(W.value)
    parents = [x, W]
    if b is not None:
        if b.shape != (W.shape[1],):
            raise ShapeError('linear bias %s does not fit weight %s' % (b.shape, W.shape))
        value = value + b.value
        parents.append(b)

    def backward_fn(g):
        grads = [g.dot(W.value.T), x.value.T.dot(g)]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _result(value, parents, backward_fn)


def graph_conv(x, adjacency, W, mask=None, bias=None):
    """
    Spatial graph convolution over the partition subsets:

        out[n, o, t, i] = sum_k sum_j (A_k * M_k)[i, j] sum_c W[k, c, o] x[n, c, t, j]
                          + sum_k B[k, o] sum_j (A_k * M_k)[i, j]

    @param x: [N, C_in, T, J]
    @param adjacency: [S, J, J] array or PartitionedGraph
    @param W: [S, C_in, C_out]
    @param mask: optional [S, J, J] edge importance
    @param bias: optional [S, C_out]
    """
    x = as_tensor(x)
    A = getattr(adjacency, 'adjacency', adjacency)
    A = np.asarray(A, dtype=x.value.dtype)
    _check_shape(x, 4, 'graph convolution input')
    subsets, joints = A.shape[0], A.shape[1]
    if A.shape != (subsets, joints, joints) or x.shape[3] != joints:
        raise ShapeError('adjacency %s does not fit input %s' % (A.shape, x.shape))
    if W.shape[:2] != (subsets, x.shape[1]) or W.ndim != 3:
        raise ShapeError('graph weight %s does not fit %d subsets of %d channels' % (W.shape, subsets, x.shape[1]))
    if mask is not None and mask.shape != A.shape:
        raise ShapeError('edge mask %s does not fit adjacency %s' % (mask.shape, A.shape))
    if bias is not None and bias.shape != (subsets, W.shape[2]):
        raise ShapeError('graph bias %s does not fit weight %s' % (bias.shape, W.shape))

    A_eff = A * mask.value if mask is not None else A
    # [N, C, T, S, I]
    xa = np.tensordot(x.value, A_eff, axes=([3], [2]))
    value = np.tensordot(xa, W.value, axes=([1, 3], [1, 0])).transpose(0, 3, 1, 2)
    row_sums = A_eff.sum(axis=2)
    if bias is not None:
        value = value + bias.value.T.dot(row_sums)[None, :, None, :]

    parents = [x, W]
    if mask is not None:
        parents.append(mask)
    if bias is not None:
        parents.append(bias)

    def backward_fn(g):
        gy = g.transpose(0, 2, 3, 1)
        # [N, T, I, S, C]
        gw = np.tensordot(gy, W.value, axes=([3], [2]))
        grads = [None, None]
        if x.requires_grad:
            grads[0] = np.tensordot(gw, A_eff, axes=([2, 3], [1, 0])).transpose(0, 2, 1, 3)
        if W.requires_grad:
            grads[1] = np.tensordot(xa, gy, axes=([0, 2, 4], [0, 1, 2])).transpose(1, 0, 2)
        g_sum = g.sum(axis=(0, 2))
        if mask is not None:
            g_mask = None
            if mask.requires_grad:
                g_eff = np.tensordot(gw, x.value, axes=([0, 1, 4], [0, 2, 1])).transpose(1, 0, 2)
                if bias is not None:
                    g_eff = g_eff + bias.value.dot(g_sum)[:, :, None]
                g_mask = g_eff * A
            grads.append(g_mask)
        if bias is not None:
            grads.append(row_sums.dot(g_sum.T))
        return grads

    return _result(value, parents, backward_fn)


def temporal_conv(x, W, bias=None, stride=1):
    """
    Per-joint convolution along time with zero padding of kernel // 2 on
    both sides, so T' = ceil(T / stride).

    @param x: [N, C, T, J]
    @param W: [C_out, C, kernel]
    """
    x = as_tensor(x)
    _check_shape(x, 4, 'temporal convolution input')
    if W.ndim != 3 or W.shape[1] != x.shape[1]:
        raise ShapeError('temporal weight %s does not fit input %s' % (W.shape, x.shape))
    kernel = W.shape[2]
    if kernel % 2 == 0:
        raise ShapeError('temporal kernel must be odd, got %d' % kernel)
    if stride not in (1, 2):
        raise ShapeError('temporal stride must be 1 or 2, got %s' % stride)
    if bias is not None and bias.shape != (W.shape[0],):
        raise ShapeError('temporal bias %s does not fit weight %s' % (bias.shape, W.shape))
    pad = kernel // 2
    frames = x.shape[2]
    padded = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    # [N, C, T', J, kernel]
    windows = sliding_window_view(padded, kernel, axis=2)[:, :, ::stride]
    out_frames = windows.shape[2]
    value = np.tensordot(windows, W.value, axes=([1, 4], [1, 2])).transpose(0, 3, 1, 2)
    parents = [x, W]
    if bias is not None:
        value = value + bias.value[None, :, None, None]
        parents.append(bias)

    def backward_fn(g):
        grads = [None, None]
        if x.requires_grad:
            # [N, T', J, C, kernel]
            g_windows = np.tensordot(g, W.value, axes=([1], [0]))
            g_padded = np.zeros_like(padded)
            span = stride * (out_frames - 1) + 1
            for gamma in range(kernel):
                g_padded[:, :, gamma:gamma + span:stride] += g_windows[..., gamma].transpose(0, 3, 1, 2)
            grads[0] = g_padded[:, :, pad:pad + frames]
        if W.requires_grad:
            grads[1] = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _result(value, parents, backward_fn)


class RunningStats(object):
    """
    Batch norm statistics carried from training into evaluation. Not
    learnable, so never counted or updated by SGD.
    """

    def __init__(self, channels, momentum=BATCH_NORM_MOMENTUM):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum

    def update(self, mean, var, count):
        unbiased = var * count / (count - 1.0)
        self.mean = (1.0 - self.momentum) * self.mean + self.momentum * mean
        self.var = (1.0 - self.momentum) * self.var + self.momentum * unbiased


def batch_norm(x, gamma, beta, running_stats, mode, eps=BATCH_NORM_EPSILON):
    """
    Per-channel normalization of [N, C, T, J] over the N, T and J axes.
    Training mode normalizes with the (biased) batch statistics and folds
    them into running_stats; eval mode uses running_stats.
    """
    x = as_tensor(x)
    _check_shape(x, 4, 'batch norm input')
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError('batch norm affine %s/%s does not fit %d channels' % (gamma.shape, beta.shape, channels))
    if mode not in MODES:
        raise ParameterError("mode must be one of %s, got '%s'" % (MODES, mode))
    axes = (0, 2, 3)
    count = x.value.size // channels
    if mode == TRAIN:
        if count < 2:
            raise ShapeError('batch norm in training mode needs 2 or more values per channel, got %d' % count)
        mean = x.value.mean(axis=axes)
        var = x.value.var(axis=axes)
        running_stats.update(mean, var, count)
    else:
        mean, var = running_stats.mean, running_stats.var
    inv_std = (1.0 / np.sqrt(var + eps))[None, :, None, None]
    x_hat = (x.value - mean[None, :, None, None]) * inv_std
    value = gamma.value[None, :, None, None] * x_hat + beta.value[None, :, None, None]

    def backward_fn(g):
        g_hat = g * gamma.value[None, :, None, None]
        if mode == TRAIN:
            g_x = inv_std / count * (count * g_hat - g_hat.sum(axis=axes, keepdims=True)
                                     - x_hat * (g_hat * x_hat).sum(axis=axes, keepdims=True))
        else:
            g_x = g_hat * inv_std
        return g_x, (g * x_hat).sum(axis=axes), g.sum(axis=axes)

    return _result(value.astype(x.value.dtype), (x, gamma, beta), backward_fn)


def softmax_cross_entropy(logits, labels):
    """
    Mean cross entropy of integer labels under softmax(logits).
    """
    logits = as_tensor(logits)
    _check_shape(logits, 2, 'logits')
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.shape[0],):
        raise ShapeError('%d labels for %d logit rows' % (labels.size, logits.shape[0]))
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ParameterError('labels must be in [0, %d)' % logits.shape[1])
    rows = np.arange(labels.size)
    losses = logsumexp(logits.value, axis=1) - logits.value[rows, labels]

    def backward_fn(g):
        g_logits = softmax(logits.value, axis=1)
        g_logits[rows, labels] -= 1.0
        return (g_logits * (g / labels.size),)

    return _result(losses.mean(), (logits,), backward_fn)


def mse_loss(pred, target):
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=pred.value.dtype).reshape(pred.shape)
    diff = pred.value - target
    return _result((diff ** 2).mean(), (pred,), lambda g: (2.0 * diff * g / diff.size,))


def probabilities(logits):
    return softmax(_as_array(getattr(logits, 'value', logits)), axis=1)


def sgd_step(params, lr):
    """
    w <- w - lr * grad for every trainable parameter, then clears all
    gradients.
    """
    for param in params:
        if param.trainable:
            param.value = param.value - lr * param.grad
        param.zero_grad()
    return params
