#!/usr/bin/env python
"""network layers: convolution, dense, pooling, activation, normalization"""
import collections
import logging

import numpy

from localnorm.errors import EvaluationError, TensorError
from localnorm.norm import (
    BATCH, LAYER, GROUP, INSTANCE, LOCAL, SWITCH, NormSpec, affine,
    build_partition, normalize, switchnorm_forward, switch_weights,
    localnorm_forward_train, update_running_stats, channel_batch_stats,
    dynamic_or_frozen)
from localnorm.tensor import (
    Tensor, as_tensor, conv2d_forward, group_normalize, matmul, max_pool2d,
    relu, reshape, is_grad_enabled)
from localnorm.utils import NullHandler

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['ForwardContext', 'Layer', 'Conv2D', 'Dense', 'MaxPool2D',
           'Flatten', 'ReLU', 'NormLayer', 'he_uniform']


class ForwardContext(object):
    """how normalization layers pick statistics for one forward pass

    Attributes
    ----------
    training : bool
        training forward: dynamic statistics from the batch (contiguous
        K-way split for local) and running statistics updated
    stat_groups : numpy.ndarray or None
        [N] label of the statistic group each sample belongs to during
        evaluation; None means one group (batch) or the contiguous
        K-way split (local)
    affine_rows : numpy.ndarray or None
        [N] (gamma_k, beta_k) row each sample uses (local only)
    frozen : bool or None
        override the layers' stat_mode during evaluation
    update_stats : bool
        fold training batch statistics into running statistics
    """

    def __init__(self, training=False, stat_groups=None, affine_rows=None,
                 frozen=None, update_stats=True):
        self.training = training
        self.stat_groups = None if stat_groups is None else \
            numpy.asarray(stat_groups, dtype=numpy.intp).ravel()
        self.affine_rows = None if affine_rows is None else \
            numpy.asarray(affine_rows, dtype=numpy.intp).ravel()
        self.frozen = frozen
        self.update_stats = update_stats

    @classmethod
    def train(cls):
        return cls(training=True)

    @classmethod
    def evaluate(cls, stat_groups=None, affine_rows=None, frozen=None):
        return cls(training=False, stat_groups=stat_groups,
                   affine_rows=affine_rows, frozen=frozen)

    def __repr__(self):
        return 'ForwardContext(training={}, frozen={}, grouped={})'.format(
            self.training, self.frozen, self.stat_groups is not None)


def he_uniform(rng, shape, fan_in, dtype='float32'):
    """U(-sqrt(6/fan_in), sqrt(6/fan_in)) initial weights"""
    limit = numpy.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer(object):
    """base class: named layer with ordered parameters and buffers"""
    kind = None

    def __init__(self, name=None):
        self.name = name or self.kind

    def parameters(self):
        return collections.OrderedDict()

    def buffers(self):
        return collections.OrderedDict()

    def forward(self, x, ctx):
        raise NotImplementedError

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def to_dict(self):
        return {'kind': self.kind, 'name': self.name}

    def __repr__(self):
        return '{}(name={})'.format(type(self).__name__, self.name)


class Conv2D(Layer):
    """3x3 (by default) cross-correlation with bias, NHWC / HWIO

    Parameters
    ----------
    in_channels : int
        input channels C
    out_channels : int
        filters O
    kernel_size : int
        square kernel extent
    padding : str
        'same' or 'valid'
    rng : :class:`localnorm.tensor.Rng`, optional
        initializer stream (zeros if omitted)
    dtype : str
        parameter dtype
    name : str, optional
        layer name used as the parameter prefix
    """
    kind = 'conv'

    def __init__(self, in_channels, out_channels, kernel_size=3,
                 padding='same', rng=None, dtype='float32', name=None):
        super(Conv2D, self).__init__(name)
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.padding = padding
        shape = (self.kernel_size, self.kernel_size, self.in_channels,
                 self.out_channels)
        fan_in = self.kernel_size * self.kernel_size * self.in_channels
        w = numpy.zeros(shape, dtype=dtype) if rng is None else \
            he_uniform(rng, shape, fan_in, dtype)
        self.weight = Tensor(w, requires_grad=True,
                             name='{}.weight'.format(self.name))
        self.bias = Tensor(numpy.zeros(self.out_channels, dtype=dtype),
                           requires_grad=True,
                           name='{}.bias'.format(self.name))

    def parameters(self):
        return collections.OrderedDict(
            [('weight', self.weight), ('bias', self.bias)])

    def forward(self, x, ctx):
        return conv2d_forward(x, self.weight, self.bias, stride=1,
                              padding=self.padding)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if c != self.in_channels:
            raise TensorError('{} expects {} channels, got {}'.format(
                self.name, self.in_channels, c))
        if self.padding == 'valid':
            k = self.kernel_size
            return (h - k + 1, w - k + 1, self.out_channels)
        return (h, w, self.out_channels)

    def to_dict(self):
        d = super(Conv2D, self).to_dict()
        d.update({'in_channels': self.in_channels,
                  'out_channels': self.out_channels,
                  'kernel_size': self.kernel_size,
                  'padding': self.padding})
        return d


class Dense(Layer):
    """fully connected [N,F] @ [F,O] + b"""
    kind = 'dense'

    def __init__(self, in_features, out_features, rng=None, dtype='float32',
                 name=None):
        super(Dense, self).__init__(name)
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        shape = (self.in_features, self.out_features)
        w = numpy.zeros(shape, dtype=dtype) if rng is None else \
            he_uniform(rng, shape, self.in_features, dtype)
        self.weight = Tensor(w, requires_grad=True,
                             name='{}.weight'.format(self.name))
        self.bias = Tensor(numpy.zeros(self.out_features, dtype=dtype),
                           requires_grad=True,
                           name='{}.bias'.format(self.name))

    def parameters(self):
        return collections.OrderedDict(
            [('weight', self.weight), ('bias', self.bias)])

    def forward(self, x, ctx):
        return matmul(x, self.weight) + self.bias

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.in_features,):
            raise TensorError('{} expects {} features, got {}'.format(
                self.name, self.in_features, input_shape))
        return (self.out_features,)

    def to_dict(self):
        d = super(Dense, self).to_dict()
        d.update({'in_features': self.in_features,
                  'out_features': self.out_features})
        return d


class MaxPool2D(Layer):
    kind = 'pool'

    def __init__(self, size=2, name=None):
        super(MaxPool2D, self).__init__(name)
        self.size = int(size)

    def forward(self, x, ctx):
        return max_pool2d(x, self.size)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        return (h // self.size, w // self.size, c)

    def to_dict(self):
        d = super(MaxPool2D, self).to_dict()
        d['size'] = self.size
        return d


class Flatten(Layer):
    kind = 'flatten'

    def forward(self, x, ctx):
        x = as_tensor(x)
        return reshape(x, (x.shape[0], -1))

    def output_shape(self, input_shape):
        return (int(numpy.prod(input_shape)),)


class ReLU(Layer):
    kind = 'relu'

    def forward(self, x, ctx):
        return relu(x)


class NormLayer(Layer):
    """normalization layer wrapping a :class:`NormSpec`

    Convolutional activations [N,H,W,C] are normalized directly.  Dense
    activations [N,F] have no spatial extent: batch and local layers
    pool each statistic group over all F features (a single image
    still has F values), while gamma, beta and running statistics stay
    per feature.  Other variants normalize dense activations as
    [N,1,1,F].

    Parameters
    ----------
    spec : :class:`NormSpec`
        variant, hyperparameters and state of this layer
    name : str, optional
        layer name used as the parameter prefix
    """
    kind = 'norm'

    def __init__(self, spec, name=None):
        super(NormLayer, self).__init__(name)
        self.spec = spec
        for t in spec.parameters().values():
            t.name = '{}.{}'.format(self.name, t.name.split('.')[-1])

    @property
    def variant(self):
        return self.spec.variant

    def parameters(self):
        return self.spec.parameters()

    def buffers(self):
        return self.spec.buffers()

    def forward(self, x, ctx):
        x = as_tensor(x)
        dense = x.ndim == 2
        if dense:
            x = reshape(x, (x.shape[0], 1, 1, x.shape[1]))
        elif x.ndim != 4:
            raise TensorError('{} expects [N,F] or [N,H,W,C] input, got '
                              '{}'.format(self.name, x.shape))
        if x.shape[-1] != self.spec.channels:
            raise TensorError('{} normalizes {} channels, got {}'.format(
                self.name, self.spec.channels, x.shape[-1]))
        pooled = dense and self.spec.variant in (BATCH, LOCAL)
        if ctx.training:
            out = self._forward_train(x, ctx, pooled)
        else:
            out = self._forward_eval(x, ctx, pooled)
        if dense:
            out = reshape(out, (out.shape[0], out.shape[3]))
        return out

    @staticmethod
    def _stat_shape(x, pooled):
        n, h, w, c = x.shape
        return (n, 1, h * w * c, 1) if pooled else (n, h, w, c)

    def _partition(self, x, pooled, kind, groups=None, sample_groups=None):
        return build_partition(kind, self._stat_shape(x, pooled),
                               groups=groups, sample_groups=sample_groups)

    def _normalize_dynamic(self, x, partition, pooled, rows=None):
        spec = self.spec
        if not pooled:
            return normalize(x, spec, partition, affine_rows=rows,
                             frozen=False)
        view = reshape(x, partition.shape)
        xhat = reshape(group_normalize(view, partition, spec.epsilon),
                       x.shape)
        if rows is None and spec.affine_rows > 1:
            rows = partition.sample_groups
        return affine(xhat, spec, rows)

    def _batch_stats(self, x, pooled):
        """[C] batch mean and variance, pooled ones broadcast per feature"""
        data = x.data.reshape(self._stat_shape(x, pooled))
        m, v = channel_batch_stats(data)
        if pooled:
            m = numpy.full(self.spec.channels, m[0])
            v = numpy.full(self.spec.channels, v[0])
        return m, v

    def _forward_train(self, x, ctx, pooled):
        spec = self.spec
        update = ctx.update_stats and is_grad_enabled()
        if spec.variant == LOCAL and not pooled:
            return localnorm_forward_train(x, spec, update_stats=update)
        if spec.variant == SWITCH:
            wm, wv = switch_weights(spec)
            out = switchnorm_forward(x, wm, wv, spec, frozen=False)
        elif spec.variant in (BATCH, LOCAL):
            out = self._normalize_dynamic(
                x, self._partition(x, pooled, spec.variant,
                                   groups=spec.groups), pooled)
        else:
            out = normalize(x, spec,
                            build_partition(spec.variant, x.shape,
                                            groups=spec.groups),
                            frozen=False)
        if update and spec.variant in (BATCH, SWITCH, LOCAL):
            update_running_stats(spec, *self._batch_stats(x, pooled))
        return out

    def _forward_eval(self, x, ctx, pooled):
        spec = self.spec
        frozen = dynamic_or_frozen(spec, ctx.frozen)
        if spec.variant == SWITCH:
            wm, wv = switch_weights(spec)
            return switchnorm_forward(x, wm, wv, spec, frozen=frozen,
                                      stat_groups=ctx.stat_groups)
        if frozen:
            return normalize(x, spec, None, frozen=True)
        if spec.variant in (LAYER, GROUP, INSTANCE):
            return normalize(x, spec, build_partition(
                spec.variant, x.shape, groups=spec.groups), frozen=False)
        if ctx.stat_groups is not None:
            partition = self._partition(x, pooled, LOCAL,
                                        sample_groups=ctx.stat_groups)
            if partition.min_group_size == 1:
                raise EvaluationError(
                    'degenerate statistics: {} has statistic groups of a '
                    'single value for input {}'.format(self.name, x.shape))
        elif spec.variant == LOCAL:
            partition = self._partition(x, pooled, LOCAL, groups=spec.groups)
        else:
            partition = self._partition(x, pooled, BATCH)
        rows = None
        if spec.variant == LOCAL:
            rows = ctx.affine_rows
            if rows is None and ctx.stat_groups is not None and \
                    spec.groups == 1:
                rows = numpy.zeros(x.shape[0], dtype=numpy.intp)
        return self._normalize_dynamic(x, partition, pooled, rows)

    def to_dict(self):
        d = super(NormLayer, self).to_dict()
        d['spec'] = self.spec.to_dict()
        return d

    def __repr__(self):
        return 'NormLayer(name={}, spec={})'.format(self.name, self.spec)
