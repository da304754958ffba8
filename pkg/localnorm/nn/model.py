#!/usr/bin/env python
"""model configuration and the sequential CNN container"""
import collections
import logging
import re

import numpy
from scipy import special

from localnorm.errors import ConfigError, TensorError
from localnorm.norm import LOCAL, NormSpec, VARIANTS
from localnorm.tensor import Rng, Tensor, no_grad
from localnorm.utils import NullHandler
from .layers import (
    Conv2D, Dense, Flatten, ForwardContext, MaxPool2D, NormLayer, ReLU)

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['ModelConfig', 'Model', 'MNIST_ARCHITECTURE', 'parse_token']

MNIST_ARCHITECTURE = ['16c', '16c', 'p', '32c', '32c', 'p', '512d', '1024d']

_TOKEN = re.compile(r'^(?:(?P<width>[1-9][0-9]*)(?P<kind>[cd])|(?P<pool>p))$')


def parse_token(token):
    """('conv' | 'dense', width) or ('pool', None) for one architecture token

    Parameters
    ----------
    token : str
        "<N>c" (3x3 conv + norm + relu), "<N>d" (dense + norm + relu)
        or "p" (2x2 max-pool)

    Returns
    -------
    tuple
        (kind, width)
    """
    m = _TOKEN.match(str(token))
    if m is None:
        raise ConfigError('invalid architecture token {!r}'.format(token))
    if m.group('pool'):
        return 'pool', None
    return ('conv' if m.group('kind') == 'c' else 'dense',
            int(m.group('width')))


class ModelConfig(object):
    """architecture, normalization template, input shape and class count

    Parameters
    ----------
    architecture : list of str
        block tokens; a dense output layer over `classes` is appended
    norm : dict
        :class:`NormSpec` fields (without channels) inserted after every
        conv and dense block
    input_shape : tuple of int
        (H, W, C) of one image
    classes : int
        number of output classes
    batch_size : int
        batch size the normalization statistics are designed for; the
        local group size is batch_size / K
    dtype : str
        float32 or float64 parameters and activations
    json : dict, optional
        :meth:`to_dict` output to load instead
    """

    def __init__(self, architecture=None, norm=None, input_shape=(28, 28, 1),
                 classes=10, batch_size=100, dtype='float32', json=None):
        if json is not None:
            self.from_dict(json)
        else:
            self.architecture = list(MNIST_ARCHITECTURE if architecture is None
                                     else architecture)
            self.norm = dict({'variant': 'batch'} if norm is None else norm)
            self.input_shape = tuple(int(s) for s in input_shape)
            self.classes = int(classes)
            self.batch_size = int(batch_size)
            self.dtype = dtype
        self.validate()

    def validate(self):
        for token in self.architecture:
            parse_token(token)
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError('input_shape must be (H, W, C), got {}'.format(
                self.input_shape))
        if self.classes < 2:
            raise ConfigError('need at least 2 classes')
        if self.batch_size < 1:
            raise ConfigError('batch_size must be positive')
        if self.dtype not in ('float32', 'float64'):
            raise ConfigError('dtype must be float32 or float64')
        if self.norm.get('variant') not in VARIANTS:
            raise ConfigError('unknown normalization variant {}'.format(
                self.norm.get('variant')))
        if self.norm['variant'] == LOCAL and \
                self.batch_size % int(self.norm.get('groups', 1)):
            raise ConfigError(
                'indivisible group count: K={} does not divide batch '
                'size {}'.format(self.norm.get('groups'), self.batch_size))

    @property
    def groups(self):
        """K for local models, 1 otherwise"""
        if self.norm['variant'] == LOCAL:
            return int(self.norm.get('groups', 1))
        return 1

    @property
    def group_size(self):
        return self.batch_size // self.groups

    def norm_spec(self, channels):
        d = dict(self.norm)
        d['channels'] = channels
        d['dtype'] = self.dtype
        return NormSpec(json=d)

    def to_dict(self):
        return {'architecture': list(self.architecture),
                'norm': dict(self.norm),
                'input_shape': list(self.input_shape),
                'classes': self.classes,
                'batch_size': self.batch_size,
                'dtype': self.dtype}

    def from_dict(self, d):
        self.architecture = list(d.get('architecture', MNIST_ARCHITECTURE))
        self.norm = dict(d.get('norm', {'variant': 'batch'}))
        self.input_shape = tuple(int(s) for s in d.get('input_shape',
                                                       (28, 28, 1)))
        self.classes = int(d.get('classes', 10))
        self.batch_size = int(d.get('batch_size', 100))
        self.dtype = d.get('dtype', 'float32')

    def __repr__(self):
        return 'ModelConfig({})'.format(self.to_dict())


class Model(object):
    """sequential CNN: blocks of conv/dense + norm + relu, pools, output

    Parameters
    ----------
    config : :class:`ModelConfig`
        architecture to build
    rng : :class:`localnorm.tensor.Rng`, optional
        initialization stream (defaults to Rng(seed).child('init'))
    seed : int
        seed used when rng is omitted
    """

    def __init__(self, config, rng=None, seed=0):
        self.config = config
        rng = Rng(seed).child('init') if rng is None else rng
        self.layers = self._build(config, rng)

    @staticmethod
    def _build(config, rng):
        dtype = config.dtype
        layers = []
        shape = tuple(config.input_shape)
        counts = collections.Counter()

        def add(layer):
            layers.append(layer)
            return layer.output_shape(shape)

        for token in config.architecture:
            kind, width = parse_token(token)
            counts[kind] += 1
            i = counts[kind]
            if kind == 'pool':
                shape = add(MaxPool2D(2, name='pool{}'.format(i)))
                if min(shape[:2]) < 1:
                    raise ConfigError('pooling reduces {} to nothing'.format(
                        config.input_shape))
                continue
            if kind == 'conv':
                if len(shape) != 3:
                    raise ConfigError('conv block after a dense block')
                shape = add(Conv2D(shape[2], width, 3, 'same', rng=rng,
                                   dtype=dtype, name='conv{}'.format(i)))
            else:
                if len(shape) == 3:
                    shape = add(Flatten(name='flatten'))
                shape = add(Dense(shape[0], width, rng=rng, dtype=dtype,
                                  name='dense{}'.format(i)))
            counts['norm'] += 1
            shape = add(NormLayer(config.norm_spec(width),
                                  name='norm{}'.format(counts['norm'])))
            shape = add(ReLU(name='relu{}'.format(counts['norm'])))
        if len(shape) == 3:
            shape = add(Flatten(name='flatten'))
        add(Dense(shape[0], config.classes, rng=rng, dtype=dtype,
                  name='output'))
        return layers

    @property
    def groups(self):
        return self.config.groups

    @property
    def group_size(self):
        return self.config.group_size

    @property
    def variant(self):
        return self.config.norm['variant']

    def norm_layers(self):
        return [l for l in self.layers if isinstance(l, NormLayer)]

    def parameters(self):
        """ordered "layer.param" -> Tensor of every trainable tensor"""
        params = collections.OrderedDict()
        for layer in self.layers:
            for k, v in layer.parameters().items():
                params['{}.{}'.format(layer.name, k)] = v
        return params

    def buffers(self):
        bufs = collections.OrderedDict()
        for layer in self.layers:
            for k, v in layer.buffers().items():
                bufs['{}.{}'.format(layer.name, k)] = v
        return bufs

    def parameter_count(self):
        """number of trainable scalars"""
        return int(sum(p.size for p in self.parameters().values()))

    def state_dict(self):
        """copies of all parameters and running statistics"""
        state = collections.OrderedDict(
            (k, v.data.copy()) for k, v in self.parameters().items())
        state.update((k, v.copy()) for k, v in self.buffers().items())
        return state

    def load_state_dict(self, state):
        """assign parameters and running statistics from arrays

        Raises
        ------
        TensorError
            if a parameter is missing or has the wrong shape
        """
        params = self.parameters()
        for k, p in params.items():
            if k not in state:
                raise TensorError('state is missing parameter {}'.format(k))
            arr = numpy.asarray(state[k])
            if arr.shape != p.shape:
                raise TensorError('{} has shape {}, expected {}'.format(
                    k, arr.shape, p.shape))
            p.data = arr.astype(p.dtype, copy=True)
            p.grad = None
        for layer in self.norm_layers():
            m = state.get('{}.running_mean'.format(layer.name))
            v = state.get('{}.running_var'.format(layer.name))
            if m is None or v is None:
                layer.spec.running_mean = layer.spec.running_var = None
            else:
                layer.spec.running_mean = numpy.asarray(
                    m, dtype=layer.spec.dtype).copy()
                layer.spec.running_var = numpy.asarray(
                    v, dtype=layer.spec.dtype).copy()
        unknown = set(state) - set(params) - set(self.buffers())
        if unknown:
            logger.warning('ignoring unknown state entries {}'.format(
                sorted(unknown)))

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def forward(self, x, ctx=None):
        """logits for [N,H,W,C] preprocessed images

        Parameters
        ----------
        x : Tensor or numpy.ndarray
            images scaled to [0, 1]
        ctx : :class:`ForwardContext`, optional
            defaults to evaluation with each layer's stat_mode

        Returns
        -------
        Tensor
            [N, classes] logits
        """
        ctx = ForwardContext.evaluate() if ctx is None else ctx
        if not isinstance(x, Tensor):
            x = Tensor(numpy.asarray(x, dtype=self.config.dtype))
        if tuple(x.shape[1:]) != tuple(self.config.input_shape):
            raise TensorError('model expects images of shape {}, got '
                              '{}'.format(self.config.input_shape,
                                          x.shape[1:]))
        for layer in self.layers:
            x = layer.forward(x, ctx)
        return x

    def predict_proba(self, x, ctx=None):
        """float64 softmax probabilities, computed without recording"""
        with no_grad():
            logits = self.forward(x, ctx)
        return special.softmax(logits.data.astype(numpy.float64), axis=1)

    def to_dict(self):
        return self.config.to_dict()

    def __repr__(self):
        return 'Model({}, parameters={})'.format(
            ' -> '.join(l.name for l in self.layers), self.parameter_count())
