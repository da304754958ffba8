#!/usr/bin/env python
"""configuration and state of one normalization layer"""
import collections
import logging

import numpy

from localnorm.errors import NormError
from localnorm.tensor import Tensor
from localnorm.utils import NullHandler
from .partition import VARIANTS, BATCH, GROUP, LOCAL, SWITCH

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['NormSpec', 'FROZEN', 'DYNAMIC', 'STAT_MODES',
           'DEFAULT_EPSILON', 'DEFAULT_MOMENTUM']

FROZEN = 'frozen'
DYNAMIC = 'dynamic'
STAT_MODES = (FROZEN, DYNAMIC)

DEFAULT_EPSILON = 1e-7
DEFAULT_MOMENTUM = 0.9

# variants whose statistics can be frozen from running averages
_FREEZABLE = (BATCH, SWITCH)


class NormSpec(object):
    """normalization variant, hyperparameters and trainable state

    Attributes
    ----------
    variant : str
        batch, layer, group, instance, switch or local
    channels : int
        number of normalized channels C
    groups : int
        K for group (divides C) and local (divides the batch size);
        1 otherwise
    epsilon : float
        positive constant inside the square root
    stat_mode : str
        'frozen' (running statistics) or 'dynamic' (recomputed from
        the input) for evaluation; local is always dynamic
    momentum : float
        running-statistics momentum in [0, 1)
    gamma : Tensor
        [R,C] scales; R = groups for local, 1 otherwise
    beta : Tensor
        [R,C] shifts
    mean_logits, var_logits : Tensor or None
        switch mixing logits over (batch, layer, instance) statistics
    running_mean, running_var : numpy.ndarray or None
        per-channel running statistics in dtype (None until first
        update)
    """

    def __init__(self, variant=BATCH, channels=1, groups=1,
                 epsilon=DEFAULT_EPSILON, stat_mode=None,
                 momentum=DEFAULT_MOMENTUM, dtype='float32', json=None):
        if json is not None:
            self.from_dict(json)
        else:
            self.variant = variant
            self.channels = channels
            self.groups = groups
            self.epsilon = epsilon
            self.stat_mode = stat_mode
            self.momentum = momentum
            self.dtype = dtype
        self._validate()
        self.reset_parameters()

    def _validate(self):
        if self.variant not in VARIANTS:
            raise NormError('unknown normalization variant {}'.format(
                self.variant))
        self.channels = int(self.channels)
        if self.channels < 1:
            raise NormError('channels must be positive')
        if self.variant not in (GROUP, LOCAL):
            self.groups = 1
        if int(self.groups) != self.groups or self.groups < 1:
            raise NormError('group count must be a positive integer')
        self.groups = int(self.groups)
        if self.variant == GROUP and self.channels % self.groups:
            raise NormError(
                'indivisible group count: K={} does not divide C={}'.format(
                    self.groups, self.channels))
        if not self.epsilon > 0:
            raise NormError('epsilon must be positive, got {}'.format(
                self.epsilon))
        if not 0 <= self.momentum < 1:
            raise NormError('momentum must lie in [0, 1), got {}'.format(
                self.momentum))
        if self.stat_mode is None:
            self.stat_mode = FROZEN if self.variant in _FREEZABLE \
                else DYNAMIC
        if self.stat_mode not in STAT_MODES:
            raise NormError('unknown stat mode {}'.format(self.stat_mode))
        if self.stat_mode == FROZEN and self.variant not in _FREEZABLE:
            raise NormError('{} normalization has no frozen statistics; '
                            'it is always dynamic'.format(self.variant))

    @property
    def affine_rows(self):
        """number of (gamma, beta) rows: one per local group"""
        return self.groups if self.variant == LOCAL else 1

    def reset_parameters(self):
        """gamma = 1, beta = 0, switch logits = 0, no running stats"""
        shape = (self.affine_rows, self.channels)
        self.gamma = Tensor(numpy.ones(shape, dtype=self.dtype),
                            requires_grad=True, name='gamma')
        self.beta = Tensor(numpy.zeros(shape, dtype=self.dtype),
                           requires_grad=True, name='beta')
        if self.variant == SWITCH:
            self.mean_logits = Tensor(numpy.zeros(3, dtype=self.dtype),
                                      requires_grad=True, name='mean_logits')
            self.var_logits = Tensor(numpy.zeros(3, dtype=self.dtype),
                                     requires_grad=True, name='var_logits')
        else:
            self.mean_logits = None
            self.var_logits = None
        self.running_mean = None
        self.running_var = None

    @property
    def has_running_stats(self):
        return self.running_mean is not None and self.running_var is not None

    def init_running_stats(self):
        self.running_mean = numpy.zeros(self.channels, dtype=self.dtype)
        self.running_var = numpy.ones(self.channels, dtype=self.dtype)

    def parameters(self):
        """ordered trainable tensors of this layer"""
        params = collections.OrderedDict(
            [('gamma', self.gamma), ('beta', self.beta)])
        if self.variant == SWITCH:
            params['mean_logits'] = self.mean_logits
            params['var_logits'] = self.var_logits
        return params

    def buffers(self):
        """non-trainable state (running statistics), if initialized"""
        if not self.has_running_stats:
            return collections.OrderedDict()
        return collections.OrderedDict(
            [('running_mean', self.running_mean),
             ('running_var', self.running_var)])

    def to_dict(self):
        """json compatible description (hyperparameters only)"""
        return {'variant': self.variant,
                'channels': self.channels,
                'groups': self.groups,
                'epsilon': self.epsilon,
                'stat_mode': self.stat_mode,
                'momentum': self.momentum,
                'dtype': self.dtype}

    def from_dict(self, d):
        self.variant = d.get('variant', BATCH)
        self.channels = d.get('channels', 1)
        self.groups = d.get('groups', 1)
        self.epsilon = d.get('epsilon', DEFAULT_EPSILON)
        self.stat_mode = d.get('stat_mode')
        self.momentum = d.get('momentum', DEFAULT_MOMENTUM)
        self.dtype = d.get('dtype', 'float32')

    def __repr__(self):
        return 'NormSpec({})'.format(', '.join(
            '{}={}'.format(k, v) for k, v in sorted(self.to_dict().items())))
