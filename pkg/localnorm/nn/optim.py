#!/usr/bin/env python
"""momentum SGD and the step learning-rate schedule"""
import collections
import logging

import numpy

from localnorm.errors import ConfigError, TensorError
from localnorm.utils import NullHandler

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['sgd_step', 'step_lr', 'SGD', 'DEFAULT_LR', 'DEFAULT_MOMENTUM',
           'DECAY_POINTS', 'DECAY_FACTOR']

DEFAULT_LR = 0.01
DEFAULT_MOMENTUM = 0.9
DECAY_POINTS = (0.5, 0.75)
DECAY_FACTOR = 0.1


def sgd_step(params, grads, lr, momentum=0.0, velocities=None):
    """one momentum SGD update

    v <- momentum * v + g ;  p <- p - lr * v

    Parameters
    ----------
    params : list of numpy.ndarray
        parameter values
    grads : list of numpy.ndarray or None
        gradients (None is treated as zero)
    lr : float
        learning rate (> 0)
    momentum : float
        velocity decay in [0, 1)
    velocities : list of numpy.ndarray, optional
        previous velocities (zeros if omitted)

    Returns
    -------
    new_params : list of numpy.ndarray
    new_velocities : list of numpy.ndarray

    Raises
    ------
    ConfigError
        lr <= 0 or momentum outside [0, 1)
    TensorError
        gradient or velocity shape differs from its parameter
    """
    if not lr > 0:
        raise ConfigError('learning rate must be positive, got {}'.format(lr))
    if not 0 <= momentum < 1:
        raise ConfigError('momentum must lie in [0, 1), got {}'.format(
            momentum))
    if len(grads) != len(params):
        raise TensorError('{} gradients for {} parameters'.format(
            len(grads), len(params)))
    if velocities is None:
        velocities = [numpy.zeros_like(p) for p in params]
    new_params, new_velocities = [], []
    for p, g, v in zip(params, grads, velocities):
        g = numpy.zeros_like(p) if g is None else numpy.asarray(g)
        if g.shape != p.shape or v.shape != p.shape:
            raise TensorError(
                'gradient shape {} does not match parameter shape {}'.format(
                    g.shape, p.shape))
        v = (momentum * v + g).astype(p.dtype)
        new_velocities.append(v)
        new_params.append((p - lr * v).astype(p.dtype))
    return new_params, new_velocities


def step_lr(base_lr, epoch, epochs, points=DECAY_POINTS,
            factor=DECAY_FACTOR):
    """learning rate for a 0-based epoch, decayed at fractions of the run

    With the defaults a 4-epoch run uses base_lr for epochs 0 and 1,
    base_lr / 10 for epoch 2 and base_lr / 100 for epoch 3.
    """
    milestones = [int(p * epochs) for p in points]
    drops = sum(1 for m in milestones if 0 < m <= epoch)
    return base_lr * factor ** drops


class SGD(object):
    """momentum SGD over named parameter tensors

    Parameters
    ----------
    params : collections.OrderedDict
        name -> :class:`localnorm.tensor.Tensor`
    lr : float
    momentum : float
    """

    def __init__(self, params, lr=DEFAULT_LR, momentum=DEFAULT_MOMENTUM):
        self.params = collections.OrderedDict(params)
        self.lr = lr
        self.momentum = momentum
        self.velocities = collections.OrderedDict(
            (k, numpy.zeros_like(p.data)) for k, p in self.params.items())

    def step(self):
        names = list(self.velocities)
        new_p, new_v = sgd_step(
            [self.params[k].data for k in names],
            [self.params[k].grad for k in names],
            self.lr, self.momentum,
            [self.velocities[k] for k in names])
        for k, p, v in zip(names, new_p, new_v):
            self.params[k].data = p
            self.velocities[k] = v

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
