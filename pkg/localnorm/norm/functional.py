#!/usr/bin/env python
"""normalization forward passes over group partitions"""
import logging

import numpy

from localnorm.errors import NormError
from localnorm.tensor import (
    Tensor, as_tensor, group_normalize, reduce_mean_var, reshape, take_rows,
    matmul, mean, sqrt, softmax)
from localnorm.utils import NullHandler
from .partition import BATCH, LOCAL, SWITCH, build_partition
from .spec import FROZEN, DYNAMIC

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['normalize', 'switchnorm_forward', 'localnorm_forward_train',
           'update_running_stats', 'channel_batch_stats', 'affine',
           'switch_weights', 'dynamic_or_frozen']


def channel_batch_stats(x):
    """per-channel (mean, biased variance) over (N,H,W) of [N,H,W,C] x"""
    data = x.data if isinstance(x, Tensor) else numpy.asarray(x)
    return reduce_mean_var(data, build_partition(BATCH, data.shape))


def affine(xhat, spec, affine_rows=None):
    """scale and shift by gamma, beta; local rows chosen per sample

    Parameters
    ----------
    xhat : Tensor
        [N,H,W,C] normalized values
    spec : :class:`NormSpec`
        owner of gamma and beta
    affine_rows : array_like of int, optional
        [N] row of (gamma_k, beta_k) each sample uses; required when
        the spec has more than one row

    Returns
    -------
    Tensor
    """
    c = spec.channels
    if spec.affine_rows == 1 and affine_rows is None:
        g = reshape(spec.gamma, (1, 1, 1, c))
        b = reshape(spec.beta, (1, 1, 1, c))
    else:
        if affine_rows is None:
            raise NormError('{} rows of scaling parameters need a per-sample '
                            'row assignment'.format(spec.affine_rows))
        rows = numpy.asarray(affine_rows, dtype=numpy.intp).ravel()
        n = xhat.shape[0]
        if rows.size != n:
            raise NormError('{} affine rows given for batch of {}'.format(
                rows.size, n))
        g = reshape(take_rows(spec.gamma, rows), (n, 1, 1, c))
        b = reshape(take_rows(spec.beta, rows), (n, 1, 1, c))
    return xhat * g + b


def _warn_degenerate(spec, partition):
    if getattr(spec, '_warned_degenerate', False):
        return
    if partition.min_group_size == 1:
        logger.warning(
            'statistic groups of a single element in {} normalization '
            '(shape {}); those elements normalize to beta'.format(
                spec.variant, partition.shape))
        spec._warned_degenerate = True


def _frozen_xhat(x, spec):
    if not spec.has_running_stats:
        raise NormError('frozen statistics requested but running '
                        'statistics are uninitialized')
    inv_std = 1.0 / numpy.sqrt(spec.running_var + spec.epsilon)
    shift = as_tensor(spec.running_mean.reshape(1, 1, 1, -1), like=x)
    scale = as_tensor(inv_std.reshape(1, 1, 1, -1), like=x)
    return (x - shift) * scale


def normalize(x, spec, partition, affine_rows=None, frozen=None):
    """x_hat = (x - mu_k) / sqrt(var_k + eps) * gamma + beta

    Parameters
    ----------
    x : Tensor
        [N,H,W,C] values
    spec : :class:`NormSpec`
        variant, epsilon and scaling parameters
    partition : :class:`GroupPartition`
        computational groups supplying (mu_k, var_k) in dynamic mode
    affine_rows : array_like of int, optional
        [N] gamma/beta row per sample (local); defaults to the
        partition's sample groups for local partitions
    frozen : bool, optional
        use running statistics instead of partition statistics
        (defaults to spec.stat_mode == 'frozen')

    Returns
    -------
    Tensor

    Raises
    ------
    NormError
        frozen mode without running statistics
    PartitionError
        partition does not match x
    """
    x = as_tensor(x)
    if frozen is None:
        frozen = spec.stat_mode == FROZEN
    if frozen:
        if partition is not None and partition.shape != x.shape:
            raise NormError('partition shape {} != input shape {}'.format(
                partition.shape, x.shape))
        xhat = _frozen_xhat(x, spec)
    else:
        _warn_degenerate(spec, partition)
        xhat = group_normalize(x, partition, spec.epsilon)
    if affine_rows is None and spec.affine_rows > 1 and \
            partition is not None and partition.sample_groups is not None:
        affine_rows = partition.sample_groups
    return affine(xhat, spec, affine_rows)


def switch_weights(spec):
    """softmax mixing weights (mean, var) from a switch spec's logits"""
    return softmax(spec.mean_logits), softmax(spec.var_logits)


def _check_simplex(w, what):
    arr = w.data if isinstance(w, Tensor) else numpy.asarray(w)
    if arr.shape != (3,) or numpy.any(arr < 0) or \
            abs(float(arr.sum()) - 1.0) > 1e-6:
        raise NormError('{} must be 3 nonnegative weights summing to 1, '
                        'got {}'.format(what, arr))


def _stat_group_matrices(stat_groups, n, dtype):
    """averaging [G,N] and broadcasting [N,G] matrices for sample groups"""
    _, ids = numpy.unique(numpy.asarray(stat_groups).ravel(),
                          return_inverse=True)
    ids = ids.reshape(-1)
    if ids.size != n:
        raise NormError('{} stat groups given for batch of {}'.format(
            ids.size, n))
    onehot = numpy.zeros((n, int(ids.max()) + 1), dtype=dtype)
    onehot[numpy.arange(n), ids] = 1.0
    return onehot.T / onehot.sum(axis=0)[:, None], onehot


def _grouped_batch_stats(x, stat_groups):
    """batch statistics per sample group, expanded back to [N,1,1,C]"""
    n, c = x.shape[0], x.shape[3]
    avg, spread = _stat_group_matrices(stat_groups, n, x.dtype)
    per_sample = reshape(mean(x, axis=(1, 2)), (n, c))
    mu = reshape(matmul(spread, matmul(avg, per_sample)), (n, 1, 1, c))
    d = x - mu
    sq = reshape(mean(d * d, axis=(1, 2)), (n, c))
    var = reshape(matmul(spread, matmul(avg, sq)), (n, 1, 1, c))
    return mu, var


def switchnorm_forward(x, weights_mean, weights_var, spec, frozen=False,
                       stat_groups=None):
    """normalize with mixed batch/layer/instance statistics

    mu = sum_i w_i mu_i and var = sum_i v_i var_i over the
    (batch, layer, instance) statistics, followed by one gamma, beta.

    Parameters
    ----------
    x : Tensor
        [N,H,W,C] values
    weights_mean, weights_var : Tensor or array_like
        3-simplex weights ordered (batch, layer, instance)
    spec : :class:`NormSpec`
        epsilon, scaling parameters and running statistics
    frozen : bool
        take the batch component from running statistics
    stat_groups : array_like of int, optional
        [N] sample group labels; the batch component is computed
        within each group instead of over the whole input

    Returns
    -------
    Tensor
    """
    x = as_tensor(x)
    _check_simplex(weights_mean, 'weights_mean')
    _check_simplex(weights_var, 'weights_var')
    wm = as_tensor(weights_mean, like=x)
    wv = as_tensor(weights_var, like=x)

    mu_in = mean(x, axis=(1, 2), keepdims=True)
    d_in = x - mu_in
    var_in = mean(d_in * d_in, axis=(1, 2), keepdims=True)
    mu_ln = mean(x, axis=(1, 2, 3), keepdims=True)
    d_ln = x - mu_ln
    var_ln = mean(d_ln * d_ln, axis=(1, 2, 3), keepdims=True)
    if frozen:
        if not spec.has_running_stats:
            raise NormError('frozen statistics requested but running '
                            'statistics are uninitialized')
        mu_bn = as_tensor(spec.running_mean.reshape(1, 1, 1, -1), like=x)
        var_bn = as_tensor(spec.running_var.reshape(1, 1, 1, -1), like=x)
    elif stat_groups is not None:
        mu_bn, var_bn = _grouped_batch_stats(x, stat_groups)
    else:
        mu_bn = mean(x, axis=(0, 1, 2), keepdims=True)
        d_bn = x - mu_bn
        var_bn = mean(d_bn * d_bn, axis=(0, 1, 2), keepdims=True)

    def mix(w, a, b, c):
        return (take_rows(w, [0]) * a + take_rows(w, [1]) * b +
                take_rows(w, [2]) * c)

    mu = mix(wm, mu_bn, mu_ln, mu_in)
    var = mix(wv, var_bn, var_ln, var_in)
    xhat = (x - mu) / sqrt(var + spec.epsilon)
    return affine(xhat, spec)


def localnorm_forward_train(x, spec, update_stats=True):
    """training forward: K contiguous sample groups, each with its own
    dynamic statistics and its own (gamma_k, beta_k)

    Parameters
    ----------
    x : Tensor
        [N,H,W,C] batch (already shuffled); K must divide N
    spec : :class:`NormSpec`
        local spec
    update_stats : bool
        fold the batch's per-channel statistics into running stats

    Returns
    -------
    Tensor
    """
    if spec.variant != LOCAL:
        raise NormError('localnorm_forward_train needs a local spec, got '
                        '{}'.format(spec.variant))
    x = as_tensor(x)
    partition = build_partition(LOCAL, x.shape, groups=spec.groups)
    out = normalize(x, spec, partition,
                    affine_rows=partition.sample_groups, frozen=False)
    if update_stats:
        update_running_stats(spec, *channel_batch_stats(x))
    return out


def update_running_stats(spec, batch_mean, batch_var, momentum=None):
    """exponential moving average of per-channel statistics

    running <- m * running + (1 - m) * batch, for mean and variance;
    uninitialized statistics start from (0, 1).

    Parameters
    ----------
    spec : :class:`NormSpec`
        layer to update (in place)
    batch_mean, batch_var : array_like
        [C] statistics of the current batch
    momentum : float, optional
        in [0, 1); defaults to spec.momentum

    Returns
    -------
    NormSpec
        spec, updated
    """
    m = spec.momentum if momentum is None else momentum
    if not 0 <= m < 1:
        raise NormError('momentum must lie in [0, 1), got {}'.format(m))
    batch_mean = numpy.asarray(batch_mean, dtype=numpy.float64).ravel()
    batch_var = numpy.asarray(batch_var, dtype=numpy.float64).ravel()
    if batch_mean.shape != (spec.channels,) or \
            batch_var.shape != (spec.channels,):
        raise NormError('batch statistics must have {} channels'.format(
            spec.channels))
    if not spec.has_running_stats:
        spec.init_running_stats()
    old_mean = spec.running_mean.astype(numpy.float64)
    old_var = spec.running_var.astype(numpy.float64)
    spec.running_mean = (m * old_mean + (1.0 - m) * batch_mean).astype(
        spec.dtype)
    spec.running_var = (m * old_var + (1.0 - m) * batch_var).astype(
        spec.dtype)
    return spec


def dynamic_or_frozen(spec, frozen):
    """resolve an evaluation stat-mode override against the spec"""
    if frozen is None:
        return spec.stat_mode == FROZEN
    if frozen and spec.stat_mode == DYNAMIC and spec.variant not in (
            BATCH, SWITCH):
        raise NormError('{} normalization has no frozen statistics'.format(
            spec.variant))
    return bool(frozen)
