#!/usr/bin/env python
"""training loop, metrics log and BatchNorm -> LocalNorm transfer"""
import collections
import logging
import os

import numpy

from localnorm import evaluation
from localnorm.data import batch_iterator
from localnorm.errors import (
    CheckpointError, DatasetError, DivergenceError, NonFiniteError,
    PartitionError)
from localnorm.norm import BATCH, DYNAMIC, LOCAL, SWITCH
from localnorm.tensor import Rng, cross_entropy
from localnorm.utils import (
    NullHandler, defaultifNone, ensure_finite, write_csv)
from .checkpoint import Checkpoint
from .layers import ForwardContext
from .model import Model, ModelConfig
from .optim import SGD, step_lr, DEFAULT_LR, DEFAULT_MOMENTUM

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['train', 'MetricsLog', 'transfer_bn_to_local',
           'default_eval_mode', 'METRICS_HEADER', 'TRACE_HEADER']

METRICS_HEADER = ['epoch', 'split', 'metric', 'value']
TRACE_HEADER = ['epoch', 'layer', 'gamma_mean', 'gamma_group_var',
                'beta_mean', 'beta_group_var']


def default_eval_mode(variant):
    """mode used for test accuracy during training"""
    if variant in (BATCH, SWITCH):
        return evaluation.EvalMode(evaluation.FROZEN_BN)
    return evaluation.EvalMode(evaluation.BATCH_MODE)


class MetricsLog(object):
    """per-epoch metrics and per-layer scaling-parameter trace

    Attributes
    ----------
    rows : list of tuple
        (epoch, split, metric, value)
    trace_rows : list of tuple
        (epoch, layer, gamma_mean, gamma_group_var, beta_mean,
        beta_group_var); group variances are taken over the (gamma_k,
        beta_k) rows per channel and averaged over channels
    """

    def __init__(self):
        self.rows = []
        self.trace_rows = []

    def add(self, epoch, split, metric, value):
        self.rows.append((int(epoch), split, metric, float(value)))

    def trace(self, epoch, model):
        for layer in model.norm_layers():
            g = layer.spec.gamma.data.astype(numpy.float64)
            b = layer.spec.beta.data.astype(numpy.float64)
            self.trace_rows.append((
                int(epoch), layer.name,
                float(g.mean()), float(g.var(axis=0).mean()),
                float(b.mean()), float(b.var(axis=0).mean())))

    def value(self, epoch, split, metric):
        for e, s, m, v in self.rows:
            if (e, s, m) == (epoch, split, metric):
                return v
        raise KeyError((epoch, split, metric))

    def gamma_group_var(self, epoch):
        """layer -> cross-group gamma variance at an epoch"""
        return collections.OrderedDict(
            (r[1], r[3]) for r in self.trace_rows if r[0] == epoch)

    def write(self, directory, config_hash=None, force=False, prefix=''):
        """write <prefix>metrics.csv and <prefix>scaling_trace.csv into
        directory"""
        return (write_csv(os.path.join(directory, prefix + 'metrics.csv'),
                          METRICS_HEADER, self.rows, config_hash, force),
                write_csv(os.path.join(directory,
                                       prefix + 'scaling_trace.csv'),
                          TRACE_HEADER, self.trace_rows, config_hash, force))


def _step(model, optimizer, batch, epoch, step):
    model.zero_grad()
    try:
        logits = model.forward(batch.images, ForwardContext.train())
        loss = cross_entropy(logits, batch.labels)
        loss.backward()
        for name, p in model.parameters().items():
            if p.grad is not None:
                ensure_finite(p.grad, 'gradient of {}'.format(name))
    except NonFiniteError as e:
        raise DivergenceError(
            'training diverged at epoch {} step {}: {}'.format(
                epoch, step, e), epoch=epoch, step=step)
    optimizer.step()
    correct = int(numpy.count_nonzero(
        numpy.argmax(logits.data, axis=1) == batch.labels))
    return float(loss.data), correct


def train(config, train_set, test_set=None, epochs=None, seed=None,
          model=None, eval_mode=None):
    """train a model with momentum SGD and a step learning-rate schedule

    Every epoch reshuffles the training set with a stream that depends
    only on the seed, so models differing only in their normalization
    see identical batches.

    Parameters
    ----------
    config : :class:`localnorm.config.ExperimentConfig`
        model and training hyperparameters
    train_set : :class:`localnorm.data.Dataset`
    test_set : :class:`localnorm.data.Dataset`, optional
        evaluated after every epoch
    epochs : int, optional
        overrides config.training['epochs']
    seed : int, optional
        overrides config.seed
    model : :class:`Model`, optional
        continue training this model (e.g. after a transfer)
    eval_mode : :class:`localnorm.evaluation.EvalMode`, optional
        mode for test accuracy (default: frozen_bn for batch and
        switch, batch otherwise)

    Returns
    -------
    checkpoint : :class:`Checkpoint`
    log : :class:`MetricsLog`

    Raises
    ------
    DivergenceError
        on a non-finite loss or activation, with epoch and step
    DatasetError
        if the training set holds less than one batch
    """
    seed = defaultifNone(seed, config.seed)
    tr = config.training
    epochs = int(defaultifNone(epochs, tr['epochs']))
    root = Rng(seed)
    if model is None:
        model = Model(config.model_config(), rng=root.child('init'))
    mc = model.config
    eval_mode = defaultifNone(eval_mode, default_eval_mode(model.variant))
    data_rng = root.child('data')
    base_lr = tr.get('lr', DEFAULT_LR)
    optimizer = SGD(model.parameters(), lr=base_lr,
                    momentum=tr.get('momentum', DEFAULT_MOMENTUM))
    log = MetricsLog()
    log.trace(0, model)
    if epochs and len(train_set) < mc.batch_size:
        raise DatasetError('training set of {} images is smaller than one '
                           'batch of {}'.format(len(train_set),
                                                mc.batch_size))
    logger.info('training {} ({} parameters) for {} epochs on {} '
                'images'.format(model.variant, model.parameter_count(),
                                epochs, len(train_set)))

    for epoch in range(1, epochs + 1):
        optimizer.lr = step_lr(base_lr, epoch - 1, epochs)
        loss_sum = 0.0
        correct = seen = 0
        for step, batch in enumerate(batch_iterator(
                train_set, mc.batch_size, mc.groups, data_rng,
                dtype=mc.dtype)):
            loss, ok = _step(model, optimizer, batch, epoch, step)
            loss_sum += loss * len(batch)
            correct += ok
            seen += len(batch)
            logger.debug('epoch {} step {} loss {:.5f}'.format(
                epoch, step, loss))
        log.add(epoch, 'train', 'loss', loss_sum / seen)
        log.add(epoch, 'train', 'accuracy', float(correct) / seen)
        if test_set is not None:
            preds = evaluation.predict_dataset(
                model, test_set, eval_mode, rng=root.child('eval'))
            acc = evaluation.accuracy(preds, test_set.labels)
            log.add(epoch, 'test', 'accuracy_{}'.format(eval_mode.name), acc)
            logger.info('epoch {}/{}: loss {:.4f}, test accuracy {:.4f} '
                        '({})'.format(epoch, epochs, loss_sum / seen, acc,
                                      eval_mode.name))
        else:
            logger.info('epoch {}/{}: loss {:.4f}'.format(
                epoch, epochs, loss_sum / seen))
        log.trace(epoch, model)

    checkpoint = Checkpoint.from_model(model, epoch=epochs, rng=data_rng)
    return checkpoint, log


def transfer_bn_to_local(checkpoint, groups, batch_size=None):
    """replace every BatchNorm layer by LocalNorm(K)

    All K rows of (gamma_k, beta_k) start from the BatchNorm (gamma,
    beta); all other weights and the running statistics are copied;
    statistics become dynamic.

    Parameters
    ----------
    checkpoint : :class:`Checkpoint`
        BatchNorm model
    groups : int
        K
    batch_size : int, optional
        intended batch size (defaults to the checkpoint's)

    Returns
    -------
    Checkpoint

    Raises
    ------
    CheckpointError
        if the checkpoint's norm layers are not BatchNorm
    PartitionError
        "indivisible group count" if K does not divide the batch size
    """
    mc = checkpoint.model_config
    if mc.norm.get('variant') != BATCH:
        raise CheckpointError('transfer needs a batch normalization '
                              'checkpoint, got {}'.format(
                                  mc.norm.get('variant')))
    groups = int(groups)
    batch_size = int(defaultifNone(batch_size, mc.batch_size))
    if groups < 1 or batch_size % groups:
        raise PartitionError(
            'indivisible group count: K={} does not divide batch size '
            '{}'.format(groups, batch_size))
    norm = dict(mc.norm)
    norm.update({'variant': LOCAL, 'groups': groups, 'stat_mode': DYNAMIC})
    new_config = ModelConfig(json=dict(mc.to_dict(), norm=norm,
                                       batch_size=batch_size))
    norm_names = set(l.name for l in Model(new_config, rng=Rng(0))
                     .norm_layers())
    state = collections.OrderedDict()
    for name, arr in checkpoint.state.items():
        layer, _, param = name.rpartition('.')
        if layer in norm_names and param in ('gamma', 'beta'):
            arr = numpy.tile(numpy.asarray(arr).reshape(1, -1), (groups, 1))
        state[name] = numpy.array(arr, copy=True)
    logger.info('transferred {} batch normalization layers to local '
                'normalization with K={}'.format(len(norm_names), groups))
    return Checkpoint(new_config, state, epoch=checkpoint.epoch,
                      rng_state=checkpoint.rng_state,
                      metadata=dict(checkpoint.metadata,
                                    transferred_from=BATCH,
                                    transfer_groups=groups))
