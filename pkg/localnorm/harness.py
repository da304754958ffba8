#!/usr/bin/env python
"""experiment commands and the ``localnorm`` command line"""
import argparse
import logging
import os
import sys
import time

import numpy
from decorator import decorator
from PIL import Image

from .config import ExperimentConfig
from .data import (
    load_cifar10_binary, load_mnist, make_noisy_trainset,
    make_synthetic_dataset)
from .errors import ConfigError, LocalNormError
from .evaluation import ConfusionMatrix, EvalMode, accuracy, predict_dataset
from .external.processpools.stdlib_pool import (
    WithDummyMapPool, WithThreadPool)
from .nn import Checkpoint, train, transfer_bn_to_local
from .noise import NoiseSpec, apply_noise, channel_histogram
from .tensor import Rng
from .utils import NullHandler, fitargspec, write_csv

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['cmd_train', 'cmd_eval', 'cmd_sweep_groups', 'cmd_histogram',
           'cmd_transfer', 'load_datasets', 'experiment', 'main',
           'RESULTS_HEADER', 'SWEEP_HEADER', 'HISTOGRAM_COUNTS_HEADER',
           'HISTOGRAM_STATS_HEADER', 'CHECKPOINT_NAME']

RESULTS_HEADER = ['mode', 'noise_family', 'sigma_n', 'accuracy', 'count']
SWEEP_HEADER = ['groups', 'mode', 'noise_family', 'sigma_n', 'accuracy']
HISTOGRAM_COUNTS_HEADER = ['sigma_n', 'channel', 'bin', 'count']
HISTOGRAM_STATS_HEADER = ['sigma_n', 'stage', 'channel', 'mean', 'std']

CHECKPOINT_NAME = 'checkpoint.lnck'
TRANSFER_CHECKPOINT_NAME = 'transferred.lnck'


def _resolve_config(config):
    if isinstance(config, ExperimentConfig):
        return config
    if isinstance(config, dict):
        return ExperimentConfig(json=config)
    if isinstance(config, str):
        return ExperimentConfig.load(config)
    raise ConfigError('cannot use {} as an experiment config'.format(
        type(config)))


@decorator
def experiment(f, *args, **kwargs):
    """Decorator resolving the experiment config of a command

    The first argument may be an :class:`ExperimentConfig`, a dict or
    the path of a json config file.  The config is validated, the output
    directory created and the resolved config echoed there as
    ``<command>_config.json``.

    Parameters
    ----------
    f : func
        command to decorate

    Returns
    -------
    func
        decorated command
    """
    args, kwargs = fitargspec(f, args, kwargs)
    if args:
        config, args = _resolve_config(args[0]), args[1:]
    else:
        config = _resolve_config(kwargs.pop('config'))
    config.validate()
    out = config.output_dir
    if not os.path.isdir(out):
        os.makedirs(out)
    config.save(os.path.join(out, '{}_config.json'.format(
        f.__name__.replace('cmd_', ''))), force=config.force)
    logger.info('{} with config {} into {}'.format(
        f.__name__, config.config_hash()[:12], out))
    return f(config, *args, **kwargs)


def load_datasets(config):
    """(train, test) datasets of a config"""
    ds = config.dataset
    kind = ds['kind']
    if kind == 'mnist':
        train_set = load_mnist(ds['path'], 'train')
        test_set = load_mnist(ds['path'], 'test')
    elif kind == 'cifar10':
        train_set = load_cifar10_binary(
            [os.path.join(ds['path'], 'data_batch_{}.bin'.format(i))
             for i in range(1, 6)], split='train')
        test_set = load_cifar10_binary(
            os.path.join(ds['path'], 'test_batch.bin'), split='test')
    else:
        syn = ds['synthetic']
        train_set, test_set = [make_synthetic_dataset(
            syn[split], image_shape=tuple(syn['image_shape']),
            classes=syn['classes'], pixel_noise=syn['pixel_noise'],
            seed=config.seed, split=split) for split in ('train', 'test')]
    return train_set.head(ds['train_count']), test_set.head(ds['test_count'])


def _out(config, name):
    return os.path.join(config.output_dir, name)


def _training_set(config, train_set):
    aug = config.augmentation_noise()
    if aug is None:
        return train_set
    spec, fraction = aug
    return make_noisy_trainset(train_set, spec, fraction,
                               Rng(config.seed).child('augmentation'))


@experiment
def cmd_train(config):
    """train a model; write checkpoint, metrics and scaling trace

    Parameters
    ----------
    config : :class:`ExperimentConfig` or dict or str

    Returns
    -------
    checkpoint : :class:`localnorm.nn.Checkpoint`
    log : :class:`localnorm.nn.MetricsLog`
    """
    train_set, test_set = load_datasets(config)
    train_set = _training_set(config, train_set)
    start = time.perf_counter()
    checkpoint, log = train(config, train_set, test_set)
    logger.info('trained in {:.1f} s'.format(time.perf_counter() - start))
    checkpoint.metadata['config_hash'] = config.config_hash()
    checkpoint.save(_out(config, CHECKPOINT_NAME), force=config.force)
    log.write(config.output_dir, config.config_hash(), force=config.force)
    return checkpoint, log


def _cells(config, modes, noise):
    return [(mode, spec) for mode in modes for spec in noise]


def _evaluate_cell(model, test_set, config, mode, spec):
    # the noise realization depends on (seed, family, sigma_n) only, so
    # every mode sees the same degraded images
    rng = Rng(config.seed).child('eval').child(spec.label)
    cap = config.single_image_cap(mode)
    preds = predict_dataset(model, test_set, mode, rng=rng, noise=spec,
                            max_images=cap)
    labels = test_set.head(cap).labels
    acc = accuracy(preds, labels)
    logger.info('{} {}: accuracy {:.4f} on {} images'.format(
        mode.name, spec.label, acc, labels.size))
    return acc, labels.size, ConfusionMatrix.from_predictions(
        labels, preds, test_set.classes)


def _pool(threads):
    return WithThreadPool(threads) if threads and threads > 1 \
        else WithDummyMapPool()


def _evaluate_grid(model, test_set, config, modes, noise):
    for mode in modes:
        mode.check_model(model)
    cells = _cells(config, modes, noise)
    with _pool(config.threads) as pool:
        results = pool.map(
            lambda cell: _evaluate_cell(model, test_set, config, *cell),
            cells)
    return cells, results


def _parse_noise(text):
    """'agn:0,0.5,1;mbn:0.3' -> list of NoiseSpec"""
    specs = []
    for entry in text.split(';'):
        if not entry.strip():
            continue
        family, _, sigmas = entry.partition(':')
        if not sigmas:
            raise ConfigError('noise entry {!r} lacks sigma values'.format(
                entry))
        specs.extend(NoiseSpec(family.strip(), float(s))
                     for s in sigmas.split(','))
    if not specs:
        raise ConfigError('empty noise sweep {!r}'.format(text))
    return specs


@experiment
def cmd_eval(config, checkpoint=None, modes=None, noise=None,
             max_images=None, confusion=None):
    """accuracy of a checkpoint for every (mode, family, sigma_n) cell

    Parameters
    ----------
    config : :class:`ExperimentConfig` or dict or str
    checkpoint : str or :class:`localnorm.nn.Checkpoint`, optional
        defaults to the training checkpoint in the output directory
    modes : list of str or EvalMode, optional
        overrides evaluation.modes
    noise : list of NoiseSpec or str, optional
        overrides evaluation.noise ('agn:0,1;mbn:0.3' form accepted)
    max_images : int, optional
        overrides evaluation.max_images
    confusion : bool, optional
        write a confusion matrix per cell (overrides
        evaluation.confusion)

    Returns
    -------
    list of tuple
        (mode, noise_family, sigma_n, accuracy, count) rows
    """
    if checkpoint is None:
        checkpoint = _out(config, CHECKPOINT_NAME)
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint.load(checkpoint)
    if max_images is not None:
        config = config.with_overrides(evaluation=dict(
            config.evaluation, max_images=int(max_images)))
    modes = config.eval_modes() if modes is None else [
        m if isinstance(m, EvalMode) else EvalMode.parse(m) for m in modes]
    if isinstance(noise, str):
        noise = _parse_noise(noise)
    noise = config.noise_grid() if noise is None else noise
    confusion = config.evaluation['confusion'] if confusion is None \
        else confusion

    _, test_set = load_datasets(config)
    model = checkpoint.to_model()
    cells, results = _evaluate_grid(model, test_set, config, modes, noise)

    h = config.config_hash()
    rows = []
    for (mode, spec), (acc, count, matrix) in zip(cells, results):
        rows.append((mode.name, spec.family, spec.sigma_n, acc, count))
        if confusion:
            write_csv(_out(config, 'confusion_{}_{}_{}.csv'.format(
                          mode.name, spec.family, spec.sigma_n)),
                      matrix.header(), matrix.rows(), h, config.force)
            logger.info('{} {}: recall {}, max column share {:.3f}'.format(
                mode.name, spec.label, numpy.round(matrix.recall, 3),
                matrix.max_column_share))
    write_csv(_out(config, 'results.csv'), RESULTS_HEADER, rows, h,
              config.force)
    return rows


@experiment
def cmd_sweep_groups(config, groups=None):
    """train one LocalNorm model per K and evaluate the noise sweep

    Parameters
    ----------
    config : :class:`ExperimentConfig` or dict or str
    groups : list of int, optional
        overrides sweep.groups

    Returns
    -------
    list of tuple
        (groups, mode, noise_family, sigma_n, accuracy) rows
    """
    groups = [int(k) for k in (config.sweep['groups'] if groups is None
                               else groups)]
    for k in groups:
        if k < 1 or config.batch_size % k:
            raise ConfigError(
                'indivisible group count: K={} does not divide batch '
                'size {}'.format(k, config.batch_size))
    train_set, test_set = load_datasets(config)
    train_set = _training_set(config, train_set)
    modes, noise = config.eval_modes(), config.noise_grid()
    rows = []
    for k in groups:
        cfg = config.with_overrides(norm=dict(
            config.norm, variant='local', groups=k, stat_mode='dynamic'))
        start = time.perf_counter()
        checkpoint, _ = train(cfg, train_set)
        model = checkpoint.to_model()
        cells, results = _evaluate_grid(model, test_set, cfg, modes, noise)
        for (mode, spec), (acc, _, _) in zip(cells, results):
            rows.append((k, mode.name, spec.family, spec.sigma_n, acc))
        logger.info('K={} done in {:.1f} s'.format(
            k, time.perf_counter() - start))
    write_csv(_out(config, 'sweep_groups.csv'), SWEEP_HEADER, rows,
              config.config_hash(), config.force)
    return rows


def _histogram_images(config, image=None):
    path = image or config.histogram.get('image')
    if path:
        with Image.open(path) as im:
            arr = numpy.asarray(im.convert('L' if im.mode in ('1', 'L', 'I',
                                                              'F')
                                           else 'RGB'))
        return arr[..., None] if arr.ndim == 2 else arr
    _, test_set = load_datasets(config)
    return test_set.head(config.histogram['count']).images


@experiment
def cmd_histogram(config, image=None):
    """per-sigma_n per-channel histograms and statistics of noisy images

    Counts are taken after clipping; statistics are reported both after
    clipping and before it (the same noise draw without clipping).

    Parameters
    ----------
    config : :class:`ExperimentConfig` or dict or str
    image : str, optional
        image file (any format pillow reads); defaults to
        histogram.image, then the first histogram.count test images

    Returns
    -------
    counts_rows, stats_rows : list of tuple
    """
    x = _histogram_images(config, image)
    hc = config.histogram
    counts_rows, stats_rows = [], []
    for sigma in hc['sigma_n']:
        spec = NoiseSpec(hc.get('family', 'agn'), sigma,
                         apn_variant=hc.get('apn_variant', 'additive'))
        preclip = NoiseSpec(json=dict(spec.to_dict(), clip=False))
        stream = Rng(config.seed).child('histogram').child(spec.label)
        clipped = channel_histogram(
            apply_noise(x, spec, Rng.from_state(stream.get_state())),
            bins=hc['bins'])
        raw = channel_histogram(apply_noise(x, preclip, stream),
                                bins=hc['bins'], allow_out_of_range=True)
        counts_rows.extend((spec.sigma_n,) + r for r in clipped.count_rows())
        stats_rows.extend((spec.sigma_n, 'clipped') + r
                          for r in clipped.stat_rows())
        stats_rows.extend((spec.sigma_n, 'preclip') + r
                          for r in raw.stat_rows())
    h = config.config_hash()
    write_csv(_out(config, 'histogram_counts.csv'), HISTOGRAM_COUNTS_HEADER,
              counts_rows, h, config.force)
    write_csv(_out(config, 'histogram_stats.csv'), HISTOGRAM_STATS_HEADER,
              stats_rows, h, config.force)
    return counts_rows, stats_rows


@experiment
def cmd_transfer(config, checkpoint=None, groups=None, epochs=None):
    """BatchNorm -> LocalNorm transfer with optional fine-tuning

    Logs clean test accuracy of the source (frozen_bn) and of the
    transferred model (batch) before and after fine-tuning.

    Parameters
    ----------
    config : :class:`ExperimentConfig` or dict or str
    checkpoint : str or :class:`localnorm.nn.Checkpoint`, optional
        BatchNorm checkpoint (defaults to the training checkpoint)
    groups : int, optional
        K (overrides transfer.groups)
    epochs : int, optional
        fine-tuning epochs (overrides transfer.fine_tune_epochs)

    Returns
    -------
    checkpoint : :class:`localnorm.nn.Checkpoint`
    log : :class:`localnorm.nn.MetricsLog` or None
    """
    if checkpoint is None:
        checkpoint = _out(config, CHECKPOINT_NAME)
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint.load(checkpoint)
    groups = int(config.transfer['groups'] if groups is None else groups)
    epochs = int(config.transfer['fine_tune_epochs'] if epochs is None
                 else epochs)
    train_set, test_set = load_datasets(config)
    rng = Rng(config.seed).child('transfer')

    def clean_accuracy(model, mode):
        return accuracy(predict_dataset(model, test_set, mode, rng=rng),
                        test_set.labels)

    transferred = transfer_bn_to_local(checkpoint, groups,
                                       batch_size=config.batch_size)
    before = clean_accuracy(checkpoint.to_model(), EvalMode('frozen_bn'))
    model = transferred.to_model()
    after = clean_accuracy(model, EvalMode('batch'))
    logger.info('clean accuracy: source frozen_bn {:.4f}, transferred '
                'K={} batch {:.4f}'.format(before, groups, after))
    log = None
    if epochs > 0:
        cfg = config.with_overrides(norm=dict(
            config.norm, variant='local', groups=groups, stat_mode='dynamic'))
        transferred, log = train(cfg, _training_set(config, train_set),
                                 test_set, epochs=epochs, model=model)
        log.add(0, 'test', 'accuracy_source_frozen_bn', before)
        log.add(0, 'test', 'accuracy_transferred_batch', after)
        logger.info('clean accuracy after {} fine-tuning epochs: '
                    '{:.4f}'.format(epochs, clean_accuracy(
                        transferred.to_model(), EvalMode('batch'))))
        log.write(config.output_dir, config.config_hash(),
                  force=config.force, prefix='transfer_')
    transferred.metadata['config_hash'] = config.config_hash()
    transferred.save(_out(config, TRANSFER_CHECKPOINT_NAME),
                     force=config.force)
    return transferred, log


def _csv_list(text, cast=str):
    return [cast(t.strip()) for t in text.split(',') if t.strip()]


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='json experiment config')
    common.add_argument('--seed', type=int, help='override config seed')
    common.add_argument('--out', help='override output directory')
    common.add_argument('--force', action='store_true', default=None,
                        help='overwrite existing outputs')
    common.add_argument('--threads', type=int,
                        help='threads for evaluation cells')
    common.add_argument('-v', '--verbose', action='count', default=0,
                        help='-v for info, -vv for debug logging')

    parser = argparse.ArgumentParser(
        prog='localnorm',
        description='train and evaluate normalization layers under noise')
    sub = parser.add_subparsers(dest='command')

    p = sub.add_parser('train', parents=[common], help='train a model')
    p.add_argument('--epochs', type=int, help='override training epochs')

    p = sub.add_parser('eval', parents=[common],
                       help='evaluate a checkpoint under a noise sweep')
    p.add_argument('--checkpoint', help='checkpoint file')
    p.add_argument('--modes', help='comma separated modes, e.g. '
                                   'batch,single_voting+rot90')
    p.add_argument('--noise', help="noise sweep, e.g. 'agn:0,1,2;mbn:0.3'")
    p.add_argument('--max-images', type=int, help='cap on test images')
    p.add_argument('--confusion', action='store_true', default=None,
                   help='write confusion matrices')

    p = sub.add_parser('sweep-groups', parents=[common],
                       help='train and evaluate one model per K')
    p.add_argument('--groups', help='comma separated K values')

    p = sub.add_parser('histogram', parents=[common],
                       help='channel histograms under noise')
    p.add_argument('--image', help='image file')

    p = sub.add_parser('transfer', parents=[common],
                       help='BatchNorm to LocalNorm transfer')
    p.add_argument('--checkpoint', help='BatchNorm checkpoint file')
    p.add_argument('--groups', type=int, help='K')
    p.add_argument('--epochs', type=int, help='fine-tuning epochs')
    return parser


def main(argv=None):
    """run the command line; returns the process exit code"""
    parser = _parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    logging.basicConfig(
        stream=sys.stderr,
        level=[logging.WARNING, logging.INFO, logging.DEBUG][
            min(args.verbose, 2)],
        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        config = ExperimentConfig.load(args.config) if args.config \
            else ExperimentConfig()
        config = config.with_overrides(seed=args.seed, output_dir=args.out,
                                       force=args.force, threads=args.threads)
        if args.command == 'train':
            if args.epochs is not None:
                config.training['epochs'] = args.epochs
            cmd_train(config)
        elif args.command == 'eval':
            cmd_eval(config, checkpoint=args.checkpoint,
                     modes=_csv_list(args.modes) if args.modes else None,
                     noise=args.noise, max_images=args.max_images,
                     confusion=args.confusion)
        elif args.command == 'sweep-groups':
            cmd_sweep_groups(config, groups=_csv_list(args.groups, int)
                             if args.groups else None)
        elif args.command == 'histogram':
            cmd_histogram(config, image=args.image)
        elif args.command == 'transfer':
            cmd_transfer(config, checkpoint=args.checkpoint,
                         groups=args.groups, epochs=args.epochs)
    except (LocalNormError, ValueError) as e:
        logger.error(e)
        sys.stderr.write('localnorm {}: error: {}\n'.format(
            args.command, e))
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
