#!/usr/bin/env python
"""experiment configuration: a json document of plain sections"""
import copy
import json
import logging
import os

from .data import mnist_paths
from .errors import ConfigError, LocalNormError
from .evaluation import EvalMode
from .nn.model import MNIST_ARCHITECTURE, ModelConfig
from .noise import NoiseSpec
from .norm import VARIANTS
from .utils import NullHandler, canonical_hash, check_writable, lndump

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['ExperimentConfig', 'DEFAULTS', 'DATASET_KINDS']

DATASET_KINDS = ('mnist', 'cifar10', 'synthetic')

DEFAULTS = {
    'dataset': {
        'kind': 'mnist',
        'path': None,
        'train_count': 10000,
        'test_count': None,
        'synthetic': {'train': 1000, 'test': 200,
                      'image_shape': [28, 28, 1], 'classes': 10,
                      'pixel_noise': 32.0}},
    'model': {
        'architecture': list(MNIST_ARCHITECTURE),
        'dtype': 'float32'},
    'norm': {
        'variant': 'local',
        'groups': 10,
        'epsilon': 1e-7,
        'momentum': 0.9,
        'stat_mode': None},
    'training': {
        'epochs': 5,
        'batch_size': 100,
        'lr': 0.01,
        'momentum': 0.9,
        'noise_augmentation': None},
    'evaluation': {
        'modes': ['batch'],
        'noise': [{'family': 'agn', 'sigma_n': [0.0, 0.5, 1.0, 2.0]}],
        'max_images': None,
        'single_max_images': 1000,
        'confusion': False},
    'sweep': {
        'groups': [1, 2, 4, 5, 10]},
    'histogram': {
        'image': None,
        'count': 100,
        'family': 'agn',
        'sigma_n': [0.0, 1.0, 2.0],
        'bins': 256},
    'transfer': {
        'groups': 10,
        'fine_tune_epochs': 1},
    'seed': 0,
    'output_dir': 'localnorm-output',
    'threads': 1,
    'force': False,
}

# fields that do not change results
_UNHASHED = ('output_dir', 'force', 'threads')

_SINGLE_KINDS = ('single', 'single_voting', 'dynamic_bn_single')


def _merge(defaults, given, path=''):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if k not in defaults:
            logger.warning('unknown config key {}{}'.format(path, k))
            out[k] = v
        elif isinstance(defaults[k], dict) and isinstance(v, dict):
            out[k] = _merge(defaults[k], v, '{}{}.'.format(path, k))
        else:
            out[k] = v
    return out


class ExperimentConfig(object):
    """dataset, model, normalization, training, evaluation and sweep
    settings of one experiment

    Parameters
    ----------
    json : dict, optional
        (partial) configuration; missing keys take :data:`DEFAULTS`
    **overrides
        top-level sections or fields replacing those in json

    Examples
    --------
    >>> cfg = ExperimentConfig(json={'norm': {'variant': 'batch'}})
    >>> cfg.model_config().groups
    1
    """

    def __init__(self, json=None, **overrides):
        d = dict(json or {})
        d.update(overrides)
        self.from_dict(d)

    def from_dict(self, d):
        merged = _merge(DEFAULTS, d)
        for k, v in merged.items():
            setattr(self, k, v)
        self._keys = list(merged)

    def to_dict(self):
        return {k: copy.deepcopy(getattr(self, k)) for k in self._keys}

    @classmethod
    def load(cls, path):
        """read a json config file"""
        if not os.path.isfile(path):
            raise ConfigError('no config file at {}'.format(path))
        with open(path, 'r') as f:
            try:
                d = json.load(f)
            except ValueError as e:
                raise ConfigError('cannot parse config {}: {}'.format(
                    path, e))
        if not isinstance(d, dict):
            raise ConfigError('config {} is not a json object'.format(path))
        return cls(json=d)

    def save(self, path, force=False):
        """write the config as indented, key-sorted json"""
        check_writable(path, force)
        with open(path, 'w') as f:
            lndump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')
        return path

    def with_overrides(self, **kwargs):
        """copy with top-level fields replaced (None values ignored)"""
        d = self.to_dict()
        d.update({k: v for k, v in kwargs.items() if v is not None})
        return ExperimentConfig(json=d)

    def config_hash(self):
        """sha256 of the canonical json, ignoring output-only fields"""
        d = self.to_dict()
        for k in _UNHASHED:
            d.pop(k, None)
        return canonical_hash(d)

    @property
    def batch_size(self):
        return int(self.training['batch_size'])

    @property
    def input_shape(self):
        kind = self.dataset['kind']
        if kind == 'mnist':
            return (28, 28, 1)
        if kind == 'cifar10':
            return (32, 32, 3)
        return tuple(self.dataset['synthetic']['image_shape'])

    @property
    def classes(self):
        if self.dataset['kind'] == 'synthetic':
            return int(self.dataset['synthetic']['classes'])
        return 10

    def model_config(self, norm=None):
        """:class:`ModelConfig` for this experiment

        Parameters
        ----------
        norm : dict, optional
            fields replacing those of the norm section (e.g. groups
            during a sweep)
        """
        n = dict(self.norm)
        n.update(norm or {})
        if n.get('stat_mode') is None:
            n.pop('stat_mode', None)
        return ModelConfig(architecture=self.model['architecture'], norm=n,
                           input_shape=self.input_shape,
                           classes=self.classes,
                           batch_size=self.batch_size,
                           dtype=self.model['dtype'])

    def eval_modes(self):
        return [EvalMode.parse(m) for m in self.evaluation['modes']]

    def noise_grid(self):
        """NoiseSpec for every (family, sigma_n) cell, in config order"""
        specs = []
        for entry in self.evaluation['noise']:
            sigmas = entry.get('sigma_n', [])
            if not isinstance(sigmas, (list, tuple)):
                sigmas = [sigmas]
            for s in sigmas:
                specs.append(NoiseSpec(
                    entry.get('family', 'agn'), s,
                    apn_variant=entry.get('apn_variant', 'additive')))
        return specs

    def augmentation_noise(self):
        """(NoiseSpec, fraction) of training augmentation, or None"""
        aug = self.training.get('noise_augmentation')
        if not aug:
            return None
        return (NoiseSpec(aug.get('family', 'agn'), aug.get('sigma_n', 1.0),
                          apn_variant=aug.get('apn_variant', 'additive')),
                float(aug.get('fraction', 0.5)))

    def validate(self, check_files=True):
        """raise ConfigError on an invalid or inconsistent configuration

        Parameters
        ----------
        check_files : bool
            also check that referenced dataset files exist
        """
        try:
            self._validate(check_files)
        except ConfigError:
            raise
        except LocalNormError as e:
            raise ConfigError('invalid configuration: {}'.format(e))
        return self

    def _validate(self, check_files):
        ds = self.dataset
        if ds['kind'] not in DATASET_KINDS:
            raise ConfigError('unknown dataset kind {}'.format(ds['kind']))
        if check_files and ds['kind'] == 'mnist':
            if not ds.get('path'):
                raise ConfigError('dataset.path must name the MNIST '
                                  'directory')
            mnist_paths(ds['path'], 'train')
            mnist_paths(ds['path'], 'test')
        if check_files and ds['kind'] == 'cifar10':
            if not ds.get('path') or not os.path.isdir(ds['path']):
                raise ConfigError('dataset.path must name the CIFAR-10 '
                                  'binary directory')
        if self.norm['variant'] not in VARIANTS:
            raise ConfigError('unknown normalization variant {}'.format(
                self.norm['variant']))
        tr = self.training
        if int(tr['epochs']) < 0:
            raise ConfigError('epochs must be nonnegative')
        if not float(tr['lr']) > 0:
            raise ConfigError('learning rate must be positive')
        if not 0 <= float(tr['momentum']) < 1:
            raise ConfigError('momentum must lie in [0, 1)')
        self.model_config()
        for k in self.sweep['groups']:
            if int(k) < 1 or self.batch_size % int(k):
                raise ConfigError(
                    'indivisible group count: K={} does not divide batch '
                    'size {}'.format(k, self.batch_size))
        self.eval_modes()
        if not self.evaluation['noise']:
            raise ConfigError('evaluation.noise must list at least one '
                              'family')
        for entry in self.evaluation['noise']:
            if entry.get('sigma_n') in (None, []):
                raise ConfigError('empty sigma_n grid for {}'.format(
                    entry.get('family')))
        self.noise_grid()
        aug = self.augmentation_noise()
        if aug is not None and not 0 <= aug[1] <= 1:
            raise ConfigError('noise_augmentation.fraction must lie in '
                              '[0, 1], got {}'.format(aug[1]))
        if not self.histogram['sigma_n']:
            raise ConfigError('histogram.sigma_n grid is empty')
        if self.histogram.get('image') and check_files and \
                not os.path.isfile(self.histogram['image']):
            raise ConfigError('no histogram image at {}'.format(
                self.histogram['image']))

    def single_image_cap(self, mode):
        """image cap for a mode: the expensive single-image modes use
        evaluation.single_max_images when it is lower"""
        cap = self.evaluation.get('max_images')
        if mode.kind in _SINGLE_KINDS:
            single = self.evaluation.get('single_max_images')
            if single is not None:
                cap = single if cap is None else min(cap, single)
        return cap

    def __repr__(self):
        return 'ExperimentConfig(hash={})'.format(self.config_hash()[:12])
