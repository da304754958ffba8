#!/usr/bin/env python
"""pixel-space noise models and per-channel histogram analysis"""
import logging

import numpy

from .errors import NoiseError
from .tensor import Rng
from .utils import NullHandler

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['NoiseSpec', 'apply_agn', 'apply_apn', 'apply_mbn', 'apply_noise',
           'noise_term', 'channel_histogram', 'ChannelHistogram',
           'AGN', 'APN', 'MBN', 'FAMILIES', 'ADDITIVE', 'MULTIPLICATIVE',
           'PIXEL_MAX']

AGN = 'agn'
APN = 'apn'
MBN = 'mbn'
FAMILIES = (AGN, APN, MBN)

ADDITIVE = 'additive'
MULTIPLICATIVE = 'multiplicative'
APN_VARIANTS = (ADDITIVE, MULTIPLICATIVE)

PIXEL_MAX = 255.0


def _check_unit(sigma_n, family):
    if not 0.0 <= sigma_n <= 1.0:
        raise NoiseError('{} sigma_n must lie in [0, 1], got {}'.format(
            family.upper(), sigma_n))


class NoiseSpec(object):
    """noise family, intensity and variant flags

    Parameters
    ----------
    family : str
        'agn' (x(1+xi), xi ~ N(0, sigma_n)), 'apn' (Poisson, recentered)
        or 'mbn' (pixels removed with probability sigma_n)
    sigma_n : float
        intensity; apn and mbn require [0, 1]
    apn_variant : str
        'additive' (x + 255 xi) or 'multiplicative' (x(1 + xi))
    clip : bool
        clip results to [0, 255]
    seed : int, optional
        seed of the noise stream when no Rng is supplied
    json : dict, optional
        :meth:`to_dict` output to load instead
    """

    def __init__(self, family=AGN, sigma_n=0.0, apn_variant=ADDITIVE,
                 clip=True, seed=None, json=None):
        if json is not None:
            self.from_dict(json)
        else:
            self.family = family
            self.sigma_n = sigma_n
            self.apn_variant = apn_variant
            self.clip = clip
            self.seed = seed
        self._validate()

    def _validate(self):
        self.family = str(self.family).lower()
        if self.family not in FAMILIES:
            raise NoiseError('unknown noise family {}'.format(self.family))
        if self.apn_variant not in APN_VARIANTS:
            raise NoiseError('unknown APN variant {}'.format(
                self.apn_variant))
        self.sigma_n = float(self.sigma_n)
        if not self.sigma_n >= 0:
            raise NoiseError('sigma_n must be nonnegative, got {}'.format(
                self.sigma_n))
        if self.family in (APN, MBN):
            _check_unit(self.sigma_n, self.family)

    @property
    def label(self):
        """short name used in output file names"""
        return '{}_{}'.format(self.family, self.sigma_n)

    def to_dict(self):
        return {'family': self.family, 'sigma_n': self.sigma_n,
                'apn_variant': self.apn_variant, 'clip': self.clip,
                'seed': self.seed}

    def from_dict(self, d):
        self.family = d.get('family', AGN)
        self.sigma_n = d.get('sigma_n', 0.0)
        self.apn_variant = d.get('apn_variant', ADDITIVE)
        self.clip = d.get('clip', True)
        self.seed = d.get('seed')

    def __repr__(self):
        return 'NoiseSpec({}, sigma_n={})'.format(self.family, self.sigma_n)


def _finish(out, clip):
    return numpy.clip(out, 0.0, PIXEL_MAX, out=out) if clip else out


def noise_term(spec, shape, rng):
    """draw the noise variable xi for images of the given shape

    agn and apn draw one value per pixel and channel; mbn draws a keep
    mask per pixel of shape shape[:-1] + (1,), shared across channels.

    Parameters
    ----------
    spec : :class:`NoiseSpec`
    shape : tuple of int
        image shape, channels last
    rng : :class:`localnorm.tensor.Rng`

    Returns
    -------
    numpy.ndarray
        float64 xi (agn, apn) or keep mask (mbn)
    """
    shape = tuple(shape)
    s = spec.sigma_n
    if spec.family == AGN:
        if s == 0:
            return numpy.zeros(shape)
        return rng.normal(0.0, s, shape)
    if spec.family == APN:
        return rng.poisson(s, shape).astype(numpy.float64) - s
    mask_shape = shape[:-1] + (1,)
    return (rng.random(mask_shape) >= s).astype(numpy.float64)


def apply_agn(x, sigma_n, rng, clip=True):
    """x_c (1 + xi), xi ~ N(0, sigma_n) per pixel and channel

    Parameters
    ----------
    x : array_like
        image(s) in [0, 255], channels last
    sigma_n : float
        standard deviation (>= 0)
    rng : :class:`localnorm.tensor.Rng`
    clip : bool
        clip to [0, 255]

    Returns
    -------
    numpy.ndarray
        float64 noisy image(s)
    """
    return apply_noise(x, NoiseSpec(AGN, sigma_n, clip=clip), rng)


def apply_apn(x, sigma_n, rng, variant=ADDITIVE, clip=True):
    """x_c + 255 xi (additive) or x_c (1 + xi) (multiplicative) with
    xi = k - sigma_n, k ~ Poisson(sigma_n)"""
    return apply_noise(
        x, NoiseSpec(APN, sigma_n, apn_variant=variant, clip=clip), rng)


def apply_mbn(x, sigma_n, rng, clip=True):
    """remove each pixel (all channels) with probability sigma_n"""
    return apply_noise(x, NoiseSpec(MBN, sigma_n, clip=clip), rng)


def apply_noise(x, spec, rng):
    """apply a :class:`NoiseSpec` to image(s) in pixel space

    Parameters
    ----------
    x : array_like
        image(s) in [0, 255], channels last
    spec : :class:`NoiseSpec`
    rng : :class:`localnorm.tensor.Rng`, optional
        noise stream; defaults to Rng(spec.seed)

    Returns
    -------
    numpy.ndarray
        float64 noisy image(s); identical to x when sigma_n is 0
    """
    if rng is None:
        rng = Rng(0 if spec.seed is None else spec.seed)
    x = numpy.asarray(x, dtype=numpy.float64)
    xi = noise_term(spec, x.shape, rng)
    if spec.family == APN and spec.apn_variant == ADDITIVE:
        out = x + PIXEL_MAX * xi
    elif spec.family == MBN:
        out = x * xi
    else:
        out = x * (1.0 + xi)
    return _finish(out, spec.clip)


class ChannelHistogram(object):
    """per-channel bin counts and summary statistics

    Attributes
    ----------
    counts : numpy.ndarray
        [C, bins] int64 counts over [0, 256)
    mean, std : numpy.ndarray
        [C] float64 per-channel mean and (population) standard deviation
    bins : int
    """

    def __init__(self, counts, mean, std):
        self.counts = counts
        self.mean = mean
        self.std = std
        self.bins = counts.shape[1]

    @property
    def channels(self):
        return self.counts.shape[0]

    def count_rows(self):
        """(channel, bin, count) rows"""
        return [(c, b, int(self.counts[c, b]))
                for c in range(self.channels) for b in range(self.bins)]

    def stat_rows(self):
        """(channel, mean, std) rows"""
        return [(c, float(self.mean[c]), float(self.std[c]))
                for c in range(self.channels)]


def channel_histogram(x, bins=256, allow_out_of_range=False):
    """exact per-channel histogram and (mean, std) of pixel values

    Bin b of `bins` equal bins covers [256 b / bins, 256 (b + 1) / bins);
    integer pixel v lands in bin floor(v bins / 256).

    Parameters
    ----------
    x : array_like
        image(s), channels last
    bins : int
        bins per channel (divides 256 for integer-aligned bins)
    allow_out_of_range : bool
        accept values outside [0, 255] (pre-clip analysis); they are
        counted in the edge bins

    Returns
    -------
    ChannelHistogram

    Raises
    ------
    NoiseError
        values outside [0, 255] without allow_out_of_range
    """
    x = numpy.asarray(x, dtype=numpy.float64)
    if x.ndim < 1 or x.size == 0:
        raise NoiseError('cannot histogram an empty image')
    bins = int(bins)
    if bins < 1:
        raise NoiseError('bins must be positive')
    c = x.shape[-1]
    flat = x.reshape(-1, c)
    if not allow_out_of_range and (flat.min() < 0 or flat.max() > PIXEL_MAX):
        raise NoiseError('histogram input outside [0, 255]')
    idx = numpy.clip(numpy.floor(flat * bins / 256.0), 0, bins - 1).astype(
        numpy.intp)
    counts = numpy.stack([numpy.bincount(idx[:, i], minlength=bins)
                          for i in range(c)]).astype(numpy.int64)
    return ChannelHistogram(counts, flat.mean(axis=0), flat.std(axis=0))
