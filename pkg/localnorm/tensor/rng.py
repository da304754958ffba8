#!/usr/bin/env python
"""seeded, platform-independent random streams"""
import logging
import zlib

import numpy

from localnorm.errors import TensorError
from localnorm.utils import NullHandler

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['Rng']


class Rng(object):
    """Philox (counter-based) generator with named child streams

    Identical seed and call sequence give identical values on every
    platform.  Independent consumers (data shuffling, initialization,
    noise, group choice) should each take their own :meth:`child`
    stream so that adding draws in one does not shift another.

    Attributes
    ----------
    seed : int
        nonnegative 64-bit seed
    spawn_key : tuple of int
        path of child-stream keys below the root seed
    """

    def __init__(self, seed=0, spawn_key=()):
        seed = int(seed)
        if seed < 0 or seed >= 2 ** 64:
            raise TensorError('seed must be a 64-bit nonnegative integer, '
                              'got {}'.format(seed))
        self.seed = seed
        self.spawn_key = tuple(int(k) for k in spawn_key)
        ss = numpy.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self._generator = numpy.random.Generator(numpy.random.Philox(ss))

    def child(self, name):
        """independent stream derived from this stream's seed and a name

        Parameters
        ----------
        name : str or int
            stream label; equal labels give equal streams

        Returns
        -------
        Rng
        """
        key = zlib.crc32(str(name).encode('utf-8'))
        return Rng(self.seed, self.spawn_key + (key,))

    @property
    def generator(self):
        """the wrapped :class:`numpy.random.Generator`"""
        return self._generator

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._generator.normal(loc, scale, size)

    def poisson(self, lam=1.0, size=None):
        return self._generator.poisson(lam, size)

    def random(self, size=None):
        return self._generator.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._generator.integers(low, high, size)

    def permutation(self, n):
        return self._generator.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self._generator.choice(a, size=size, replace=replace)

    def get_state(self):
        """json-compatible snapshot of the generator state"""
        state = self._generator.bit_generator.state
        return {
            'seed': self.seed,
            'spawn_key': list(self.spawn_key),
            'bit_generator': state['bit_generator'],
            'counter': [int(v) for v in state['state']['counter']],
            'key': [int(v) for v in state['state']['key']],
            'buffer': [int(v) for v in state['buffer']],
            'buffer_pos': int(state['buffer_pos']),
            'has_uint32': int(state['has_uint32']),
            'uinteger': int(state['uinteger'])}

    def set_state(self, d):
        """restore a snapshot produced by :meth:`get_state`"""
        self._generator.bit_generator.state = {
            'bit_generator': d['bit_generator'],
            'state': {
                'counter': numpy.array(d['counter'], dtype=numpy.uint64),
                'key': numpy.array(d['key'], dtype=numpy.uint64)},
            'buffer': numpy.array(d['buffer'], dtype=numpy.uint64),
            'buffer_pos': d['buffer_pos'],
            'has_uint32': d['has_uint32'],
            'uinteger': d['uinteger']}

    @classmethod
    def from_state(cls, d):
        rng = cls(d['seed'], d.get('spawn_key', ()))
        rng.set_state(d)
        return rng

    def __repr__(self):
        return 'Rng(seed={}, spawn_key={})'.format(self.seed, self.spawn_key)
