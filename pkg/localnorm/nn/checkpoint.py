#!/usr/bin/env python
"""versioned binary checkpoint of a model's configuration and state

Layout (all integers little-endian)::

    b"LNCK"                      magic
    uint32                       format version
    uint32                       metadata length L
    L bytes                      UTF-8 JSON metadata
    per tensor:
      uint16                     name length
      name bytes                 UTF-8
      uint8                      dtype code (1 = <f4)
      uint8                      rank r
      r x uint32                 extents
      prod(extents) x itemsize   raw data
"""
import collections
import json
import logging
import os
import struct

import numpy

from localnorm.errors import CheckpointError
from localnorm.tensor import Rng
from localnorm.utils import NullHandler, check_writable, lndumps
from .model import Model, ModelConfig

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['Checkpoint', 'MAGIC', 'FORMAT_VERSION']

MAGIC = b'LNCK'
FORMAT_VERSION = 1

_DTYPE_CODES = {1: numpy.dtype('<f4')}
_F4 = 1


class _Reader(object):
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError('truncated checkpoint while reading '
                                  '{}'.format(what))
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


class Checkpoint(object):
    """model configuration, named tensors and training position

    Attributes
    ----------
    model_config : :class:`localnorm.nn.ModelConfig`
        architecture and normalization
    state : collections.OrderedDict
        name -> numpy.ndarray (parameters, then running statistics)
    epoch : int
        completed training epochs
    rng_state : dict or None
        :meth:`localnorm.tensor.Rng.get_state` of the data stream
    metadata : dict
        free-form json-compatible extras (config hash, source)
    """

    def __init__(self, model_config, state, epoch=0, rng_state=None,
                 metadata=None):
        self.model_config = model_config
        self.state = collections.OrderedDict(state)
        self.epoch = int(epoch)
        self.rng_state = rng_state
        self.metadata = dict(metadata or {})

    @classmethod
    def from_model(cls, model, epoch=0, rng=None, metadata=None):
        """snapshot of a model's current parameters and statistics"""
        return cls(ModelConfig(json=model.config.to_dict()),
                   model.state_dict(), epoch=epoch,
                   rng_state=None if rng is None else rng.get_state(),
                   metadata=metadata)

    def to_model(self):
        """a new :class:`Model` holding this checkpoint's state"""
        model = Model(ModelConfig(json=self.model_config.to_dict()),
                      rng=Rng(0))
        model.load_state_dict(self.state)
        return model

    def rng(self):
        """restored data stream, or None"""
        return None if self.rng_state is None else \
            Rng.from_state(self.rng_state)

    def _metadata(self):
        from localnorm import __version__
        return {'model_config': self.model_config.to_dict(),
                'epoch': self.epoch,
                'rng_state': self.rng_state,
                'version': __version__,
                'tensor_count': len(self.state),
                'metadata': self.metadata}

    def to_bytes(self):
        """serialize to the checkpoint byte layout

        Every tensor is stored as little-endian float32; float64 tensors
        are rounded (logged once per checkpoint).

        Returns
        -------
        bytes
        """
        meta = lndumps(self._metadata(), sort_keys=True).encode('utf-8')
        parts = [MAGIC, struct.pack('<II', FORMAT_VERSION, len(meta)), meta]
        target = _DTYPE_CODES[_F4]
        wide = [name for name, arr in self.state.items()
                if numpy.asarray(arr).dtype.itemsize > target.itemsize]
        if wide:
            logger.warning('casting {} float64 tensors ({}, ...) to '
                           'float32 for the checkpoint'.format(
                               len(wide), wide[0]))
        for name, arr in self.state.items():
            arr = numpy.asarray(arr)
            encoded = name.encode('utf-8')
            parts.append(struct.pack('<H', len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack('<BB', _F4, arr.ndim))
            parts.append(struct.pack('<{}I'.format(arr.ndim), *arr.shape))
            parts.append(numpy.ascontiguousarray(arr, dtype=target).tobytes())
        return b''.join(parts)

    @classmethod
    def from_bytes(cls, buf):
        """parse a checkpoint produced by :meth:`to_bytes`

        Raises
        ------
        CheckpointError
            on bad magic, unsupported version, truncation, trailing
            bytes or malformed metadata
        """
        r = _Reader(bytes(buf))
        if r.take(len(MAGIC), 'magic') != MAGIC:
            raise CheckpointError('bad magic: not a localnorm checkpoint')
        version, meta_len = r.unpack('<II', 'header')
        if version != FORMAT_VERSION:
            raise CheckpointError(
                'unsupported checkpoint format version {}'.format(version))
        try:
            meta = json.loads(r.take(meta_len, 'metadata').decode('utf-8'))
        except ValueError as e:
            raise CheckpointError('malformed checkpoint metadata: {}'.format(
                e))
        state = collections.OrderedDict()
        for i in range(int(meta.get('tensor_count', 0))):
            (name_len,) = r.unpack('<H', 'tensor name length')
            name = r.take(name_len, 'tensor name').decode('utf-8')
            code, rank = r.unpack('<BB', 'tensor header of {}'.format(name))
            if code not in _DTYPE_CODES:
                raise CheckpointError('unknown dtype code {} for {}'.format(
                    code, name))
            dt = _DTYPE_CODES[code]
            shape = r.unpack('<{}I'.format(rank), 'shape of {}'.format(name))
            count = int(numpy.prod(shape, dtype=numpy.int64))
            data = r.take(count * dt.itemsize, 'data of {}'.format(name))
            state[name] = numpy.frombuffer(data, dtype=dt).reshape(
                shape).astype(dt.newbyteorder('='))
        if r.pos != len(r.buf):
            raise CheckpointError('{} trailing bytes after last tensor'.format(
                len(r.buf) - r.pos))
        try:
            model_config = ModelConfig(json=meta['model_config'])
        except KeyError:
            raise CheckpointError('checkpoint metadata lacks model_config')
        return cls(model_config, state, epoch=meta.get('epoch', 0),
                   rng_state=meta.get('rng_state'),
                   metadata=meta.get('metadata'))

    def save(self, path, force=False):
        """write to path (refuses to overwrite unless force)"""
        check_writable(path, force)
        with open(path, 'wb') as f:
            f.write(self.to_bytes())
        logger.info('saved checkpoint {} (epoch {}, {} tensors)'.format(
            path, self.epoch, len(self.state)))
        return path

    @classmethod
    def load(cls, path):
        if not os.path.isfile(path):
            raise CheckpointError('no checkpoint at {}'.format(path))
        with open(path, 'rb') as f:
            return cls.from_bytes(f.read())

    def __repr__(self):
        return 'Checkpoint(epoch={}, variant={}, tensors={})'.format(
            self.epoch, self.model_config.norm.get('variant'),
            len(self.state))
