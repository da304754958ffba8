#!/usr/bin/env python
"""dataset ingestion (IDX, CIFAR-10 binary, synthetic) and batching"""
import gzip
import logging
import math
import os
import struct

import numpy

from .errors import DatasetError, PartitionError
from .noise import apply_noise
from .tensor import Rng
from .utils import NullHandler, check_writable

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['Dataset', 'Batch', 'read_idx', 'write_idx', 'load_idx',
           'load_idx_pair', 'mnist_paths', 'load_mnist',
           'load_cifar10_binary', 'write_cifar10_binary',
           'make_synthetic_dataset', 'make_noisy_trainset', 'batch_iterator',
           'wraparound_indices', 'preprocess']

IDX_UBYTE = 0x08
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CIFAR_SHAPE = (3, 32, 32)
CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_CLASSES = 10


def preprocess(images, dtype='float32'):
    """pixel values [0, 255] -> [0, 1] in the model dtype"""
    return (numpy.asarray(images, dtype=numpy.float64) / 255.0).astype(dtype)


class Dataset(object):
    """labeled images in pixel space

    Attributes
    ----------
    images : numpy.ndarray
        [N,H,W,C] values in [0, 255] (uint8 as read, float after noise)
    labels : numpy.ndarray
        [N] int64 class ids in [0, classes)
    classes : int
        number of classes
    split : str
        split tag (train, test, ...)
    provenance : list of str
        source files and preprocessing applied, in order
    """

    def __init__(self, images, labels, classes=None, split='train',
                 provenance=None):
        images = numpy.asarray(images)
        labels = numpy.asarray(labels).astype(numpy.int64).ravel()
        if images.ndim == 3:
            images = images[..., None]
        if images.ndim != 4:
            raise DatasetError('images must be [N,H,W,C], got shape '
                               '{}'.format(images.shape))
        if images.shape[0] != labels.shape[0]:
            raise DatasetError(
                'label count {} does not match image count {}'.format(
                    labels.shape[0], images.shape[0]))
        if classes is None:
            classes = int(labels.max()) + 1 if labels.size else 1
        if labels.size and (labels.min() < 0 or labels.max() >= classes):
            raise DatasetError('labels outside [0, {})'.format(classes))
        self.images = images
        self.labels = labels
        self.classes = int(classes)
        self.split = split
        self.provenance = list(provenance or [])

    def __len__(self):
        return self.images.shape[0]

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, indices, note=None):
        """dataset restricted to indices (in the given order)"""
        indices = numpy.asarray(indices, dtype=numpy.intp)
        return Dataset(self.images[indices], self.labels[indices],
                       classes=self.classes, split=self.split,
                       provenance=self.provenance + (
                           [note] if note else []))

    def head(self, n):
        """first n samples (all when n is None or >= len)"""
        if n is None or n >= len(self):
            return self
        return self.subset(numpy.arange(n), 'first {}'.format(n))

    def to_dict(self):
        return {'split': self.split, 'count': len(self),
                'image_shape': list(self.image_shape),
                'classes': self.classes, 'provenance': self.provenance}

    def __repr__(self):
        return 'Dataset(split={}, count={}, image_shape={})'.format(
            self.split, len(self), self.image_shape)


def _open(path, mode='rb'):
    if str(path).endswith('.gz'):
        return gzip.open(path, mode)
    return open(path, mode)


def read_idx(path):
    """parse a big-endian unsigned-byte IDX file

    Parameters
    ----------
    path : str
        IDX file, optionally gzip compressed (.gz)

    Returns
    -------
    numpy.ndarray
        uint8 array with the file's dimensions

    Raises
    ------
    DatasetError
        "truncated header", "bad magic", unsupported type, zero
        dimensions, "truncated data" or trailing bytes
    """
    if not os.path.isfile(path):
        raise DatasetError('no IDX file at {}'.format(path))
    with _open(path) as f:
        buf = f.read()
    if len(buf) < 4:
        logger.error('cannot parse {}'.format(path))
        raise DatasetError('truncated header in {}: {} bytes'.format(
            path, len(buf)))
    zero, dtype, rank = struct.unpack('>HBB', buf[:4])
    if zero != 0 or rank < 1:
        raise DatasetError('bad magic 0x{:08x} in {}'.format(
            struct.unpack('>I', buf[:4])[0], path))
    if dtype != IDX_UBYTE:
        raise DatasetError('unsupported IDX data type 0x{:02x} in {}'.format(
            dtype, path))
    header = 4 + 4 * rank
    if len(buf) < header:
        raise DatasetError('truncated header in {}: {} dimensions need {} '
                           'bytes, got {}'.format(path, rank, header,
                                                  len(buf)))
    dims = struct.unpack('>{}I'.format(rank), buf[4:header])
    count = int(numpy.prod(dims, dtype=numpy.int64))
    if len(buf) - header < count:
        raise DatasetError('truncated data in {}: expected {} bytes, got '
                           '{}'.format(path, count, len(buf) - header))
    if len(buf) - header > count:
        raise DatasetError('{} trailing bytes in {}'.format(
            len(buf) - header - count, path))
    return numpy.frombuffer(buf, dtype=numpy.uint8, offset=header).reshape(
        dims).copy()


def write_idx(path, array, force=False):
    """write a uint8 array as an IDX file (gzip when path ends in .gz)"""
    arr = numpy.asarray(array)
    if arr.dtype != numpy.uint8:
        if arr.min() < 0 or arr.max() > 255 or \
                not numpy.all(arr == numpy.round(arr)):
            raise DatasetError('IDX files hold integers in [0, 255]')
        arr = arr.astype(numpy.uint8)
    check_writable(path, force)
    header = struct.pack('>HBB', 0, IDX_UBYTE, arr.ndim) + \
        struct.pack('>{}I'.format(arr.ndim), *arr.shape)
    with _open(path, 'wb') as f:
        f.write(header + arr.tobytes())
    return path


def load_idx_pair(images_path, labels_path, split='train', classes=10):
    """Dataset from an IDX image file (N,H,W) and label file (N)

    Raises
    ------
    DatasetError
        on malformed files, wrong magic for the role, or a label count
        that does not match the image count
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise DatasetError('bad magic for images in {}: expected 0x{:08x} '
                           '(rank 3)'.format(images_path, IDX_IMAGES_MAGIC))
    if labels.ndim != 1:
        raise DatasetError('bad magic for labels in {}: expected 0x{:08x} '
                           '(rank 1)'.format(labels_path, IDX_LABELS_MAGIC))
    if labels.shape[0] != images.shape[0]:
        raise DatasetError(
            'label count {} in {} does not match image count {} in '
            '{}'.format(labels.shape[0], labels_path, images.shape[0],
                        images_path))
    logger.info('loaded {} images of shape {} from {}'.format(
        images.shape[0], images.shape[1:], images_path))
    return Dataset(images[..., None], labels, classes=classes, split=split,
                   provenance=[os.path.basename(images_path),
                               os.path.basename(labels_path)])


def load_idx(path, labels_path=None, split='train', classes=10):
    """Dataset from an IDX image file; the label file defaults to the
    MNIST sibling name (images-idx3 -> labels-idx1)"""
    if labels_path is None:
        name = os.path.basename(path)
        if 'images-idx3' not in name:
            raise DatasetError('cannot infer the label file for {}; pass '
                               'labels_path'.format(path))
        labels_path = os.path.join(os.path.dirname(path),
                                   name.replace('images-idx3', 'labels-idx1'))
    return load_idx_pair(path, labels_path, split=split, classes=classes)


def mnist_paths(directory, split='train'):
    """(images, labels) paths of an MNIST split, plain or gzipped"""
    prefix = 'train' if split == 'train' else 't10k'
    out = []
    for kind in ('images-idx3-ubyte', 'labels-idx1-ubyte'):
        base = os.path.join(directory, '{}-{}'.format(prefix, kind))
        for candidate in (base, base + '.gz'):
            if os.path.isfile(candidate):
                out.append(candidate)
                break
        else:
            raise DatasetError('missing MNIST file {}[.gz]'.format(base))
    return tuple(out)


def load_mnist(directory, split='train'):
    return load_idx_pair(*mnist_paths(directory, split), split=split)


def load_cifar10_binary(paths, split='train'):
    """Dataset from CIFAR-10 binary batch file(s)

    Each 3073-byte record is one label byte followed by 1024 red,
    1024 green and 1024 blue bytes (row-major 32x32 planes); images
    are returned NHWC.

    Raises
    ------
    DatasetError
        empty file, size not a multiple of 3073, or label > 9
    """
    if isinstance(paths, str):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        if not os.path.isfile(path):
            raise DatasetError('no CIFAR-10 file at {}'.format(path))
        with _open(path) as f:
            buf = f.read()
        if not buf or len(buf) % CIFAR_RECORD:
            raise DatasetError(
                'truncated record in {}: {} bytes is not a multiple of '
                '{}'.format(path, len(buf), CIFAR_RECORD))
        rec = numpy.frombuffer(buf, dtype=numpy.uint8).reshape(
            -1, CIFAR_RECORD)
        if rec[:, 0].max() >= CIFAR_CLASSES:
            raise DatasetError('label {} out of range in {}'.format(
                int(rec[:, 0].max()), path))
        labels.append(rec[:, 0].astype(numpy.int64))
        images.append(rec[:, 1:].reshape((-1,) + CIFAR_SHAPE).transpose(
            0, 2, 3, 1))
    return Dataset(numpy.concatenate(images), numpy.concatenate(labels),
                   classes=CIFAR_CLASSES, split=split,
                   provenance=[os.path.basename(p) for p in paths])


def write_cifar10_binary(path, dataset, force=False):
    """write a 32x32x3 uint8 dataset as one CIFAR-10 binary file"""
    if dataset.image_shape != (32, 32, 3):
        raise DatasetError('CIFAR-10 records hold 32x32x3 images, got '
                           '{}'.format(dataset.image_shape))
    check_writable(path, force)
    planes = numpy.asarray(dataset.images, dtype=numpy.uint8).transpose(
        0, 3, 1, 2).reshape(len(dataset), -1)
    rec = numpy.concatenate(
        [dataset.labels.astype(numpy.uint8)[:, None], planes], axis=1)
    with _open(path, 'wb') as f:
        f.write(rec.tobytes())
    return path


def make_synthetic_dataset(count, image_shape=(28, 28, 1), classes=10,
                           pixel_noise=32.0, seed=0, split='train'):
    """class prototypes plus Gaussian pixel noise, rounded to uint8

    Prototypes depend only on (seed, image_shape, classes), so splits
    generated with the same seed share them.

    Parameters
    ----------
    count : int
        number of images
    image_shape : tuple of int
        (H, W, C)
    classes : int
        number of classes (labels balanced, shuffled)
    pixel_noise : float
        standard deviation of the per-pixel noise
    seed : int
    split : str

    Returns
    -------
    Dataset
    """
    root = Rng(seed)
    prototypes = root.child('prototypes').uniform(
        0.0, 255.0, size=(classes,) + tuple(image_shape))
    rng = root.child(split)
    labels = rng.permutation(numpy.arange(count) % classes)
    images = prototypes[labels] + rng.normal(0.0, pixel_noise,
                                             (count,) + tuple(image_shape))
    images = numpy.clip(numpy.round(images), 0, 255).astype(numpy.uint8)
    return Dataset(images, labels, classes=classes, split=split,
                   provenance=['synthetic(seed={}, pixel_noise={})'.format(
                       seed, pixel_noise)])


def make_noisy_trainset(dataset, noise, fraction, rng):
    """dataset plus ceil(fraction N) noise-degraded copies, shuffled

    Parameters
    ----------
    dataset : Dataset
    noise : :class:`localnorm.noise.NoiseSpec`
    fraction : float
        in [0, 1]
    rng : :class:`localnorm.tensor.Rng`

    Returns
    -------
    Dataset
        the input itself when fraction is 0
    """
    if not 0.0 <= fraction <= 1.0:
        raise DatasetError('fraction must lie in [0, 1], got {}'.format(
            fraction))
    n = len(dataset)
    extra = int(math.ceil(fraction * n))
    if extra == 0:
        return dataset
    chosen = numpy.sort(rng.child('choice').choice(n, extra, replace=False))
    noisy = apply_noise(dataset.images[chosen], noise, rng.child('noise'))
    images = numpy.concatenate(
        [dataset.images.astype(numpy.float32), noisy.astype(numpy.float32)])
    labels = numpy.concatenate([dataset.labels, dataset.labels[chosen]])
    order = rng.child('shuffle').permutation(n + extra)
    logger.info('added {} {} copies to {} training images'.format(
        extra, noise.label, n))
    return Dataset(images[order], labels[order], classes=dataset.classes,
                   split=dataset.split,
                   provenance=dataset.provenance + [
                       'augmented {} x{}'.format(noise.label, fraction)])


def wraparound_indices(n, size):
    """indices 0..n-1 padded by wrap-around to a multiple of size

    Returns
    -------
    indices : numpy.ndarray
        padded index array
    valid : numpy.ndarray of bool
        False for padding entries
    """
    if n < 1:
        raise DatasetError('cannot batch an empty dataset')
    total = -(-n // size) * size
    idx = numpy.arange(total) % n
    return idx, numpy.arange(total) < n


class Batch(object):
    """one training or evaluation batch

    Attributes
    ----------
    images : numpy.ndarray
        [B,H,W,C] preprocessed to [0, 1]
    labels : numpy.ndarray
        [B] int64
    sample_groups : numpy.ndarray
        [B] contiguous K-way group id of each sample
    indices : numpy.ndarray
        [B] dataset indices
    valid : numpy.ndarray of bool
        False for wrap-around padding
    """

    def __init__(self, images, labels, sample_groups, indices, valid):
        self.images = images
        self.labels = labels
        self.sample_groups = sample_groups
        self.indices = indices
        self.valid = valid

    def __len__(self):
        return self.labels.shape[0]


def batch_iterator(dataset, batch_size, groups=1, rng=None, shuffle=True,
                   drop_last=True, dtype='float32'):
    """batches of one epoch with a contiguous K-way group split

    Parameters
    ----------
    dataset : Dataset
    batch_size : int
        samples per batch; divisible by groups
    groups : int
        K
    rng : :class:`localnorm.tensor.Rng`, optional
        shuffling stream (required when shuffle is True)
    shuffle : bool
        permute the dataset first
    drop_last : bool
        drop the trailing partial batch (training) instead of padding it
        by wrap-around (evaluation)
    dtype : str
        dtype of the preprocessed images

    Yields
    ------
    Batch
    """
    batch_size, groups = int(batch_size), int(groups)
    if batch_size < 1 or groups < 1 or batch_size % groups:
        raise PartitionError(
            'indivisible group count: K={} does not divide batch size '
            '{}'.format(groups, batch_size))
    n = len(dataset)
    if shuffle:
        if rng is None:
            raise DatasetError('shuffling needs an Rng')
        order = rng.permutation(n)
    else:
        order = numpy.arange(n)
    if drop_last:
        order = order[:n - n % batch_size]
        valid = numpy.ones(order.size, dtype=bool)
    else:
        pad, valid = wraparound_indices(n, batch_size)
        order = order[pad]
    sample_groups = numpy.arange(batch_size) // (batch_size // groups)
    for start in range(0, order.size, batch_size):
        idx = order[start:start + batch_size]
        yield Batch(preprocess(dataset.images[idx], dtype),
                    dataset.labels[idx], sample_groups, idx,
                    valid[start:start + batch_size])
