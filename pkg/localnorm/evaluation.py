#!/usr/bin/env python
"""evaluation strategies for models with test-time statistics

Every strategy is a pattern of statistic groups (which images share
normalization statistics) and affine rows (which (gamma_k, beta_k) each
image uses) handed to one vectorized forward pass.
"""
import logging

import numpy

from .data import preprocess, wraparound_indices
from .errors import EvaluationError
from .nn.layers import ForwardContext
from .noise import apply_noise
from .norm import BATCH, SWITCH
from .tensor import Rng, Tensor, rot90
from .utils import NullHandler

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['EvalMode', 'ConfusionMatrix', 'eval_single', 'eval_single_voting',
           'eval_batch', 'eval_voting', 'rot90_fill_stats', 'eval_frozen',
           'predict_dataset', 'accuracy', 'confusion', 'vote',
           'SINGLE', 'SINGLE_VOTING', 'VOTING', 'BATCH_MODE', 'FROZEN_BN',
           'DYNAMIC_BN_SINGLE', 'DYNAMIC_BN_BATCH', 'EVAL_KINDS', 'ROT90']

SINGLE = 'single'
SINGLE_VOTING = 'single_voting'
VOTING = 'voting'
BATCH_MODE = 'batch'
FROZEN_BN = 'frozen_bn'
DYNAMIC_BN_SINGLE = 'dynamic_bn_single'
DYNAMIC_BN_BATCH = 'dynamic_bn_batch'
EVAL_KINDS = (SINGLE, SINGLE_VOTING, VOTING, BATCH_MODE, FROZEN_BN,
              DYNAMIC_BN_SINGLE, DYNAMIC_BN_BATCH)

ROT90 = 'rot90'
AUGMENTATIONS = (None, ROT90)

# images per vectorized forward pass in the single-image modes
_CHUNK = 256


class EvalMode(object):
    """an evaluation strategy

    Parameters
    ----------
    kind : str
        one of :data:`EVAL_KINDS`
    augmentation : str or None
        'rot90' fills single-image statistic groups with rotations
        (single, single_voting and dynamic_bn_single only)
    hard_voting : bool
        majority vote over group argmaxes instead of summed softmax
    json : dict, optional
        :meth:`to_dict` output to load instead
    """

    def __init__(self, kind=BATCH_MODE, augmentation=None, hard_voting=False,
                 json=None):
        if json is not None:
            self.from_dict(json)
        else:
            self.kind = kind
            self.augmentation = augmentation
            self.hard_voting = hard_voting
        if self.kind not in EVAL_KINDS:
            raise EvaluationError('unknown evaluation mode {}'.format(
                self.kind))
        if self.augmentation not in AUGMENTATIONS:
            raise EvaluationError('unknown augmentation {}'.format(
                self.augmentation))
        if self.augmentation == ROT90 and self.kind not in (
                SINGLE, SINGLE_VOTING, DYNAMIC_BN_SINGLE):
            raise EvaluationError('rot90 fill applies to single-image '
                                  'modes, not {}'.format(self.kind))

    @classmethod
    def parse(cls, text):
        """'single_voting+rot90' style names, optionally '+hard'"""
        parts = str(text).strip().lower().split('+')
        return cls(parts[0], ROT90 if ROT90 in parts[1:] else None,
                   'hard' in parts[1:])

    @property
    def name(self):
        return '+'.join([self.kind] +
                        ([self.augmentation] if self.augmentation else []) +
                        (['hard'] if self.hard_voting else []))

    @property
    def voting(self):
        return self.kind in (SINGLE_VOTING, VOTING)

    def check_model(self, model):
        """raise EvaluationError if the model cannot run this mode"""
        variant = model.variant
        if self.kind == FROZEN_BN and variant not in (BATCH, SWITCH):
            raise EvaluationError('frozen_bn needs batch or switch '
                                  'normalization, model uses {}'.format(
                                      variant))
        if self.kind in (DYNAMIC_BN_SINGLE, DYNAMIC_BN_BATCH) and \
                variant != BATCH:
            raise EvaluationError('{} needs batch normalization, model uses '
                                  '{}'.format(self.kind, variant))

    def to_dict(self):
        return {'kind': self.kind, 'augmentation': self.augmentation,
                'hard_voting': self.hard_voting}

    def from_dict(self, d):
        self.kind = d.get('kind', BATCH_MODE)
        self.augmentation = d.get('augmentation')
        self.hard_voting = d.get('hard_voting', False)

    def __eq__(self, other):
        return isinstance(other, EvalMode) and self.name == other.name

    def __hash__(self):
        return hash(self.name)

    def __repr__(self):
        return 'EvalMode({})'.format(self.name)


def vote(probs, hard_voting=False):
    """combine [n, K, classes] group probabilities into n predictions

    Soft voting takes the argmax of the summed probabilities; hard
    voting the most frequent per-group argmax.  Ties go to the lowest
    class index.
    """
    probs = numpy.asarray(probs)
    if hard_voting:
        picks = numpy.argmax(probs, axis=2)
        counts = numpy.stack([numpy.bincount(p, minlength=probs.shape[2])
                              for p in picks])
        return numpy.argmax(counts, axis=1)
    return numpy.argmax(probs.sum(axis=1), axis=1)


def _as_images(model, images):
    x = numpy.asarray(images.data if isinstance(images, Tensor) else images,
                      dtype=model.config.dtype)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise EvaluationError('expected [N,H,W,C] images, got {}'.format(
            x.shape))
    return x


def _probs(model, x, stat_groups, affine_rows):
    return model.predict_proba(x, ForwardContext.evaluate(
        stat_groups=stat_groups, affine_rows=affine_rows, frozen=False))


def _check_spatial(x):
    if x.shape[1] * x.shape[2] == 1:
        raise EvaluationError('degenerate statistics: single-image '
                              'statistics over a 1x1 image are zero-variance')


def _single(model, x, rng):
    _check_spatial(x)
    n = x.shape[0]
    rows = rng.integers(0, model.groups, size=n)
    return numpy.argmax(_probs(model, x, numpy.arange(n), rows), axis=1)


def _single_voting(model, x, hard_voting):
    _check_spatial(x)
    n, k = x.shape[0], model.groups
    xr = numpy.repeat(x, k, axis=0)
    probs = _probs(model, xr, numpy.arange(n * k), numpy.tile(
        numpy.arange(k), n))
    return vote(probs.reshape(n, k, -1), hard_voting)


def eval_single(model, image, rng):
    """class of one image through one randomly chosen group

    Statistics are computed over (H, W) per channel of this image
    alone; the group g (uniform over K) selects (gamma_g, beta_g).

    Parameters
    ----------
    model : :class:`localnorm.nn.Model`
    image : array_like
        [H,W,C] or [1,H,W,C] preprocessed image
    rng : :class:`localnorm.tensor.Rng`
        group choice stream

    Returns
    -------
    int

    Raises
    ------
    EvaluationError
        "degenerate statistics" for a 1x1 spatial image
    """
    return int(_single(model, _as_images(model, image)[:1], rng)[0])


def eval_single_voting(model, image, hard_voting=False):
    """class of one image voted over all K groups"""
    return int(_single_voting(model, _as_images(model, image)[:1],
                              hard_voting)[0])


def eval_batch(model, images):
    """classes of a batch split into K contiguous groups, each
    normalized with its own images' statistics

    Raises
    ------
    EvaluationError
        if K does not divide the batch size
    """
    x = _as_images(model, images)
    n, k = x.shape[0], model.groups
    if n % k:
        raise EvaluationError('indivisible batch: K={} does not divide {} '
                              'images'.format(k, n))
    groups = numpy.arange(n) // (n // k)
    return numpy.argmax(_probs(model, x, groups, groups), axis=1)


def eval_voting(model, images, hard_voting=False):
    """classes of a group-size image set run through every group

    Each group sees the same set (statistics from the set) and applies
    its own (gamma_k, beta_k); every image's K outputs are voted.

    Raises
    ------
    EvaluationError
        if the set size differs from the model's group size
    """
    x = _as_images(model, images)
    s, k = model.group_size, model.groups
    if x.shape[0] != s:
        raise EvaluationError('voting needs exactly {} images (the group '
                              'size), got {}'.format(s, x.shape[0]))
    groups = numpy.repeat(numpy.arange(k), s)
    probs = _probs(model, numpy.tile(x, (k, 1, 1, 1)), groups, groups)
    return vote(probs.reshape(k, s, -1).transpose(1, 0, 2), hard_voting)


def _rotation_fill(x, size):
    """[n*size] images: each image followed by its rotations, tiled"""
    rotations = [rot90(Tensor(x), k).data for k in range(4)]
    return numpy.stack([rotations[j % 4] for j in range(size)],
                       axis=1).reshape((-1,) + x.shape[1:])


def _rot90(model, x, rng=None, voting=False, hard_voting=False):
    if x.shape[1] != x.shape[2]:
        raise EvaluationError('rot90 fill needs square images, got '
                              '{}x{}'.format(x.shape[1], x.shape[2]))
    _check_spatial(x)
    n, s, k = x.shape[0], model.group_size, model.groups
    filled = _rotation_fill(x, s)
    if not voting:
        rows = numpy.repeat(rng.integers(0, k, size=n), s)
        probs = _probs(model, filled, numpy.repeat(numpy.arange(n), s), rows)
        return numpy.argmax(probs[::s], axis=1)
    blocks = numpy.repeat(filled.reshape((n, 1, s) + x.shape[1:]), k,
                          axis=1).reshape((-1,) + x.shape[1:])
    rows = numpy.tile(numpy.repeat(numpy.arange(k), s), n)
    probs = _probs(model, blocks, numpy.repeat(numpy.arange(n * k), s), rows)
    return vote(probs[::s].reshape(n, k, -1), hard_voting)


def rot90_fill_stats(model, image, rng=None, voting=False,
                     hard_voting=False):
    """single-image prediction with a group filled by rotated copies

    The statistic group holds the original and its 90, 180 and 270
    degree rotations, tiled to the group size; only the original's
    output is read.  Combined with Single (one random group, needs rng)
    or Single-Voting (voting=True).

    Raises
    ------
    EvaluationError
        for non-square images
    """
    x = _as_images(model, image)[:1]
    if not voting and rng is None:
        raise EvaluationError('rot90 fill with a single group needs an Rng')
    return int(_rot90(model, x, rng, voting, hard_voting)[0])


def eval_frozen(model, images):
    """classes using running statistics; each image independent of the
    rest of the batch"""
    x = _as_images(model, images)
    return numpy.argmax(model.predict_proba(
        x, ForwardContext.evaluate(frozen=True)), axis=1)


def _chunks(n, size):
    for start in range(0, n, size):
        yield numpy.arange(start, min(start + size, n))


def _padded_chunks(n, size):
    idx, valid = wraparound_indices(n, size)
    for start in range(0, idx.size, size):
        yield idx[start:start + size], valid[start:start + size]


def predict_dataset(model, dataset, mode, rng=None, noise=None,
                    max_images=None):
    """predictions for (the first max_images of) a dataset

    Noise is applied in pixel space before preprocessing.  Batch and
    Voting modes use consecutive sets of the batch / group size, the
    trailing set padded by wrap-around; padded predictions are dropped.

    Parameters
    ----------
    model : :class:`localnorm.nn.Model`
    dataset : :class:`localnorm.data.Dataset`
    mode : :class:`EvalMode` or str
    rng : :class:`localnorm.tensor.Rng`, optional
        noise and group-choice stream (defaults to Rng(0))
    noise : :class:`localnorm.noise.NoiseSpec`, optional
    max_images : int, optional

    Returns
    -------
    numpy.ndarray
        [n] int64 predicted classes
    """
    mode = mode if isinstance(mode, EvalMode) else EvalMode.parse(mode)
    mode.check_model(model)
    rng = Rng(0) if rng is None else rng
    dataset = dataset.head(max_images)
    images = dataset.images
    if noise is not None:
        images = apply_noise(images, noise, rng.child('noise'))
    x = preprocess(images, model.config.dtype)
    n = x.shape[0]
    k, s = model.groups, model.group_size
    group_rng = rng.child('groups')
    out = numpy.empty(n, dtype=numpy.int64)
    kind = mode.kind

    if kind == FROZEN_BN:
        for idx in _chunks(n, model.config.batch_size):
            out[idx] = eval_frozen(model, x[idx])
    elif kind in (BATCH_MODE, DYNAMIC_BN_BATCH):
        for idx, valid in _padded_chunks(n, model.config.batch_size):
            out[idx[valid]] = eval_batch(model, x[idx])[valid]
    elif kind == VOTING:
        for idx, valid in _padded_chunks(n, s):
            out[idx[valid]] = eval_voting(model, x[idx],
                                          mode.hard_voting)[valid]
    elif mode.augmentation == ROT90:
        voting = kind == SINGLE_VOTING
        per = max(1, _CHUNK // (s * (k if voting else 1)))
        for idx in _chunks(n, per):
            out[idx] = _rot90(model, x[idx], group_rng, voting,
                              mode.hard_voting)
    elif kind == SINGLE_VOTING:
        for idx in _chunks(n, max(1, _CHUNK // k)):
            out[idx] = _single_voting(model, x[idx], mode.hard_voting)
    else:
        for idx in _chunks(n, _CHUNK):
            out[idx] = _single(model, x[idx], group_rng)
    logger.debug('predicted {} images with {}'.format(n, mode.name))
    return out


def accuracy(predictions, labels):
    """fraction of predictions equal to labels"""
    predictions = numpy.asarray(predictions)
    labels = numpy.asarray(labels)
    if predictions.shape != labels.shape:
        raise EvaluationError('{} predictions for {} labels'.format(
            predictions.shape, labels.shape))
    if labels.size == 0:
        raise EvaluationError('accuracy of an empty set')
    return float(numpy.count_nonzero(predictions == labels)) / labels.size


class ConfusionMatrix(object):
    """class x class counts, rows = true class, columns = prediction

    Attributes
    ----------
    counts : numpy.ndarray
        [classes, classes] int64
    """

    def __init__(self, counts):
        self.counts = numpy.asarray(counts, dtype=numpy.int64)
        if self.counts.ndim != 2 or \
                self.counts.shape[0] != self.counts.shape[1] or \
                numpy.any(self.counts < 0):
            raise EvaluationError('confusion counts must be a square '
                                  'nonnegative matrix')

    @classmethod
    def from_predictions(cls, labels, predictions, classes):
        labels = numpy.asarray(labels, dtype=numpy.int64)
        predictions = numpy.asarray(predictions, dtype=numpy.int64)
        if labels.shape != predictions.shape:
            raise EvaluationError('{} predictions for {} labels'.format(
                predictions.shape, labels.shape))
        flat = numpy.bincount(labels * classes + predictions,
                              minlength=classes * classes)
        return cls(flat.reshape(classes, classes))

    @property
    def classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def accuracy(self):
        return float(numpy.trace(self.counts)) / self.total

    @property
    def recall(self):
        """per-class fraction of true samples predicted correctly (0 for
        absent classes)"""
        rows = self.counts.sum(axis=1)
        return numpy.divide(numpy.diag(self.counts), rows,
                            out=numpy.zeros(self.classes), where=rows > 0)

    @property
    def max_column_share(self):
        """largest fraction of all predictions given to one class"""
        return float(self.counts.sum(axis=0).max()) / self.total

    def rows(self):
        """csv grid rows: true class followed by per-prediction counts"""
        return [[i] + [int(v) for v in self.counts[i]]
                for i in range(self.classes)]

    def header(self):
        return ['true\\pred'] + [str(j) for j in range(self.classes)]

    def to_dict(self):
        return {'counts': self.counts.tolist(),
                'recall': self.recall.tolist(),
                'max_column_share': self.max_column_share}


def confusion(model, dataset, mode, noise=None, rng=None, max_images=None):
    """confusion matrix of a model on a (noisy) dataset under a mode"""
    preds = predict_dataset(model, dataset, mode, rng=rng, noise=noise,
                            max_images=max_images)
    labels = dataset.head(max_images).labels
    return ConfusionMatrix.from_predictions(labels, preds, dataset.classes)
