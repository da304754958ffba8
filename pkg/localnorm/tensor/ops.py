#!/usr/bin/env python
"""differentiable primitives on :class:`Tensor`

Every primitive returns a new Tensor and, when any input requires
gradients, records a closure mapping the output gradient to input
gradients.  Outputs are checked for NaN/Inf.
"""
import logging

import numpy
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special
from decorator import decorator

from localnorm.errors import PartitionError, TensorError
from localnorm.utils import NullHandler, ensure_finite
from .tensor import Tensor, as_tensor

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = [
    'add', 'sub', 'mul', 'div', 'neg', 'power', 'sqrt', 'exp', 'log',
    'sum', 'mean', 'reshape', 'take_rows', 'matmul', 'conv2d_forward',
    'max_pool2d', 'relu', 'softmax', 'log_softmax', 'cross_entropy',
    'rot90', 'reduce_mean_var', 'group_normalize', 'PADDING_MODES']

PADDING_MODES = ('same', 'valid')


@decorator
def finite_output(f, *args, **kwargs):
    """decorator raising NonFiniteError when a primitive yields NaN/Inf"""
    out = f(*args, **kwargs)
    ensure_finite(out.data, 'output of {}'.format(f.__name__))
    return out


def _unbroadcast(g, shape):
    """sum g over the axes numpy broadcasting expanded to reach g.shape"""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary_operands(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


@finite_output
def add(a, b):
    a, b = _binary_operands(a, b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return Tensor._from_op(a.data + b.data, (a, b), _backward, 'add')


@finite_output
def sub(a, b):
    a, b = _binary_operands(a, b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return Tensor._from_op(a.data - b.data, (a, b), _backward, 'sub')


@finite_output
def mul(a, b):
    a, b = _binary_operands(a, b)

    def _backward(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))
    return Tensor._from_op(a.data * b.data, (a, b), _backward, 'mul')


@finite_output
def div(a, b):
    a, b = _binary_operands(a, b)
    if numpy.any(b.data == 0):
        raise TensorError('division by zero')
    out = a.data / b.data

    def _backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return Tensor._from_op(out, (a, b), _backward, 'div')


def neg(a):
    return mul(a, -1.0)


@finite_output
def power(a, p):
    """elementwise a**p for a python scalar exponent p"""
    a = as_tensor(a)
    p = float(p)
    out = a.data ** p

    def _backward(g):
        return (g * p * a.data ** (p - 1.0),)
    return Tensor._from_op(out, (a,), _backward, 'power')


@finite_output
def sqrt(a):
    a = as_tensor(a)
    if numpy.any(a.data < 0):
        raise TensorError('sqrt of negative values')
    out = numpy.sqrt(a.data)

    def _backward(g):
        return (g * 0.5 / out,)
    return Tensor._from_op(out, (a,), _backward, 'sqrt')


@finite_output
def exp(a):
    a = as_tensor(a)
    out = numpy.exp(a.data)

    def _backward(g):
        return (g * out,)
    return Tensor._from_op(out, (a,), _backward, 'exp')


@finite_output
def log(a):
    a = as_tensor(a)
    if numpy.any(a.data <= 0):
        raise TensorError('log of non-positive values')

    def _backward(g):
        return (g / a.data,)
    return Tensor._from_op(numpy.log(a.data), (a,), _backward, 'log')


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return numpy.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if numpy.isscalar(axis) else axis
        axes = sorted(ax % len(shape) for ax in axes)
        for ax in axes:
            g = numpy.expand_dims(g, ax)
    return numpy.broadcast_to(g, shape)


@finite_output
def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = numpy.sum(a.data, axis=axis, keepdims=keepdims)

    def _backward(g):
        return (numpy.array(_expand_reduced(g, a.shape, axis, keepdims)),)
    return Tensor._from_op(numpy.asarray(out, dtype=a.dtype), (a,),
                           _backward, 'sum')


@finite_output
def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = numpy.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.size // max(numpy.asarray(out).size, 1)

    def _backward(g):
        return (numpy.array(
            _expand_reduced(g, a.shape, axis, keepdims)) / count,)
    return Tensor._from_op(numpy.asarray(out, dtype=a.dtype), (a,),
                           _backward, 'mean')


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise TensorError('cannot reshape {} to {}: {}'.format(
            a.shape, shape, e))

    def _backward(g):
        return (g.reshape(a.shape),)
    return Tensor._from_op(out, (a,), _backward, 'reshape')


def take_rows(a, rows):
    """a[rows] along axis 0; gradients scatter-add back into the rows"""
    a = as_tensor(a)
    rows = numpy.asarray(rows, dtype=numpy.intp)
    if rows.size and (rows.min() < 0 or rows.max() >= a.shape[0]):
        raise TensorError('row index out of range for shape {}'.format(
            a.shape))

    def _backward(g):
        ga = numpy.zeros_like(a.data)
        numpy.add.at(ga, rows, g)
        return (ga,)
    return Tensor._from_op(a.data[rows], (a,), _backward, 'take_rows')


@finite_output
def matmul(a, b):
    """dense [N,F] @ [F,O] product"""
    a, b = _binary_operands(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise TensorError('matmul shape mismatch: {} @ {}'.format(
            a.shape, b.shape))

    def _backward(g):
        return g @ b.data.T, a.data.T @ g
    return Tensor._from_op(a.data @ b.data, (a, b), _backward, 'matmul')


def _conv_geometry(size, k, stride, padding):
    """(pad_before, pad_after, out_size) for one spatial axis"""
    if padding == 'valid':
        if k > size:
            raise TensorError(
                'kernel extent {} exceeds input extent {} with valid '
                'padding'.format(k, size))
        return 0, 0, (size - k) // stride + 1
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2, out


@finite_output
def conv2d_forward(x, w, b=None, stride=1, padding='same'):
    """2d cross-correlation of NHWC input with an HWIO kernel

    Parameters
    ----------
    x : Tensor
        [N,H,W,C] input
    w : Tensor
        [kh,kw,C,O] kernel
    b : Tensor, optional
        [O] bias
    stride : int
        spatial stride (>= 1)
    padding : str
        'same' (output extent ceil(H/stride), extra padding after) or
        'valid' (output extent floor((H-kh)/stride)+1)

    Returns
    -------
    Tensor
        [N,Ho,Wo,O] output
    """
    x, w = as_tensor(x), as_tensor(w)
    if padding not in PADDING_MODES:
        raise TensorError('unknown padding mode {}'.format(padding))
    if int(stride) != stride or stride < 1:
        raise TensorError('stride must be a positive integer')
    stride = int(stride)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise TensorError('conv2d shape mismatch: input {} kernel {}'.format(
            x.shape, w.shape))
    kh, kw, cin, cout = w.shape
    if b is not None:
        b = as_tensor(b, like=w)
        if b.shape != (cout,):
            raise TensorError('conv2d bias shape {} != ({},)'.format(
                b.shape, cout))
    n, h, wd, _ = x.shape
    pt, pb, ho = _conv_geometry(h, kh, stride, padding)
    pl, pr, wo = _conv_geometry(wd, kw, stride, padding)

    xp = numpy.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride][:, :ho, :wo]
    # [N,Ho,Wo,C,kh,kw] -> rows of (kh,kw,C) patches matching w's layout
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(
        n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout)
    if b is not None:
        out = out + b.data

    def _backward(g):
        g2 = g.reshape(n * ho * wo, cout)
        gw = (cols.T @ g2).reshape(w.shape)
        dcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
        dxp = numpy.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + stride * (ho - 1) + 1:stride,
                    j:j + stride * (wo - 1) + 1:stride, :] += \
                    dcols[:, :, :, i, j, :]
        gx = dxp[:, pt:pt + h, pl:pl + wd, :]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 2))
    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, _backward, 'conv2d')


@finite_output
def max_pool2d(x, size=2):
    """non-overlapping size x size max pooling of NHWC input

    trailing rows/columns that do not fill a window are dropped;
    ties route the gradient to the first maximal element
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise TensorError('max_pool2d expects [N,H,W,C], got {}'.format(
            x.shape))
    n, h, w, c = x.shape
    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise TensorError('max_pool2d window {} larger than input {}'.format(
            size, x.shape))
    xr = x.data[:, :ho * size, :wo * size, :].reshape(
        n, ho, size, wo, size, c).transpose(0, 1, 3, 5, 2, 4).reshape(
            n, ho, wo, c, size * size)
    idx = numpy.argmax(xr, axis=-1)[..., None]
    out = numpy.take_along_axis(xr, idx, axis=-1)[..., 0]

    def _backward(g):
        gw = numpy.zeros_like(xr)
        numpy.put_along_axis(gw, idx, g[..., None], axis=-1)
        gw = gw.reshape(n, ho, wo, c, size, size).transpose(
            0, 1, 4, 2, 5, 3).reshape(n, ho * size, wo * size, c)
        gx = numpy.zeros_like(x.data)
        gx[:, :ho * size, :wo * size, :] = gw
        return (gx,)
    return Tensor._from_op(out, (x,), _backward, 'max_pool2d')


@finite_output
def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def _backward(g):
        return (g * mask,)
    return Tensor._from_op(x.data * mask, (x,), _backward, 'relu')


@finite_output
def softmax(x, axis=-1):
    x = as_tensor(x)
    out = special.softmax(x.data, axis=axis).astype(x.dtype)

    def _backward(g):
        return (out * (g - numpy.sum(g * out, axis=axis, keepdims=True)),)
    return Tensor._from_op(out, (x,), _backward, 'softmax')


@finite_output
def log_softmax(x, axis=-1):
    x = as_tensor(x)
    out = special.log_softmax(x.data, axis=axis).astype(x.dtype)

    def _backward(g):
        return (g - numpy.exp(out) * numpy.sum(g, axis=axis, keepdims=True),)
    return Tensor._from_op(out, (x,), _backward, 'log_softmax')


@finite_output
def cross_entropy(logits, labels):
    """mean negative log-likelihood of integer labels under softmax(logits)

    Parameters
    ----------
    logits : Tensor
        [N,classes] unnormalized scores
    labels : array_like of int
        [N] class ids

    Returns
    -------
    Tensor
        scalar loss (>= 0)
    """
    logits = as_tensor(logits)
    labels = numpy.asarray(labels, dtype=numpy.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise TensorError('cross_entropy shape mismatch: {} vs {}'.format(
            logits.shape, labels.shape))
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise TensorError('labels outside [0, {})'.format(logits.shape[1]))
    n = logits.shape[0]
    ls = special.log_softmax(logits.data, axis=1)
    loss = -numpy.mean(ls[numpy.arange(n), labels])

    def _backward(g):
        p = numpy.exp(ls)
        p[numpy.arange(n), labels] -= 1.0
        return ((g * p / n).astype(logits.dtype),)
    return Tensor._from_op(numpy.asarray(max(loss, 0.0), dtype=logits.dtype),
                           (logits,), _backward, 'cross_entropy')


def rot90(x, k=1):
    """rotate NHWC spatial axes by k quarter turns (counter-clockwise)"""
    x = as_tensor(x)
    if x.ndim != 4:
        raise TensorError('rot90 expects [N,H,W,C], got {}'.format(x.shape))
    k = int(k) % 4
    out = numpy.ascontiguousarray(numpy.rot90(x.data, k, axes=(1, 2)))

    def _backward(g):
        return (numpy.ascontiguousarray(numpy.rot90(g, -k, axes=(1, 2))),)
    return Tensor._from_op(out, (x,), _backward, 'rot90')


def _group_counts(assignments, group_count, size):
    assignments = numpy.asarray(assignments)
    if assignments.size != size:
        raise PartitionError(
            'partition covers {} indices but tensor has {}'.format(
                assignments.size, size))
    counts = numpy.bincount(assignments, minlength=group_count)
    if counts.size != group_count or numpy.any(counts == 0):
        raise PartitionError('degenerate group: every group must be '
                             'nonempty and ids < group_count')
    return counts


def _group_stats(flat, assignments, counts):
    means = numpy.bincount(assignments, weights=flat,
                           minlength=counts.size) / counts
    centered = flat - means[assignments]
    var = numpy.bincount(assignments, weights=centered * centered,
                         minlength=counts.size) / counts
    return means, var, centered


def reduce_mean_var(x, partition):
    """per-group mean and biased (1/m) variance

    Parameters
    ----------
    x : Tensor or numpy.ndarray
        values
    partition : :class:`localnorm.norm.GroupPartition`
        assignment of every flat index of x to one group

    Returns
    -------
    means : numpy.ndarray
        [group_count] float64 group means
    variances : numpy.ndarray
        [group_count] float64 biased group variances

    Raises
    ------
    PartitionError
        on a size mismatch or an empty ("degenerate") group
    """
    data = x.data if isinstance(x, Tensor) else numpy.asarray(x)
    counts = _group_counts(partition.assignments, partition.group_count,
                           data.size)
    means, var, _ = _group_stats(
        data.ravel().astype(numpy.float64), partition.assignments, counts)
    return means, var


@finite_output
def group_normalize(x, partition, epsilon):
    """(x - mu_k) / sqrt(var_k + epsilon) with per-group statistics

    The backward pass includes the dependence of mu_k and var_k on x.

    Parameters
    ----------
    x : Tensor
        values to normalize
    partition : :class:`localnorm.norm.GroupPartition`
        computational groups
    epsilon : float
        positive constant inside the square root

    Returns
    -------
    Tensor
        normalized values, same shape and dtype as x
    """
    x = as_tensor(x)
    a = partition.assignments
    counts = _group_counts(a, partition.group_count, x.size)
    means, var, centered = _group_stats(
        x.data.ravel().astype(numpy.float64), a, counts)
    inv_std = 1.0 / numpy.sqrt(var + epsilon)
    xhat = centered * inv_std[a]
    out = xhat.reshape(x.shape).astype(x.dtype)

    def _backward(g):
        gf = g.ravel().astype(numpy.float64)
        gsum = numpy.bincount(a, weights=gf, minlength=counts.size) / counts
        gxsum = numpy.bincount(a, weights=gf * xhat,
                               minlength=counts.size) / counts
        gx = inv_std[a] * (gf - gsum[a] - xhat * gxsum[a])
        return (gx.reshape(x.shape).astype(x.dtype),)
    return Tensor._from_op(out, (x,), _backward, 'group_normalize')


Tensor.__add__ = add
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = mul
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = div
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = neg
Tensor.__pow__ = power
Tensor.__matmul__ = matmul
Tensor.sum = sum
Tensor.mean = mean
Tensor.reshape = reshape
