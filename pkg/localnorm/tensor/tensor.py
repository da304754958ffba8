#!/usr/bin/env python
"""dense NHWC tensors with reverse-mode gradient recording"""
import contextlib
import logging
import threading

import numpy

from localnorm.errors import GradientError, TensorError
from localnorm.utils import NullHandler

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['Tensor', 'as_tensor', 'backward', 'no_grad', 'is_grad_enabled']

_state = threading.local()


def is_grad_enabled():
    """whether operations in this thread record a backward graph"""
    return getattr(_state, 'enabled', True)


@contextlib.contextmanager
def no_grad():
    """context manager disabling graph recording in this thread

    Examples
    --------
    >>> with no_grad():
    >>>     logits = model.forward(x)
    """
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor(object):
    """dense N-dimensional array of real values

    Rank-4 tensors are laid out [N,H,W,C]; lower-rank tensors are
    whatever the producing op documents (dense activations are [N,F]).

    Attributes
    ----------
    data : numpy.ndarray
        values (float32 or float64)
    grad : numpy.ndarray or None
        accumulated gradient, same shape as data, for leaf tensors
        with requires_grad=True after :meth:`backward`
    requires_grad : bool
        whether gradients are tracked through this tensor
    name : str or None
        optional label (parameter name)
    """

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = numpy.asarray(data, dtype=dtype)
        if not numpy.issubdtype(arr.dtype, numpy.floating):
            arr = arr.astype(numpy.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = None

    @classmethod
    def _from_op(cls, data, parents, backward_fn, op):
        out = cls(data)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
            out._op = op
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        """the underlying array (not a copy)"""
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        """a new constant tensor sharing this tensor's data"""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """propagate d(self)/d(leaf) into every leaf's grad

        Parameters
        ----------
        grad : numpy.ndarray, optional
            upstream gradient; omitted for scalar losses (taken as 1)

        Raises
        ------
        GradientError
            if this tensor was not produced by a recorded forward
            computation or is non-scalar without an upstream grad
        """
        if self._backward is None:
            raise GradientError(
                'backward without forward record: tensor {} was not '
                'produced by a recorded operation'.format(
                    self.name or self._op or 'constant'))
        if grad is None:
            if self.size != 1:
                raise GradientError(
                    'backward needs an explicit grad for non-scalar '
                    'tensor of shape {}'.format(self.shape))
            grad = numpy.ones_like(self.data)
        grad = numpy.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise GradientError('grad shape {} != tensor shape {}'.format(
                grad.shape, self.shape))

        order = self._topological_order()
        grads = {id(self): grad}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None \
                        else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise TensorError(
                        '{} produced gradient of shape {} for input of '
                        'shape {}'.format(node._op, pg.shape, parent.shape))
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def _topological_order(self):
        """nodes reachable from self, outputs before inputs"""
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return order[::-1]

    def __repr__(self):
        return 'Tensor(shape={}, dtype={}, requires_grad={}{})'.format(
            self.shape, self.dtype, self.requires_grad,
            '' if self.name is None else ', name={}'.format(self.name))

    def __len__(self):
        return self.shape[0]


def as_tensor(x, like=None):
    """wrap arrays and scalars as constant tensors

    Parameters
    ----------
    x : Tensor or array_like or scalar
        value to wrap (returned unchanged if already a Tensor)
    like : Tensor, optional
        scalars and arrays adopt this tensor's dtype

    Returns
    -------
    Tensor
    """
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(numpy.asarray(x, dtype=dtype))


def backward(loss):
    """compute gradients of a scalar loss for all parameters it depends on

    Parameters
    ----------
    loss : Tensor
        scalar produced by a recorded forward computation
    """
    if not isinstance(loss, Tensor):
        raise GradientError('backward expects a Tensor, got {}'.format(
            type(loss)))
    loss.backward()
