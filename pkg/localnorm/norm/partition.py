#!/usr/bin/env python
"""computational groups: which elements share one (mean, std) pair"""
import functools
import logging

import numpy

from localnorm.errors import PartitionError
from localnorm.utils import NullHandler

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

__all__ = ['BATCH', 'LAYER', 'GROUP', 'INSTANCE', 'LOCAL', 'SWITCH',
           'PARTITION_KINDS', 'VARIANTS', 'GroupPartition', 'build_partition']

BATCH = 'batch'
LAYER = 'layer'
GROUP = 'group'
INSTANCE = 'instance'
LOCAL = 'local'
SWITCH = 'switch'

PARTITION_KINDS = (BATCH, LAYER, GROUP, INSTANCE, LOCAL)
VARIANTS = PARTITION_KINDS + (SWITCH,)


class GroupPartition(object):
    """a partition of the flat indices of an [N,H,W,C] tensor

    Attributes
    ----------
    kind : str
        one of batch, layer, group, instance, local
    shape : tuple of int
        [N,H,W,C] extents the partition covers
    assignments : numpy.ndarray
        flat index -> group id (C order), ids in [0, group_count)
    group_count : int
        number of computational groups
    groups : int or None
        K for group and local partitions
    sample_groups : numpy.ndarray or None
        compact per-sample group id for local partitions
    """

    def __init__(self, kind, shape, assignments, group_count, groups=None,
                 sample_groups=None):
        self.kind = kind
        self.shape = tuple(shape)
        self.assignments = assignments
        self.group_count = int(group_count)
        self.groups = groups
        self.sample_groups = sample_groups

    @property
    def size(self):
        return self.assignments.size

    @property
    def group_sizes(self):
        """number of elements m in each group"""
        return numpy.bincount(self.assignments, minlength=self.group_count)

    @property
    def min_group_size(self):
        """smallest group size m (cached)"""
        if getattr(self, '_min_group_size', None) is None:
            self._min_group_size = int(self.group_sizes.min())
        return self._min_group_size

    def group_of(self, index):
        """group id of an (n, h, w, c) index"""
        return int(self.assignments[numpy.ravel_multi_index(
            tuple(index), self.shape)])

    def same_group(self, p, q):
        """whether (n,h,w,c) indices p and q share mean and variance"""
        return self.group_of(p) == self.group_of(q)

    def members(self, k):
        """flat indices belonging to group k"""
        return numpy.flatnonzero(self.assignments == k)

    def to_dict(self):
        d = {'kind': self.kind, 'shape': list(self.shape),
             'group_count': self.group_count}
        if self.groups is not None:
            d['groups'] = self.groups
        return d

    def __len__(self):
        return self.size

    def __repr__(self):
        return 'GroupPartition(kind={}, shape={}, group_count={})'.format(
            self.kind, self.shape, self.group_count)


def _check_groups(groups, extent, axis_name):
    if groups is None or int(groups) != groups or groups < 1:
        raise PartitionError(
            'group count must be a positive integer, got {}'.format(groups))
    if extent % int(groups):
        raise PartitionError(
            'indivisible group count: K={} does not divide {}={}'.format(
                groups, axis_name, extent))
    return int(groups)


@functools.lru_cache(maxsize=64)
def _cached_partition(kind, shape, groups, sample_groups):
    n, h, w, c = shape
    ni = numpy.arange(n).reshape(n, 1, 1, 1)
    ci = numpy.arange(c).reshape(1, 1, 1, c)
    sg = None
    if kind == BATCH:
        ids, count = ci, c
    elif kind == LAYER:
        ids, count = ni, n
    elif kind == INSTANCE:
        ids, count = ni * c + ci, n * c
    elif kind == GROUP:
        k = _check_groups(groups, c, 'C')
        ids, count = ni * k + ci // (c // k), n * k
    elif kind == LOCAL:
        if sample_groups is None:
            k = _check_groups(groups, n, 'N')
            sg = numpy.arange(n) // (n // k)
            ngroups = k
        else:
            if len(sample_groups) != n:
                raise PartitionError(
                    '{} sample groups given for batch of {}'.format(
                        len(sample_groups), n))
            _, sg = numpy.unique(numpy.asarray(sample_groups),
                                 return_inverse=True)
            sg = sg.reshape(-1)
            ngroups = int(sg.max()) + 1
        ids, count = sg.reshape(n, 1, 1, 1) * c + ci, ngroups * c
    else:
        raise PartitionError('unknown partition kind {}'.format(kind))
    assignments = numpy.ascontiguousarray(
        numpy.broadcast_to(ids, shape)).ravel().astype(numpy.intp)
    assignments.flags.writeable = False
    return GroupPartition(kind, shape, assignments, count, groups=groups,
                          sample_groups=sg)


def build_partition(variant, shape, groups=None, sample_groups=None):
    """group partition realizing a normalization's membership predicate

    batch: p, q share a group iff same channel.
    layer: iff same sample.
    group(K): iff same sample and same channel block of C/K channels.
    instance: iff same sample and same channel.
    local(K): iff same channel and same sample group; sample groups are
    K contiguous chunks of N/K samples, or given explicitly.

    Parameters
    ----------
    variant : str
        batch, layer, group, instance or local
    shape : sequence of int
        [N,H,W,C] extents
    groups : int, optional
        K for group and local
    sample_groups : sequence of int, optional
        per-sample group labels for local (overrides the contiguous
        split; labels are compacted in sorted order)

    Returns
    -------
    GroupPartition

    Raises
    ------
    PartitionError
        on bad rank/extents, unknown variant, or
        "indivisible group count"
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise PartitionError('partitions need a rank-4 [N,H,W,C] shape, '
                             'got {}'.format(shape))
    if min(shape) < 1:
        raise PartitionError('degenerate group: empty extent in {}'.format(
            shape))
    if variant not in PARTITION_KINDS:
        raise PartitionError('unknown partition kind {}'.format(variant))
    if sample_groups is not None:
        sample_groups = tuple(int(s) for s in numpy.ravel(sample_groups))
    if variant not in (GROUP, LOCAL):
        groups = None
    return _cached_partition(variant, shape, groups, sample_groups)
