#!/usr/bin/env python
"""
WithPool style helpers for evaluation cells using python's standard library
"""
from multiprocessing.pool import ThreadPool


class WithThreadPool(ThreadPool):
    """ThreadPool usable as a context manager that waits for its work

    Examples
    --------
    >>> with WithThreadPool(4) as pool:
    ...     results = pool.map(evaluate_cell, cells)
    """

    def __enter__(self):
        return self

    def __exit__(self, *args, **kwargs):
        self.close()
        self.join()


class WithDummyMapPool(object):
    """serial stand-in with the pool interface (threads <= 1)"""

    def __init__(self, *args, **kwargs):
        pass

    @staticmethod
    def map(func, iterable):
        return [func(item) for item in iterable]

    def __enter__(self):
        return self

    def __exit__(self, *args, **kwargs):
        pass


__all__ = ['WithThreadPool', 'WithDummyMapPool']
