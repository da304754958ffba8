#!/usr/bin/env python
'''
Custom errors for localnorm
'''


class LocalNormError(Exception):
    pass


class TensorError(LocalNormError):
    pass


class NonFiniteError(TensorError):
    """NaN or Inf where finite values are required"""
    pass


class GradientError(LocalNormError):
    pass


class PartitionError(LocalNormError):
    pass


class NormError(LocalNormError):
    pass


class NoiseError(LocalNormError):
    pass


class DatasetError(LocalNormError):
    pass


class CheckpointError(LocalNormError):
    pass


class DivergenceError(LocalNormError):
    """non-finite training loss

    Attributes
    ----------
    epoch : int
        epoch (1-based) in which the loss diverged
    step : int
        optimizer step within that epoch
    """
    def __init__(self, message, epoch=None, step=None):
        super(DivergenceError, self).__init__(message)
        self.epoch = epoch
        self.step = step


class EvaluationError(LocalNormError):
    pass


class ConfigError(LocalNormError):
    pass
