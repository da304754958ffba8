#!/usr/bin/env python
__version__ = "0.1.0"

from . import errors
from . import utils
from . import tensor
from . import norm
from . import noise
from . import data
from . import nn
from . import evaluation
from . import config
from . import harness
from .config import ExperimentConfig
from .nn import Checkpoint, Model, train, transfer_bn_to_local

__all__ = ['errors', 'utils', 'tensor', 'norm', 'noise', 'data', 'nn',
           'evaluation', 'config', 'harness', 'ExperimentConfig',
           'Checkpoint', 'Model', 'train', 'transfer_bn_to_local']
