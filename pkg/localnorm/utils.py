#!/usr/bin/env python
'''
utilities shared across localnorm: logging, json, hashing and csv output
'''
import copy
import csv
import hashlib
import io
import json
import logging
import os
from inspect import getfullargspec

import numpy

from .errors import ConfigError, NonFiniteError


class NullHandler(logging.Handler):
    """handler to avoid logging errors for, e.g., missing logger setup"""
    def emit(self, record):
        pass


logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())


class LocalNormEncoder(json.JSONEncoder):
    """json Encoder in the following hierarchy for serialization:
        numpy scalar/array -> python value/list
        obj.to_dict()
        dict(obj)
        JsonEncoder.default(obj)
        obj.__dict__
    """
    def default(self, obj):
        """default encoder that handles numpy values and localnorm objects

        Parameters
        ----------
        obj : obj
            any object that is a numpy value or implements to_dict,
            dict(obj), JsonEncoder.default(obj), or __dict__ (in order)

        Returns
        -------
        dict or list or int or float
            json encodable datatype
        """
        if isinstance(obj, numpy.integer):
            return int(obj)
        if isinstance(obj, numpy.floating):
            return float(obj)
        if isinstance(obj, numpy.ndarray):
            return obj.tolist()
        to_dict = getattr(obj, "to_dict", None)
        if callable(to_dict):
            return obj.to_dict()
        try:
            return dict(obj)
        except TypeError:
            logger.debug("{} object is not recognized dictionary".format(
                type(obj)))
            try:
                return super(LocalNormEncoder, self).default(obj)
            except TypeError as e:  # pragma: no cover
                logger.info(e)
                logger.warning(
                    "cannot json serialize {}.  "
                    "Defaulting to __dict__".format(type(obj)))
                return obj.__dict__


def lndumps(obj, *args, **kwargs):
    """json.dumps using the LocalNormEncoder

    Parameters
    ----------
    obj : obj
        object to dumps
    *args
        json.dumps args
    **kwargs
        json.dumps kwargs

    Returns
    -------
    str
        serialized object
    """
    cls_ = kwargs.pop('cls', LocalNormEncoder)
    return json.dumps(obj, *args, cls=cls_, **kwargs)


def lndump(obj, *args, **kwargs):
    """json.dump using the LocalNormEncoder

    Parameters
    ----------
    obj : obj
        object to dump
    *args
        json.dump args
    **kwargs
        json.dump kwargs
    """
    cls_ = kwargs.pop('cls', LocalNormEncoder)
    return json.dump(obj, *args, cls=cls_, **kwargs)


def canonical_hash(obj):
    """sha256 hex digest of the canonical (sorted, compact) json of obj

    Parameters
    ----------
    obj : obj
        anything :func:`lndumps` can serialize

    Returns
    -------
    str
        hex digest
    """
    s = lndumps(obj, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(s.encode('utf-8')).hexdigest()


def defaultifNone(val, default=None):
    """simple default handler

    Parameters
    ----------
    val : obj
        value to fill in default
    default : obj
        default value

    Returns
    -------
    obj
        val if val is not None, else default
    """
    return val if val is not None else default


def fitargspec(f, oldargs, oldkwargs):
    """fit function argspec given input args tuple and kwargs dict

    Parameters
    ----------
    f : func
        function to inspect
    oldargs : tuple
        arguments passed to func
    oldkwargs : dict
        keyword args passed to func

    Returns
    -------
    new_args
        args with values filled in according to f spec
    new_kwargs
        kwargs with values filled in according to f spec
    """
    try:
        arginfo = getfullargspec(f)
        num_expected_args = len(arginfo.args) - len(arginfo.defaults or ())
        new_args = tuple(oldargs[:num_expected_args])
        new_kwargs = copy.copy(oldkwargs)
        for i, arg in enumerate(oldargs[num_expected_args:]):
            new_kwargs.update({arginfo.args[i + num_expected_args]: arg})
        return new_args, new_kwargs
    except Exception as e:
        logger.error('Cannot fit argspec for {}'.format(f))
        logger.error(e)
        return oldargs, oldkwargs


def ensure_finite(arr, what='array'):
    """raise NonFiniteError if arr holds NaN or Inf

    Parameters
    ----------
    arr : numpy.ndarray
        values to check
    what : str
        name used in the error message

    Returns
    -------
    numpy.ndarray
        arr, unchanged
    """
    if not numpy.all(numpy.isfinite(arr)):
        raise NonFiniteError('non-finite values in {}'.format(what))
    return arr


def check_writable(path, force=False):
    """refuse to overwrite an existing output file unless forced

    Parameters
    ----------
    path : str
        output file path
    force : bool
        whether overwriting is allowed

    Raises
    ------
    ConfigError
        if path exists and force is False
    """
    if os.path.exists(path) and not force:
        raise ConfigError(
            'output {} exists; pass --force to overwrite'.format(path))


def format_value(v):
    """deterministic text for a csv cell"""
    if isinstance(v, (float, numpy.floating)):
        return repr(float(v))
    if isinstance(v, numpy.integer):
        return str(int(v))
    return str(v)


def csv_text(header, rows, config_hash=None, version=None):
    """render rows as csv text with the provenance comment row

    Parameters
    ----------
    header : list of str
        column names
    rows : iterable of sequences
        row values, formatted with :func:`format_value`
    config_hash : str, optional
        hash of the resolved experiment config
    version : str, optional
        artifact version (defaults to localnorm.__version__)

    Returns
    -------
    str
        csv document
    """
    if version is None:
        from . import __version__ as version
    buf = io.StringIO()
    buf.write('# localnorm {} config_hash={}\n'.format(
        version, defaultifNone(config_hash, 'none')))
    w = csv.writer(buf, lineterminator='\n')
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows, config_hash=None, force=False):
    """write a provenance-stamped csv file

    Parameters
    ----------
    path : str
        output file
    header : list of str
        column names
    rows : iterable of sequences
        row values
    config_hash : str, optional
        hash of the resolved experiment config
    force : bool
        allow overwriting an existing file

    Returns
    -------
    str
        path written
    """
    check_writable(path, force)
    text = csv_text(header, rows, config_hash=config_hash)
    with open(path, 'w', newline='') as f:
        f.write(text)
    logger.info('wrote {}'.format(path))
    return path


def read_csv(path):
    """read a localnorm csv file, skipping the provenance comment row

    Parameters
    ----------
    path : str
        csv file

    Returns
    -------
    header : list of str
        column names
    rows : list of list of str
        row values as text
    """
    with open(path, 'r', newline='') as f:
        lines = [l for l in f if not l.startswith('#')]
    r = list(csv.reader(lines))
    return (r[0], r[1:]) if r else ([], [])
