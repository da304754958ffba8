import json

import numpy as np
import pytest

import localnorm
from localnorm import utils
from localnorm.errors import ConfigError, NonFiniteError, TensorError


class HasDict(object):
    def __init__(self, v):
        self.v = v

    def to_dict(self):
        return {'v': self.v}


def test_lndumps_simple():
    s = utils.lndumps({'a': 1})
    assert(s == '{"a": 1}')

    s = utils.lndumps(5)
    assert(s == '5')


def test_lndumps_numpy_and_to_dict():
    s = utils.lndumps({'i': np.int64(3), 'f': np.float32(0.5),
                       'a': np.arange(3), 'o': HasDict(2)}, sort_keys=True)
    assert json.loads(s) == {'i': 3, 'f': 0.5, 'a': [0, 1, 2],
                             'o': {'v': 2}}


def test_canonical_hash_ignores_key_order():
    a = utils.canonical_hash({'a': 1, 'b': [1, 2]})
    b = utils.canonical_hash({'b': [1, 2], 'a': 1})
    assert a == b
    assert len(a) == 64
    assert utils.canonical_hash({'a': 2, 'b': [1, 2]}) != a


def test_defaultifNone():
    assert utils.defaultifNone(None, 3) == 3
    assert utils.defaultifNone(0, 3) == 0


def test_fitargspec_moves_defaulted_args():
    def f(a, b, c=1, d=2):
        pass
    args, kwargs = utils.fitargspec(f, (1, 2, 3), {'d': 4})
    assert args == (1, 2)
    assert kwargs == {'c': 3, 'd': 4}


def test_ensure_finite():
    x = np.ones(3)
    assert utils.ensure_finite(x) is x
    with pytest.raises(NonFiniteError):
        utils.ensure_finite(np.array([1.0, np.nan]))
    with pytest.raises(TensorError):
        utils.ensure_finite(np.array([np.inf]))


def test_format_value_uses_repr():
    assert utils.format_value(0.1) == '0.1'
    assert utils.format_value(np.float32(0.5)) == '0.5'
    assert utils.format_value(np.int32(7)) == '7'
    assert utils.format_value('agn') == 'agn'
    assert float(utils.format_value(1.0 / 3)) == 1.0 / 3


def test_csv_text_has_provenance_row():
    text = utils.csv_text(['a', 'b'], [[1, 0.25]], config_hash='abc',
                          version='9.9')
    lines = text.splitlines()
    assert lines[0] == '# localnorm 9.9 config_hash=abc'
    assert lines[1] == 'a,b'
    assert lines[2] == '1,0.25'


def test_csv_text_default_version():
    text = utils.csv_text(['a'], [])
    assert text.startswith('# localnorm {} config_hash=none'.format(
        localnorm.__version__))


def test_write_and_read_csv(tmpdir):
    path = str(tmpdir.join('x.csv'))
    utils.write_csv(path, ['k', 'v'], [['a', 1.5], ['b', 2]],
                    config_hash='h')
    header, rows = utils.read_csv(path)
    assert header == ['k', 'v']
    assert rows == [['a', '1.5'], ['b', '2']]

    with pytest.raises(ConfigError):
        utils.write_csv(path, ['k'], [])
    utils.write_csv(path, ['k'], [], force=True)
    assert utils.read_csv(path) == (['k'], [])


def test_check_writable(tmpdir):
    path = tmpdir.join('exists.txt')
    utils.check_writable(str(path))
    path.write('x')
    with pytest.raises(ConfigError):
        utils.check_writable(str(path))
    utils.check_writable(str(path), force=True)
