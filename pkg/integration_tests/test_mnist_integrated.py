import logging
import os
import sys

import numpy as np
import pytest

import localnorm
from localnorm import harness
from localnorm.nn import Checkpoint
from localnorm_integration_settings import (
    mnist_dir, desk_config, augmentation)

pytestmark = pytest.mark.skipif(
    not mnist_dir, reason='set LOCALNORM_MNIST_DIR to the MNIST directory')

root = logging.getLogger()
root.setLevel(logging.INFO)

ch = logging.StreamHandler(sys.stdout)
ch.setLevel(logging.INFO)
formatter = logging.Formatter(
    '%(asctime)s - %(name)s - %(levelname)s - %(message)s')
ch.setFormatter(formatter)
root.addHandler(ch)


def desk(out, **overrides):
    return localnorm.ExperimentConfig(json=desk_config,
                                      output_dir=str(out)).with_overrides(
        **overrides)


def accuracies(config, modes, noise):
    rows = harness.cmd_eval(config.with_overrides(force=True), modes=modes,
                            noise=noise)
    return {(r[0], r[1], r[2]): r[3] for r in rows}


@pytest.fixture(scope='module')
def local_run(tmpdir_factory):
    config = desk(tmpdir_factory.mktemp('local'))
    checkpoint, log = harness.cmd_train(config)
    return config, checkpoint, log


@pytest.fixture(scope='module')
def bn_run(tmpdir_factory):
    config = desk(tmpdir_factory.mktemp('bn'), norm={'variant': 'batch'})
    checkpoint, log = harness.cmd_train(config)
    return config, checkpoint, log


@pytest.fixture(scope='module')
def bn_augmented_run(tmpdir_factory):
    config = desk(tmpdir_factory.mktemp('bn_aug'), norm={'variant': 'batch'},
                  training=dict(desk_config['training'],
                                noise_augmentation=augmentation))
    checkpoint, log = harness.cmd_train(config)
    return config, checkpoint, log


def test_localnorm_robust_to_gaussian_noise(local_run, bn_run):
    local = accuracies(local_run[0], ['batch'], 'agn:0,1')
    bn = accuracies(bn_run[0], ['frozen_bn'], 'agn:0,1')
    assert local[('batch', 'agn', 0.0)] >= 0.95
    assert bn[('frozen_bn', 'agn', 0.0)] >= 0.95
    assert abs(local[('batch', 'agn', 0.0)] -
               bn[('frozen_bn', 'agn', 0.0)]) <= 0.01
    assert local[('batch', 'agn', 1.0)] >= \
        bn[('frozen_bn', 'agn', 1.0)] + 0.20


def test_scaling_parameters_diverge(local_run):
    log = local_run[2]
    assert all(v == 0 for v in log.gamma_group_var(0).values())
    final = log.gamma_group_var(desk_config['training']['epochs'])
    assert any(v > 0 for v in final.values())


def test_rot90_fill_helps_single_voting(local_run):
    acc = accuracies(local_run[0],
                     ['batch', 'single_voting', 'single_voting+rot90'],
                     'agn:0,1')
    assert acc[('single_voting+rot90', 'agn', 1.0)] >= \
        acc[('single_voting', 'agn', 1.0)]
    assert abs(acc[('single_voting+rot90', 'agn', 0.0)] -
               acc[('batch', 'agn', 0.0)]) <= 0.05


def test_noise_augmentation_does_not_generalize(local_run, bn_run,
                                                bn_augmented_run):
    bn = accuracies(bn_run[0], ['frozen_bn'], 'agn:1')
    aug = accuracies(bn_augmented_run[0], ['frozen_bn'], 'agn:1;mbn:0.3')
    local = accuracies(local_run[0], ['batch'], 'mbn:0.3')
    assert aug[('frozen_bn', 'agn', 1.0)] >= \
        bn[('frozen_bn', 'agn', 1.0)] + 0.10
    assert local[('batch', 'mbn', 0.3)] > aug[('frozen_bn', 'mbn', 0.3)]


def test_repeat_run_is_byte_identical(local_run, tmpdir):
    config = local_run[0]
    again = config.with_overrides(output_dir=str(tmpdir))
    harness.cmd_train(again)
    for name in ('metrics.csv', 'scaling_trace.csv'):
        with open(os.path.join(config.output_dir, name), 'rb') as a, \
                open(os.path.join(str(tmpdir), name), 'rb') as b:
            assert a.read() == b.read()


def test_checkpoint_roundtrip_forward(local_run, tmpdir):
    checkpoint = local_run[1]
    path = checkpoint.save(str(tmpdir.join('copy.lnck')))
    x = np.random.RandomState(0).uniform(0, 1, (100, 28, 28, 1)).astype(
        'float32')
    a = checkpoint.to_model().forward(x).data
    b = Checkpoint.load(path).to_model().forward(x).data
    assert np.array_equal(a, b)
