'''
default settings, fixture builders and loop oracles for localnorm tests
'''
import os
import struct

import numpy as np

import localnorm

TEST_FILES_DIR = os.path.join(os.path.dirname(__file__), 'test_files')

TEST_CONFIG_FILE = os.path.join(TEST_FILES_DIR, 'synthetic_config.json')

FD_STEP = 1e-5
FD_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 1e-10

# tiny float64 network: 2 conv blocks, 1 pool, 1 dense block, output
TINY_ARCHITECTURE = ['3c', '3c', 'p', '6d']
TINY_INPUT_SHAPE = (4, 4, 1)
TINY_BATCH = 4

SYNTHETIC_CONFIG = {
    'dataset': {
        'kind': 'synthetic',
        'train_count': None,
        'test_count': None,
        'synthetic': {'train': 120, 'test': 40, 'image_shape': [6, 6, 1],
                      'classes': 3, 'pixel_noise': 8.0}},
    'model': {'architecture': ['4c', 'p', '8d'], 'dtype': 'float32'},
    'norm': {'variant': 'local', 'groups': 2},
    'training': {'epochs': 1, 'batch_size': 8, 'lr': 0.05},
    'evaluation': {'modes': ['batch', 'single_voting'],
                   'noise': [{'family': 'agn', 'sigma_n': [0.0, 1.0]}],
                   'single_max_images': 10},
    'sweep': {'groups': [1, 2]},
    'histogram': {'count': 5, 'sigma_n': [0.0, 1.0], 'bins': 16},
    'transfer': {'groups': 2, 'fine_tune_epochs': 0},
    'seed': 3,
}


def tiny_model_config(variant='local', groups=2, batch_size=TINY_BATCH,
                      architecture=TINY_ARCHITECTURE,
                      input_shape=TINY_INPUT_SHAPE, classes=3,
                      dtype='float64', **norm):
    norm = dict(norm, variant=variant)
    if variant in ('local', 'group'):
        norm['groups'] = groups
    return localnorm.nn.ModelConfig(
        architecture=list(architecture), norm=norm, input_shape=input_shape,
        classes=classes, batch_size=batch_size, dtype=dtype)


def tiny_model(variant='local', groups=2, seed=0, **kwargs):
    return localnorm.nn.Model(tiny_model_config(variant, groups, **kwargs),
                              seed=seed)


def synthetic_config(tmpdir, **overrides):
    d = dict(SYNTHETIC_CONFIG, output_dir=str(tmpdir))
    d.update(overrides)
    return localnorm.ExperimentConfig(json=d)


def idx_bytes(array, magic_type=0x08):
    arr = np.asarray(array, dtype=np.uint8)
    return (struct.pack('>HBB', 0, magic_type, arr.ndim) +
            struct.pack('>{}I'.format(arr.ndim), *arr.shape) +
            arr.tobytes())


def write_bytes(path, data):
    with open(str(path), 'wb') as f:
        f.write(data)
    return str(path)


def cifar_record(label, image):
    """one 3073-byte record from an HWC uint8 image"""
    planes = np.asarray(image, dtype=np.uint8).transpose(2, 0, 1).ravel()
    return bytes([label]) + planes.tobytes()


def numeric_grad(f, arr, index, h=FD_STEP):
    """central difference of scalar f() wrt arr[index] (in place)"""
    old = arr[index]
    arr[index] = old + h
    fp = f()
    arr[index] = old - h
    fm = f()
    arr[index] = old
    return (fp - fm) / (2.0 * h)


def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def loop_group_stats(x, same_group):
    """(mean, var) of every element's group by brute force

    same_group(p, q) -> bool over (n, h, w, c) index tuples
    """
    idx = list(np.ndindex(*x.shape))
    means = np.zeros(x.shape)
    var = np.zeros(x.shape)
    for p in idx:
        vals = [x[q] for q in idx if same_group(p, q)]
        m = sum(vals) / len(vals)
        means[p] = m
        var[p] = sum((v - m) ** 2 for v in vals) / len(vals)
    return means, var


PREDICATES = {
    'batch': lambda K, C, N: lambda p, q: p[3] == q[3],
    'layer': lambda K, C, N: lambda p, q: p[0] == q[0],
    'instance': lambda K, C, N: lambda p, q: p[0] == q[0] and p[3] == q[3],
    'group': lambda K, C, N: lambda p, q: (
        p[0] == q[0] and p[3] // (C // K) == q[3] // (C // K)),
    'local': lambda K, C, N: lambda p, q: (
        p[3] == q[3] and p[0] // (N // K) == q[0] // (N // K)),
}


def loop_normalize(x, variant, groups=1, epsilon=1e-7, gamma=None,
                   beta=None):
    """scalar reference: (x - mu) / sqrt(var + eps) * gamma + beta

    gamma, beta are [R, C]; local uses row floor(n / (N / K))
    """
    n, _, _, c = x.shape
    same = PREDICATES[variant](groups, c, n)
    means, var = loop_group_stats(x, same)
    out = np.zeros(x.shape)
    for p in np.ndindex(*x.shape):
        row = p[0] // (n // groups) if variant == 'local' else 0
        g = 1.0 if gamma is None else gamma[row, p[3]]
        b = 0.0 if beta is None else beta[row, p[3]]
        out[p] = (x[p] - means[p]) / np.sqrt(var[p] + epsilon) * g + b
    return out
