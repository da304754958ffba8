import numpy as np
import pytest

import localnorm
from localnorm.noise import (
    NoiseSpec, apply_agn, apply_apn, apply_mbn, apply_noise, noise_term,
    channel_histogram, AGN, APN, MBN)
from localnorm.tensor import Rng


MILLION = (1000, 1000, 1)


def flat_image(value=100.0, shape=MILLION):
    return np.full(shape, value)


def within_standard_errors(xi, count=3):
    return abs(xi.mean()) < count * xi.std() / np.sqrt(xi.size)


@pytest.mark.parametrize('family', [AGN, APN, MBN])
def test_zero_intensity_is_identity(family):
    x = np.random.RandomState(0).randint(0, 256, (3, 8, 8, 3))
    out = apply_noise(x, NoiseSpec(family, 0.0), Rng(1))
    assert out.dtype == np.float64
    assert np.array_equal(out, x)


def test_agn_relative_std():
    x = flat_image(128.0)
    out = apply_agn(x, 1.0, Rng(2), clip=False)
    xi = out / 128.0 - 1.0
    assert abs(xi.std() - 1.0) < 0.01
    assert within_standard_errors(xi)


def test_agn_zero_image_stays_zero():
    x = np.zeros((4, 8, 8, 3))
    for sigma in (0.5, 1.0, 3.0):
        assert np.all(apply_agn(x, sigma, Rng(2)) == 0)


@pytest.mark.parametrize('family,sigma', [(AGN, 1.0), (AGN, 2.0),
                                          (APN, 0.5), (APN, 1.0)])
def test_noise_term_zero_mean(family, sigma):
    xi = noise_term(NoiseSpec(family, sigma), MILLION, Rng(11))
    assert xi.shape == MILLION
    assert within_standard_errors(xi)


def test_apn_additive_recentered():
    x = flat_image()
    sigma = 0.5
    out = apply_apn(x, sigma, Rng(3), clip=False)
    xi = (out - x) / 255.0
    assert abs(xi.mean()) < 0.005
    assert within_standard_errors(xi)
    k = np.round(xi + sigma)
    assert abs(np.mean(k == 0) - np.exp(-sigma)) < 0.005
    assert np.all(k >= 0)


def test_apn_additive_zero_image_poisson_mass():
    sigma = 0.3
    out = apply_apn(np.zeros(MILLION), sigma, Rng(12))
    assert abs(np.mean(out > 0) - (1.0 - np.exp(-sigma))) < 0.005
    assert out.min() >= 0


def test_apn_multiplicative():
    x = flat_image()
    out = apply_apn(x, 0.3, Rng(3), variant='multiplicative', clip=False)
    k = np.round(out / x - 1.0 + 0.3)
    assert abs(np.mean(k == 0) - np.exp(-0.3)) < 0.005


def test_mbn_removal_fraction():
    x = flat_image()
    out = apply_mbn(x, 0.3, Rng(4))
    assert abs(np.mean(out == 0) - 0.3) < 0.005
    assert set(np.unique(out)) <= {0.0, 100.0}
    assert np.all(apply_mbn(x, 1.0, Rng(4)) == 0)


def test_mbn_mask_shared_across_channels():
    x = np.full((2, 16, 16, 3), 50.0)
    out = apply_mbn(x, 0.5, Rng(5))
    removed = out == 0
    assert np.array_equal(removed[..., 0], removed[..., 1])
    assert np.array_equal(removed[..., 0], removed[..., 2])
    mask = noise_term(NoiseSpec(MBN, 0.5), x.shape, Rng(5))
    assert mask.shape == (2, 16, 16, 1)


def test_clipping():
    x = np.random.RandomState(6).randint(0, 256, (4, 10, 10, 1))
    clipped = apply_agn(x, 2.0, Rng(7))
    assert clipped.min() >= 0 and clipped.max() <= 255
    raw = apply_agn(x, 2.0, Rng(7), clip=False)
    assert raw.min() < 0 or raw.max() > 255
    assert np.array_equal(np.clip(raw, 0, 255), clipped)


def test_noise_deterministic():
    x = flat_image(shape=(4, 4, 1))
    a = apply_noise(x, NoiseSpec(AGN, 0.5), Rng(8))
    b = apply_noise(x, NoiseSpec(AGN, 0.5), Rng(8))
    assert np.array_equal(a, b)
    seeded = NoiseSpec(AGN, 0.5, seed=8)
    assert np.array_equal(apply_noise(x, seeded, None), a)


def test_noise_spec_validation():
    with pytest.raises(localnorm.errors.NoiseError):
        NoiseSpec('speckle', 0.1)
    with pytest.raises(localnorm.errors.NoiseError):
        NoiseSpec(AGN, -0.1)
    with pytest.raises(localnorm.errors.NoiseError):
        NoiseSpec(APN, 1.5)
    with pytest.raises(localnorm.errors.NoiseError):
        NoiseSpec(MBN, 1.01)
    with pytest.raises(localnorm.errors.NoiseError):
        NoiseSpec(APN, 0.1, apn_variant='subtractive')
    assert NoiseSpec(AGN, 3.0).sigma_n == 3.0
    spec = NoiseSpec('MBN', 0.25)
    assert spec.label == 'mbn_0.25'
    assert NoiseSpec(json=spec.to_dict()).to_dict() == spec.to_dict()


def test_histogram_constant_image():
    h = channel_histogram(np.full((8, 8, 1), 128))
    assert h.counts.shape == (1, 256)
    assert h.counts[0, 128] == 64
    assert h.counts.sum() == 64
    assert h.mean[0] == 128 and h.std[0] == 0
    coarse = channel_histogram(np.full((8, 8, 1), 128), bins=16)
    assert coarse.counts[0, 8] == 64


def test_histogram_uniform_image():
    x = np.stack([np.arange(256), 255 - np.arange(256)], axis=-1)
    h = channel_histogram(x.reshape(16, 16, 2))
    assert np.all(h.counts == 1)
    h16 = channel_histogram(x, bins=16)
    assert np.all(h16.counts == 16)
    assert np.allclose(h.mean, 127.5)
    assert len(h16.count_rows()) == 2 * 16
    assert h16.stat_rows()[1][0] == 1


def test_histogram_uniform_random_image():
    x = Rng(13).integers(0, 256, size=(2000, 2000, 1))
    h = channel_histogram(x)
    expected = x.size / 256.0
    assert h.counts.sum() == x.size
    assert np.max(np.abs(h.counts - expected)) / expected < 0.05


def test_histogram_range():
    x = np.array([[-10.0], [300.0], [5.0]])
    with pytest.raises(localnorm.errors.NoiseError):
        channel_histogram(x)
    h = channel_histogram(x, bins=256, allow_out_of_range=True)
    assert h.counts[0, 0] == 1
    assert h.counts[0, 255] == 1
    assert h.counts[0, 5] == 1
    with pytest.raises(localnorm.errors.NoiseError):
        channel_histogram(np.zeros((0, 1)))
    with pytest.raises(localnorm.errors.NoiseError):
        channel_histogram(np.zeros((2, 1)), bins=0)


def test_preclip_spread_grows_with_intensity():
    x = np.random.RandomState(9).randint(1, 256, (4, 16, 16, 3))
    stds = []
    for sigma in (0.0, 0.5, 1.0, 2.0):
        out = apply_agn(x, sigma, Rng(10), clip=False)
        stds.append(channel_histogram(out, allow_out_of_range=True).std)
    for lo, hi in zip(stds, stds[1:]):
        assert np.all(hi > lo)
