import numpy as np
import pytest

import localnorm
from localnorm.evaluation import (
    EvalMode, ConfusionMatrix, vote, eval_single, eval_single_voting,
    eval_batch, eval_voting, rot90_fill_stats, eval_frozen, predict_dataset,
    accuracy, confusion)
from localnorm.data import make_synthetic_dataset, preprocess
from localnorm.nn import Checkpoint, ForwardContext, transfer_bn_to_local
from localnorm.noise import NoiseSpec
from localnorm.tensor import Rng
import localnormsettings
from localnormsettings import tiny_model, TINY_INPUT_SHAPE


@pytest.fixture(scope='module')
def dataset():
    return make_synthetic_dataset(10, TINY_INPUT_SHAPE, classes=3,
                                  pixel_noise=40.0, seed=2, split='test')


@pytest.fixture(scope='module')
def trained_bn():
    model = tiny_model('batch', 1, seed=5)
    x = np.random.RandomState(1).uniform(0, 1, (4,) + TINY_INPUT_SHAPE)
    for i in range(3):
        model.forward(x * (i + 1) / 3.0, ForwardContext.train())
    for layer in model.norm_layers():
        r = np.random.RandomState(len(layer.name))
        layer.spec.gamma.data = r.uniform(0.5, 1.5, layer.spec.gamma.shape)
        layer.spec.beta.data = r.uniform(-0.5, 0.5, layer.spec.beta.shape)
    return model


def images(n=4, seed=0):
    return np.random.RandomState(seed).uniform(0, 1, (n,) + TINY_INPUT_SHAPE)


def perturbed_local(groups=2, seed=3, **kwargs):
    model = tiny_model('local', groups, seed=seed, **kwargs)
    r = np.random.RandomState(seed)
    for layer in model.norm_layers():
        layer.spec.gamma.data = r.uniform(0.5, 1.5, layer.spec.gamma.shape)
        layer.spec.beta.data = r.uniform(-0.5, 0.5, layer.spec.beta.shape)
    return model


def test_eval_mode_parse():
    assert EvalMode.parse('single_voting+rot90+hard').name == \
        'single_voting+rot90+hard'
    mode = EvalMode.parse('Voting+hard')
    assert mode.kind == 'voting' and mode.hard_voting and mode.voting
    assert EvalMode(json=mode.to_dict()) == mode
    with pytest.raises(localnorm.errors.EvaluationError):
        EvalMode.parse('batch+rot90')
    with pytest.raises(localnorm.errors.EvaluationError):
        EvalMode.parse('ensemble')


def test_check_model():
    local = tiny_model('local', 2)
    with pytest.raises(localnorm.errors.EvaluationError):
        EvalMode('frozen_bn').check_model(local)
    with pytest.raises(localnorm.errors.EvaluationError):
        EvalMode('dynamic_bn_batch').check_model(local)
    EvalMode('frozen_bn').check_model(tiny_model('switch', 1))
    EvalMode('dynamic_bn_single').check_model(tiny_model('batch', 1))


def test_vote_soft_and_hard():
    probs = np.array([[[0.6, 0.4, 0.0], [0.0, 0.45, 0.55],
                       [0.0, 0.45, 0.55]]])
    assert vote(probs).tolist() == [1]
    assert vote(probs, hard_voting=True).tolist() == [2]
    tie = np.array([[[0.9, 0.1], [0.1, 0.9]]])
    assert vote(tie, hard_voting=True).tolist() == [0]
    single = np.random.RandomState(0).dirichlet([1, 1, 1], size=5)
    assert np.array_equal(vote(single[:, None, :]),
                          np.argmax(single, axis=1))


@pytest.mark.parametrize('local_mode,bn_mode', [
    ('single', 'dynamic_bn_single'), ('batch', 'dynamic_bn_batch')])
def test_degeneracy_k1_matches_dynamic_bn(trained_bn, dataset, local_mode,
                                         bn_mode):
    local = transfer_bn_to_local(Checkpoint.from_model(trained_bn),
                                 1).to_model()
    a = predict_dataset(local, dataset, local_mode, rng=Rng(4))
    b = predict_dataset(trained_bn, dataset, bn_mode, rng=Rng(4))
    assert np.array_equal(a, b)


def test_k1_single_voting_equals_single():
    model = perturbed_local(groups=1, architecture=['3c', '3c', 'p'])
    assert all(l.spec.channels == 3 for l in model.norm_layers())
    for i, im in enumerate(images(3)):
        assert eval_single_voting(model, im) == \
            eval_single(model, im, Rng(i))


def test_identical_groups_single_voting_equals_single():
    model = tiny_model('local', 2, seed=8)
    for i, im in enumerate(images(4, 1)):
        assert eval_single_voting(model, im) == \
            eval_single(model, im, Rng(i)) == \
            eval_single_voting(model, im, hard_voting=True)


def test_single_deterministic_and_group_choice():
    model = perturbed_local()
    x = images(8, 2)
    mode = EvalMode('single')
    ds = make_synthetic_dataset(8, TINY_INPUT_SHAPE, classes=3, seed=1)
    a = predict_dataset(model, ds, mode, rng=Rng(6))
    b = predict_dataset(model, ds, mode, rng=Rng(6))
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() < 3
    assert eval_single(model, x[0], Rng(6)) == \
        eval_single(model, x[0], Rng(6))


def test_single_degenerate_statistics():
    model = tiny_model('local', 2, architecture=['3c', '4d'],
                       input_shape=(1, 1, 2))
    im = np.array([[[0.2, 0.7]]])
    with pytest.raises(localnorm.errors.EvaluationError) as e:
        eval_single(model, im, Rng(0))
    assert 'degenerate statistics' in str(e.value)
    with pytest.raises(localnorm.errors.EvaluationError):
        eval_single_voting(model, im)


def test_single_degenerate_dense_statistics():
    model = tiny_model('local', 2, architecture=['3c', '1d'])
    with pytest.raises(localnorm.errors.EvaluationError) as e:
        eval_single(model, images(1)[0], Rng(0))
    assert 'degenerate statistics' in str(e.value)
    assert len(eval_batch(model, images(4))) == 4


@pytest.mark.parametrize('affine_row', [0, 1])
def test_single_statistics_depend_on_the_image(affine_row):
    model = perturbed_local(groups=2)
    n = 5
    probs = model.predict_proba(images(n, 4), ForwardContext.evaluate(
        stat_groups=np.arange(n), affine_rows=np.full(n, affine_row)))
    assert np.max(np.ptp(probs, axis=0)) > 1e-6


def test_dynamic_bn_single_depends_on_the_image(trained_bn):
    n = 5
    probs = trained_bn.predict_proba(images(n, 4), ForwardContext.evaluate(
        stat_groups=np.arange(n), frozen=False))
    assert np.max(np.ptp(probs, axis=0)) > 1e-6


@pytest.fixture(scope='module')
def trained_local(tmpdir_factory):
    config = localnormsettings.synthetic_config(
        tmpdir_factory.mktemp('trained_local'))
    train_set, test_set = localnorm.harness.load_datasets(config)
    checkpoint, _ = localnorm.train(config, train_set, epochs=2)
    return checkpoint.to_model(), test_set


@pytest.mark.parametrize('mode', [
    'single', 'single_voting', 'single_voting+rot90'])
def test_single_modes_predict_more_than_one_class(trained_local, mode):
    model, test_set = trained_local
    preds = predict_dataset(model, test_set, mode, rng=Rng(2))
    assert len(preds) == len(test_set)
    assert len(set(preds.tolist())) > 1


def test_eval_batch_errors_and_symmetry():
    model = tiny_model('local', 2, seed=9)
    with pytest.raises(localnorm.errors.EvaluationError):
        eval_batch(model, images(3))
    copies = np.repeat(images(1, 3), 4, axis=0)
    preds = eval_batch(model, copies)
    assert len(set(preds.tolist())) == 1


def test_eval_batch_within_group_permutation():
    model = perturbed_local()
    x = images(4, 4)
    base = eval_batch(model, x)
    swapped = eval_batch(model, x[[1, 0, 3, 2]])
    assert swapped.tolist() == base[[1, 0, 3, 2]].tolist()


def test_eval_voting():
    model = tiny_model('local', 2, seed=10)
    x = images(2, 5)
    voted = eval_voting(model, x)
    assert voted.tolist() == eval_batch(model, np.concatenate(
        [x, x]))[:2].tolist()
    with pytest.raises(localnorm.errors.EvaluationError) as e:
        eval_voting(model, images(3))
    assert 'exactly 2 images' in str(e.value)


def test_rot90_uniform_image_equals_single():
    model = perturbed_local()
    im = np.full(TINY_INPUT_SHAPE, 0.5)
    im[0, 0, 0] = 0.9
    im[3, 3, 0] = 0.9
    im[0, 3, 0] = 0.9
    im[3, 0, 0] = 0.9
    assert rot90_fill_stats(model, im, rng=Rng(2)) == \
        eval_single(model, im, Rng(2))
    assert rot90_fill_stats(model, im, voting=True) == \
        eval_single_voting(model, im)


def test_rot90_fill_layout():
    x = np.arange(4.0).reshape(1, 2, 2, 1)
    filled = localnorm.evaluation._rotation_fill(x, 6)
    assert filled.shape == (6, 2, 2, 1)
    assert np.array_equal(filled[0], x[0])
    assert np.array_equal(filled[4], x[0])
    assert np.array_equal(filled[1, :, :, 0], np.rot90(x[0, :, :, 0]))
    assert not np.array_equal(filled[1], filled[2])


def test_rot90_errors():
    model = perturbed_local()
    with pytest.raises(localnorm.errors.EvaluationError) as e:
        rot90_fill_stats(model, np.zeros((4, 6, 1)), rng=Rng(0))
    assert 'square' in str(e.value)
    with pytest.raises(localnorm.errors.EvaluationError):
        rot90_fill_stats(model, images(1)[0])


def test_frozen_ignores_batch_composition(trained_bn):
    x = images(6, 7)
    full = eval_frozen(trained_bn, x)
    for i in range(6):
        assert eval_frozen(trained_bn, x[i]).tolist() == [full[i]]
    shuffled = eval_frozen(trained_bn, x[::-1])
    assert shuffled.tolist() == full[::-1].tolist()


def test_predict_dataset_pads_trailing_batch(dataset):
    model = perturbed_local()
    preds = predict_dataset(model, dataset, 'batch')
    assert preds.shape == (10,)
    x = preprocess(dataset.images, 'float64')
    assert preds[:4].tolist() == eval_batch(model, x[:4]).tolist()
    padded = np.concatenate([x[8:], x[:2]])
    assert preds[8:].tolist() == eval_batch(model, padded)[:2].tolist()
    voting = predict_dataset(model, dataset, 'voting', max_images=5)
    assert voting.shape == (5,)
    with pytest.raises(localnorm.errors.EvaluationError):
        predict_dataset(model, dataset, 'frozen_bn')


def test_predict_dataset_noise_sigma_zero_is_clean(dataset):
    model = perturbed_local()
    clean = predict_dataset(model, dataset, 'single_voting')
    noisy = predict_dataset(model, dataset, 'single_voting',
                            noise=NoiseSpec('agn', 0.0))
    assert np.array_equal(clean, noisy)


def test_accuracy():
    assert accuracy([0, 1, 2, 2], [0, 1, 1, 2]) == 0.75
    with pytest.raises(localnorm.errors.EvaluationError):
        accuracy([0, 1], [0])
    with pytest.raises(localnorm.errors.EvaluationError):
        accuracy([], [])


def test_confusion_matrix():
    labels = [0, 0, 1, 1, 2, 2, 2]
    preds = [0, 1, 1, 1, 1, 2, 0]
    cm = ConfusionMatrix.from_predictions(labels, preds, 3)
    assert cm.counts.tolist() == [[1, 1, 0], [0, 2, 0], [1, 1, 1]]
    assert cm.counts.sum(axis=1).tolist() == [2, 2, 3]
    assert cm.accuracy == accuracy(preds, labels)
    assert cm.recall.tolist() == pytest.approx([0.5, 1.0, 1.0 / 3])
    assert cm.max_column_share == 4.0 / 7
    assert cm.rows()[2] == [2, 1, 1, 1]
    assert cm.header() == ['true\\pred', '0', '1', '2']
    absent = ConfusionMatrix.from_predictions([0, 0], [0, 1], 3)
    assert absent.recall.tolist() == [0.5, 0.0, 0.0]
    with pytest.raises(localnorm.errors.EvaluationError):
        ConfusionMatrix([[1, 2]])


def test_confusion_from_model(dataset):
    model = perturbed_local()
    cm = confusion(model, dataset, EvalMode('batch'), max_images=8)
    assert cm.total == 8
    preds = predict_dataset(model, dataset, 'batch', max_images=8)
    assert cm.accuracy == accuracy(preds, dataset.labels[:8])
