import struct

import numpy as np
import pytest

import localnorm
from localnorm.nn import (
    Checkpoint, ForwardContext, Model, ModelConfig, NormLayer, SGD,
    MetricsLog, parse_token, sgd_step, step_lr, train, transfer_bn_to_local,
    MNIST_ARCHITECTURE)
from localnorm.norm import NormSpec
from localnorm.tensor import Tensor, cross_entropy, Rng
from localnorm.data import make_synthetic_dataset
import localnormsettings
from localnormsettings import (
    tiny_model, tiny_model_config, numeric_grad, relative_error,
    FD_TOLERANCE, TINY_BATCH, TINY_INPUT_SHAPE)


def tiny_batch(seed=0, n=TINY_BATCH, dtype='float64'):
    r = np.random.RandomState(seed)
    x = r.uniform(0, 1, (n,) + TINY_INPUT_SHAPE).astype(dtype)
    return x, r.randint(0, 3, size=n)


@pytest.fixture
def synthetic_sets():
    train_set = make_synthetic_dataset(64, (6, 6, 1), classes=2,
                                       pixel_noise=4.0, seed=1,
                                       split='train')
    test_set = make_synthetic_dataset(16, (6, 6, 1), classes=2,
                                      pixel_noise=4.0, seed=1, split='test')
    return train_set, test_set


@pytest.fixture
def small_config(tmpdir):
    return localnormsettings.synthetic_config(
        tmpdir,
        dataset=dict(localnormsettings.SYNTHETIC_CONFIG['dataset'],
                     synthetic={'train': 64, 'test': 16,
                                'image_shape': [6, 6, 1], 'classes': 2,
                                'pixel_noise': 4.0}),
        training={'epochs': 2, 'batch_size': 4, 'lr': 0.05,
                  'momentum': 0.9})


def test_parse_token():
    assert parse_token('16c') == ('conv', 16)
    assert parse_token('512d') == ('dense', 512)
    assert parse_token('p') == ('pool', None)
    for bad in ('c16', '0c', 'q', '16x'):
        with pytest.raises(localnorm.errors.ConfigError):
            parse_token(bad)


def test_mnist_architecture_layers():
    model = Model(ModelConfig(norm={'variant': 'local', 'groups': 10}))
    kinds = [l.kind for l in model.layers]
    assert kinds == ['conv', 'norm', 'relu', 'conv', 'norm', 'relu', 'pool',
                     'conv', 'norm', 'relu', 'conv', 'norm', 'relu', 'pool',
                     'flatten', 'dense', 'norm', 'relu', 'dense', 'norm',
                     'relu', 'dense']
    assert model.config.architecture == MNIST_ARCHITECTURE
    assert model.groups == 10
    assert model.group_size == 10
    assert model.layers[-1].name == 'output'
    assert model.layers[-1].out_features == 10


def test_model_config_validation():
    with pytest.raises(localnorm.errors.ConfigError) as e:
        ModelConfig(norm={'variant': 'local', 'groups': 3}, batch_size=100)
    assert 'indivisible group count' in str(e.value)
    with pytest.raises(localnorm.errors.ConfigError):
        ModelConfig(norm={'variant': 'nope'})
    with pytest.raises(localnorm.errors.ConfigError):
        ModelConfig(dtype='float16')
    cfg = tiny_model_config()
    assert ModelConfig(json=cfg.to_dict()).to_dict() == cfg.to_dict()


def test_forward_shapes_and_input_check():
    model = tiny_model()
    x, _ = tiny_batch()
    logits = model.forward(x, ForwardContext.train())
    assert logits.shape == (TINY_BATCH, 3)
    with pytest.raises(localnorm.errors.TensorError):
        model.forward(np.zeros((4, 5, 5, 1)))


@pytest.mark.parametrize('variant,groups', [
    ('local', 2), ('batch', 1), ('switch', 1), ('group', 3)])
def test_model_gradients_finite_differences(variant, groups):
    model = tiny_model(variant, groups, seed=4)
    x, labels = tiny_batch(5)
    ctx = ForwardContext(training=True, update_stats=False)

    def loss_value():
        return float(cross_entropy(model.forward(x, ctx), labels).data)

    model.zero_grad()
    cross_entropy(model.forward(x, ctx), labels).backward()
    r = np.random.RandomState(6)
    params = list(model.parameters().items())
    checked = 0
    while checked < 100:
        name, p = params[r.randint(len(params))]
        idx = tuple(r.randint(s) for s in p.shape)
        num = numeric_grad(loss_value, p.data, idx)
        ana = p.grad[idx] if p.grad is not None else 0.0
        assert relative_error(num, ana) < FD_TOLERANCE or \
            abs(num - ana) < 1e-7, (name, idx, num, ana)
        checked += 1


def test_input_gradients_finite_differences():
    model = tiny_model('local', 2, seed=7)
    x, labels = tiny_batch(8)
    ctx = ForwardContext(training=True, update_stats=False)
    xt = Tensor(x, requires_grad=True)
    cross_entropy(model.forward(xt, ctx), labels).backward()

    def loss_value():
        return float(cross_entropy(model.forward(x, ctx), labels).data)

    for idx in [(0, 0, 0, 0), (1, 2, 3, 0), (3, 1, 1, 0), (2, 3, 0, 0)]:
        num = numeric_grad(loss_value, x, idx)
        assert relative_error(num, xt.grad[idx]) < FD_TOLERANCE or \
            abs(num - xt.grad[idx]) < 1e-7


def test_parameter_count_delta():
    k = 4
    local = tiny_model('local', k)
    batch = tiny_model('batch', 1)
    normalized_channels = sum(l.spec.channels for l in local.norm_layers())
    assert normalized_channels == 3 + 3 + 6
    assert local.parameter_count() - batch.parameter_count() == \
        (k - 1) * 2 * normalized_channels


def test_running_stats_updated_in_training_only():
    model = tiny_model('batch', 1)
    x, _ = tiny_batch()
    model.predict_proba(x, ForwardContext.evaluate(frozen=False))
    assert not model.buffers()
    model.forward(x, ForwardContext.train())
    assert len(model.buffers()) == 2 * len(model.norm_layers())


def test_frozen_prediction_independent_of_batch():
    model = tiny_model('batch', 1)
    x, _ = tiny_batch(0, n=8)
    model.forward(x, ForwardContext.train())
    full = model.predict_proba(x, ForwardContext.evaluate(frozen=True))
    single = model.predict_proba(x[3:4], ForwardContext.evaluate(
        frozen=True))
    assert np.max(np.abs(full[3] - single[0])) < 1e-12


def test_dense_local_norm_pools_features_within_group():
    spec = NormSpec('local', channels=5, groups=2, dtype='float64')
    layer = NormLayer(spec, name='norm3')
    x = np.random.RandomState(4).normal(2.0, 3.0, (4, 5))
    out = layer.forward(x, ForwardContext(training=True,
                                          update_stats=False)).data
    for rows in ([0, 1], [2, 3]):
        block = x[rows]
        expected = (block - block.mean()) / np.sqrt(block.var() +
                                                     spec.epsilon)
        assert np.allclose(out[rows], expected, atol=1e-10)
    assert np.ptp(out) > 1.9

    single = layer.forward(x, ForwardContext.evaluate(
        stat_groups=np.arange(4), affine_rows=np.zeros(4, int))).data
    expected = (x - x.mean(axis=1, keepdims=True)) / \
        np.sqrt(x.var(axis=1, keepdims=True) + spec.epsilon)
    assert np.allclose(single, expected, atol=1e-10)
    assert np.ptp(single, axis=1).min() > 1.0


def test_dense_batch_norm_running_stats_pooled():
    spec = NormSpec('batch', channels=3, momentum=0.0, dtype='float64')
    layer = NormLayer(spec, name='norm1')
    x = np.random.RandomState(6).normal(-1.0, 2.0, (6, 3))
    layer.forward(x, ForwardContext.train())
    assert np.allclose(spec.running_mean, np.full(3, x.mean()))
    assert np.allclose(spec.running_var, np.full(3, x.var()))
    frozen = layer.forward(x, ForwardContext.evaluate(frozen=True)).data
    dynamic = layer.forward(x, ForwardContext.evaluate(frozen=False)).data
    assert np.allclose(frozen, dynamic, atol=1e-10)


def test_sgd_step_plain():
    p, g = np.array([1.0, -2.0]), np.array([0.5, 0.25])
    (new,), (v,) = sgd_step([p], [g], lr=1.0, momentum=0.0)
    assert np.array_equal(new, p - g)
    assert np.array_equal(v, g)


def test_sgd_step_zero_grad_decays_velocity():
    p, v0 = np.array([1.0]), np.array([2.0])
    (new,), (v,) = sgd_step([p], [np.zeros(1)], lr=0.1, momentum=0.9,
                            velocities=[v0])
    assert np.allclose(v, 1.8)
    assert np.allclose(new, 1.0 - 0.1 * 1.8)
    (same,), _ = sgd_step([p], [None], lr=0.1, momentum=0.0)
    assert np.array_equal(same, p)


def test_sgd_quadratic_bowl():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = SGD({'w': w}, lr=0.1, momentum=0.0)
    for _ in range(100):
        opt.zero_grad()
        localnorm.tensor.ops.sum(w * w / 2.0).backward()
        opt.step()
    assert abs(w.data[0]) < 1e-4


def test_sgd_errors():
    with pytest.raises(localnorm.errors.ConfigError):
        sgd_step([np.zeros(1)], [np.zeros(1)], lr=0.0)
    with pytest.raises(localnorm.errors.ConfigError):
        sgd_step([np.zeros(1)], [np.zeros(1)], lr=0.1, momentum=1.0)
    with pytest.raises(localnorm.errors.TensorError):
        sgd_step([np.zeros(2)], [np.zeros(3)], lr=0.1)


def test_step_lr_schedule():
    assert [step_lr(1.0, e, 4) for e in range(4)] == pytest.approx(
        [1.0, 1.0, 0.1, 0.01])
    assert step_lr(0.01, 0, 1) == 0.01


def test_checkpoint_roundtrip_bit_identical(tmpdir):
    model = tiny_model('batch', 1, dtype='float32', seed=3)
    x, _ = tiny_batch(1, dtype='float32')
    model.forward(x, ForwardContext.train())
    before = model.forward(x).data
    path = str(tmpdir.join('m.lnck'))
    Checkpoint.from_model(model, epoch=2, rng=Rng(9)).save(path)
    ck = Checkpoint.load(path)
    assert ck.epoch == 2
    assert ck.rng().random(3).tolist() == Rng(9).random(3).tolist()
    after = ck.to_model().forward(x).data
    assert after.dtype == before.dtype
    assert np.array_equal(before, after)


def first_dtype_code_offset(buf):
    (meta_len,) = struct.unpack('<I', buf[8:12])
    pos = 12 + meta_len
    (name_len,) = struct.unpack('<H', buf[pos:pos + 2])
    return pos + 2 + name_len


def test_checkpoint_stores_float32(caplog):
    model = tiny_model('batch', 1, dtype='float64', seed=3)
    x, _ = tiny_batch(1)
    model.forward(x, ForwardContext.train())
    ck = Checkpoint.from_model(model)
    buf = ck.to_bytes()
    assert 'casting' in caplog.text
    assert buf[first_dtype_code_offset(buf)] == 1
    back = Checkpoint.from_bytes(buf)
    assert all(v.dtype == np.float32 for v in back.state.values())
    rounded = Checkpoint(ck.model_config, [
        (k, np.asarray(v, dtype=np.float32)) for k, v in ck.state.items()])
    restored = back.to_model()
    assert restored.config.dtype == 'float64'
    assert np.array_equal(restored.forward(x).data,
                          rounded.to_model().forward(x).data)


def test_checkpoint_rejects_wide_floats():
    buf = Checkpoint.from_model(tiny_model('batch', 1,
                                           dtype='float32')).to_bytes()
    at = first_dtype_code_offset(buf)
    with pytest.raises(localnorm.errors.CheckpointError):
        Checkpoint.from_bytes(buf[:at] + b'\x02' + buf[at + 1:])


def test_checkpoint_refuses_overwrite(tmpdir):
    path = str(tmpdir.join('m.lnck'))
    ck = Checkpoint.from_model(tiny_model())
    ck.save(path)
    with pytest.raises(localnorm.errors.ConfigError):
        ck.save(path)
    ck.save(path, force=True)


def test_checkpoint_malformed():
    buf = Checkpoint.from_model(tiny_model()).to_bytes()
    with pytest.raises(localnorm.errors.CheckpointError):
        Checkpoint.from_bytes(b'XXXX' + buf[4:])
    with pytest.raises(localnorm.errors.CheckpointError):
        Checkpoint.from_bytes(buf[:-3])
    with pytest.raises(localnorm.errors.CheckpointError):
        Checkpoint.from_bytes(buf + b'\x00')
    with pytest.raises(localnorm.errors.CheckpointError):
        Checkpoint.from_bytes(buf[:4] + b'\x07' + buf[5:])
    with pytest.raises(localnorm.errors.CheckpointError):
        Checkpoint.from_bytes(b'')
    with pytest.raises(localnorm.errors.CheckpointError):
        Checkpoint.load('/no/such/checkpoint.lnck')


def test_load_state_dict_errors():
    model = tiny_model()
    state = model.state_dict()
    missing = dict(state)
    missing.pop('conv1.weight')
    with pytest.raises(localnorm.errors.TensorError):
        model.load_state_dict(missing)
    bad = dict(state)
    bad['output.bias'] = np.zeros(7)
    with pytest.raises(localnorm.errors.TensorError):
        model.load_state_dict(bad)


def test_transfer_k1_equals_dynamic_bn():
    source = tiny_model('batch', 1, seed=2)
    x, _ = tiny_batch(3)
    source.forward(x, ForwardContext.train())
    ck = transfer_bn_to_local(Checkpoint.from_model(source), 1)
    assert ck.model_config.norm['variant'] == 'local'
    assert ck.model_config.norm['stat_mode'] == 'dynamic'
    transferred = ck.to_model()
    a = source.predict_proba(x, ForwardContext.evaluate(frozen=False))
    b = transferred.predict_proba(x)
    assert np.max(np.abs(a - b)) < 1e-12


def test_transfer_tiles_scaling_parameters():
    source = tiny_model('batch', 1, seed=2)
    for layer in source.norm_layers():
        layer.spec.gamma.data = np.random.RandomState(0).uniform(
            0.5, 2, layer.spec.gamma.shape)
    ck = transfer_bn_to_local(Checkpoint.from_model(source), 4)
    model = ck.to_model()
    log = MetricsLog()
    log.trace(0, model)
    assert all(v == 0 for v in log.gamma_group_var(0).values())
    for a, b in zip(source.norm_layers(), model.norm_layers()):
        assert b.spec.gamma.shape == (4, a.spec.channels)
        assert np.array_equal(b.spec.gamma.data[2], a.spec.gamma.data[0])
    assert ck.metadata['transfer_groups'] == 4


def test_transfer_errors():
    with pytest.raises(localnorm.errors.CheckpointError):
        transfer_bn_to_local(Checkpoint.from_model(tiny_model('local', 2)),
                             2)
    with pytest.raises(localnorm.errors.PartitionError):
        transfer_bn_to_local(Checkpoint.from_model(tiny_model('batch', 1)),
                             3)


def test_train_separable_sanity(small_config, synthetic_sets):
    train_set, test_set = synthetic_sets
    ck, log = train(small_config, train_set, test_set)
    assert ck.epoch == 2
    model = ck.to_model()
    preds = localnorm.evaluation.predict_dataset(model, train_set, 'batch')
    assert localnorm.evaluation.accuracy(preds, train_set.labels) > 0.9
    assert 0 <= log.value(2, 'test', 'accuracy_batch') <= 1
    assert log.value(2, 'train', 'loss') < log.value(1, 'train', 'loss')


def test_train_deterministic(small_config, synthetic_sets):
    train_set, test_set = synthetic_sets
    ck1, log1 = train(small_config, train_set, test_set, seed=11)
    ck2, log2 = train(small_config, train_set, test_set, seed=11)
    assert log1.rows == log2.rows
    assert log1.trace_rows == log2.trace_rows
    assert ck1.to_bytes() == ck2.to_bytes()


def test_train_gamma_diverges_after_fine_tuning(small_config,
                                                synthetic_sets):
    train_set, test_set = synthetic_sets
    cfg = small_config.with_overrides(norm={'variant': 'batch'})
    bn, _ = train(cfg, train_set)
    model = transfer_bn_to_local(bn, 2).to_model()
    _, log = train(small_config, train_set, model=model, epochs=1)
    assert all(v == 0 for v in log.gamma_group_var(0).values())
    assert any(v > 0 for v in log.gamma_group_var(1).values())


def test_train_batchnorm_trace_has_zero_group_variance(small_config,
                                                       synthetic_sets):
    cfg = small_config.with_overrides(norm={'variant': 'batch'})
    _, log = train(cfg, synthetic_sets[0], synthetic_sets[1])
    assert all(v == 0 for v in log.gamma_group_var(1).values())
    assert log.value(1, 'test', 'accuracy_frozen_bn') >= 0


def test_train_zero_epochs(small_config, synthetic_sets):
    ck, log = train(small_config, synthetic_sets[0], epochs=0)
    assert ck.epoch == 0
    assert log.rows == []
    assert len(log.trace_rows) == len(ck.to_model().norm_layers())


def test_train_too_small_dataset(small_config):
    tiny = make_synthetic_dataset(3, (6, 6, 1), classes=2)
    with pytest.raises(localnorm.errors.DatasetError):
        train(small_config, tiny)


def test_metrics_log_write(tmpdir):
    log = MetricsLog()
    log.add(1, 'train', 'loss', 0.5)
    log.trace(0, tiny_model())
    metrics, trace = log.write(str(tmpdir), 'abc', prefix='x_')
    header, rows = localnorm.utils.read_csv(metrics)
    assert header == localnorm.nn.METRICS_HEADER
    assert rows == [['1', 'train', 'loss', '0.5']]
    with open(trace) as f:
        assert f.readline().startswith('# localnorm ')


def test_train_non_finite_loss_is_divergence(small_config, synthetic_sets):
    model = Model(small_config.model_config(), seed=0)
    first = next(iter(model.parameters().values()))
    first.data[...] = np.nan
    with pytest.raises(localnorm.errors.DivergenceError) as e:
        train(small_config, synthetic_sets[0], model=model, epochs=1)
    assert e.value.epoch == 1
    assert e.value.step == 0


def test_train_shape_mismatch_is_not_divergence(small_config,
                                                synthetic_sets):
    model = tiny_model('local', 2, batch_size=4)
    with pytest.raises(localnorm.errors.TensorError) as e:
        train(small_config, synthetic_sets[0], model=model, epochs=1)
    assert not isinstance(e.value, localnorm.errors.NonFiniteError)
    assert 'expects images of shape' in str(e.value)
