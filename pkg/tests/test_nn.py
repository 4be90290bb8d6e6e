import math
from types import SimpleNamespace

import numpy as np
import pytest

from helpers import layer_grad_error, max_relative_error, numeric_grad
from mvsense.errors import CorruptStream, InvalidConfig, InvalidInput, ParseError, ShapeMismatch
from mvsense.nn import checkpoint
from mvsense.nn.layers import (
    ConvND, Dropout, FullyConnected, MaxPoolND, PReLU, SoftmaxCrossEntropy, he_init, he_init_3d,
)
from mvsense.nn.network import (
    LayerSpec, Network, NetworkConfig, closed_form_count, parameter_count, preset,
    spatial2d_desk, temporal3d_desk, temporal3d_paper,
)
from mvsense.nn.trainer import SGD, TrainConfig, train, train_step


def _tiny_cfg(n_classes=3, ratio=0.0):
    layers = (LayerSpec("Conv3D", "conv1", (3, 3, 3), (1, 1, 2), 4, (1, 1, 1)),
              LayerSpec("PReLU", "conv1_prelu"),
              LayerSpec("MaxPool3D", "pool1", (2, 2, 2), (2, 2, 2)),
              LayerSpec("FullyConnected", "fc6", depth=8),
              LayerSpec("PReLU", "fc6_prelu"),
              LayerSpec("Dropout", "fc6_drop", ratio=ratio))
    return NetworkConfig("tiny", layers, (2, 8, 8, 8), n_classes)


# --- initialisation --------------------------------------------------------

def test_he_variance_for_fan_in_54():
    w = he_init((100_000,), 54, np.random.default_rng(0))
    assert abs(w.var() / (2 / 54) - 1) < 0.1
    assert he_init_3d((3, 3, 3), 2, 64, np.random.default_rng(0)).shape == (64, 2, 3, 3, 3)


def test_init_is_seeded_with_zero_bias_and_quarter_slopes():
    a, b = Network(_tiny_cfg(), seed=4), Network(_tiny_cfg(), seed=4)
    for (la, ka, va, _), (_, _, vb, _) in zip(a.parameters(), b.parameters()):
        assert np.array_equal(va, vb)
        if ka == "b":
            assert not va.any()
        if ka == "a":
            assert (va == 0.25).all()
    c = Network(_tiny_cfg(), seed=5)
    assert not np.array_equal(a.state()[0], c.state()[0])


# --- layers ----------------------------------------------------------------

def test_pointwise_conv_is_channel_mix(rng):
    conv = ConvND(2, 2, (1, 1, 1), (1, 1, 1), 0, rng)
    conv.params["W"][...] = np.array([[1, 0], [2, -1]], float).reshape(2, 2, 1, 1, 1)
    x = rng.standard_normal((1, 2, 3, 4, 5))
    y = conv.forward(x)
    assert np.allclose(y[0, 0], x[0, 0]) and np.allclose(y[0, 1], 2 * x[0, 0] - x[0, 1])


def test_conv_output_extent(rng):
    conv = ConvND(2, 3, (3, 3, 3), (2, 1, 1), 0, rng)
    assert conv.forward(rng.standard_normal((2, 2, 8, 6, 7))).shape == (2, 3, 3, 4, 5)
    with pytest.raises(ShapeMismatch):
        conv.forward(rng.standard_normal((1, 3, 8, 6, 6)))


def test_conv3d_gradient_on_6x6_2ch_8_input():
    rng = np.random.default_rng(0)
    conv = ConvND(2, 3, (3, 3, 3), (2, 1, 1), 0, rng)
    x = rng.standard_normal((1, 2, 8, 6, 6))
    assert layer_grad_error(conv, x, rng) < 1e-4


def test_maxpool_routes_gradient_to_argmax_only(rng):
    pool = MaxPoolND((2, 2), (2, 2))
    x = rng.permutation(32).astype(float).reshape(1, 2, 4, 4)
    pool.forward(x)
    dx = pool.backward(np.ones((1, 2, 2, 2)))
    for c in range(2):
        for i in range(2):
            for j in range(2):
                win = x[0, c, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                g = dx[0, c, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                assert np.array_equal(g, (win == win.max()).astype(float))


def test_softmax_cross_entropy_gradient(rng):
    loss = SoftmaxCrossEntropy()
    logits = rng.standard_normal((4, 5))
    labels = np.array([0, 3, 4, 1])
    loss.forward(logits, labels)
    g = loss.backward()
    num = numeric_grad(lambda: loss.forward(logits, labels), logits)
    assert max_relative_error(g, num) < 1e-4
    with pytest.raises(InvalidInput):
        loss.forward(logits, np.array([0, 5, 1, 1]))


def test_dropout_expectation_matches_eval(rng):
    drop = Dropout(0.8, rng)
    x = np.linspace(-2, 3, 40)[None]
    mean = np.mean([drop.forward(x, train=True) for _ in range(10_000)], axis=0)
    assert np.allclose(mean, drop.forward(x, train=False), atol=0.15)
    assert abs(mean.mean() - x.mean()) < 0.02
    assert drop.forward(x) is x


# --- network ---------------------------------------------------------------

def test_parameter_counts_closed_form(rng):
    assert sum(v.size for v in ConvND(2, 64, (3, 3, 3), (1, 1, 1), 0, rng).params.values()) == 3520
    assert sum(v.size for v in FullyConnected(4096, 2048, rng).params.values()) == 8_390_656
    for cfg in (_tiny_cfg(), temporal3d_desk(), spatial2d_desk()):
        assert parameter_count(Network(cfg)) == closed_form_count(cfg)


def test_full_size_preset_count_and_conv3_input():
    cfg = temporal3d_paper()
    # per layer: convs with biases, one PReLU slope per channel, FC6/FC7 and the 101-way head
    by_hand = (3 * 3 * 3 * 2 * 64 + 64 + 64 + 3 * 3 * 3 * 64 * 128 + 128 + 128
               + 8 * 128 * 256 + 256 + 256 + 8 * 256 * 256 + 256 + 256 + 8 * 256 * 512 + 512 + 512
               + 512 * 3 * 4096 + 4096 + 4096 + 4096 * 2048 + 2048 + 2048 + 2048 * 101 + 101)
    assert closed_form_count(cfg) == by_hand == 16_961_381
    assert 10_000_000 < by_hand < 100_000_000
    net = Network(cfg, dtype=np.float32)
    assert parameter_count(net) == by_hand
    assert net.shape_at("conv3")[1:] == (10, 6, 6)


def test_preset_lookup_and_validation():
    assert preset("spatial2d-desk", n_classes=5).n_classes == 5
    with pytest.raises(InvalidConfig):
        preset("vgg16")
    with pytest.raises(InvalidConfig):
        Network(NetworkConfig("x", (LayerSpec("Conv3D", "c", (3, 3), (1, 1), 4),), (2, 4, 8, 8), 3))
    with pytest.raises(InvalidConfig):
        LayerSpec("Dropout", ratio=1.0).validate()
    with pytest.raises(ShapeMismatch):
        Network(NetworkConfig("x", (LayerSpec("Conv2D", "c", (3, 3), (1, 1), 4),), (2, 4, 8, 8), 3))


def test_config_json_roundtrip():
    cfg = temporal3d_paper(n_classes=7)
    assert NetworkConfig.from_json(cfg.to_json()) == cfg


def test_forward_rejects_wrong_input_shape():
    with pytest.raises(ShapeMismatch):
        Network(_tiny_cfg()).forward(np.zeros((1, 2, 8, 8, 9)))


def test_initial_loss_is_log_classes(rng):
    for c in (2, 6, 101):
        net = Network(_tiny_cfg(c), seed=1)
        x = rng.standard_normal((32, 2, 8, 8, 8))
        assert abs(net.loss(x, rng.integers(c, size=32)) - math.log(c)) < 0.1


# --- training --------------------------------------------------------------

def test_single_sample_overfits_in_50_steps(rng):
    net = Network(_tiny_cfg(), seed=0)
    x = rng.standard_normal((1, 2, 8, 8, 8))
    y = np.array([2])
    opt = SGD(net, 0.9, 0.0)
    for _ in range(50):
        train_step(net, opt, x, y, 0.05)
    assert net.loss(x, y) < 0.01


def test_zero_lr_leaves_weights_bit_exact(rng):
    net = Network(_tiny_cfg(ratio=0.5), seed=0)
    before = [v.copy() for v in net.state()]
    sample = lambda r, n: (rng.standard_normal((n, 2, 8, 8, 8)), rng.integers(3, size=n))
    train(net, sample, TrainConfig(batch_size=4, lr=0.0, lr_step=5, iterations=5, dropout=0.5))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.state()))


def test_momentum_two_steps_by_hand(rng):
    fc = FullyConnected(1, 1, rng)
    fc.params["W"][...] = 1.0
    fc.params["b"][...] = 0.0
    net = SimpleNamespace(state=lambda: [fc.params["W"], fc.params["b"]],
                          parameters=lambda: iter([(fc, k, fc.params[k], fc.grads[k]) for k in ("W", "b")]))
    opt = SGD(net, momentum=0.9, weight_decay=0.01)
    for g in (0.5, -0.2):
        fc.grads["W"][...] = g
        fc.grads["b"][...] = g
        opt.step(0.1)
    # v1 = -0.1 * (0.5 + 0.01 * 1) ; w1 = 0.949 ; v2 = 0.9 v1 - 0.1 * (-0.2 + 0.01 * 0.949)
    assert fc.params["W"][0, 0] == pytest.approx(0.922151, abs=1e-12)
    # biases are not decayed: b2 = -0.05 + (0.9 * -0.05 + 0.02)
    assert fc.params["b"][0] == pytest.approx(-0.075, abs=1e-12)


def test_lr_schedule_and_config_validation():
    cfg = TrainConfig(lr=0.01, lr_decay=0.1, lr_step=10, iterations=30)
    assert [cfg.lr_at(i) for i in (0, 9, 10, 29)] == pytest.approx([0.01, 0.01, 0.001, 0.0001])
    for bad in (TrainConfig(lr_step=50, iterations=10), TrainConfig(momentum=1.0),
                TrainConfig(dropout=1.0), TrainConfig(batch_size=0)):
        with pytest.raises(InvalidConfig):
            bad.validate()


def test_training_is_deterministic_for_a_seed():
    def run(seed):
        data_rng = np.random.default_rng(7)
        xs = data_rng.standard_normal((16, 2, 8, 8, 8))
        ys = data_rng.integers(3, size=16)
        net = Network(_tiny_cfg(ratio=0.5), seed=seed)
        losses = train(net, lambda r, n: (xs[r.integers(16, size=n)], ys[r.integers(16, size=n)]),
                       TrainConfig(batch_size=4, lr=0.01, lr_step=6, iterations=6, dropout=0.5, seed=seed))
        return losses, net.state()

    la, wa = run(3)
    lb, wb = run(3)
    assert la == lb and all(np.array_equal(a, b) for a, b in zip(wa, wb))
    assert run(4)[0] != la


# --- checkpoints -----------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    net = Network(_tiny_cfg(), seed=2, dtype=np.float32)
    checkpoint.save(net, tmp_path / "m.ckp")
    back = checkpoint.load(tmp_path / "m.ckp", dtype=np.float32)
    assert back.cfg == net.cfg
    assert all(np.array_equal(a, b) for a, b in zip(net.state(), back.state()))
    assert (tmp_path / "m.ckp").read_bytes()[:4] == b"CKP1"


def test_checkpoint_errors_and_partial_load(tmp_path):
    net = Network(_tiny_cfg(3), seed=2)
    checkpoint.save(net, tmp_path / "m.ckp")
    data = (tmp_path / "m.ckp").read_bytes()
    (tmp_path / "t.ckp").write_bytes(data[:-10])
    with pytest.raises(ParseError):
        checkpoint.load(tmp_path / "t.ckp")
    (tmp_path / "x.ckp").write_bytes(b"ABCD" + data[4:])
    with pytest.raises(CorruptStream):
        checkpoint.load(tmp_path / "x.ckp")
    other = Network(_tiny_cfg(5), seed=9)
    with pytest.raises(ShapeMismatch):
        checkpoint.load_weights(other, tmp_path / "m.ckp")
    n = checkpoint.load_weights(other, tmp_path / "m.ckp", strict=False)
    assert n == len(other.state()) - 2  # classifier weight and bias keep their init
    assert np.array_equal(other.state()[0], net.state()[0].astype(np.float32))


def test_prelu_gradient(rng):
    layer = PReLU(3)
    x = rng.standard_normal((2, 3, 4))
    x[np.abs(x) < 0.01] = 0.5  # stay clear of the kink
    assert layer_grad_error(layer, x, rng) < 1e-4
