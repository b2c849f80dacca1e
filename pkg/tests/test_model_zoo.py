import numpy as np
import pytest

from alc import autodiff_nn as nn
from alc.errors import FormatError, ShapeError, SpecError
from alc.model_zoo import (
    BasicBlock,
    ModelKind,
    ModelSpec,
    build,
    count_params,
    load_checkpoint,
    save_checkpoint,
)


def mlp_param_oracle(channels, length):
    sizes = [channels * length, 256, 128, 3]
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def cnn_param_oracle(channels):
    total, c = 0, channels
    for f, k in [(64, 7), (64, 5), (128, 3)]:
        total += f * c * k + f
        c = f
    return total + c * 3 + 3


def cnn_lstm_param_oracle(channels):
    conv = 64 * channels * 7 + 64 + 64 * 64 * 5 + 64
    lstm = 64 * 512 + 128 * 512 + 512
    return conv + lstm + 128 * 3 + 3


def block_params(c_in, c_out, stride):
    n = c_out * c_in * 3 + 2 * c_out + c_out * c_out * 3 + 2 * c_out
    if stride != 1 or c_in != c_out:
        n += c_out * c_in + 2 * c_out
    return n


def resnet_param_oracle(channels, stages):
    total = 64 * channels * 7 + 2 * 64
    c = 64
    for width, n_blocks, stride in stages:
        for i in range(n_blocks):
            total += block_params(c, width, stride if i == 0 else 1)
            c = width
    return total + c * 3 + 3


@pytest.mark.parametrize("channels", [3, 18])
def test_param_counts(channels):
    count = lambda kind: count_params(build(ModelSpec(kind, channels, 200)))
    assert count(ModelKind.MLP) == mlp_param_oracle(channels, 200)
    assert count(ModelKind.CNN) == cnn_param_oracle(channels)
    assert count(ModelKind.CNN_LSTM) == cnn_lstm_param_oracle(channels)
    assert count(ModelKind.RESNET1D) == resnet_param_oracle(channels, [(64, 1, 1), (128, 1, 2)])
    assert count(ModelKind.RESNET18) == resnet_param_oracle(
        channels, [(64, 2, 2), (128, 2, 2), (256, 2, 2), (512, 2, 2)])


def test_count_invariant_to_seed_and_resnet_sizes():
    spec18 = ModelSpec(ModelKind.RESNET18, 6, 200)
    assert count_params(build(spec18, 1)) == count_params(build(spec18, 2))
    assert count_params(build(spec18)) > count_params(build(ModelSpec(ModelKind.RESNET1D, 6, 200)))


def test_cnn_lstm_batch_of_ten():
    model = build(ModelSpec(ModelKind.CNN_LSTM, 3, 200), seed=0)
    x = np.random.default_rng(0).normal(size=(10, 3, 200))
    assert model(x).shape == (10, 3)


def test_underflow():
    with pytest.raises(SpecError):
        build(ModelSpec(ModelKind.RESNET18, 3, 4))
    with pytest.raises(SpecError):
        build(ModelSpec(ModelKind.CNN_LSTM, 3, 10))
    with pytest.raises(SpecError):
        ModelSpec(ModelKind.MLP, 5, 200)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_forward_contracts(kind):
    model = build(ModelSpec(kind, 6, 200), seed=3).eval()
    zeros = model(np.zeros((2, 6, 200))).data
    assert zeros.shape == (2, 3) and np.all(np.isfinite(zeros))
    row = np.random.default_rng(1).normal(size=(1, 6, 200))
    dup = model(np.repeat(row, 3, axis=0)).data
    assert np.array_equal(dup[0], dup[1]) and np.array_equal(dup[1], dup[2])
    single = model(row).data
    assert single.shape == (1, 3)
    np.testing.assert_array_equal(model(row).data, single)  # pure in eval mode
    with pytest.raises(ShapeError):
        model(np.zeros((1, 3, 200)))


@pytest.mark.parametrize("kind", list(ModelKind))
def test_build_deterministic(kind):
    a = nn.state_dict(build(ModelSpec(kind, 3, 200), seed=11))
    b = nn.state_dict(build(ModelSpec(kind, 3, 200), seed=11))
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_init_scheme():
    model = build(ModelSpec(ModelKind.CNN_LSTM, 3, 200), seed=0)
    H = model.lstm.hidden
    assert np.all(model.lstm.b.data[H:2 * H] == 1.0)
    assert np.all(model.lstm.b.data[:H] == 0.0)
    W = model.head.W.data
    assert np.abs(W).max() <= np.sqrt(6 / (W.shape[0] + W.shape[1]))
    assert not model.head.b.data.any()


def test_residual_block_identity(rng):
    block = BasicBlock(4, 4, 1, rng).eval()
    block.conv1.K.data[...] = 0
    block.conv2.K.data[...] = 0
    x = np.abs(rng.normal(size=(2, 4, 9)))
    np.testing.assert_allclose(block(x).data, x, atol=1e-12)


def test_residual_block_projection_shapes(rng):
    block = BasicBlock(4, 8, 2, rng)
    assert block(rng.normal(size=(2, 4, 9))).shape == (2, 8, 5)
    assert block.out_length(9) == 5


@pytest.mark.parametrize("kind", list(ModelKind))
def test_single_step_descends(kind):
    rng = np.random.default_rng(5)
    model = build(ModelSpec(kind, 3, 200), seed=2)
    x = rng.normal(size=(1, 3, 200))
    y = [2]
    model.eval()
    # batch norm in eval mode keeps the check about the parameters only
    before = float(nn.softmax_cross_entropy(model(x), y).data)
    with nn.Tape():
        loss = nn.softmax_cross_entropy(model(x), y)
    nn.backward(loss)
    nn.sgd_momentum_step(model.parameters(), lr=1e-3, momentum=0.9)
    after = float(nn.softmax_cross_entropy(model(x), y).data)
    assert after < before


def test_checkpoint_roundtrip(tmp_path, rng):
    model = build(ModelSpec(ModelKind.RESNET1D, 6, 200), seed=4)
    model.blocks[0].bn1.running_mean[:] = rng.normal(size=64)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, extras={"norm_mean": np.arange(6.0)}, meta={"config": "W6"})
    raw = path.read_bytes()
    assert raw.startswith(b"ALNN1")
    assert raw[7:7 + len("resnet1d")] == b"resnet1d"
    back, extras, header = load_checkpoint(path)
    assert back.kind is ModelKind.RESNET1D and header["config"] == "W6"
    assert extras["norm_mean"].tolist() == list(range(6))
    a, b = nn.state_dict(model), nn.state_dict(back)
    assert list(a) == list(b) and all(np.array_equal(a[k], b[k]) for k in a)
    x = rng.normal(size=(2, 6, 200))
    np.testing.assert_array_equal(model.eval()(x).data, back.eval()(x).data)


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"XXXXX")
    with pytest.raises(FormatError):
        load_checkpoint(p)
    p.write_bytes(b"ALNN1\x05")
    with pytest.raises(FormatError):
        load_checkpoint(p)


def test_kind_tags():
    assert [k.value for k in ModelKind] == ["mlp", "cnn", "cnn_lstm", "resnet1d", "resnet18"]
    assert ModelKind.parse("CNN-LSTM") is ModelKind.CNN_LSTM
    with pytest.raises(SpecError):
        ModelKind.parse("vgg")
