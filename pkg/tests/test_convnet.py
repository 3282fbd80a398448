import json

import numpy as np
import pytest

from makeup_transfer.convnet import (Layer, NetworkSpec, backward_to_image, conv2d, conv2d_input_grad,
                                     default_template, forward_all, load_network, maxpool2_backward,
                                     maxpool2_forward, random_network, relu_backward, relu_forward,
                                     save_network)
from makeup_transfer.errors import ConfigError, DimensionError, ParseError, UsageError
from makeup_transfer.gradcheck import finite_difference, max_relative_error, small_network

from conftest import FIXTURES


def conv_net(kernel, bias=None, normalization="identity"):
    kernel = np.asarray(kernel, dtype=np.float64)
    layer = Layer("conv1-1", "conv", out_channels=kernel.shape[0], kernel=kernel.shape[2], stride=1,
                  pad=kernel.shape[2] // 2, weight=kernel,
                  bias=np.zeros(kernel.shape[0]) if bias is None else bias)
    return NetworkSpec([layer], input_channels=kernel.shape[1], normalization=normalization)


def test_conv_hand_examples():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    np.testing.assert_array_equal(conv2d(x, np.full((1, 1, 1, 1), 2.0), np.zeros(1)), 2 * x)
    np.testing.assert_array_equal(conv2d(x, np.ones((1, 1, 1, 1))), x)
    assert conv2d(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3))).tolist() == [[[9.0]]]


def test_conv_matches_loop_oracle(rng):
    x = rng.normal(size=(2, 5, 6))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    for stride, pad in ((1, 0), (1, 1), (2, 1)):
        out = conv2d(x, k, b, stride, pad)
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
        ref = np.zeros_like(out)
        for o in range(3):
            for i in range(out.shape[1]):
                for j in range(out.shape[2]):
                    ref[o, i, j] = np.sum(xp[:, i * stride:i * stride + 3, j * stride:j * stride + 3] * k[o]) + b[o]
        np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(DimensionError):
        conv2d(np.ones((2, 3, 3)), np.ones((1, 1, 3, 3)))
    with pytest.raises(DimensionError):
        conv2d(np.ones((3, 3)), np.ones((1, 1, 3, 3)))


def test_conv_input_grad_examples(rng):
    k = np.full((1, 1, 1, 1), 2.0)
    np.testing.assert_array_equal(conv2d_input_grad(np.ones((1, 2, 2)), k, (1, 2, 2)), np.full((1, 2, 2), 2.0))
    np.testing.assert_array_equal(conv2d_input_grad(np.zeros((1, 2, 2)), k, (1, 2, 2)), np.zeros((1, 2, 2)))
    x = rng.normal(size=(2, 5, 5))
    k = rng.normal(size=(3, 2, 3, 3))
    c = rng.normal(size=(3, 5, 5))
    fd = finite_difference(lambda v: float(np.sum(c * conv2d(v, k, pad=1))), x)
    assert max_relative_error(conv2d_input_grad(c, k, x.shape, pad=1), fd) < 1e-6


@pytest.mark.parametrize("stride,pad,size", [(1, 0, 5), (1, 1, 6), (2, 1, 7), (2, 0, 6)])
def test_conv_adjoint(rng, stride, pad, size):
    x = rng.normal(size=(2, size, size))
    k = rng.normal(size=(3, 2, 3, 3))
    y = conv2d(x, k, stride=stride, pad=pad)
    c = rng.normal(size=y.shape)
    lhs = np.sum(conv2d_input_grad(c, k, x.shape, stride, pad) * x)
    assert abs(lhs - np.sum(c * y)) < 1e-8 * max(1.0, abs(lhs))


def test_relu_and_pool_adjoint(rng):
    x = rng.normal(size=(3, 5, 7))
    v = rng.normal(size=x.shape)
    c = rng.normal(size=x.shape)
    # relu is linear on a neighbourhood of x: Jacobian is the active-set mask
    assert abs(np.sum(relu_backward(c, x) * v) - np.sum(c * (x > 0) * v)) < 1e-10
    out, arg = maxpool2_forward(x)
    assert out.shape == (3, 3, 4)
    cp = rng.normal(size=out.shape)
    eps = 1e-7
    jv = (maxpool2_forward(x + eps * v)[0] - maxpool2_forward(x - eps * v)[0]) / (2 * eps)
    assert abs(np.sum(maxpool2_backward(cp, x, arg) * v) - np.sum(cp * jv)) < 1e-6


def test_pool_hand_examples():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    out, _ = maxpool2_forward(x)
    assert out.tolist() == [[[4.0]]]
    assert maxpool2_backward(np.ones((1, 1, 1)), x).tolist() == [[[0, 0], [0, 1]]]
    tie = np.ones((1, 2, 2))
    assert maxpool2_backward(np.ones((1, 1, 1)), tie).tolist() == [[[1, 0], [0, 0]]]
    odd = np.arange(9.0).reshape(1, 3, 3)
    assert maxpool2_forward(odd)[0].tolist() == [[[4.0, 5.0], [7.0, 8.0]]]
    assert relu_forward(np.array([-1.0, 2.0])).tolist() == [0.0, 2.0]


def test_forward_trivial_cases():
    relu_only = NetworkSpec([Layer("relu1-1", "relu")], input_channels=1, normalization="identity")
    stack = forward_all(relu_only, -np.ones((1, 3, 3)))
    assert not stack["relu1-1"].any()
    net = conv_net(np.ones((1, 1, 1, 1)), normalization="symmetric")
    img = np.linspace(0, 1, 9).reshape(1, 3, 3)
    np.testing.assert_array_equal(forward_all(net, img)["conv1-1"], 2 * img - 1)


def test_forward_matches_scripted_pass(small_net, rng):
    img = rng.uniform(size=(3, 4, 4))
    W = {ly.name: ly for ly in small_net.layers if ly.kind == "conv"}

    def conv(x, ly):
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        out = np.zeros((ly.out_channels, x.shape[1], x.shape[2]))
        for o in range(ly.out_channels):
            for i in range(x.shape[1]):
                for j in range(x.shape[2]):
                    out[o, i, j] = np.sum(xp[:, i:i + 3, j:j + 3] * ly.weight[o]) + ly.bias[o]
        return out

    def pool(x):
        c, h, w = x.shape
        return np.array([[[x[k, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max() for j in range(w // 2)]
                          for i in range(h // 2)] for k in range(c)])

    a1 = conv(2 * img - 1, W["conv1-1"])
    a2 = conv(pool(np.maximum(a1, 0)), W["conv2-1"])
    stack = forward_all(small_net, img)
    np.testing.assert_allclose(stack["conv1-1"], a1, atol=1e-12)
    np.testing.assert_allclose(stack["conv2-1"], a2, atol=1e-12)
    np.testing.assert_allclose(stack["pool2"], pool(np.maximum(a2, 0)), atol=1e-12)


def test_backward_examples(small_net, rng):
    img = rng.uniform(size=(3, 6, 6))
    stack = forward_all(small_net, img)
    zero = {"conv1-1": np.zeros_like(stack["conv1-1"])}
    assert not backward_to_image(small_net, stack, zero).any()

    ident = conv_net(np.eye(3).reshape(3, 3, 1, 1), normalization="symmetric")
    st = forward_all(ident, img)
    c = rng.normal(size=img.shape)
    np.testing.assert_allclose(backward_to_image(ident, st, {"conv1-1": c}), 2 * c, atol=1e-15)

    cots = {"conv1-1": rng.normal(size=stack["conv1-1"].shape), "conv2-1": rng.normal(size=stack["conv2-1"].shape)}

    def probe(x):
        s = forward_all(small_net, x)
        return sum(float(np.sum(c * s[k])) for k, c in cots.items())

    err = max_relative_error(backward_to_image(small_net, stack, cots), finite_difference(probe, img))
    assert err < 1e-6


def test_backward_linearity(small_net, rng):
    img = rng.uniform(size=(3, 7, 5))
    stack = forward_all(small_net, img)
    c1 = {n: rng.normal(size=stack[n].shape) for n in ("conv1-1", "pool2")}
    c2 = {n: rng.normal(size=stack[n].shape) for n in ("conv1-1", "pool2")}
    alpha = -1.7
    mixed = {n: alpha * c1[n] + c2[n] for n in c1}
    lhs = backward_to_image(small_net, stack, mixed)
    rhs = alpha * backward_to_image(small_net, stack, c1) + backward_to_image(small_net, stack, c2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_backward_usage_errors(small_net, net, rng):
    img = rng.uniform(size=(3, 6, 6))
    stack = forward_all(small_net, img, upto="conv1-1")
    with pytest.raises(UsageError):
        backward_to_image(small_net, stack, {"conv2-1": np.zeros((6, 3, 3))})
    with pytest.raises(UsageError):
        backward_to_image(net, stack, {"conv1-1": np.zeros((4, 6, 6))})
    with pytest.raises(DimensionError):
        backward_to_image(small_net, stack, {"conv1-1": np.zeros((4, 5, 5))})
    with pytest.raises(ConfigError):
        stack["nope"]


def test_default_template_shapes(net):
    assert net.conv_names() == ["conv1-1", "conv2-1", "conv3-1", "conv4-1", "conv5-1"]
    stack = forward_all(net, np.full((3, 32, 32), 0.5))
    assert stack["conv1-1"].shape == (8, 32, 32)
    assert stack["conv5-1"].shape == (64, 2, 2)
    assert stack["pool5"].shape == (64, 1, 1)


def test_random_network_deterministic():
    a, b = random_network(seed=3), random_network(seed=3)
    for la, lb in zip(a.layers, b.layers):
        if la.kind == "conv":
            assert np.array_equal(la.weight, lb.weight) and np.array_equal(la.bias, lb.bias)
    c = random_network(seed=4)
    assert not np.array_equal(a.layers[0].weight, c.layers[0].weight)


def test_network_round_trip(tmp_path, small_net):
    path = tmp_path / "net.json"
    save_network(small_net, path)
    back = load_network(path)
    assert back.names == small_net.names
    for la, lb in zip(small_net.layers, back.layers):
        if la.kind == "conv":
            assert np.array_equal(la.weight, lb.weight) and np.array_equal(la.bias, lb.bias)


def test_fixture_network_file(net):
    loaded = load_network(FIXTURES / "network.json")
    header = json.loads((FIXTURES / "network.json").read_text())["layers"][0]
    assert header["name"] == "conv1-1" and header["out_channels"] == 8
    assert forward_all(loaded, np.full((3, 8, 8), 0.5))["conv1-1"].shape[0] == 8
    for la, lb in zip(net.layers, loaded.layers):
        if la.kind == "conv":
            assert np.array_equal(la.weight, lb.weight)


@pytest.mark.parametrize("text,needle", [
    ("{not json", "line 1"),
    ('{"format": "makeup-transfer-network/1"}', "missing field 'layers'"),
])
def test_network_parse_errors(tmp_path, text, needle):
    path = tmp_path / "bad.json"
    path.write_text(text)
    with pytest.raises(ParseError, match=needle):
        load_network(path)


def test_network_weight_shape_error(tmp_path, small_net):
    path = tmp_path / "net.json"
    save_network(small_net, path)
    doc = json.loads(path.read_text())
    doc["weights"][0]["bias"] = [0.0]
    path.write_text(json.dumps(doc))
    with pytest.raises(ParseError, match="conv1-1"):
        load_network(path)


def test_small_network_gain():
    a = small_network(seed=0, input_gain=1.0)
    b = small_network(seed=0, input_gain=0.5)
    np.testing.assert_allclose(b.layers[0].weight, 0.5 * a.layers[0].weight)
    np.testing.assert_array_equal(b.layers[3].weight, a.layers[3].weight)
