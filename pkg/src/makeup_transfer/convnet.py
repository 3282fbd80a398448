"""Small convolutional feature extractor with exact input gradients.

Tensors are float64 numpy arrays laid out (channels, height, width); conv
kernels are (out_channels, in_channels, kh, kw). The extractor only ever
differentiates with respect to the input image, never the weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, ParseError, UsageError

LAYER_KINDS = ("conv", "relu", "maxpool")
NORMALIZATIONS = {
    # name: (scale, offset) applied as x * scale + offset
    "symmetric": (2.0, -1.0),
    "identity": (1.0, 0.0),
}
FILE_FORMAT = "makeup-transfer-network/1"


# ---------------------------------------------------------------------------
# primitive ops

def _check_image(x, what="input"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionError(f"{what} must be (channels, height, width), got shape {x.shape}")
    return x


def conv2d(x, kernel, bias=None, stride=1, pad=0):
    """Zero-padded cross-correlation of a (C, H, W) input with (O, C, kh, kw) kernels."""
    x = _check_image(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4:
        raise DimensionError(f"kernel must be rank 4, got shape {kernel.shape}")
    out_ch, in_ch, kh, kw = kernel.shape
    if in_ch != x.shape[0]:
        raise DimensionError(f"kernel expects {in_ch} input channels, input has {x.shape[0]}")
    if stride < 1 or pad < 0:
        raise DimensionError(f"invalid stride={stride} / pad={pad}")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {xp.shape[1:]}")
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    out = np.tensordot(kernel, windows, axes=([1, 2, 3], [0, 3, 4]))
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (out_ch,):
            raise DimensionError(f"bias shape {bias.shape} != ({out_ch},)")
        out += bias[:, None, None]
    return out


def conv_output_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv2d_input_grad(cotangent, kernel, input_shape, stride=1, pad=0):
    """Adjoint of :func:`conv2d` with respect to its input."""
    cotangent = np.asarray(cotangent, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    c, h, w = input_shape
    out_ch, in_ch, kh, kw = kernel.shape
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    if in_ch != c or cotangent.shape != (out_ch, ho, wo):
        raise DimensionError(
            f"cotangent shape {cotangent.shape} does not match forward output {(out_ch, ho, wo)}")
    grad = np.zeros((c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            grad[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.tensordot(
                kernel[:, :, i, j], cotangent, axes=(0, 0))
    return grad[:, pad:pad + h, pad:pad + w]


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(cotangent, x):
    return np.where(np.asarray(x) > 0, cotangent, 0.0)


def _pool_pad(x):
    # odd extents: replicate the last row/column
    _, h, w = x.shape
    if h % 2:
        x = np.concatenate([x, x[:, -1:, :]], axis=1)
    if w % 2:
        x = np.concatenate([x, x[:, :, -1:]], axis=2)
    return x


def maxpool2_forward(x):
    """2x2/stride-2 max pooling. Returns ``(output, argmax)``.

    ``argmax`` holds the row-major position (0..3) of the winner in each
    window; ties go to the first position.
    """
    x = _check_image(x)
    xp = _pool_pad(x)
    c, h, w = xp.shape
    win = xp.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    argmax = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool2_backward(cotangent, x, argmax=None):
    x = _check_image(x)
    if argmax is None:
        _, argmax = maxpool2_forward(x)
    c, h, w = x.shape
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape != (c, h2, w2):
        raise DimensionError(f"cotangent shape {cotangent.shape} != {(c, h2, w2)}")
    win = np.zeros((c, h2, w2, 4))
    np.put_along_axis(win, argmax[..., None], cotangent[..., None], axis=-1)
    g = win.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * h2, 2 * w2)
    if h % 2:
        g[:, h - 1, :] += g[:, h, :]
    if w % 2:
        g[:, :, w - 1] += g[:, :, w]
    return g[:, :h, :w]


# ---------------------------------------------------------------------------
# network definition

@dataclass
class Layer:
    name: str
    kind: str
    out_channels: int | None = None
    kernel: int | None = None
    stride: int = 1
    pad: int = 0
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None

    def header(self):
        h = {"name": self.name, "kind": self.kind}
        if self.kind == "conv":
            h.update(out_channels=self.out_channels, kernel=self.kernel,
                     stride=self.stride, pad=self.pad)
        elif self.kind == "maxpool":
            h.update(kernel=2, stride=2, pad=0)
        return h


@dataclass
class NetworkSpec:
    layers: list[Layer]
    input_channels: int = 3
    normalization: str = "symmetric"

    def __post_init__(self):
        self.validate()

    @property
    def names(self):
        return [layer.name for layer in self.layers]

    def index(self, name):
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise ConfigError(f"unknown layer {name!r}; network has {self.names}")

    def conv_names(self):
        return [layer.name for layer in self.layers if layer.kind == "conv"]

    def validate(self, require_weights=False):
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        seen = set()
        channels = self.input_channels
        for layer in self.layers:
            if layer.name in seen:
                raise ConfigError(f"duplicate layer name {layer.name!r}")
            seen.add(layer.name)
            if layer.kind not in LAYER_KINDS:
                raise ConfigError(f"layer {layer.name!r}: unknown kind {layer.kind!r}")
            if layer.kind != "conv":
                continue
            if not layer.out_channels or not layer.kernel or layer.stride < 1 or layer.pad < 0:
                raise ConfigError(f"layer {layer.name!r}: bad conv geometry {layer.header()}")
            if layer.weight is None:
                if require_weights:
                    raise ConfigError(f"layer {layer.name!r} has no weights")
            else:
                expected = (layer.out_channels, channels, layer.kernel, layer.kernel)
                if layer.weight.shape != expected:
                    raise ConfigError(
                        f"layer {layer.name!r}: weight shape {layer.weight.shape} != {expected}")
                if layer.bias is None or layer.bias.shape != (layer.out_channels,):
                    raise ConfigError(f"layer {layer.name!r}: bias must have shape ({layer.out_channels},)")
            channels = layer.out_channels

    def normalize(self, image):
        scale, offset = NORMALIZATIONS[self.normalization]
        return image * scale + offset

    @property
    def normalization_scale(self):
        return NORMALIZATIONS[self.normalization][0]


def default_template(widths=(8, 16, 32, 64, 64), input_channels=3):
    """Five {3x3 conv, relu, 2x2 pool} blocks named conv1-1 ... conv5-1."""
    layers = []
    for i, width in enumerate(widths, start=1):
        layers += [
            Layer(f"conv{i}-1", "conv", out_channels=width, kernel=3, stride=1, pad=1),
            Layer(f"relu{i}-1", "relu"),
            Layer(f"pool{i}", "maxpool"),
        ]
    return NetworkSpec(layers, input_channels=input_channels)


DEFAULT_INPUT_GAIN = 0.25


def random_network(template=None, seed=0, input_gain=DEFAULT_INPUT_GAIN):
    """Copy of ``template`` with He-normal conv weights and small biases drawn from ``seed``.

    The first conv layer is scaled by ``input_gain``. Activations downstream
    scale with it, which keeps the loss curvature low enough for momentum
    descent at the default step size to stay monotone.
    """
    template = template if template is not None else default_template()
    rng = np.random.default_rng(seed)
    layers = []
    channels = template.input_channels
    first = True
    for layer in template.layers:
        new = Layer(layer.name, layer.kind, layer.out_channels, layer.kernel, layer.stride, layer.pad)
        if layer.kind == "conv":
            fan_in = channels * layer.kernel ** 2
            gain = input_gain if first else 1.0
            new.weight = gain * rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                           size=(layer.out_channels, channels, layer.kernel, layer.kernel))
            new.bias = gain * rng.normal(0.0, 0.01, size=layer.out_channels)
            channels = layer.out_channels
            first = False
        layers.append(new)
    return NetworkSpec(layers, template.input_channels, template.normalization)


# ---------------------------------------------------------------------------
# forward / backward

@dataclass
class AxisGeometry:
    """Inclusive input-pixel interval [lo, hi] seen by each unit along one axis."""

    lo: np.ndarray
    hi: np.ndarray
    jump: int

    def conv(self, k, stride, pad):
        n = len(self.lo)
        n_out = conv_output_size(n, k, stride, pad)
        start = np.arange(n_out) * stride - pad
        first = np.clip(start, 0, n - 1)
        last = np.clip(start + k - 1, 0, n - 1)
        return AxisGeometry(self.lo[first], self.hi[last], self.jump * stride)

    def pool(self):
        n = len(self.lo)
        n_out = (n + 1) // 2
        first = 2 * np.arange(n_out)
        last = np.minimum(first + 1, n - 1)
        return AxisGeometry(self.lo[first], self.hi[last], self.jump * 2)


@dataclass
class LayerGeometry:
    rows: AxisGeometry
    cols: AxisGeometry
    input_extent: tuple

    @property
    def shape(self):
        return len(self.rows.lo), len(self.cols.lo)

    @property
    def downsampling(self):
        return self.rows.jump


@dataclass
class FeatureStack:
    """Activations of every computed layer for one image, plus geometry."""

    image: np.ndarray
    activations: dict[str, np.ndarray]
    geometry: dict[str, LayerGeometry]
    net: NetworkSpec = field(repr=False)
    _normalized: np.ndarray = field(repr=False, default=None)
    _argmax: dict = field(repr=False, default_factory=dict)

    def __getitem__(self, name):
        try:
            return self.activations[name]
        except KeyError:
            raise ConfigError(f"layer {name!r} not in feature stack {list(self.activations)}") from None

    def __contains__(self, name):
        return name in self.activations


def forward_all(net, image, upto=None):
    """Run ``net`` on an image with pixels in [0, 1].

    Stops after layer ``upto`` (name) when given; every computed layer's
    activation is kept.
    """
    image = _check_image(image, "image")
    if image.shape[0] != net.input_channels:
        raise DimensionError(f"image has {image.shape[0]} channels, network expects {net.input_channels}")
    stop = net.index(upto) if upto is not None else len(net.layers) - 1
    x = net.normalize(image)
    stack = FeatureStack(image=image, activations={}, geometry={}, net=net, _normalized=x)
    extent = image.shape[1:]
    geo = LayerGeometry(AxisGeometry(np.arange(extent[0]), np.arange(extent[0]), 1),
                        AxisGeometry(np.arange(extent[1]), np.arange(extent[1]), 1), extent)
    for layer in net.layers[:stop + 1]:
        if layer.kind == "conv":
            if layer.weight is None:
                raise ConfigError(f"layer {layer.name!r} has no weights")
            x = conv2d(x, layer.weight, layer.bias, layer.stride, layer.pad)
            geo = LayerGeometry(geo.rows.conv(layer.kernel, layer.stride, layer.pad),
                                geo.cols.conv(layer.kernel, layer.stride, layer.pad), extent)
        elif layer.kind == "relu":
            x = relu_forward(x)
        else:
            x, stack._argmax[layer.name] = maxpool2_forward(x)
            geo = LayerGeometry(geo.rows.pool(), geo.cols.pool(), extent)
        stack.activations[layer.name] = x
        stack.geometry[layer.name] = geo
    return stack


def backward_to_image(net, stack, cotangents):
    """Pull per-layer cotangents back to a gradient on the [0, 1] image.

    ``cotangents`` maps layer name to an array shaped like that layer's
    activation. The result is the gradient of sum_l <cotangent_l, act_l>.
    """
    if stack is None or not isinstance(stack, FeatureStack):
        raise UsageError("backward_to_image needs the FeatureStack from forward_all")
    if stack.net is not net:
        raise UsageError("feature stack was produced by a different network")
    deepest = -1
    for name, cot in cotangents.items():
        idx = net.index(name)
        if name not in stack.activations:
            raise UsageError(f"layer {name!r} was not computed in the forward pass")
        if np.shape(cot) != stack.activations[name].shape:
            raise DimensionError(
                f"cotangent for {name!r} has shape {np.shape(cot)}, activation is {stack.activations[name].shape}")
        deepest = max(deepest, idx)
    if deepest < 0:
        return np.zeros_like(stack.image)

    g = None
    for idx in range(deepest, -1, -1):
        layer = net.layers[idx]
        cot = cotangents.get(layer.name)
        if cot is not None:
            g = np.array(cot, dtype=np.float64) if g is None else g + cot
        if g is None:
            continue
        x_in = stack.activations[net.layers[idx - 1].name] if idx > 0 else stack._normalized
        if layer.kind == "conv":
            g = conv2d_input_grad(g, layer.weight, x_in.shape, layer.stride, layer.pad)
        elif layer.kind == "relu":
            g = relu_backward(g, x_in)
        else:
            g = maxpool2_backward(g, x_in, stack._argmax[layer.name])
    return g * net.normalization_scale


# ---------------------------------------------------------------------------
# network file

def network_to_dict(net):
    conv = [layer for layer in net.layers if layer.kind == "conv"]
    return {
        "format": FILE_FORMAT,
        "input_channels": net.input_channels,
        "normalization": net.normalization,
        "layers": [layer.header() for layer in net.layers],
        "weights": [
            {"name": layer.name, "weight": layer.weight.tolist(), "bias": layer.bias.tolist()}
            for layer in conv
        ],
    }


def save_network(net, path):
    net.validate(require_weights=True)
    Path(path).write_text(json.dumps(network_to_dict(net)) + "\n")


def _field(obj, key, ctx, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{ctx}: missing field {key!r}")
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        raise ParseError(f"{ctx}: field {key!r} has wrong type {type(value).__name__}")
    return value


def network_from_dict(doc, source="<network>"):
    if _field(doc, "format", source, str) != FILE_FORMAT:
        raise ParseError(f"{source}: unsupported format {doc.get('format')!r}")
    layers = []
    for i, h in enumerate(_field(doc, "layers", source, list)):
        ctx = f"{source}: layers[{i}]"
        kind = _field(h, "kind", ctx, str)
        layer = Layer(_field(h, "name", ctx, str), kind)
        if kind == "conv":
            layer.out_channels = _field(h, "out_channels", ctx, int)
            layer.kernel = _field(h, "kernel", ctx, int)
            layer.stride = _field(h, "stride", ctx, int)
            layer.pad = _field(h, "pad", ctx, int)
        layers.append(layer)
    by_name = {layer.name: layer for layer in layers}
    conv_names = [layer.name for layer in layers if layer.kind == "conv"]
    weights = _field(doc, "weights", source, list)
    if len(weights) != len(conv_names):
        raise ParseError(f"{source}: {len(weights)} weight entries for {len(conv_names)} conv layers")
    for i, (entry, expected) in enumerate(zip(weights, conv_names)):
        ctx = f"{source}: weights[{i}]"
        name = _field(entry, "name", ctx, str)
        if name != expected:
            raise ParseError(f"{ctx}: expected weights for {expected!r}, got {name!r}")
        try:
            w = np.array(_field(entry, "weight", ctx, list), dtype=np.float64)
            b = np.array(_field(entry, "bias", ctx, list), dtype=np.float64)
        except (ValueError, TypeError) as exc:
            raise ParseError(f"{ctx}: non-numeric or ragged array ({exc})") from None
        if w.ndim != 4:
            raise ParseError(f"{ctx}: weight must be a rank-4 nested array")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ParseError(f"{ctx}: non-finite weights")
        by_name[name].weight, by_name[name].bias = w, b
    try:
        net = NetworkSpec(layers, _field(doc, "input_channels", source, int),
                          _field(doc, "normalization", source, str))
        net.validate(require_weights=True)
    except ConfigError as exc:
        raise ParseError(f"{source}: {exc}") from None
    return net


def load_network(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read network file ({exc.strerror})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return network_from_dict(doc, str(path))
