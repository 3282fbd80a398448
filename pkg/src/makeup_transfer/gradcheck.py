"""Central finite differences and the gradient self-check suite."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import parsing as P
from .convnet import Layer, NetworkSpec, backward_to_image, forward_all, random_network
from .losses import (Objective, TransferConfig, eye_shadow_loss, structure_loss, style_region_loss,
                     tv_loss)

FD_STEP = 1e-5
TOLERANCE = 1e-4


def finite_difference(f, x, eps=FD_STEP):
    """Central-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        g[i] = (fp - fm) / (2 * eps)
    return grad


def max_relative_error(analytic, numeric, floor=1e-8):
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor * max|n|).

    The floor keeps entries that are zero up to finite-difference noise
    from dominating.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(n))), float(np.max(np.abs(a))), 1e-300)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    return float(np.max(np.abs(a - n) / denom))


def small_network(seed=0, widths=(4, 6), input_channels=3, input_gain=1.0):
    """Two {3x3 conv, relu, pool} blocks named conv1-1 and conv2-1."""
    layers = []
    for i, w in enumerate(widths, start=1):
        layers += [Layer(f"conv{i}-1", "conv", out_channels=w, kernel=3, stride=1, pad=1),
                   Layer(f"relu{i}-1", "relu"), Layer(f"pool{i}", "maxpool")]
    return random_network(NetworkSpec(layers, input_channels), seed, input_gain=input_gain)


class CheckResult(NamedTuple):
    name: str
    error: float
    passed: bool


def _blob_masks(h, w):
    ys, xs = np.mgrid[0:h, 0:w]
    a = (np.abs(ys - h * 0.4) <= h * 0.3) & (np.abs(xs - w * 0.45) <= w * 0.3)
    b = (np.abs(ys - h * 0.55) <= h * 0.3) & (np.abs(xs - w * 0.5) <= w * 0.35)
    return a, b


def run_selfcheck(net=None, seed=0, tol=TOLERANCE):
    """Finite-difference checks of every analytic gradient on small random fixtures."""
    rng = np.random.default_rng(seed)
    net = net if net is not None else small_network(seed)
    results = []

    def record(name, analytic, numeric):
        err = max_relative_error(analytic, numeric)
        results.append(CheckResult(name, err, err < tol))

    # parsing loss
    logits = rng.normal(size=(P.NUM_LABELS, 3, 3))
    truth = rng.integers(0, P.NUM_LABELS, size=(3, 3))
    probs = P.softmax(logits)
    w = P.default_label_weights()
    record("weighted_cross_entropy[probs]", P.weighted_cross_entropy(probs, truth, w).grad,
           finite_difference(lambda c: P.weighted_cross_entropy(c, truth, w).loss, probs))
    record("weighted_cross_entropy[logits]", P.weighted_cross_entropy(logits, truth, w, from_logits=True).grad,
           finite_difference(lambda c: P.weighted_cross_entropy(c, truth, w, from_logits=True).loss, logits))

    c = net.input_channels
    A = rng.uniform(0.1, 0.9, size=(c, 6, 6))
    R = rng.uniform(0.1, 0.9, size=(c, 6, 6))
    mb, mr = _blob_masks(6, 6)
    R_feats = forward_all(net, R)

    def through_net(loss_fn):
        def value(x):
            return loss_fn(forward_all(net, x))[0]
        feats = forward_all(net, A)
        _, cot = loss_fn(feats)
        cots = cot if isinstance(cot, dict) else {"conv1-1": cot}
        return backward_to_image(net, feats, cots), finite_difference(value, A)

    record("eye_shadow_loss", *through_net(lambda f: eye_shadow_loss(f, R_feats, mb, mr, "conv1-1")))
    record("structure_loss", *through_net(lambda f: structure_loss(f, R_feats, "conv1-1")))
    layers = [n for n in ("conv1-1", "conv2-1") if n in net.names]
    record("style_region_loss", *through_net(lambda f: style_region_loss(f, R_feats, mb, mr, layers)))
    for beta in (1.5, 2.0):
        record(f"tv_loss[beta={beta}]", tv_loss(A, beta)[1], finite_difference(lambda x: tv_loss(x, beta)[0], A))

    # full objective on an 8x8 image
    A8 = rng.uniform(0.1, 0.9, size=(c, 8, 8))
    B8 = rng.uniform(0.1, 0.9, size=(c, 8, 8))
    R8 = rng.uniform(0.1, 0.9, size=(c, 8, 8))
    ma, mb8 = _blob_masks(8, 8)
    masks = {name: (ma, mb8) for name in ("eyeshadow_l", "eyeshadow_r", "foundation", "lip_upper", "lip_lower")}
    cfg = TransferConfig(style_layers=layers, tv_beta=1.5, tv_weight=0.01)
    obj = Objective(net, B8, R8, masks, cfg)
    record("total_objective", obj(A8).grad, finite_difference(lambda x: obj(x).loss, A8))
    return results
