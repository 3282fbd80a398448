"""Face-parsing label semantics, weighted cross-entropy, and mirror averaging."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from PIL import Image

from .errors import DimensionError, InputError, ParseError

BACKGROUND = 0
FACE = 1
EYE_L, EYE_R = 2, 3
EYEBROW_L, EYEBROW_R = 4, 5
INNER_MOUTH = 6
LIP_UPPER, LIP_LOWER = 7, 8
EYESHADOW_L, EYESHADOW_R = 9, 10
NUM_LABELS = 11

LABEL_NAMES = (
    "background", "face", "eye_l", "eye_r", "eyebrow_l", "eyebrow_r",
    "inner_mouth", "lip_upper", "lip_lower", "eyeshadow_l", "eyeshadow_r",
)
# class pairs exchanged under horizontal mirroring
LATERAL_PAIRS = ((EYE_L, EYE_R), (EYEBROW_L, EYEBROW_R), (EYESHADOW_L, EYESHADOW_R))

LOG_EPS = 1e-12


def default_label_weights():
    w = np.ones(NUM_LABELS)
    w[[EYE_L, EYE_R, EYEBROW_L, EYEBROW_R, EYESHADOW_L, EYESHADOW_R]] = 1.4
    w[[INNER_MOUTH, LIP_UPPER, LIP_LOWER]] = 1.2
    return w


def mirror_permutation():
    perm = np.arange(NUM_LABELS)
    for a, b in LATERAL_PAIRS:
        perm[a], perm[b] = b, a
    return perm


def check_labelmap(labels):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DimensionError(f"labelmap must be 2-D, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputError(f"labelmap must hold integers, got {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= NUM_LABELS):
        raise InputError(f"labelmap values must lie in 0..{NUM_LABELS - 1}")
    return labels


def softmax(logits, axis=0):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class CrossEntropyResult(NamedTuple):
    loss: float
    grad: np.ndarray
    clamped: int  # number of true-label probabilities below the log clamp


def weighted_cross_entropy(conf, truth, weights=None, from_logits=False, eps=LOG_EPS):
    """Sum over pixels of ``w[y] * -log p_y``.

    ``conf`` is (K, H, W). With ``from_logits`` a softmax over K is applied
    first and the gradient is taken with respect to the logits; otherwise
    it is with respect to the probabilities themselves.
    """
    conf = np.asarray(conf, dtype=np.float64)
    truth = check_labelmap(truth)
    weights = default_label_weights() if weights is None else np.asarray(weights, dtype=np.float64)
    if conf.ndim != 3 or conf.shape[1:] != truth.shape:
        raise DimensionError(f"confidence {conf.shape} does not match labelmap {truth.shape}")
    if weights.shape != (conf.shape[0],) or np.any(weights <= 0):
        raise InputError(f"label weights must be {conf.shape[0]} positive values")
    if truth.size and truth.max() >= conf.shape[0]:
        raise InputError("labelmap references a class beyond the confidence channels")

    probs = softmax(conf) if from_logits else conf
    p_true = np.take_along_axis(probs, truth[None], axis=0)[0]
    w_pix = weights[truth]
    clamped = p_true < eps
    loss = float(np.sum(w_pix * -np.log(np.maximum(p_true, eps))))

    if from_logits:
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, truth[None], 1.0, axis=0)
        grad = w_pix[None] * (probs - onehot)
    else:
        grad = np.zeros_like(conf)
        g_true = np.where(clamped, 0.0, -w_pix / np.where(clamped, 1.0, p_true))
        np.put_along_axis(grad, truth[None], g_true[None], axis=0)
    return CrossEntropyResult(loss, grad, int(clamped.sum()))


def symmetrize_confidence(conf, swap_lateral=True):
    """Average each pixel's scores with its horizontal mirror.

    Lateral classes (left/right eye, eyebrow, eye shadow) trade places
    under the mirror, so a left-eye score on one side is averaged with the
    right-eye score on the other. ``swap_lateral`` applies only when the
    map has the full 11 label channels.
    """
    conf = np.asarray(conf, dtype=np.float64)
    if conf.ndim != 3:
        raise DimensionError(f"confidence map must be (K, H, W), got {conf.shape}")
    mirrored = conf[:, :, ::-1]
    if swap_lateral and conf.shape[0] == NUM_LABELS:
        mirrored = mirrored[mirror_permutation()]
    return 0.5 * (conf + mirrored)


def argmax_labels(conf):
    conf = np.asarray(conf)
    if conf.ndim != 3:
        raise DimensionError(f"confidence map must be (K, H, W), got {conf.shape}")
    # np.argmax returns the first maximum, i.e. the lower label id on ties
    return np.argmax(conf, axis=0).astype(np.uint8)


def labels_to_mask(labels, wanted):
    labels = check_labelmap(labels)
    wanted = sorted(set(int(w) for w in wanted))
    bad = [w for w in wanted if not 0 <= w < NUM_LABELS]
    if bad:
        raise InputError(f"unknown label ids {bad}")
    return np.isin(labels, wanted)


def read_labelmap(path):
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "P"):
                raise ParseError(f"{path}: labelmap must be 8-bit single channel, got mode {im.mode}")
            labels = np.array(im, dtype=np.uint8)
    except OSError as exc:
        raise ParseError(f"{path}: cannot read labelmap ({exc})") from None
    if labels.size and labels.max() >= NUM_LABELS:
        raise ParseError(f"{path}: label value {labels.max()} out of range 0..{NUM_LABELS - 1}")
    return labels


def write_labelmap(labels, path):
    labels = check_labelmap(labels)
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path)
