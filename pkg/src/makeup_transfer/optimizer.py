"""Momentum gradient descent over pixels and the end-to-end transfer pipeline."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import parsing as P
from .errors import DivergenceError, InputError, MissingLabelsError, NumericalError
from .losses import REGIONS, Objective, TransferConfig
from .warp import eye_shadow_mask_for_before

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6
SWEEP_PARAMS = {
    "lambda_e": ("eyeshadow_l", "eyeshadow_r"),
    "lambda_f": ("foundation",),
    "lambda_l": ("lip_upper", "lip_lower"),
}
BEFORE_REQUIRED = (P.FACE, P.LIP_UPPER, P.LIP_LOWER)
REFERENCE_REQUIRED = (P.FACE, P.LIP_UPPER, P.LIP_LOWER, P.EYESHADOW_L, P.EYESHADOW_R)


@dataclass(frozen=True)
class OptimizerState:
    image: np.ndarray
    velocity: np.ndarray
    t: int = 0
    momentum: float = 0.9
    lr: float = 0.05
    losses: tuple = ()
    bounds: tuple | None = (0.0, 1.0)

    @classmethod
    def start(cls, image, momentum=0.9, lr=0.05, bounds=(0.0, 1.0)):
        image = np.array(image, dtype=np.float64)
        return cls(image, np.zeros_like(image), 0, momentum, lr, (), bounds)


def sgd_momentum_step(state, gradient, loss=None):
    """velocity <- m * velocity - lr * grad; image <- image + velocity (then clamp)."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != state.image.shape:
        raise InputError(f"gradient shape {gradient.shape} != image shape {state.image.shape}")
    if not np.all(np.isfinite(gradient)):
        bad = np.argwhere(~np.isfinite(gradient))
        raise NumericalError(
            f"non-finite gradient at step {state.t}: {len(bad)} entries, first at {tuple(bad[0])}")
    velocity = state.momentum * state.velocity - state.lr * gradient
    image = state.image + velocity
    if state.bounds is not None:
        image = np.clip(image, *state.bounds)
    losses = state.losses + ((float("nan") if loss is None else float(loss)),)
    return dataclasses.replace(state, image=image, velocity=velocity, t=state.t + 1, losses=losses)


# ---------------------------------------------------------------------------
# pipeline

def _present(labels, required):
    have = set(np.unique(labels).tolist())
    return [lab for lab in required if lab not in have]


def build_region_masks(before_labels, reference_labels, before_landmarks, reference_landmarks, reg=None):
    """Masks for every cosmetic region as ``{region: (mask_before, mask_reference)}``."""
    before_labels = P.check_labelmap(before_labels)
    reference_labels = P.check_labelmap(reference_labels)
    missing = {"before": _present(before_labels, BEFORE_REQUIRED),
               "reference": _present(reference_labels, REFERENCE_REQUIRED)}
    if missing["before"] or missing["reference"]:
        raise MissingLabelsError({k: [P.LABEL_NAMES[i] for i in v] for k, v in missing.items()})

    def pair(label):
        return P.labels_to_mask(before_labels, {label}), P.labels_to_mask(reference_labels, {label})

    masks = {
        "foundation": pair(P.FACE),
        "lip_upper": pair(P.LIP_UPPER),
        "lip_lower": pair(P.LIP_LOWER),
    }
    for region, label, key in (("eyeshadow_l", P.EYESHADOW_L, "left_eye_region"),
                               ("eyeshadow_r", P.EYESHADOW_R, "right_eye_region")):
        ref_mask = P.labels_to_mask(reference_labels, {label})
        before_mask = eye_shadow_mask_for_before(
            ref_mask, reference_landmarks[key], before_landmarks[key], before_labels.shape, reg)
        masks[region] = (before_mask, ref_mask)
    return masks


class TransferResult(NamedTuple):
    image: np.ndarray
    trace: list  # dicts: t, loss, then one entry per term
    state: OptimizerState


def _trace_row(t, value):
    row = {"t": t, "loss": value.loss}
    row.update({name: value.terms.get(name, 0.0) for name in (*REGIONS, "structure", "tv")})
    return row


def optimize(objective, start, config, callback=None):
    """Iterate the objective from ``start`` for ``config.iterations`` steps."""
    state = OptimizerState.start(start, config.momentum, config.lr)
    trace = []
    initial = None
    for t in range(config.iterations + 1):
        value = objective.evaluate(state.image)
        trace.append(_trace_row(t, value))
        if initial is None:
            initial = value.loss
        elif initial > 0 and value.loss > DIVERGENCE_FACTOR * initial:
            raise DivergenceError(
                f"loss {value.loss:.6g} at step {t} exceeds {DIVERGENCE_FACTOR:g} x initial {initial:.6g}",
                trace)
        if callback is not None:
            callback(state, value)
        if t == config.iterations:
            break
        state = sgd_momentum_step(state, value.grad, value.loss)
    return TransferResult(state.image, trace, state)


def run_transfer(before, reference, labelmaps, landmarks, net, config=None, callback=None):
    """Transfer makeup from ``reference`` onto ``before``.

    ``labelmaps`` and ``landmarks`` are ``(before, reference)`` pairs; each
    landmark entry maps ``left_eye_region``/``right_eye_region`` to 8 points.
    """
    config = config or TransferConfig()
    before = np.asarray(before, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if before.shape != reference.shape:
        raise InputError(f"before {before.shape} and reference {reference.shape} differ in extent")
    if labelmaps[0].shape != before.shape[1:] or labelmaps[1].shape != reference.shape[1:]:
        raise InputError("labelmaps must match the image extent")
    masks = build_region_masks(labelmaps[0], labelmaps[1], landmarks[0], landmarks[1])
    objective = Objective(net, before, reference, masks, config)
    return optimize(objective, before, config, callback)


class SweepPoint(NamedTuple):
    value: float
    image: np.ndarray
    term: float  # converged value of the swept cosmetic term(s)
    trace: list


def lightness_sweep(before, reference, labelmaps, landmarks, net, config, param, values):
    """One independent transfer per weight value of a single cosmetic."""
    if param not in SWEEP_PARAMS:
        raise InputError(f"sweep parameter must be one of {sorted(SWEEP_PARAMS)}, got {param!r}")
    values = [float(v) for v in values]
    if not values or any(v <= 0 for v in values) or any(b <= a for a, b in zip(values, values[1:])):
        raise InputError(f"sweep values must be positive and strictly ascending, got {values}")
    masks = build_region_masks(labelmaps[0], labelmaps[1], landmarks[0], landmarks[1])
    points = []
    for v in values:
        cfg = dataclasses.replace(config, **{param: v})
        objective = Objective(net, before, reference, masks, cfg)
        result = optimize(objective, before, cfg)
        last = result.trace[-1]
        points.append(SweepPoint(v, result.image, sum(last[n] for n in SWEEP_PARAMS[param]), result.trace))
    return points


def write_trace(trace, path):
    columns = ["t", "loss", *REGIONS, "structure", "tv"]
    with open(path, "w") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in trace:
            fh.write("\t".join([str(row["t"])] + [repr(float(row[c])) for c in columns[1:]]) + "\n")


def read_trace(path):
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        rows = []
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            row = {"t": int(parts[0])}
            row.update({k: float(v) for k, v in zip(header[1:], parts[1:])})
            rows.append(row)
    return rows
