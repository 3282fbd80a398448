"""Region-masked feature losses and the assembled makeup objective.

All content-style terms are means over masked feature cells so that the
cosmetic weights keep their meaning across image sizes. Gram matrices are
normalized by the number of contributing positions and the style term by
4 N^2, N being the channel count of the layer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .convnet import FeatureStack, backward_to_image, forward_all
from .errors import ConfigError, DegenerateRegionError, DimensionError

log = logging.getLogger(__name__)

REGIONS = ("eyeshadow_l", "eyeshadow_r", "foundation", "lip_upper", "lip_lower")
TERMS = REGIONS + ("structure", "tv")
DEFAULT_STYLE_LAYERS = ("conv1-1", "conv2-1", "conv3-1", "conv4-1", "conv5-1")
MASK_THRESHOLD = 0.5


@dataclass
class TransferConfig:
    lambda_s: float = 10.0
    lambda_e: float = 40.0
    lambda_l: float = 500.0
    lambda_f: float = 100.0
    tv_weight: float = 0.003
    tv_beta: float = 2.0
    style_layers: tuple = DEFAULT_STYLE_LAYERS
    content_layer: str = "conv1-1"
    iterations: int = 500
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        self.style_layers = tuple(self.style_layers)
        for name in ("lambda_s", "lambda_e", "lambda_l", "lambda_f", "tv_weight", "lr"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")
        if not math.isfinite(self.tv_beta) or self.tv_beta < 1:
            raise ConfigError(f"tv_beta must be >= 1, got {self.tv_beta}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if not self.style_layers:
            raise ConfigError("at least one style layer is required")

    def weight_for(self, term):
        return {
            "eyeshadow_l": self.lambda_e, "eyeshadow_r": self.lambda_e,
            "foundation": self.lambda_f,
            "lip_upper": self.lambda_l, "lip_lower": self.lambda_l,
            "structure": self.lambda_s, "tv": self.tv_weight,
        }[term]

    def check_network(self, net):
        names = set(net.names)
        missing = [n for n in (*self.style_layers, self.content_layer) if n not in names]
        if missing:
            raise ConfigError(f"layers {missing} not found in network")

    def to_dict(self):
        d = asdict(self)
        d["style_layers"] = list(self.style_layers)
        return d


# ---------------------------------------------------------------------------
# mask projection

@dataclass
class LayerMask:
    layer: str
    grid: np.ndarray

    @property
    def count(self):
        return int(self.grid.sum())


def _geometry_for(geometry, layer):
    table = geometry.geometry if isinstance(geometry, FeatureStack) else geometry
    try:
        return table[layer]
    except KeyError:
        raise ConfigError(f"unknown layer {layer!r} for mask projection") from None


def project_mask(mask, layer, geometry, threshold=MASK_THRESHOLD):
    """Resample an image-space mask onto ``layer``'s grid.

    A unit is on when at least ``threshold`` of the in-image pixels in its
    receptive field are masked. ``geometry`` is a FeatureStack or its
    ``geometry`` mapping.
    """
    mask = np.asarray(mask, dtype=bool)
    geo = _geometry_for(geometry, layer)
    rows, cols = geo.rows, geo.cols
    if mask.shape != tuple(geo.input_extent):
        raise DimensionError(f"mask extent {mask.shape} does not match the network input")
    integral = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1))
    integral[1:, 1:] = mask.cumsum(0).cumsum(1)
    r0, r1 = rows.lo[:, None], rows.hi[:, None] + 1
    c0, c1 = cols.lo[None, :], cols.hi[None, :] + 1
    covered = integral[r1, c1] - integral[r0, c1] - integral[r1, c0] + integral[r0, c0]
    area = (r1 - r0) * (c1 - c0)
    return LayerMask(layer, covered >= threshold * area)


# ---------------------------------------------------------------------------
# content (eye shadow / structure) terms

def _bbox(grid):
    rows = np.flatnonzero(grid.any(axis=1))
    cols = np.flatnonzero(grid.any(axis=0))
    return rows[0], rows[-1], cols[0], cols[-1]


def _grid_coords(n_dst, n_src):
    # aligned-corner map of 0..n_dst-1 onto 0..n_src-1
    idx = np.arange(n_dst)
    if n_dst == 1:
        return np.full(1, (n_src - 1) / 2.0)
    return (idx * (n_src - 1)) / (n_dst - 1)


def _bilinear_crop(features, src_box, dst_box):
    """Resample the ``src_box`` crop of (C, h, w) features to the ``dst_box`` grid size."""
    r0, r1, c0, c1 = src_box
    crop = features[:, r0:r1 + 1, c0:c1 + 1]
    hs, ws = crop.shape[1:]
    hd, wd = dst_box[1] - dst_box[0] + 1, dst_box[3] - dst_box[2] + 1
    u = _grid_coords(hd, hs)
    v = _grid_coords(wd, ws)
    i0 = np.floor(u).astype(int)
    j0 = np.floor(v).astype(int)
    fu = (u - i0)[:, None]
    fv = (v - j0)[None, :]
    i1 = np.minimum(i0 + 1, hs - 1)
    j1 = np.minimum(j0 + 1, ws - 1)
    top = crop[:, i0][:, :, j0] * (1 - fv) + crop[:, i0][:, :, j1] * fv
    bottom = crop[:, i1][:, :, j0] * (1 - fv) + crop[:, i1][:, :, j1] * fv
    return top * (1 - fu) + bottom * fu


@dataclass
class ContentTarget:
    """Target features for the masked cells of the optimized image at one layer."""

    layer: str
    lmask: LayerMask
    values: np.ndarray  # (C, n_on), ordered like grid.nonzero()


def content_target(target_feats, sb, sr, layer, geometry=None, region="region"):
    """Project both masks and map the target's masked crop onto the ``sb`` cells."""
    geometry = geometry if geometry is not None else target_feats
    lb = project_mask(sb, layer, geometry)
    lr = project_mask(sr, layer, target_feats)
    if lb.count == 0 or lr.count == 0:
        raise DegenerateRegionError(region, f"projected mask is empty at layer {layer!r}")
    box_b, box_r = _bbox(lb.grid), _bbox(lr.grid)
    resampled = _bilinear_crop(target_feats[layer], box_r, box_b)
    rr, cc = np.nonzero(lb.grid)
    values = resampled[:, rr - box_b[0], cc - box_b[2]]
    return ContentTarget(layer, lb, values)


def content_loss(activation, target):
    """Mean squared difference over masked cells and channels, with its cotangent."""
    rr, cc = np.nonzero(target.lmask.grid)
    diff = activation[:, rr, cc] - target.values
    denom = diff.size
    loss = float(np.sum(diff * diff) / denom)
    cot = np.zeros_like(activation)
    cot[:, rr, cc] = 2.0 * diff / denom
    return loss, cot


def eye_shadow_loss(A_feats, R_feats, sb, sr, layer="conv1-1", region="eyeshadow_l"):
    target = content_target(R_feats, sb, sr, layer, geometry=A_feats, region=region)
    return content_loss(A_feats[layer], target)


def structure_loss(A_feats, B_feats, layer="conv1-1"):
    full = np.ones(B_feats.image.shape[1:], dtype=bool)
    target = content_target(B_feats, full, full, layer, geometry=A_feats, region="structure")
    return content_loss(A_feats[layer], target)


# ---------------------------------------------------------------------------
# Gram / style terms

class GramMatrix(NamedTuple):
    matrix: np.ndarray
    count: int  # masked positions M


def gram(features, lmask):
    features = np.asarray(features, dtype=np.float64)
    grid = lmask.grid if isinstance(lmask, LayerMask) else np.asarray(lmask, dtype=bool)
    if grid.shape != features.shape[1:]:
        raise DimensionError(f"mask {grid.shape} does not match features {features.shape[1:]}")
    m = int(grid.sum())
    if m == 0:
        layer = lmask.layer if isinstance(lmask, LayerMask) else "?"
        raise DegenerateRegionError("region", f"empty mask at layer {layer!r}")
    F = features[:, grid]
    return GramMatrix(F @ F.T / m, m)


@dataclass
class StyleTarget:
    layers: list  # of (layer, LayerMask for the optimized image, reference Gram)
    skipped: list = field(default_factory=list)


def style_target(R_feats, mask_b, mask_r, layers, geometry=None, region="region"):
    """Reference Grams per layer. Layers where a projected mask vanishes are skipped."""
    geometry = geometry if geometry is not None else R_feats
    entries, skipped = [], []
    for layer in layers:
        lb = project_mask(mask_b, layer, geometry)
        lr = project_mask(mask_r, layer, R_feats)
        if lb.count == 0 or lr.count == 0:
            skipped.append(layer)
            continue
        entries.append((layer, lb, gram(R_feats[layer], lr).matrix))
    if not entries:
        raise DegenerateRegionError(region, f"projected masks are empty at every style layer {list(layers)}")
    if skipped:
        log.info("region %s: no masked cells at layers %s, skipped", region, skipped)
    return StyleTarget(entries, skipped)


def style_loss(A_feats, target):
    total = 0.0
    cots = {}
    for layer, lb, g_ref in target.layers:
        act = A_feats[layer]
        n = act.shape[0]
        F = act[:, lb.grid]
        m = F.shape[1]
        diff = F @ F.T / m - g_ref
        total += float(np.sum(diff * diff)) / (4.0 * n * n)
        cot = np.zeros_like(act)
        cot[:, lb.grid] = diff @ F / (m * n * n)
        cots[layer] = cot
    return total, cots


def style_region_loss(A_feats, R_feats, mask_b, mask_r, layers=DEFAULT_STYLE_LAYERS, region="region"):
    target = style_target(R_feats, mask_b, mask_r, layers, geometry=A_feats, region=region)
    return style_loss(A_feats, target)


# ---------------------------------------------------------------------------
# total variation

def tv_loss(A, beta=2.0):
    """Sum over pixels and channels of (dx^2 + dy^2)^(beta/2), forward differences."""
    A = np.asarray(A, dtype=np.float64)
    if beta < 1:
        raise ConfigError("tv beta must be >= 1")
    dx = np.zeros_like(A)
    dy = np.zeros_like(A)
    dx[:, :, :-1] = A[:, :, 1:] - A[:, :, :-1]
    dy[:, :-1, :] = A[:, 1:, :] - A[:, :-1, :]
    s = dx * dx + dy * dy
    if beta == 2.0:
        loss = float(s.sum())
        coef = np.full_like(s, 2.0)
    else:
        loss = float(np.sum(s ** (beta / 2)))
        pos = s > 0
        coef = np.zeros_like(s)
        coef[pos] = beta * s[pos] ** (beta / 2 - 1)
    gx, gy = coef * dx, coef * dy
    grad = np.zeros_like(A)
    grad[:, :, 1:] += gx[:, :, :-1]
    grad[:, :, :-1] -= gx[:, :, :-1]
    grad[:, 1:, :] += gy[:, :-1, :]
    grad[:, :-1, :] -= gy[:, :-1, :]
    return loss, grad


# ---------------------------------------------------------------------------
# assembled objective

class ObjectiveValue(NamedTuple):
    loss: float
    grad: np.ndarray
    terms: dict  # unweighted value per term name


def _add(cots, layer, cot, weight):
    if weight == 0:
        return
    if layer in cots:
        cots[layer] = cots[layer] + weight * cot
    else:
        cots[layer] = weight * cot


class Objective:
    """Weighted sum of all cosmetic, structure and smoothness terms.

    Reference and before-face features are computed once on construction.
    ``region_masks`` maps region name to ``(mask_before, mask_reference)``;
    a missing region drops its term and is listed in ``skipped``.
    """

    def __init__(self, net, before, reference, region_masks, config):
        config.check_network(net)
        self.net = net
        self.config = config
        self.before = np.asarray(before, dtype=np.float64)
        reference = np.asarray(reference, dtype=np.float64)
        if self.before.shape != reference.shape:
            raise DimensionError(f"before {self.before.shape} and reference {reference.shape} differ in extent")
        layers = (*config.style_layers, config.content_layer)
        self.deepest = max(layers, key=net.index)
        self.B_feats = forward_all(net, self.before, upto=self.deepest)
        self.R_feats = forward_all(net, reference, upto=self.deepest)
        self.skipped = []
        self.content_targets = {}
        self.style_targets = {}
        for region in REGIONS:
            pair = region_masks.get(region)
            if pair is None:
                log.warning("region %s has no masks; its term is skipped", region)
                self.skipped.append(region)
                continue
            mask_b, mask_r = (np.asarray(m, dtype=bool) for m in pair)
            for m in (mask_b, mask_r):
                if m.shape != self.before.shape[1:]:
                    raise DimensionError(f"region {region!r}: mask {m.shape} != image {self.before.shape[1:]}")
            if region.startswith("eyeshadow"):
                self.content_targets[region] = content_target(
                    self.R_feats, mask_b, mask_r, config.content_layer, geometry=self.B_feats, region=region)
            else:
                self.style_targets[region] = style_target(
                    self.R_feats, mask_b, mask_r, config.style_layers, geometry=self.B_feats, region=region)
        full = np.ones(self.before.shape[1:], dtype=bool)
        self.content_targets["structure"] = content_target(
            self.B_feats, full, full, config.content_layer, region="structure")
        unknown = set(region_masks) - set(REGIONS)
        if unknown:
            raise ConfigError(f"unknown region names {sorted(unknown)}; expected {REGIONS}")

    def evaluate(self, A):
        A = np.asarray(A, dtype=np.float64)
        if A.shape != self.before.shape:
            raise DimensionError(f"image {A.shape} != {self.before.shape}")
        cfg = self.config
        feats = forward_all(self.net, A, upto=self.deepest)
        terms = {}
        cots = {}
        for name, target in self.content_targets.items():
            value, cot = content_loss(feats[target.layer], target)
            terms[name] = value
            _add(cots, target.layer, cot, cfg.weight_for(name))
        for name, target in self.style_targets.items():
            value, layer_cots = style_loss(feats, target)
            terms[name] = value
            for layer, cot in layer_cots.items():
                _add(cots, layer, cot, cfg.weight_for(name))
        tv, tv_grad = tv_loss(A, cfg.tv_beta)
        terms["tv"] = tv
        loss = sum(cfg.weight_for(name) * value for name, value in terms.items())
        grad = backward_to_image(self.net, feats, cots)
        if cfg.tv_weight:
            grad = grad + cfg.tv_weight * tv_grad
        return ObjectiveValue(float(loss), grad, terms)

    __call__ = evaluate


def total_objective(A, B, R, region_masks, config, net):
    """One-shot evaluation returning ``(loss, gradient)``."""
    value = Objective(net, B, R, region_masks, config).evaluate(A)
    return value.loss, value.grad
