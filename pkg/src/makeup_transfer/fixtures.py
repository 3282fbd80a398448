"""Synthetic cartoon face pairs for tests, demos and the self-check.

Geometry is laid out on a 32-pixel design grid and scaled to ``size``.
Images are quantized to 8 bits so that they survive a PNG round trip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import parsing as P

BEFORE_COLORS = {
    "background": (0.30, 0.40, 0.50), "skin": (0.86, 0.70, 0.60), "eye": (0.15, 0.12, 0.10),
    "brow": (0.35, 0.24, 0.18), "lip": (0.80, 0.56, 0.55), "mouth": (0.35, 0.12, 0.12),
}
REFERENCE_COLORS = {
    "background": (0.45, 0.45, 0.40), "skin": (0.96, 0.82, 0.74), "eye": (0.12, 0.10, 0.10),
    "brow": (0.25, 0.16, 0.12), "lip": (0.78, 0.10, 0.22), "mouth": (0.30, 0.05, 0.08),
    "shadow": (0.52, 0.28, 0.62),
}


@dataclass
class FaceLayout:
    face: tuple = (16.0, 17.0, 12.0, 14.5)          # cx, cy, rx, ry
    eye_dx: float = 5.5                              # eye centre offset from the midline
    eye_y: float = 13.0
    eye_r: tuple = (2.8, 1.3)
    brow_y: float = 8.5
    brow_half: float = 3.6
    shadow_h: float = 2.6                            # eye-shadow height above the eye
    lip_y: float = 23.0
    lip_half: float = 5.0
    lip_h: tuple = (2.6, 2.8)                        # upper, lower


BEFORE_LAYOUT = FaceLayout()
REFERENCE_LAYOUT = FaceLayout(face=(16.0, 16.5, 12.5, 14.0), eye_dx=6.0, eye_y=12.5, eye_r=(3.2, 1.5),
                              brow_y=7.5, brow_half=4.0, lip_y=23.0, lip_half=5.5, lip_h=(2.8, 3.2))


@dataclass
class FacePair:
    before: np.ndarray
    reference: np.ndarray
    before_labels: np.ndarray
    reference_labels: np.ndarray
    before_landmarks: dict
    reference_landmarks: dict

    @property
    def labelmaps(self):
        return self.before_labels, self.reference_labels

    @property
    def landmarks(self):
        return self.before_landmarks, self.reference_landmarks


def _ellipse(xs, ys, cx, cy, rx, ry):
    return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0


def _draw(layout, size, with_shadow):
    s = size / 32.0
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    xs, ys = (xs + 0.5) / s - 0.5, (ys + 0.5) / s - 0.5  # design-grid coordinates
    labels = np.zeros((size, size), dtype=np.uint8)
    cx, cy, rx, ry = layout.face
    labels[_ellipse(xs, ys, cx, cy, rx, ry)] = P.FACE
    landmarks = {}
    for side, sign, eye, brow, shadow, key in (
            ("l", -1, P.EYE_L, P.EYEBROW_L, P.EYESHADOW_L, "left_eye_region"),
            ("r", 1, P.EYE_R, P.EYEBROW_R, P.EYESHADOW_R, "right_eye_region")):
        ex = cx + sign * layout.eye_dx
        erx, ery = layout.eye_r
        if with_shadow:
            lid = _ellipse(xs, ys, ex, layout.eye_y - 0.4, erx + 0.8, ery + layout.shadow_h)
            labels[lid & (ys < layout.eye_y)] = shadow
        bx = ex + sign * 0.3
        brow_mask = (np.abs(xs - bx) <= layout.brow_half) & (np.abs(ys - (layout.brow_y - 0.15 * ((xs - bx) ** 2) / layout.brow_half)) <= 0.7)
        labels[brow_mask] = brow
        labels[_ellipse(xs, ys, ex, layout.eye_y, erx, ery)] = eye
        inner = ex - sign * erx
        outer = ex + sign * erx
        brow_top = layout.brow_y - 0.7
        brow_bottom = layout.brow_y + 0.7
        pts = [
            (inner, layout.eye_y), (ex, layout.eye_y - ery), (ex, layout.eye_y + ery), (outer, layout.eye_y),
            (bx - sign * layout.brow_half, layout.brow_y - 0.15 * layout.brow_half),
            (bx, brow_top), (bx, brow_bottom),
            (bx + sign * layout.brow_half, layout.brow_y - 0.15 * layout.brow_half),
        ]
        landmarks[key] = (np.array(pts) + 0.5) * s - 0.5
    up_h, low_h = layout.lip_h
    upper = _ellipse(xs, ys, cx, layout.lip_y, layout.lip_half, up_h) & (ys < layout.lip_y)
    lower = _ellipse(xs, ys, cx, layout.lip_y, layout.lip_half * 0.9, low_h) & (ys >= layout.lip_y)
    labels[upper] = P.LIP_UPPER
    labels[lower] = P.LIP_LOWER
    labels[(np.abs(ys - layout.lip_y) < 0.35 / max(s, 1.0) + 0.15) & (np.abs(xs - cx) < layout.lip_half * 0.6)] = P.INNER_MOUTH
    return labels, landmarks


def _paint(labels, colors, rng):
    h, w = labels.shape
    img = np.empty((3, h, w))
    grad = np.linspace(-0.05, 0.05, h)[:, None]
    table = {
        P.BACKGROUND: "background", P.FACE: "skin", P.EYE_L: "eye", P.EYE_R: "eye",
        P.EYEBROW_L: "brow", P.EYEBROW_R: "brow", P.INNER_MOUTH: "mouth",
        P.LIP_UPPER: "lip", P.LIP_LOWER: "lip", P.EYESHADOW_L: "shadow", P.EYESHADOW_R: "shadow",
    }
    for label, key in table.items():
        sel = labels == label
        if not sel.any():
            continue
        for c in range(3):
            img[c][sel] = colors[key][c]
    img += grad[None] * (labels == P.BACKGROUND)[None]
    img += rng.normal(0.0, 0.02, size=img.shape)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def make_face_pair(size=32, seed=0):
    """Before face without makeup and a reference face with eye shadow, lipstick and foundation."""
    rng = np.random.default_rng(seed)
    before_labels, before_lm = _draw(BEFORE_LAYOUT, size, with_shadow=False)
    reference_labels, reference_lm = _draw(REFERENCE_LAYOUT, size, with_shadow=True)
    before = _paint(before_labels, BEFORE_COLORS, rng)
    reference = _paint(reference_labels, REFERENCE_COLORS, rng)
    return FacePair(before, reference, before_labels, reference_labels, before_lm, reference_lm)


def self_pair(size=32, seed=0):
    """The reference face paired with itself (self-transfer)."""
    pair = make_face_pair(size, seed)
    return FacePair(pair.reference, pair.reference.copy(), pair.reference_labels, pair.reference_labels.copy(),
                    pair.reference_landmarks, {k: v.copy() for k, v in pair.reference_landmarks.items()})


def make_index_records(n=16, dims=(6, 4), seed=0):
    """Random ``fc6``/``fc7`` embedding records with ids ``ref000``, ``ref001``, ..."""
    rng = np.random.default_rng(seed)
    return [{"id": f"ref{i:03d}",
             "fc6": np.round(rng.normal(size=dims[0]), 6).tolist(),
             "fc7": np.round(rng.normal(size=dims[1]), 6).tolist()} for i in range(n)]
