"""Thin-plate-spline warping of eye-shadow masks between faces.

Points are (x, y) pixel coordinates with the origin at the top-left pixel
centre; x runs along columns and y along rows.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, NumericalError, ParseError

NUM_LANDMARKS = 8
# eye: inner, upper-middle, lower-middle, outer; then the same for the eyebrow
LANDMARK_ORDER = (
    "eye_inner", "eye_upper_mid", "eye_lower_mid", "eye_outer",
    "brow_inner", "brow_upper_mid", "brow_lower_mid", "brow_outer",
)
REGION_KEYS = ("left_eye_region", "right_eye_region")


def check_landmarks(points, extent=None):
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (NUM_LANDMARKS, 2):
        raise InputError(f"expected {NUM_LANDMARKS} (x, y) landmarks, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InputError("landmarks must be finite")
    if extent is not None:
        h, w = extent
        if np.any(pts[:, 0] < 0) or np.any(pts[:, 0] > w - 1) or np.any(pts[:, 1] < 0) or np.any(pts[:, 1] > h - 1):
            raise InputError(f"landmarks fall outside the {h}x{w} image")
    centred = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise InputError("landmarks are collinear")
    return pts


def tps_kernel(r2):
    """U as a function of squared distance: r^2 log r^2, with U(0) = 0."""
    r2 = np.asarray(r2, dtype=np.float64)
    out = np.zeros_like(r2)
    nz = r2 > 0
    out[nz] = r2[nz] * np.log(r2[nz])
    return out


def _sqdist(a, b):
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def default_regularization(src):
    src = np.asarray(src, dtype=np.float64)
    return 1e-6 * float(np.mean(_sqdist(src, src)))


@dataclass(frozen=True)
class TPSWarp:
    affine: np.ndarray   # (2, 3): rows map (1, x, y) to x' and y'
    radial: np.ndarray   # (n, 2)
    src: np.ndarray      # (n, 2) control points
    dst: np.ndarray      # (n, 2) their targets
    reg: float

    def __call__(self, points):
        return tps_apply(self, points)

    def inverse(self):
        return tps_fit(self.dst, self.src, self.reg)


def tps_fit(src, dst, reg=None):
    """Fit the spline that carries ``src`` onto ``dst``.

    ``reg`` is added to the kernel diagonal; 0 gives exact interpolation
    and ``None`` uses a small default scaled to the landmark spread.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape:
        raise InputError(f"landmark sets must be matching (n, 2) arrays, got {src.shape} and {dst.shape}")
    if reg is None:
        reg = default_regularization(src)
    if reg < 0:
        raise InputError("regularization must be >= 0")
    n = len(src)
    K = tps_kernel(_sqdist(src, src)) + reg * np.eye(n)
    P = np.hstack([np.ones((n, 1)), src])
    L = np.zeros((n + 3, n + 3))
    L[:n, :n] = K
    L[:n, n:] = P
    L[n:, :n] = P.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = dst
    if np.linalg.cond(L) > 1e13:
        raise NumericalError("thin-plate-spline system is singular; use reg > 0 or non-degenerate landmarks")
    sol = np.linalg.solve(L, rhs)
    return TPSWarp(affine=sol[n:].T.copy(), radial=sol[:n].copy(), src=src.copy(), dst=dst.copy(),
                   reg=float(reg))


def tps_apply(warp, points):
    """Map a single (x, y) point or an (m, 2) array of points."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    out = warp.affine[:, 0] + pts @ warp.affine[:, 1:].T
    out += tps_kernel(_sqdist(pts, warp.src)) @ warp.radial
    return out[0] if single else out


def warp_mask(warp, mask, out_extent=None):
    """Carry a boolean mask through ``warp`` by inverse nearest-pixel sampling."""
    mask = np.asarray(mask, dtype=bool)
    out_extent = tuple(out_extent) if out_extent is not None else mask.shape
    if not mask.any():
        warnings.warn("warp_mask: empty input mask, returning empty mask", RuntimeWarning, stacklevel=2)
        return np.zeros(out_extent, dtype=bool)
    inv = warp.inverse()
    h, w = out_extent
    ys, xs = np.mgrid[0:h, 0:w]
    q = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    p = np.rint(tps_apply(inv, q)).astype(np.int64)
    px, py = p[:, 0], p[:, 1]
    inside = (px >= 0) & (px < mask.shape[1]) & (py >= 0) & (py < mask.shape[0])
    out = np.zeros(h * w, dtype=bool)
    out[inside] = mask[py[inside], px[inside]]
    return out.reshape(h, w)


def eye_shadow_mask_for_before(ref_mask, ref_lm, before_lm, out_extent=None, reg=None):
    """Warp the reference eye-shadow mask into the before-face frame."""
    ref_lm = check_landmarks(ref_lm)
    before_lm = check_landmarks(before_lm)
    return warp_mask(tps_fit(ref_lm, before_lm, reg), ref_mask, out_extent)


def read_landmarks(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"{path}: cannot read landmark file ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    out = {}
    for key in REGION_KEYS:
        if not isinstance(doc, dict) or key not in doc:
            raise ParseError(f"{path}: missing field {key!r}")
        try:
            out[key] = check_landmarks(doc[key])
        except (InputError, ValueError, TypeError) as exc:
            raise ParseError(f"{path}: field {key!r}: {exc}") from None
    return out


def write_landmarks(landmarks, path):
    """One ``[x, y]`` point per line; floats are written with full precision."""
    blocks = []
    for key in REGION_KEYS:
        rows = ",\n".join(f"  [{x!r}, {y!r}]" for x, y in np.asarray(landmarks[key], dtype=np.float64).tolist())
        blocks.append(f" {json.dumps(key)}: [\n{rows}\n ]")
    Path(path).write_text("{\n" + ",\n".join(blocks) + "\n}\n")
