"""PNG image and mask I/O. Internal images are float64 (3, H, W) in [0, 1]."""

import numpy as np
from PIL import Image

from .errors import ParseError


def read_image(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise ParseError(f"{path}: cannot read image ({exc})") from None
    return arr.transpose(2, 0, 1) / 255.0


def to_uint8(image):
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def write_image(image, path):
    Image.fromarray(to_uint8(np.asarray(image)), mode="RGB").save(path)


def write_mask(mask, path):
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255, mode="L").save(path)


def read_mask(path):
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L")) > 127
    except OSError as exc:
        raise ParseError(f"{path}: cannot read mask ({exc})") from None
