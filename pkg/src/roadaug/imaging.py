"""Image buffers in [0, 1], PNG/JPEG I/O, cropping, bilinear resize, grayscale."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (ContractError, CorruptImageError, ImageNotFoundError,
                     UnsupportedFormatError)

LUMA = np.array([0.299, 0.587, 0.114])
READ_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass(eq=False)
class ImageBuffer:
    """``pixels`` has shape (height, width, channels) with channels 1 or 3."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ContractError(f"image must be HxWx1 or HxWx3, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ContractError(f"image dimensions must be >= 1, got {px.shape[:2]}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ContractError("pixel values must lie in [0, 1]")
        self.pixels = px

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return self.pixels.shape[2]

    @property
    def gray(self):
        """2-D view of a single-channel image."""
        if self.channels != 1:
            raise ContractError("gray view requires a 1-channel image")
        return self.pixels[:, :, 0]

    def __eq__(self, other):
        return isinstance(other, ImageBuffer) and np.array_equal(self.pixels, other.pixels)

    @classmethod
    def clipped(cls, pixels):
        return cls(np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0))


@dataclass(frozen=True)
class Box2D:
    """Integer pixel box, half-open on the max edges."""

    xmin: int
    ymin: int
    xmax: int
    ymax: int

    @property
    def width(self):
        return self.xmax - self.xmin

    @property
    def height(self):
        return self.ymax - self.ymin

    def validate(self, width, height):
        if not (0 <= self.xmin < self.xmax <= width and 0 <= self.ymin < self.ymax <= height):
            raise ContractError(f"box {self} invalid for a {width}x{height} image")
        return self

    def as_dict(self):
        return {"xmin": self.xmin, "ymin": self.ymin, "xmax": self.xmax, "ymax": self.ymax}


def load_image(path):
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ImageNotFoundError(f"image not found: {path}")
    suffix = os.path.splitext(path)[1].lower()
    if suffix not in READ_SUFFIXES:
        raise UnsupportedFormatError(f"unsupported image format '{suffix}': {path}")
    if os.path.getsize(path) == 0:
        raise CorruptImageError(f"empty image file: {path}")
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise UnsupportedFormatError(f"unsupported image format {im.format}: {path}")
            if im.mode in ("I;16", "I", "F"):
                raise UnsupportedFormatError(f"unsupported bit depth ({im.mode}): {path}")
            im.load()
            if im.mode != "L":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise CorruptImageError(f"cannot decode image {path}: {exc}") from exc
    return ImageBuffer(arr.astype(np.float64) / 255.0)


def to_uint8(image):
    return np.round(image.pixels * 255.0).astype(np.uint8)


def save_image(image, path):
    """Write an 8-bit PNG. Values that are multiples of 1/255 round-trip exactly."""
    path = os.fspath(path)
    if os.path.splitext(path)[1].lower() != ".png":
        raise UnsupportedFormatError(f"only PNG output is supported: {path}")
    arr = to_uint8(image)
    im = Image.fromarray(arr[:, :, 0] if image.channels == 1 else arr)
    im.save(path, format="PNG")


def crop(image, box):
    box.validate(image.width, image.height)
    return ImageBuffer(image.pixels[box.ymin:box.ymax, box.xmin:box.xmax, :].copy())


def _axis_weights(n_in, n_out):
    # half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(image, out_h, out_w):
    if out_h < 1 or out_w < 1:
        raise ContractError(f"output size must be >= 1, got {out_h}x{out_w}")
    px = image.pixels
    if (out_h, out_w) == px.shape[:2]:
        return ImageBuffer(px.copy())
    y0, y1, fy = _axis_weights(px.shape[0], out_h)
    x0, x1, fx = _axis_weights(px.shape[1], out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    # lerp form keeps constant regions exactly constant
    top = px[y0][:, x0] + fx * (px[y0][:, x1] - px[y0][:, x0])
    bot = px[y1][:, x0] + fx * (px[y1][:, x1] - px[y1][:, x0])
    out = top + fy * (bot - top)
    return ImageBuffer(np.clip(out, px.min(), px.max()))


def to_gray(image):
    if image.channels == 1:
        return image
    return ImageBuffer.clipped(image.pixels @ LUMA)


def gray_square(image, side):
    """Grayscale, resized to side x side, as a 2-D array."""
    return resize_bilinear(to_gray(image), side, side).gray
