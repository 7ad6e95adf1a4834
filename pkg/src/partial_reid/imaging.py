"""Image container and the geometric primitives shared by every stage.

Conventions: pixel centers sit at integer coordinates, origin top-left,
x to the right and y downward. Normalized rectangles are fractions of
(width, height). All resampling is bilinear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidTransformError, OutOfBoundsError, ShapeError

# Slack on the preimage bounds test. Absorbs round-off in estimated transforms
# (e.g. scale 1 - 1e-16) that would otherwise invalidate a whole border column.
BOUNDS_EPS = 1e-9


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Float image with values in [0, 1], stored as an (H, W, C) array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ShapeError(f"expected (H, W, 1|3) array, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeError("image must be at least 1x1")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("image values must be finite and within [0, 1]")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    @classmethod
    def constant(cls, width: int, height: int, value: float = 0.0, channels: int = 3) -> "ImageBuffer":
        return cls(np.full((height, width, channels), float(value)))


@dataclass(frozen=True, eq=False)
class ValidityMask:
    """Per-pixel flag: True where the pixel was observed, False where padded."""

    valid: np.ndarray

    def __post_init__(self):
        valid = np.array(self.valid, dtype=bool)
        if valid.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {valid.shape}")
        object.__setattr__(self, "valid", _readonly(valid))

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ValidityMask):
            return NotImplemented
        return bool(np.array_equal(self.valid, other.valid))

    @classmethod
    def all_valid(cls, width: int, height: int) -> "ValidityMask":
        return cls(np.ones((height, width), dtype=bool))

    def matches(self, image: ImageBuffer) -> bool:
        return self.valid.shape == image.data.shape[:2]


@dataclass(frozen=True)
class SimilarityTransform:
    """Uniform scale plus translation: (x, y) -> (scale*x + tx, scale*y + ty)."""

    scale: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise InvalidTransformError(f"scale must be positive, got {self.scale}")
        if not (math.isfinite(self.tx) and math.isfinite(self.ty)):
            raise InvalidTransformError("translation must be finite")

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts + np.array([self.tx, self.ty])

    def inverse_apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - np.array([self.tx, self.ty])) / self.scale

    def compose(self, first: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equal to applying ``first`` and then ``self``."""
        return SimilarityTransform(
            self.scale * first.scale,
            self.scale * first.tx + self.tx,
            self.scale * first.ty + self.ty,
        )


@dataclass(frozen=True)
class CropRect:
    """Axis-aligned rectangle in normalized frame coordinates."""

    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    def within_unit_square(self, tol: float = 1e-12) -> bool:
        return (
            self.w > 0 and self.h > 0
            and self.x >= -tol and self.y >= -tol
            and self.x + self.w <= 1 + tol
            and self.y + self.h <= 1 + tol
        )

    def compose(self, inner: "CropRect") -> "CropRect":
        """Rect of ``inner`` (relative to self) expressed in the parent frame."""
        return CropRect(
            self.x + inner.x * self.w,
            self.y + inner.y * self.h,
            inner.w * self.w,
            inner.h * self.h,
        )

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, d: dict) -> "CropRect":
        return cls(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"]))


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _bilinear(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``data`` at in-range coordinates; returns (..., C)."""
    h, w = data.shape[:2]
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    np.clip(x0, 0, w - 1, out=x0)
    np.clip(y0, 0, h - 1, out=y0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    top = data[y0, x0] * (1.0 - fx) + data[y0, x1] * fx
    bottom = data[y1, x0] * (1.0 - fx) + data[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def preimage_grid(t: SimilarityTransform, out_width: int, out_height: int):
    u, v = np.meshgrid(np.arange(out_width, dtype=np.float64), np.arange(out_height, dtype=np.float64))
    return (u - t.tx) / t.scale, (v - t.ty) / t.scale


def warp_similarity(src: ImageBuffer, t: SimilarityTransform, out_width: int, out_height: int):
    """Resample ``src`` into an ``out_width`` x ``out_height`` canvas under ``t``.

    Each output pixel p takes the bilinear sample of ``src`` at t^-1(p).
    Pixels whose preimage falls outside [0, W-1] x [0, H-1] are zero and
    flagged invalid in the returned mask.
    """
    if not isinstance(t, SimilarityTransform):
        t = SimilarityTransform(t.scale, t.tx, t.ty)
    if out_width <= 0 or out_height <= 0:
        raise ValueError("output dimensions must be positive")
    xs, ys = preimage_grid(t, out_width, out_height)
    w, h = src.width, src.height
    valid = (xs >= -BOUNDS_EPS) & (xs <= w - 1 + BOUNDS_EPS) & (ys >= -BOUNDS_EPS) & (ys <= h - 1 + BOUNDS_EPS)
    out = _bilinear(src.data, np.clip(xs, 0, w - 1), np.clip(ys, 0, h - 1))
    out[~valid] = 0.0
    # Bilinear weights can overshoot [0, 1] by an ulp.
    np.clip(out, 0.0, 1.0, out=out)
    return ImageBuffer(out), ValidityMask(valid)


def _corner_aligned(n_out: int, n_src: int) -> np.ndarray:
    if n_out == 1:
        return np.array([(n_src - 1) / 2.0])
    return np.arange(n_out, dtype=np.float64) * (n_src - 1) / (n_out - 1)


def resize(src: ImageBuffer, out_width: int, out_height: int) -> ImageBuffer:
    """Bilinear resize with corner-aligned sampling (first/last pixels map onto each other)."""
    if out_width <= 0 or out_height <= 0:
        raise ValueError("output dimensions must be positive")
    if (out_width, out_height) == (src.width, src.height):
        return src
    xs = _corner_aligned(out_width, src.width)
    ys = _corner_aligned(out_height, src.height)
    gx, gy = np.meshgrid(xs, ys)
    out = _bilinear(src.data, gx, gy)
    np.clip(out, 0.0, 1.0, out=out)
    return ImageBuffer(out)


def crop_window(width: int, height: int, rect: CropRect) -> tuple[int, int, int, int]:
    """Pixel window (x0, y0, w, h) for a normalized rect."""
    if not rect.within_unit_square():
        raise OutOfBoundsError(f"crop rect {rect} leaves the unit square")
    cw = max(1, round_half_up(rect.w * width))
    ch = max(1, round_half_up(rect.h * height))
    x0 = min(round_half_up(rect.x * width), width - cw)
    y0 = min(round_half_up(rect.y * height), height - ch)
    return max(0, x0), max(0, y0), cw, ch


def crop(src: ImageBuffer, rect: CropRect) -> ImageBuffer:
    x0, y0, cw, ch = crop_window(src.width, src.height, rect)
    return ImageBuffer(src.data[y0:y0 + ch, x0:x0 + cw].copy())


# --- I/O -------------------------------------------------------------------

def to_uint8(data: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(data) * 255.0 + 0.5).astype(np.uint8)


def load_image(path) -> ImageBuffer:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return ImageBuffer(arr)


def save_image(image: ImageBuffer, path) -> None:
    from PIL import Image

    path = Path(path)
    arr = to_uint8(image.data)
    if image.channels == 1:
        im = Image.fromarray(arr[:, :, 0])
    else:
        im = Image.fromarray(arr)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pgm", ".pnm") else "PNG"
    im.save(path, format=fmt)


def save_mask(mask: ValidityMask, path) -> None:
    from PIL import Image

    Image.fromarray(mask.valid.astype(np.uint8) * 255).save(path, format="PNG")


def load_mask(path) -> ValidityMask:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return ValidityMask(arr >= 128)
