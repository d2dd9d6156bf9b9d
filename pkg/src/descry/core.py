"""Shared image containers, color conversion, bilinear sampling, RNG and PNG I/O.

Conventions used everywhere in this package:

* pixel coordinates are (u, v) = (column, row), origin at the top-left
  pixel center
* image data is a float array of shape (H, W, C) with values in [0, 1]
* out-of-bounds reads fill with 0 (black)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage


class ImageFormatError(ValueError):
    """Raised when an image file cannot be decoded as 8-bit PNG."""


@dataclass(frozen=True)
class Image:
    """Immutable float image, shape (H, W, C), values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ValueError(f"image must be (H, W, 1|3), got shape {self.data.shape}")
        d = np.ascontiguousarray(d, dtype=np.float32)
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class Rng:
    """Deterministic random stream keyed by (seed, stream).

    Child streams are derived from the parent's key path plus an index, so
    distinct indices never collide. The underlying generator is single-owner:
    do not share one Rng across concurrent tasks, spawn children instead.
    """

    seed: int
    stream: int = 0
    _key: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if self._key is None:
            self._key = (self.stream,)
        self.np = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=self._key))
        )

    def child(self, index: int) -> "Rng":
        return Rng(self.seed, self.stream, _key=self._key + (int(index),))


def load_image(path) -> Image:
    """Load an 8-bit PNG (RGB or grayscale) and scale values by 1/255."""
    try:
        with PILImage.open(path) as im:
            if im.format != "PNG":
                raise ImageFormatError(f"{path}: not a PNG file (format={im.format})")
            if im.mode not in ("L", "RGB"):
                raise ImageFormatError(
                    f"{path}: unsupported PNG mode {im.mode!r}, need 8-bit L or RGB"
                )
            arr = np.asarray(im, dtype=np.uint8)
    except ImageFormatError:
        raise
    except FileNotFoundError:
        raise
    except Exception as e:  # PIL raises various decode errors
        raise ImageFormatError(f"{path}: cannot decode PNG ({e})") from e
    return Image(arr.astype(np.float32) / 255.0)


def save_image(img: Image, path) -> None:
    """Write as 8-bit PNG; value 1.0 maps to byte 255."""
    arr = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[2] == 1:
        pil = PILImage.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(arr, mode="RGB")
    pil.save(path, format="PNG")


def bilinear_sample(img: Image, u: float, v: float) -> np.ndarray:
    """Bilinear interpolation at subpixel (u, v); out-of-bounds neighbors read 0."""
    out = sample_many(img.data, np.asarray([u], dtype=np.float64), np.asarray([v], dtype=np.float64))
    return out[0]


def sample_many(data: np.ndarray, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Vectorized bilinear sampling. data is (H, W, C); returns (N, C)."""
    h, w = data.shape[:2]
    u0 = np.floor(us).astype(np.int64)
    v0 = np.floor(vs).astype(np.int64)
    fu = (us - u0)[:, None]
    fv = (vs - v0)[:, None]

    def tap(ui, vi):
        inside = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
        uc = np.clip(ui, 0, w - 1)
        vc = np.clip(vi, 0, h - 1)
        vals = data[vc, uc, :]
        return np.where(inside[:, None], vals, 0.0)

    return (
        tap(u0, v0) * (1 - fu) * (1 - fv)
        + tap(u0 + 1, v0) * fu * (1 - fv)
        + tap(u0, v0 + 1) * (1 - fu) * fv
        + tap(u0 + 1, v0 + 1) * fu * fv
    )


def rgb_to_hsv(img: Image) -> Image:
    """RGB -> HSV with h, s, v all in [0, 1]."""
    if img.channels != 3:
        raise ValueError(f"rgb_to_hsv needs 3 channels, got {img.channels}")
    return Image(_rgb_to_hsv_array(img.data))


def hsv_to_rgb(img: Image) -> Image:
    """HSV -> RGB, inverse of rgb_to_hsv."""
    if img.channels != 3:
        raise ValueError(f"hsv_to_rgb needs 3 channels, got {img.channels}")
    return Image(_hsv_to_rgb_array(img.data))


def _rgb_to_hsv_array(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    v = maxc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-20), 0.0)

    safe = np.maximum(delta, 1e-20)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1).astype(rgb.dtype)


def _hsv_to_rgb_array(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6

    choices = [
        (v, t, p),
        (q, v, p),
        (p, v, t),
        (p, q, v),
        (t, p, v),
        (v, p, q),
    ]
    r = np.select([i == k for k in range(6)], [c[0] for c in choices])
    g = np.select([i == k for k in range(6)], [c[1] for c in choices])
    b = np.select([i == k for k in range(6)], [c[2] for c in choices])
    return np.stack([r, g, b], axis=-1).astype(hsv.dtype)


def luma(rgb: np.ndarray) -> np.ndarray:
    """Rec.601 luma, used by contrast/saturation jitter."""
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
