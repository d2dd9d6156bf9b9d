"""Invertible geometric transforms (homographies) and photometric color jitter.

Affine, perspective and resize&crop are all represented as 3x3 homographies
over pixel coordinates, so tracking a pixel through any chain of
augmentations is a single matrix product. Color jitter never moves pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import Image, Rng, luma, _rgb_to_hsv_array, _hsv_to_rgb_array, sample_many


class SingularTransformError(ValueError):
    """Raised for non-invertible homographies or points mapped to infinity."""


def identity() -> np.ndarray:
    return np.eye(3, dtype=np.float64)


def _normalize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if abs(m[2, 2]) > 1e-12:
        m = m / m[2, 2]
    return m


def make_affine(center: Tuple[float, float], angle: float, scale: float) -> np.ndarray:
    """Rotation by `angle` degrees and uniform scaling about `center`.

    H = T(center) @ S(scale) @ R(angle) @ T(-center), y axis pointing down.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    cx, cy = center
    a = np.deg2rad(angle)
    c, s = np.cos(a), np.sin(a)
    rs = np.array(
        [[scale * c, -scale * s, 0.0], [scale * s, scale * c, 0.0], [0.0, 0.0, 1.0]]
    )
    t_fwd = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])
    t_back = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    return _normalize(t_fwd @ rs @ t_back)


def solve_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Exact 4-point homography mapping src[i] -> dst[i] via the 8x8 system."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ValueError("solve_homography needs exactly 4 source and 4 target points")
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (xp, yp)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -x * xp, -y * xp]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -x * yp, -y * yp]
        b[2 * i] = xp
        b[2 * i + 1] = yp
    try:
        h8 = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as e:
        raise SingularTransformError(f"degenerate corner configuration: {e}") from e
    h = np.append(h8, 1.0).reshape(3, 3)
    if abs(np.linalg.det(h)) < 1e-12:
        raise SingularTransformError("degenerate corner configuration: singular result")
    return h


def make_perspective(width: int, height: int, distortion_scale: float, rng: Rng) -> np.ndarray:
    """Random perspective warp displacing each image corner inward.

    Offsets are uniform in [0, d*W/2] x [0, d*H/2] per corner; the result is
    the exact homography mapping original corners to displaced corners.
    """
    if width < 2 or height < 2:
        raise ValueError("make_perspective needs width, height >= 2")
    w, h = float(width), float(height)
    corners = np.array([[0.0, 0.0], [w - 1, 0.0], [w - 1, h - 1], [0.0, h - 1]])
    # inward direction per corner: (+,+), (-,+), (-,-), (+,-)
    signs = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=np.float64)
    for _ in range(16):
        du = rng.np.uniform(0.0, distortion_scale * w / 2.0, size=4)
        dv = rng.np.uniform(0.0, distortion_scale * h / 2.0, size=4)
        dst = corners + signs * np.stack([du, dv], axis=1)
        try:
            return solve_homography(corners, dst)
        except SingularTransformError:
            continue
    raise SingularTransformError("no valid perspective corner configuration in 16 tries")


def make_resized_crop(
    width: int,
    height: int,
    area_scale_range: Tuple[float, float],
    aspect_range: Tuple[float, float],
    rng: Rng,
) -> np.ndarray:
    """Random crop rectangle mapped back onto the full canvas (zoom-in).

    Crop area fraction is uniform in area_scale_range, aspect ratio
    log-uniform in aspect_range; falls back to the maximal centered square
    crop when no rectangle fits after 10 draws.
    """
    lo, hi = area_scale_range
    if not (0 < lo <= hi <= 1):
        raise ValueError(f"area_scale_range must satisfy 0 < lo <= hi <= 1, got {area_scale_range}")
    area = float(width * height)
    for _ in range(10):
        frac = rng.np.uniform(lo, hi)
        aspect = float(np.exp(rng.np.uniform(np.log(aspect_range[0]), np.log(aspect_range[1]))))
        cw = float(np.sqrt(frac * area * aspect))
        ch = float(np.sqrt(frac * area / aspect))
        if cw <= width and ch <= height:
            x0 = rng.np.uniform(0.0, width - cw)
            y0 = rng.np.uniform(0.0, height - ch)
            return _crop_to_canvas(x0, y0, cw, ch, width, height)
    side = float(min(width, height))
    return _crop_to_canvas((width - side) / 2.0, (height - side) / 2.0, side, side, width, height)


def _crop_to_canvas(x0, y0, cw, ch, width, height) -> np.ndarray:
    sx = width / cw
    sy = height / ch
    return _normalize(
        np.array([[sx, 0.0, -sx * x0], [0.0, sy, -sy * y0], [0.0, 0.0, 1.0]])
    )


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """compose(a, b) applies b first, then a."""
    return _normalize(np.asarray(a) @ np.asarray(b))


def invert(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if abs(np.linalg.det(h)) < 1e-12:
        raise SingularTransformError("homography is singular")
    return _normalize(np.linalg.inv(h))


def apply_point(h: np.ndarray, p: Sequence[float]) -> np.ndarray:
    """Map a single (u, v) point; raises on points at infinity."""
    q = np.asarray(h, dtype=np.float64) @ np.array([p[0], p[1], 1.0])
    if abs(q[2]) < 1e-12:
        raise SingularTransformError(f"point {tuple(p)} maps to infinity")
    return q[:2] / q[2]


def apply_points(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Map an (N, 2) array of points; infinities become NaN rows."""
    pts = np.asarray(pts, dtype=np.float64)
    q = pts @ np.asarray(h, dtype=np.float64)[:2, :2].T + h[:2, 2]
    w = pts @ h[2, :2] + h[2, 2]
    bad = np.abs(w) < 1e-12
    w = np.where(bad, 1.0, w)
    out = q / w[:, None]
    out[bad] = np.nan
    return out


def warp_image(img: Image, h: np.ndarray) -> Image:
    """Resample: output pixel q reads the input at invert(h)(q), fill 0 outside."""
    hinv = invert(h)
    hh, ww = img.height, img.width
    vs, us = np.mgrid[0:hh, 0:ww]
    pts = np.stack([us.ravel(), vs.ravel()], axis=1).astype(np.float64)
    src = apply_points(hinv, pts)
    src = np.nan_to_num(src, nan=-1e9)
    vals = sample_many(img.data, src[:, 0], src[:, 1])
    return Image(vals.reshape(hh, ww, img.channels).astype(np.float32))


@dataclass(frozen=True)
class ColorJitterParams:
    """One drawn set of photometric factors plus the op application order."""

    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue_shift: float = 0.0
    order: Tuple[str, ...] = ("brightness", "contrast", "saturation", "hue")

    @staticmethod
    def sample(
        rng: Rng,
        brightness: float = 0.2,
        contrast: float = 0.2,
        saturation: float = 0.2,
        hue: float = 0.2,
    ) -> "ColorJitterParams":
        """Factors uniform in [1-s, 1+s], hue shift uniform in [-h, h], random order."""
        g = rng.np
        order = tuple(
            np.array(["brightness", "contrast", "saturation", "hue"])[g.permutation(4)]
        )
        return ColorJitterParams(
            brightness=float(g.uniform(max(0.0, 1 - brightness), 1 + brightness)),
            contrast=float(g.uniform(max(0.0, 1 - contrast), 1 + contrast)),
            saturation=float(g.uniform(max(0.0, 1 - saturation), 1 + saturation)),
            hue_shift=float(g.uniform(-hue, hue)),
            order=order,
        )


def apply_color_jitter(img: Image, p: ColorJitterParams) -> Image:
    """Apply brightness/contrast/saturation/hue in p.order, clamping to [0, 1]."""
    if img.channels != 3:
        raise ValueError(f"color jitter needs 3 channels, got {img.channels}")
    x = img.data.astype(np.float64)
    for op in p.order:
        if op == "brightness":
            x = np.clip(p.brightness * x, 0.0, 1.0)
        elif op == "contrast":
            mean = luma(x).mean()
            x = np.clip((1.0 - p.contrast) * mean + p.contrast * x, 0.0, 1.0)
        elif op == "saturation":
            gray = luma(x)[..., None]
            x = np.clip((1.0 - p.saturation) * gray + p.saturation * x, 0.0, 1.0)
        elif op == "hue":
            if p.hue_shift != 0.0:
                hsv = _rgb_to_hsv_array(x)
                hsv[..., 0] = (hsv[..., 0] + p.hue_shift) % 1.0
                x = np.clip(_hsv_to_rgb_array(hsv), 0.0, 1.0)
        else:
            raise ValueError(f"unknown color jitter op {op!r}")
    return Image(x.astype(np.float32))


@dataclass(frozen=True)
class Warp:
    """Geometric homography plus optional photometric jitter.

    Correspondence tracking uses `geometry` only; the photometric part never
    moves pixels.
    """

    geometry: np.ndarray
    photometric: Optional[ColorJitterParams] = None

    def apply(self, img: Image) -> Image:
        out = warp_image(img, self.geometry)
        if self.photometric is not None:
            out = apply_color_jitter(out, self.photometric)
        return out


IDENTITY_WARP = Warp(geometry=identity())
