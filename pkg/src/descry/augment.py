"""Randomized augmentation pairs and synthetic pixel correspondences.

Two augmented views of one image share known warps, so pixel pairs that
originate from the same source pixel can be generated without any labels.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Tuple

import numpy as np

from .core import Image, Rng
from .warp import (
    ColorJitterParams,
    Warp,
    apply_points,
    compose,
    identity,
    invert,
    make_affine,
    make_perspective,
    make_resized_crop,
)


class CorrespondenceSamplingError(RuntimeError):
    """Raised when rejection sampling cannot reach the requested count."""


@dataclass(frozen=True)
class AugmentationSpec:
    """Which augmentations to draw, their strengths, and how often.

    Defaults follow the synthetic-training profile: every augmentation
    enabled with probability 1 and two augmented views.
    """

    affine: bool = True
    affine_degrees: Tuple[float, float] = (0.0, 359.0)
    affine_scale: Tuple[float, float] = (0.5, 1.0)
    perspective: bool = True
    perspective_distortion: float = 0.4
    resized_crop: bool = True
    crop_scale: Tuple[float, float] = (0.7, 1.0)
    crop_aspect: Tuple[float, float] = (0.75, 4.0 / 3.0)
    color_jitter: bool = True
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.2
    probability: float = 1.0
    n_views: int = 2

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("affine_degrees", "affine_scale", "crop_scale", "crop_aspect"):
            d[k] = list(d[k])
        return d

    @staticmethod
    def from_dict(d: dict) -> "AugmentationSpec":
        known = {f for f in AugmentationSpec.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown augmentation keys: {sorted(unknown)}")
        kw = dict(d)
        for k in ("affine_degrees", "affine_scale", "crop_scale", "crop_aspect"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return AugmentationSpec(**kw)


@dataclass(frozen=True)
class CorrespondenceSet:
    """Paired integer pixel locations between two views."""

    pixels_a: np.ndarray  # (N, 2) int, (u, v)
    pixels_b: np.ndarray  # (N, 2) int, (u, v)
    source: str = "synthetic"
    short: bool = False  # true when fewer than requested pairs were available

    def __post_init__(self):
        a = np.asarray(self.pixels_a, dtype=np.int64)
        b = np.asarray(self.pixels_b, dtype=np.int64)
        if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 2:
            raise ValueError("pixels_a and pixels_b must both be (N, 2)")
        object.__setattr__(self, "pixels_a", a)
        object.__setattr__(self, "pixels_b", b)

    def __len__(self) -> int:
        return self.pixels_a.shape[0]


def sample_view(img: Image, spec: AugmentationSpec, rng: Rng) -> Tuple[Image, Warp]:
    """Draw one augmented view; each enabled augmentation joins with prob. p.

    Geometric parts compose in fixed order resize&crop after perspective
    after affine, so repeated runs with equal streams are bit-identical.
    """
    if img.width < 8 or img.height < 8:
        raise ValueError("image must be at least 8x8")
    g = rng.np
    w, h = img.width, img.height
    geo = identity()
    if spec.affine and g.random() < spec.probability:
        angle = g.uniform(*spec.affine_degrees)
        scale = g.uniform(*spec.affine_scale)
        center = ((w - 1) / 2.0, (h - 1) / 2.0)
        geo = compose(make_affine(center, angle, scale), geo)
    if spec.perspective and g.random() < spec.probability:
        geo = compose(make_perspective(w, h, spec.perspective_distortion, rng), geo)
    if spec.resized_crop and g.random() < spec.probability:
        geo = compose(make_resized_crop(w, h, spec.crop_scale, spec.crop_aspect, rng), geo)
    jitter = None
    if spec.color_jitter and g.random() < spec.probability:
        jitter = ColorJitterParams.sample(
            rng, spec.brightness, spec.contrast, spec.saturation, spec.hue
        )
    warp = Warp(geometry=geo, photometric=jitter)
    return warp.apply(img), warp


def make_pair(img: Image, spec: AugmentationSpec, rng: Rng):
    """Two independent augmented views (I', T'), (I'', T'').

    In 1-view mode the second view is the untouched input with an identity
    warp.
    """
    img_a, warp_a = sample_view(img, spec, rng.child(0))
    if spec.n_views <= 1:
        return img_a, warp_a, img, Warp(geometry=identity())
    img_b, warp_b = sample_view(img, spec, rng.child(1))
    return img_a, warp_a, img_b, warp_b


def sample_synthetic_correspondences(
    warp_a: Warp,
    warp_b: Warp,
    width: int,
    height: int,
    n: int,
    rng: Rng,
) -> CorrespondenceSet:
    """Rejection-sample n integer pixel pairs that share one source pixel.

    Draws p' uniformly on the first view's grid, maps it back to the source
    image, forward into the second view, and keeps the pair only when both
    the source point and the rounded target are in bounds and the two
    pre-images agree within 1 px. Budget is 50*n attempts.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    inv_a = invert(warp_a.geometry)
    fwd_b = warp_b.geometry
    inv_b = invert(warp_b.geometry)
    g = rng.np
    budget = 50 * n
    got_a = []
    got_b = []
    attempts = 0
    chunk = max(256, 2 * n)
    total = 0
    while total < n and attempts < budget:
        take = min(chunk, budget - attempts)
        attempts += take
        pa = np.stack(
            [g.integers(0, width, size=take), g.integers(0, height, size=take)], axis=1
        ).astype(np.float64)
        src = apply_points(inv_a, pa)
        ok = (
            np.isfinite(src).all(axis=1)
            & (src[:, 0] >= 0)
            & (src[:, 0] <= width - 1)
            & (src[:, 1] >= 0)
            & (src[:, 1] <= height - 1)
        )
        pb = np.full_like(pa, -1.0)
        pb[ok] = np.rint(apply_points(fwd_b, src[ok]))
        ok &= (pb[:, 0] >= 0) & (pb[:, 0] < width) & (pb[:, 1] >= 0) & (pb[:, 1] < height)
        # pre-image agreement guard: rounding in b must not exceed 1 px
        # once mapped back to source coordinates
        src_b = np.full_like(pa, np.nan)
        src_b[ok] = apply_points(inv_b, pb[ok])
        ok &= np.isfinite(src_b).all(axis=1)
        dist = np.linalg.norm(np.nan_to_num(src_b - src, nan=1e9), axis=1)
        ok &= dist <= 1.0
        got_a.append(pa[ok])
        got_b.append(pb[ok])
        total += int(ok.sum())
    if total < n:
        rate = total / max(attempts, 1)
        raise CorrespondenceSamplingError(
            f"got {total}/{n} correspondences after {attempts} attempts "
            f"(acceptance rate {rate:.4f})"
        )
    pa = np.concatenate(got_a)[:n].astype(np.int64)
    pb = np.concatenate(got_b)[:n].astype(np.int64)
    assert (pa >= 0).all() and (pb >= 0).all()
    assert (pa[:, 0] < width).all() and (pa[:, 1] < height).all()
    assert (pb[:, 0] < width).all() and (pb[:, 1] < height).all()
    return CorrespondenceSet(pixels_a=pa, pixels_b=pb, source="synthetic")
