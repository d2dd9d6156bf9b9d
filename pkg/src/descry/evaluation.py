"""Keypoint tracking, pixel-error statistics and invariance sweeps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import Image, Rng
from .encoder import DescriptorImage, EncoderParams, forward
from .warp import apply_points, invert, make_affine
from .scenegen import render_view, tilt_homography

PCK_THRESHOLDS = (3, 5, 10, 25, 50)


def track(
    descriptor_image: DescriptorImage,
    d: np.ndarray,
    mask: Optional[np.ndarray] = None,
) -> Tuple[int, int, float]:
    """Exhaustive argmax of cosine similarity over the (masked) grid.

    Ties break to the first occurrence in row-major scan order.
    """
    h, w = descriptor_image.height, descriptor_image.width
    scores = descriptor_image.data.reshape(h * w, -1) @ np.asarray(d, dtype=descriptor_image.data.dtype)
    if mask is not None:
        flat = np.asarray(mask, dtype=bool).ravel()
        if not flat.any():
            raise ValueError("empty search mask")
        scores = np.where(flat, scores, -np.inf)
    idx = int(np.argmax(scores))
    return idx % w, idx // w, float(scores[idx])


def track_many(descriptor_image: DescriptorImage, ds: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized track for a (K, D) query block; returns (K, 2) pixels, (K,) sims."""
    h, w = descriptor_image.height, descriptor_image.width
    scores = descriptor_image.data.reshape(h * w, -1) @ np.asarray(ds, dtype=descriptor_image.data.dtype).T
    idx = np.argmax(scores, axis=0)
    pix = np.stack([idx % w, idx // w], axis=1).astype(np.int64)
    return pix, scores[idx, np.arange(ds.shape[0])]


@dataclass(frozen=True)
class ErrorSummary:
    mean: float
    median: float
    q75: float
    q90: float
    q95: float
    pck: dict  # K -> fraction with error < K
    count: int

    def as_row(self) -> dict:
        row = {
            "mean": self.mean,
            "median": self.median,
            "q75": self.q75,
            "q90": self.q90,
            "q95": self.q95,
            "count": self.count,
        }
        for k in PCK_THRESHOLDS:
            row[f"pck@{k}"] = self.pck[k]
        return row


def summarize(errors: Sequence[float]) -> ErrorSummary:
    """Linear-interpolation (type-7) quantiles and PCK at fixed thresholds."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("empty error list")
    s = ErrorSummary(
        mean=float(e.mean()),
        median=float(np.quantile(e, 0.5)),
        q75=float(np.quantile(e, 0.75)),
        q90=float(np.quantile(e, 0.90)),
        q95=float(np.quantile(e, 0.95)),
        pck={k: float((e < k).mean()) for k in PCK_THRESHOLDS},
        count=int(e.size),
    )
    assert s.median <= s.q75 <= s.q90 <= s.q95
    return s


def pck_auc(errors: Sequence[float], k_max: int = 100) -> float:
    """Mean of PCK@K over K = 1..k_max (normalized area under the curve)."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("empty error list")
    ks = np.arange(1, k_max + 1)
    return float((e[None, :] < ks[:, None]).mean())


@dataclass(frozen=True)
class EvalPair:
    """Two views of one scene plus exact ground truth A->B."""

    image_a: Image
    image_b: Image
    gt_a_to_b: np.ndarray  # 3x3 homography
    keypoint_mask: np.ndarray  # (H, W) bool: allowed keypoint sources in A


def sample_keypoint_pixels(mask: np.ndarray, n: int, rng: Rng) -> np.ndarray:
    """Uniform integer pixels from a boolean mask; all of them when short."""
    vs, us = np.nonzero(mask)
    if us.size == 0:
        raise ValueError("keypoint mask has no valid pixels")
    take = min(n, us.size)
    idx = rng.np.choice(us.size, size=take, replace=False)
    return np.stack([us[idx], vs[idx]], axis=1).astype(np.int64)


def evaluate_pairs(
    params: EncoderParams,
    pairs: Sequence[EvalPair],
    n_keypoints: int,
    rng: Rng,
) -> np.ndarray:
    """Track keypoints across each pair and return all Euclidean pixel errors.

    Keypoints are drawn uniformly on the pair's keypoint mask (object pixels
    whose ground-truth target lands inside B).
    """
    errors: List[float] = []
    for pi, pair in enumerate(pairs):
        h, w = pair.keypoint_mask.shape
        gt = pair.gt_a_to_b
        kp = sample_keypoint_pixels(pair.keypoint_mask, n_keypoints, rng.child(pi))
        gt_target = apply_points(gt, kp.astype(np.float64))
        ok = (
            (gt_target[:, 0] >= 0)
            & (gt_target[:, 0] <= w - 1)
            & (gt_target[:, 1] >= 0)
            & (gt_target[:, 1] <= h - 1)
        )
        kp, gt_target = kp[ok], gt_target[ok]
        if kp.shape[0] == 0:
            continue
        desc_a, _ = forward(params, pair.image_a)
        desc_b, _ = forward(params, pair.image_b)
        queries = desc_a.data[kp[:, 1], kp[:, 0]]
        found, _ = track_many(desc_b, queries)
        errs = np.linalg.norm(found.astype(np.float64) - gt_target, axis=1)
        errors.extend(errs.tolist())
    return np.asarray(errors, dtype=np.float64)


def pairs_from_scene(
    scene: Image,
    labels: np.ndarray,
    views: Sequence[np.ndarray],
) -> List[EvalPair]:
    """All ordered view pairs of one scene with exact homography ground truth.

    The keypoint mask is the scene's object mask carried into view A by
    nearest-neighbor warp.
    """
    rendered = [render_view(scene, v) for v in views]
    h, w = labels.shape
    out = []
    for i in range(len(views)):
        for j in range(len(views)):
            if i == j:
                continue
            gt = views[j] @ invert(views[i])
            mask = _warp_mask(labels > 0, views[i])
            out.append(
                EvalPair(
                    image_a=rendered[i],
                    image_b=rendered[j],
                    gt_a_to_b=gt,
                    keypoint_mask=mask,
                )
            )
    return out


def _warp_mask(mask: np.ndarray, view: np.ndarray) -> np.ndarray:
    """Nearest-neighbor warp of a boolean mask into a view."""
    h, w = mask.shape
    vs, us = np.mgrid[0:h, 0:w]
    pts = np.stack([us.ravel(), vs.ravel()], axis=1).astype(np.float64)
    src = apply_points(invert(view), pts)
    src = np.rint(np.nan_to_num(src, nan=-1.0)).astype(np.int64)
    ok = (src[:, 0] >= 0) & (src[:, 0] < w) & (src[:, 1] >= 0) & (src[:, 1] < h)
    out = np.zeros(h * w, dtype=bool)
    out[ok] = mask[src[ok, 1], src[ok, 0]]
    return out.reshape(h, w)


SWEEPS = {
    "rotation": [float(x) for x in range(0, 181, 15)],
    "scale": [round(0.5 + 0.1 * i, 2) for i in range(11)],
    "tilt": [float(x) for x in range(0, 61, 15)],
}


def sweep_homography(kind: str, magnitude: float, width: int, height: int) -> np.ndarray:
    center = ((width - 1) / 2.0, (height - 1) / 2.0)
    if kind == "rotation":
        return make_affine(center, magnitude, 1.0)
    if kind == "scale":
        return make_affine(center, 0.0, magnitude)
    if kind == "tilt":
        return tilt_homography(width, height, magnitude)
    raise ValueError(f"unknown sweep kind {kind!r}")


def invariance_sweep(
    params: EncoderParams,
    scenes: Sequence[Tuple[Image, np.ndarray]],
    kind: str,
    n_keypoints: int,
    rng: Rng,
    magnitudes: Optional[Sequence[float]] = None,
) -> List[Tuple[float, float]]:
    """q75 tracking error versus transform magnitude.

    For each magnitude the second view is the scene transformed by the
    exactly-known homography, so the reported error is pure tracking error.
    """
    if magnitudes is None:
        magnitudes = SWEEPS[kind]
    curve = []
    for mi, mag in enumerate(magnitudes):
        pairs = []
        for scene, labels in scenes:
            h = sweep_homography(kind, mag, scene.width, scene.height)
            pairs.append(
                EvalPair(
                    image_a=scene,
                    image_b=render_view(scene, h),
                    gt_a_to_b=h,
                    keypoint_mask=labels > 0,
                )
            )
        errors = evaluate_pairs(params, pairs, n_keypoints, rng.child(mi))
        curve.append((float(mag), summarize(errors).q75))
    return curve
