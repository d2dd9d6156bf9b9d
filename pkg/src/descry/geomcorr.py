"""Geometric correspondences from registered RGBD frames.

Pixels of frame A are unprojected to world space with depth and intrinsics,
reprojected into frame B, then pruned by field-of-view and occlusion masks.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .core import Image, Rng, load_image, save_image
from .augment import CorrespondenceSet


class BehindCameraError(ValueError):
    """World point projects behind the camera."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def k(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class PosedDepthFrame:
    """RGB + metric depth + camera-to-world pose. depth 0 means missing."""

    rgb: Image
    depth: np.ndarray  # (H, W) meters
    rotation: np.ndarray  # 3x3 camera-to-world
    translation: np.ndarray  # (3,) meters
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation must be orthonormal within 1e-6")
        d = np.asarray(self.depth, dtype=np.float64)
        if (d < 0).any():
            raise ValueError("depth must be non-negative")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


def unproject(frame: PosedDepthFrame, u: int, v: int) -> Optional[np.ndarray]:
    """World point seen at integer pixel (u, v), or None when depth missing."""
    if not (0 <= u < frame.width and 0 <= v < frame.height):
        raise IndexError(f"pixel ({u}, {v}) outside {frame.width}x{frame.height}")
    z = frame.depth[v, u]
    if z == 0:
        return None
    kin = frame.intrinsics
    cam = np.array([(u - kin.cx) / kin.fx * z, (v - kin.cy) / kin.fy * z, z])
    return frame.rotation @ cam + frame.translation


def project(frame: PosedDepthFrame, x_world: np.ndarray) -> Tuple[float, float, float]:
    """(u, v, camera depth) of a world point; raises when behind the camera."""
    cam = frame.rotation.T @ (np.asarray(x_world, dtype=np.float64) - frame.translation)
    z = cam[2]
    if z <= 1e-6:
        raise BehindCameraError(f"point {x_world} has camera depth {z}")
    kin = frame.intrinsics
    return (kin.fx * cam[0] / z + kin.cx, kin.fy * cam[1] / z + kin.cy, z)


@dataclass(frozen=True)
class CorrespondenceMap:
    """Dense A->B map: target subpixels (H, W, 2) and a validity mask."""

    target: np.ndarray  # (H, W, 2) float (u, v) in B
    valid: np.ndarray  # (H, W) bool


def occlusion_tolerance(z: np.ndarray) -> np.ndarray:
    """max(5 mm, 1% of depth); absorbs quantization at range."""
    return np.maximum(0.005, 0.01 * z)


def correspondence_map(a: PosedDepthFrame, b: PosedDepthFrame) -> CorrespondenceMap:
    """Reproject every valid-depth pixel of A into B, masking failures.

    A pixel is invalid when its depth is missing, the point lands behind B,
    outside B's bounds, on missing B depth, or the B depth disagrees with
    the reprojected depth beyond the occlusion tolerance.
    """
    h, w = a.depth.shape
    vs, us = np.mgrid[0:h, 0:w]
    us = us.ravel().astype(np.float64)
    vs = vs.ravel().astype(np.float64)
    z = a.depth.ravel()
    valid = z > 0

    ka = a.intrinsics
    cam_a = np.stack(
        [(us - ka.cx) / ka.fx * z, (vs - ka.cy) / ka.fy * z, z], axis=1
    )
    world = cam_a @ a.rotation.T + a.translation
    cam_b = (world - b.translation) @ b.rotation
    zb = cam_b[:, 2]
    valid &= zb > 1e-6

    kb = b.intrinsics
    zb_safe = np.where(valid, zb, 1.0)
    ub = kb.fx * cam_b[:, 0] / zb_safe + kb.cx
    vb = kb.fy * cam_b[:, 1] / zb_safe + kb.cy
    hb, wb = b.depth.shape
    # small slack so exact-boundary pixels survive reprojection rounding
    eps = 1e-9
    valid &= (ub >= -eps) & (ub <= wb - 1 + eps) & (vb >= -eps) & (vb <= hb - 1 + eps)

    ui = np.clip(np.rint(ub), 0, wb - 1).astype(np.int64)
    vi = np.clip(np.rint(vb), 0, hb - 1).astype(np.int64)
    depth_b = b.depth[vi, ui]
    valid &= depth_b > 0
    valid &= np.abs(depth_b - zb) <= occlusion_tolerance(zb)

    target = np.stack([ub, vb], axis=1).reshape(h, w, 2)
    return CorrespondenceMap(target=target, valid=valid.reshape(h, w))


def sample_geometric_correspondences(
    cmap: CorrespondenceMap, n: int, rng: Rng
) -> CorrespondenceSet:
    """Uniform over valid entries, without replacement when possible."""
    vs, us = np.nonzero(cmap.valid)
    count = us.shape[0]
    if count == 0:
        raise ValueError("correspondence map has no valid entries")
    short = count < n
    take = min(n, count)
    idx = rng.np.choice(count, size=take, replace=False)
    pa = np.stack([us[idx], vs[idx]], axis=1).astype(np.int64)
    tgt = cmap.target[vs[idx], us[idx]]
    pb = np.rint(tgt).astype(np.int64)
    hb, wb = cmap.valid.shape  # same grid as A by construction of callers
    pb[:, 0] = np.clip(pb[:, 0], 0, wb - 1)
    pb[:, 1] = np.clip(pb[:, 1], 0, hb - 1)
    return CorrespondenceSet(pixels_a=pa, pixels_b=pb, source="geometric", short=short)


# --- scene directory format -------------------------------------------------

_DEPTH_MAGIC = b"DPTH"


def write_depth(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(_DEPTH_MAGIC)
        f.write(struct.pack("<II", depth.shape[1], depth.shape[0]))
        f.write(depth.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _DEPTH_MAGIC:
            raise ValueError(f"{path}: bad depth file magic {magic!r}")
        w, h = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(4 * w * h), dtype="<f4")
        if data.size != w * h:
            raise ValueError(f"{path}: truncated depth file")
    return data.reshape(h, w).astype(np.float64)


def write_scene_dir(path, frames) -> None:
    """Write frames as NNNN.png / NNNN.depth / NNNN.pose.json + intrinsics.json."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    kin = frames[0].intrinsics
    with open(path / "intrinsics.json", "w") as f:
        json.dump({"fx": kin.fx, "fy": kin.fy, "cx": kin.cx, "cy": kin.cy}, f)
    for i, fr in enumerate(frames):
        save_image(fr.rgb, path / f"{i:04d}.png")
        write_depth(path / f"{i:04d}.depth", fr.depth)
        mat = np.eye(4)
        mat[:3, :3] = fr.rotation
        mat[:3, 3] = fr.translation
        with open(path / f"{i:04d}.pose.json", "w") as f:
            json.dump(mat.tolist(), f)


def load_scene_dir(path):
    """Read a scene directory back into PosedDepthFrames, sorted by index."""
    path = Path(path)
    with open(path / "intrinsics.json") as f:
        kin = CameraIntrinsics(**json.load(f))
    frames = []
    for png in sorted(path.glob("[0-9][0-9][0-9][0-9].png")):
        stem = png.stem
        rgb = load_image(png)
        depth = read_depth(path / f"{stem}.depth")
        with open(path / f"{stem}.pose.json") as f:
            mat = np.asarray(json.load(f), dtype=np.float64)
        frames.append(
            PosedDepthFrame(
                rgb=rgb,
                depth=depth,
                rotation=mat[:3, :3],
                translation=mat[:3, 3],
                intrinsics=kin,
            )
        )
    return frames
