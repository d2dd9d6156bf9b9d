"""Procedural desk-scale scene generator with exact ground truth.

Scenes are textured 2D canvases with a per-pixel object label map. Alternate
"camera" views are homography warps of the canvas, so ground-truth pixel
correspondence between any two views is the exact homography chain. A small
planar RGBD generator provides analytic fixtures for the geometric
correspondence path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .core import Image, Rng, save_image
from .geomcorr import CameraIntrinsics, PosedDepthFrame
from .warp import compose, identity, make_affine, solve_homography, warp_image


def value_noise(height: int, width: int, rng: Rng, cells: int = 8, channels: int = 3) -> np.ndarray:
    """Smooth random texture: a coarse random grid upsampled bilinearly."""
    g = rng.np
    coarse = g.uniform(0.05, 0.95, size=(cells + 1, cells + 1, channels))
    ys = np.linspace(0, cells, height)
    xs = np.linspace(0, cells, width)
    y0 = np.floor(ys).astype(int).clip(0, cells - 1)
    x0 = np.floor(xs).astype(int).clip(0, cells - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    c00 = coarse[np.ix_(y0, x0)]
    c01 = coarse[np.ix_(y0, x0 + 1)]
    c10 = coarse[np.ix_(y0 + 1, x0)]
    c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
    out = (
        c00 * (1 - fy) * (1 - fx)
        + c01 * (1 - fy) * fx
        + c10 * fy * (1 - fx)
        + c11 * fy * fx
    )
    return out.astype(np.float32)


@dataclass(frozen=True)
class SceneSpec:
    """Inputs for one procedural scene; fully determined by the seeds."""

    width: int = 128
    height: int = 128
    n_objects: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("canvas must be at least 16x16")
        if self.n_objects < 0:
            raise ValueError("object count must be >= 0")


def generate_scene(spec: SceneSpec) -> Tuple[Image, np.ndarray]:
    """Render the scene and its label map (object id per pixel, 0=background).

    Objects (disc, rectangle or ring) are drawn back-to-front with their own
    value-noise textures; later objects may overlap earlier ones and the
    label map records the front-most id.
    """
    rng = Rng(spec.seed, stream=7)
    h, w = spec.height, spec.width
    canvas = value_noise(h, w, rng.child(0), cells=6)
    labels = np.zeros((h, w), dtype=np.int32)
    vs, us = np.mgrid[0:h, 0:w]
    g = rng.np
    for obj_id in range(1, spec.n_objects + 1):
        tex = value_noise(h, w, rng.child(obj_id), cells=10)
        placed = False
        for _ in range(100):
            shape = g.choice(["disc", "rectangle", "ring"])
            size = g.uniform(0.10, 0.22) * min(w, h)
            cx = g.uniform(size + 1, w - size - 2)
            cy = g.uniform(size + 1, h - size - 2)
            if shape == "disc":
                mask = (us - cx) ** 2 + (vs - cy) ** 2 <= size**2
            elif shape == "ring":
                r2 = (us - cx) ** 2 + (vs - cy) ** 2
                mask = (r2 <= size**2) & (r2 >= (0.55 * size) ** 2)
            else:
                ang = g.uniform(0, np.pi)
                du = (us - cx) * np.cos(ang) + (vs - cy) * np.sin(ang)
                dv = -(us - cx) * np.sin(ang) + (vs - cy) * np.cos(ang)
                aspect = g.uniform(0.5, 1.0)
                mask = (np.abs(du) <= size) & (np.abs(dv) <= size * aspect)
            if not mask.any():
                continue
            if tex[mask].var() <= 0.01:
                tex = value_noise(h, w, rng.child(1000 + obj_id), cells=12)
            canvas[mask] = tex[mask]
            labels[mask] = obj_id
            placed = True
            break
        if not placed:
            raise RuntimeError(f"could not place object {obj_id} after 100 attempts")
    return Image(canvas), labels


def render_view(scene: Image, view: np.ndarray) -> Image:
    """Warp the canonical scene by the view homography."""
    return warp_image(scene, view)


def random_view_homography(
    width: int,
    height: int,
    rng: Rng,
    max_rotation: float = 45.0,
    scale_range: Tuple[float, float] = (0.8, 1.25),
    max_shift: float = 6.0,
) -> np.ndarray:
    """A moderate evaluation view: rotation, scale and a small translation."""
    g = rng.np
    center = ((width - 1) / 2.0, (height - 1) / 2.0)
    angle = g.uniform(-max_rotation, max_rotation)
    scale = g.uniform(*scale_range)
    h = make_affine(center, angle, scale)
    t = identity()
    t[0, 2] = g.uniform(-max_shift, max_shift)
    t[1, 2] = g.uniform(-max_shift, max_shift)
    return compose(t, h)


def tilt_homography(width: int, height: int, tilt_degrees: float) -> np.ndarray:
    """Homography of the image plane viewed at `tilt_degrees` about the
    horizontal axis through its center, with principal distance max(W, H)."""
    f = float(max(width, height))
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    a = np.deg2rad(tilt_degrees)
    c, s = np.cos(a), np.sin(a)
    corners = np.array([[0.0, 0.0], [width - 1, 0.0], [width - 1, height - 1], [0.0, height - 1]])
    dst = []
    for u, v in corners:
        x, y, z = u - cx, v - cy, 0.0
        # rotate about the x axis through the plane center at depth f
        yr = c * y - s * z
        zr = s * y + c * z + f
        dst.append([f * x / zr + cx, f * yr / zr + cy])
    return solve_homography(corners, np.asarray(dst))


# --- dataset on disk -------------------------------------------------------


@dataclass(frozen=True)
class SceneRecord:
    image_path: str
    label_path: str
    views: List[np.ndarray]  # view homographies (row-major 3x3)


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    width: int
    height: int
    train: List[SceneRecord]
    val: List[SceneRecord]
    test: List[SceneRecord]


def generate_dataset(
    out_dir,
    seed: int = 0,
    width: int = 128,
    height: int = 128,
    n_objects: int = 6,
    n_train: int = 200,
    n_val: int = 20,
    n_test: int = 20,
    views_per_scene: int = 2,
    max_rotation: float = 45.0,
    scale_range: Tuple[float, float] = (0.8, 1.25),
) -> DatasetManifest:
    """Write scene PNGs, label PNGs and a manifest.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = Rng(seed, stream=11)
    splits = {}
    idx = 0
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        records = []
        for _ in range(count):
            spec = SceneSpec(width=width, height=height, n_objects=n_objects, seed=seed * 1_000_003 + idx)
            scene, labels = generate_scene(spec)
            img_name = f"scene_{idx:04d}.png"
            lab_name = f"label_{idx:04d}.png"
            save_image(scene, out / img_name)
            save_image(Image((labels[:, :, None] / 255.0).astype(np.float32)), out / lab_name)
            views = [
                random_view_homography(width, height, rng.child(idx * 100 + k), max_rotation, scale_range)
                for k in range(views_per_scene)
            ]
            records.append(SceneRecord(img_name, lab_name, views))
            idx += 1
        splits[split] = records
    manifest = {
        "width": width,
        "height": height,
        "seed": seed,
        "splits": {
            split: [
                {
                    "image": r.image_path,
                    "label": r.label_path,
                    "views": [v.tolist() for v in r.views],
                }
                for r in records
            ]
            for split, records in splits.items()
        },
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return DatasetManifest(root=out, width=width, height=height, **splits)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    root = path if path.is_dir() else path.parent
    mf = root / "manifest.json"
    with open(mf) as f:
        raw = json.load(f)
    splits = {}
    for split in ("train", "val", "test"):
        splits[split] = [
            SceneRecord(
                image_path=r["image"],
                label_path=r["label"],
                views=[np.asarray(v, dtype=np.float64) for v in r["views"]],
            )
            for r in raw["splits"].get(split, [])
        ]
    return DatasetManifest(root=root, width=raw["width"], height=raw["height"], **splits)


def load_labels(manifest: DatasetManifest, record: SceneRecord) -> np.ndarray:
    """Label map back from its PNG encoding (ids stored as bytes)."""
    from .core import load_image

    img = load_image(manifest.root / record.label_path)
    return np.rint(img.data[:, :, 0] * 255.0).astype(np.int32)


# --- planar RGBD fixtures --------------------------------------------------


def plane_texture(points_2d: np.ndarray, seed: int) -> np.ndarray:
    """Smooth deterministic RGB texture over plane coordinates (meters)."""
    g = np.random.Generator(np.random.PCG64(seed))
    freqs = g.uniform(2.0, 14.0, size=(3, 4))
    phases = g.uniform(0, 2 * np.pi, size=(3, 4))
    dirs = g.normal(size=(4, 2))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    proj = points_2d @ dirs.T  # (N, 4)
    chans = []
    for c in range(3):
        val = np.zeros(points_2d.shape[0])
        for k in range(4):
            val += np.sin(freqs[c, k] * proj[:, k] + phases[c, k])
        chans.append(0.5 + val / 10.0)
    return np.clip(np.stack(chans, axis=1), 0.0, 1.0)


def generate_planar_rgbd(
    intrinsics: CameraIntrinsics,
    plane_point: np.ndarray,
    plane_normal: np.ndarray,
    camera_poses: List[Tuple[np.ndarray, np.ndarray]],
    width: int,
    height: int,
    texture_seed: int = 0,
) -> List[PosedDepthFrame]:
    """Render a textured world plane from each camera with analytic depth.

    camera_poses are (R, t) camera-to-world. Raises when a camera views the
    plane edge-on.
    """
    plane_point = np.asarray(plane_point, dtype=np.float64)
    n = np.asarray(plane_normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    # in-plane texture axes
    a = np.array([1.0, 0.0, 0.0])
    if abs(n @ a) > 0.9:
        a = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)

    vs, us = np.mgrid[0:height, 0:width]
    pix = np.stack([us.ravel(), vs.ravel()], axis=1).astype(np.float64)
    frames = []
    for rot, trans in camera_poses:
        rot = np.asarray(rot, dtype=np.float64)
        trans = np.asarray(trans, dtype=np.float64)
        rays_cam = np.stack(
            [
                (pix[:, 0] - intrinsics.cx) / intrinsics.fx,
                (pix[:, 1] - intrinsics.cy) / intrinsics.fy,
                np.ones(pix.shape[0]),
            ],
            axis=1,
        )
        rays_world = rays_cam @ rot.T
        denom = rays_world @ n
        axis_ray = rot @ np.array([0.0, 0.0, 1.0])
        if abs(axis_ray @ n) < 1e-3:
            raise ValueError("camera views the plane edge-on")
        lam = ((plane_point - trans) @ n) / denom
        if (lam <= 0).any():
            raise ValueError("plane not fully in front of camera")
        pts = trans + lam[:, None] * rays_world
        depth = lam.reshape(height, width)  # lam equals camera z since ray z-component is 1
        local = np.stack([(pts - plane_point) @ e1, (pts - plane_point) @ e2], axis=1)
        rgb = plane_texture(local, texture_seed).reshape(height, width, 3)
        frames.append(
            PosedDepthFrame(
                rgb=Image(rgb.astype(np.float32)),
                depth=depth.astype(np.float64),
                rotation=rot,
                translation=trans,
                intrinsics=intrinsics,
            )
        )
    return frames
