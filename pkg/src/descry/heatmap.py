"""Grasp-preference keypoint database, heatmaps, fusion and candidate ranking."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .core import Image
from .encoder import DescriptorImage


@dataclass(frozen=True)
class HeatmapConfig:
    eta: float = 0.1  # temperature controlling heatmap width

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")


@dataclass
class KeypointEntry:
    label: str
    descriptor: np.ndarray
    image_id: str
    u: int
    v: int


@dataclass
class KeypointDB:
    """Named reference descriptors picked by clicking preferred grasp pixels."""

    name: str
    dim: int
    entries: List[KeypointEntry] = field(default_factory=list)

    def labels(self) -> List[str]:
        return [e.label for e in self.entries]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "entries": [
                {
                    "label": e.label,
                    "descriptor": [float(x) for x in e.descriptor],
                    "image_id": e.image_id,
                    "u": e.u,
                    "v": e.v,
                }
                for e in self.entries
            ],
        }

    @staticmethod
    def from_json(doc: dict) -> "KeypointDB":
        db = KeypointDB(name=doc["name"], dim=int(doc["dim"]))
        for e in doc["entries"]:
            db.entries.append(
                KeypointEntry(
                    label=e["label"],
                    descriptor=np.asarray(e["descriptor"], dtype=np.float64),
                    image_id=e["image_id"],
                    u=int(e["u"]),
                    v=int(e["v"]),
                )
            )
        return db

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1)

    @staticmethod
    def load(path) -> "KeypointDB":
        with open(path) as f:
            return KeypointDB.from_json(json.load(f))


def add_keypoint(
    db: KeypointDB, descriptor_image: DescriptorImage, u: int, v: int, label: str, image_id: str = ""
) -> KeypointDB:
    """Read the descriptor at (u, v) and append it under a fresh label."""
    if not (0 <= u < descriptor_image.width and 0 <= v < descriptor_image.height):
        raise IndexError(f"pixel ({u}, {v}) out of bounds")
    if label in db.labels():
        raise ValueError(f"duplicate label {label!r}")
    if descriptor_image.dim != db.dim:
        raise ValueError(f"descriptor dim {descriptor_image.dim} != db dim {db.dim}")
    db.entries.append(
        KeypointEntry(
            label=label,
            descriptor=descriptor_image.at(u, v).astype(np.float64).copy(),
            image_id=image_id,
            u=int(u),
            v=int(v),
        )
    )
    return db


def single_heatmap(
    descriptor_image: DescriptorImage, d: np.ndarray, cfg: HeatmapConfig = HeatmapConfig()
) -> Image:
    """h(u, v) = exp(-(1 - cos(I_d(u, v), d)) / eta), in (0, 1]."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape[0] != descriptor_image.dim:
        raise ValueError(f"descriptor dim {d.shape[0]} != image dim {descriptor_image.dim}")
    sim = descriptor_image.data.astype(np.float64) @ d
    h = np.exp(-(1.0 - sim) / cfg.eta)
    return Image(np.clip(h, 0.0, 1.0)[:, :, None].astype(np.float32))


def fuse(heatmaps: List[Image], cfg: HeatmapConfig = HeatmapConfig()) -> Image:
    """Pixelwise sum normalized so the fused peak is 1 (all-zero stays zero)."""
    if not heatmaps:
        raise ValueError("no heatmaps to fuse")
    shape = heatmaps[0].data.shape
    total = np.zeros(shape[:2], dtype=np.float64)
    for hm in heatmaps:
        if hm.data.shape != shape:
            raise ValueError("heatmap dimensions differ")
        total += hm.data[:, :, 0]
    peak = total.max()
    if peak > 0:
        total = total / peak
    return Image(total[:, :, None].astype(np.float32))


def db_heatmap(
    descriptor_image: DescriptorImage, db: KeypointDB, cfg: HeatmapConfig = HeatmapConfig()
) -> Image:
    """Fused heatmap over every database entry."""
    if not db.entries:
        raise ValueError(f"keypoint db {db.name!r} is empty")
    maps = [single_heatmap(descriptor_image, e.descriptor, cfg) for e in db.entries]
    return fuse(maps, cfg)


def grasp_candidates(
    fused: Image, graspability: Image, threshold: float, nms_radius: float
) -> List[Tuple[int, int, float]]:
    """Score = fused * graspability; threshold then greedy NMS by radius.

    Returns (u, v, score) in descending score, ties by row-major scan order.
    """
    if fused.data.shape[:2] != graspability.data.shape[:2]:
        raise ValueError("heatmap and graspability dimensions differ")
    score = fused.data[:, :, 0].astype(np.float64) * graspability.data[:, :, 0].astype(np.float64)
    h, w = score.shape
    vs, us = np.nonzero(score >= threshold)
    vals = score[vs, us]
    # stable sort on -score keeps scan order for ties
    order = np.argsort(-vals, kind="stable")
    us, vs, vals = us[order], vs[order], vals[order]
    picked: List[Tuple[int, int, float]] = []
    r2 = nms_radius**2
    for u, v, s in zip(us, vs, vals):
        if all((u - pu) ** 2 + (v - pv) ** 2 > r2 for pu, pv, _ in picked):
            picked.append((int(u), int(v), float(s)))
    return picked
