"""Training loop: minibatch assembly, Adam updates, PCK-AUC validation.

Synthetic mode draws augmentation pairs from plain RGB scenes; geometric
mode reprojects registered RGBD frame pairs. Both feed the same NT-Xent
loss and encoder.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .augment import AugmentationSpec, CorrespondenceSet, make_pair, sample_synthetic_correspondences
from .core import Image, Rng, load_image
from .encoder import EncoderParams, backward, forward, init, load_checkpoint, save_checkpoint
from .evaluation import evaluate_pairs, pairs_from_scene, pck_auc, track_many
from .geomcorr import PosedDepthFrame, correspondence_map, sample_geometric_correspondences
from .loss import LossConfig, ntxent_with_grad
from .scenegen import DatasetManifest, load_labels
from .warp import apply_points


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the offending batch seed."""


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults; `paper_profile` restores the full-scale settings."""

    mode: str = "synthetic"  # or "geometric"
    dim: int = 16
    learning_rate: float = 0.0003
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    correspondences: int = 512  # per image pair
    batch_size: int = 2  # image pairs per step
    batches_per_epoch: int = 50
    epochs: int = 30
    validate_every: int = 1
    temperature: float = 0.07
    pool: str = "batch"
    augment: AugmentationSpec = field(default_factory=AugmentationSpec)
    geometric_augment_probability: float = 0.5
    val_keypoints: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("synthetic", "geometric"):
            raise ValueError(f"mode must be synthetic or geometric, got {self.mode!r}")
        for name in ("dim", "correspondences", "batch_size", "batches_per_epoch", "validate_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def loss_config(self) -> LossConfig:
        return LossConfig(temperature=self.temperature, pool=self.pool)


def paper_profile(**overrides) -> TrainConfig:
    """Full-scale settings: D=64, 2048 correspondences, 500x250 schedule."""
    base = TrainConfig(
        dim=64, correspondences=2048, batches_per_epoch=500, epochs=250
    )
    return replace(base, **overrides)


class Adam:
    """Standard Adam with bias correction over a flat list of arrays."""

    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float32):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s, dtype=dtype) for s in shapes]
        self.v = [np.zeros(s, dtype=dtype) for s in shapes]

    def step(self, arrays: List[np.ndarray], grads: List[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            a -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


@dataclass
class TrainState:
    params: EncoderParams
    optimizer: Adam
    step_count: int = 0
    best_score: float = -1.0
    best_params: Optional[EncoderParams] = None
    log: List[dict] = field(default_factory=list)


def init_state(cfg: TrainConfig) -> TrainState:
    params = init(cfg.dim, Rng(cfg.seed, stream=1))
    opt = Adam(
        [a.shape for a in params.arrays()],
        lr=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.adam_eps,
        dtype=params.dtype,
    )
    return TrainState(params=params, optimizer=opt)


def _gather_batch(views) -> Tuple[np.ndarray, np.ndarray, List[dict]]:
    """Interleave (a, b) descriptor rows as positive pairs (2k, 2k+1)."""
    desc_rows = []
    group_ids = []
    for gi, (da, db) in enumerate(views):
        inter = np.empty((2 * da.shape[0], da.shape[1]), dtype=da.dtype)
        inter[0::2] = da
        inter[1::2] = db
        desc_rows.append(inter)
        group_ids.extend([gi] * (2 * da.shape[0]))
    return np.concatenate(desc_rows, axis=0), np.asarray(group_ids), None


def _synthetic_item(img: Image, cfg: TrainConfig, rng: Rng):
    img_a, warp_a, img_b, warp_b = make_pair(img, cfg.augment, rng.child(0))
    corr = sample_synthetic_correspondences(
        warp_a, warp_b, img.width, img.height, cfg.correspondences, rng.child(1)
    )
    return img_a, img_b, corr


def _geometric_item(frames: Tuple[PosedDepthFrame, PosedDepthFrame], cfg: TrainConfig, rng: Rng):
    a, b = frames
    cmap = correspondence_map(a, b)
    corr = sample_geometric_correspondences(cmap, cfg.correspondences, rng.child(0))
    spec = replace(cfg.augment, probability=cfg.geometric_augment_probability, n_views=2)
    from .augment import sample_view  # local to avoid cycle at import time

    img_a, warp_a = sample_view(a.rgb, spec, rng.child(1))
    img_b, warp_b = sample_view(b.rgb, spec, rng.child(2))
    pa = np.rint(apply_points(warp_a.geometry, corr.pixels_a.astype(np.float64)))
    pb = np.rint(apply_points(warp_b.geometry, corr.pixels_b.astype(np.float64)))
    w, h = a.rgb.width, a.rgb.height
    ok = (
        (pa[:, 0] >= 0) & (pa[:, 0] < w) & (pa[:, 1] >= 0) & (pa[:, 1] < h)
        & (pb[:, 0] >= 0) & (pb[:, 0] < w) & (pb[:, 1] >= 0) & (pb[:, 1] < h)
        & np.isfinite(pa).all(axis=1) & np.isfinite(pb).all(axis=1)
    )
    corr = CorrespondenceSet(
        pixels_a=pa[ok].astype(np.int64),
        pixels_b=pb[ok].astype(np.int64),
        source="geometric",
        short=corr.short,
    )
    if len(corr) == 0:
        raise ValueError("all geometric correspondences pruned by augmentation bounds")
    return img_a, img_b, corr


def train_step(state: TrainState, batch: Sequence, cfg: TrainConfig, rng: Rng) -> float:
    """One forward/backward/Adam update over a batch of items.

    Items are Images in synthetic mode, (frame, frame) tuples in geometric
    mode. Returns the loss value.
    """
    fwd = []
    views = []
    for i, item in enumerate(batch):
        if cfg.mode == "synthetic":
            img_a, img_b, corr = _synthetic_item(item, cfg, rng.child(i))
        else:
            img_a, img_b, corr = _geometric_item(item, cfg, rng.child(i))
        desc_a, cache_a = forward(state.params, img_a)
        desc_b, cache_b = forward(state.params, img_b)
        da = desc_a.data[corr.pixels_a[:, 1], corr.pixels_a[:, 0]]
        db = desc_b.data[corr.pixels_b[:, 1], corr.pixels_b[:, 0]]
        fwd.append((cache_a, cache_b, corr))
        views.append((da, db))

    batch_desc, group_ids, _ = _gather_batch(views)
    lcfg = cfg.loss_config()
    loss, dgrads = ntxent_with_grad(batch_desc, lcfg, group_ids)
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss at step {state.step_count}")

    total_w = None
    total_b = None
    offset = 0
    for (cache_a, cache_b, corr), (da, db) in zip(fwd, views):
        n = da.shape[0]
        block = dgrads[offset : offset + 2 * n]
        offset += 2 * n
        dws_a, dbs_a = backward(state.params, cache_a, corr.pixels_a, block[0::2])
        dws_b, dbs_b = backward(state.params, cache_b, corr.pixels_b, block[1::2])
        if total_w is None:
            total_w = [wa + wb for wa, wb in zip(dws_a, dws_b)]
            total_b = [ba + bb for ba, bb in zip(dbs_a, dbs_b)]
        else:
            for k in range(len(total_w)):
                total_w[k] += dws_a[k] + dws_b[k]
                total_b[k] += dbs_a[k] + dbs_b[k]

    arrays = state.params.arrays()
    grads = []
    for wgrad, bgrad in zip(total_w, total_b):
        grads.extend([wgrad.astype(state.params.dtype), bgrad.astype(state.params.dtype)])
    state.optimizer.step(arrays, grads)
    state.step_count += 1
    return float(loss)


# --- validation --------------------------------------------------------------


def load_validation_scenes(manifest: DatasetManifest, split: str = "val"):
    """(scene image, labels, views) triples for a manifest split."""
    out = []
    for rec in getattr(manifest, split):
        img = load_image(manifest.root / rec.image_path)
        labels = load_labels(manifest, rec)
        out.append((img, labels, rec.views))
    return out


def validate(params: EncoderParams, val_scenes, cfg: TrainConfig, rng: Rng) -> float:
    """PCK-AUC over K=1..100 for keypoints tracked across ground-truth pairs."""
    if not val_scenes:
        raise ValueError("empty validation set")
    errors = []
    for si, (img, labels, views) in enumerate(val_scenes):
        pairs = pairs_from_scene(img, labels, views)
        errs = evaluate_pairs(params, pairs, cfg.val_keypoints, rng.child(si))
        errors.append(errs)
    return pck_auc(np.concatenate(errors))


def validate_geometric(params: EncoderParams, frame_pairs, cfg: TrainConfig, rng: Rng) -> float:
    """PCK-AUC with ground truth taken from the pruned correspondence maps."""
    if not frame_pairs:
        raise ValueError("empty validation set")
    errors = []
    for pi, (a, b) in enumerate(frame_pairs):
        cmap = correspondence_map(a, b)
        corr = sample_geometric_correspondences(cmap, cfg.val_keypoints, rng.child(pi))
        desc_a, _ = forward(params, a.rgb)
        desc_b, _ = forward(params, b.rgb)
        queries = desc_a.data[corr.pixels_a[:, 1], corr.pixels_a[:, 0]]
        found, _ = track_many(desc_b, queries)
        gt = cmap.target[corr.pixels_a[:, 1], corr.pixels_a[:, 0]]
        errors.append(np.linalg.norm(found.astype(np.float64) - gt, axis=1))
    return pck_auc(np.concatenate(errors))


# --- full runs ---------------------------------------------------------------


@dataclass
class SyntheticData:
    manifest: DatasetManifest
    train_images: List[Image]
    val_scenes: list

    @staticmethod
    def load(manifest: DatasetManifest) -> "SyntheticData":
        imgs = [load_image(manifest.root / r.image_path) for r in manifest.train]
        return SyntheticData(
            manifest=manifest,
            train_images=imgs,
            val_scenes=load_validation_scenes(manifest, "val"),
        )


@dataclass
class GeometricData:
    train_pairs: List[Tuple[PosedDepthFrame, PosedDepthFrame]]
    val_pairs: List[Tuple[PosedDepthFrame, PosedDepthFrame]]

    @staticmethod
    def from_frames(frames: List[PosedDepthFrame], n_val_pairs: int = 2) -> "GeometricData":
        pairs = [
            (frames[i], frames[j])
            for i in range(len(frames))
            for j in range(len(frames))
            if i != j
        ]
        if len(pairs) <= n_val_pairs:
            raise ValueError("not enough frame pairs for a train/val split")
        return GeometricData(train_pairs=pairs[:-n_val_pairs], val_pairs=pairs[-n_val_pairs:])


def fit(cfg: TrainConfig, data, out_dir) -> Tuple[EncoderParams, List[dict]]:
    """Run the full schedule; retain the best-validation checkpoint.

    Writes `log.csv` (epoch, train_loss, val_pck_auc) and `best.ckpt` under
    out_dir. Returns (best params, log rows).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = init_state(cfg)
    rng = Rng(cfg.seed, stream=2)
    best_path = out / "best.ckpt"

    if cfg.epochs == 0:
        state.best_params = state.params.copy()
        save_checkpoint(state.best_params, best_path)
        _write_log(out / "log.csv", [])
        return state.best_params, []

    for epoch in range(cfg.epochs):
        erng = rng.child(epoch)
        losses = []
        for step in range(cfg.batches_per_epoch):
            srng = erng.child(step)
            if cfg.mode == "synthetic":
                idx = srng.np.integers(0, len(data.train_images), size=cfg.batch_size)
                batch = [data.train_images[i] for i in idx]
            else:
                idx = srng.np.integers(0, len(data.train_pairs), size=cfg.batch_size)
                batch = [data.train_pairs[i] for i in idx]
            try:
                losses.append(train_step(state, batch, cfg, srng.child(1)))
            except TrainingDivergedError as e:
                raise TrainingDivergedError(
                    f"{e} (epoch {epoch}, step {step}, seed {cfg.seed})"
                ) from e
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if (epoch + 1) % cfg.validate_every == 0 or epoch == cfg.epochs - 1:
            vrng = Rng(cfg.seed, stream=3).child(epoch)
            if cfg.mode == "synthetic":
                score = validate(state.params, data.val_scenes, cfg, vrng)
            else:
                score = validate_geometric(state.params, data.val_pairs, cfg, vrng)
            row["val_pck_auc"] = score
            if score > state.best_score:
                state.best_score = score
                state.best_params = state.params.copy()
                save_checkpoint(state.best_params, best_path)
        state.log.append(row)
    _write_log(out / "log.csv", state.log)
    if state.best_params is None:
        state.best_params = state.params.copy()
        save_checkpoint(state.best_params, best_path)
    return state.best_params, state.log


def _write_log(path, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_pck_auc"])
        for row in rows:
            writer.writerow(
                [row["epoch"], repr(row["train_loss"]), repr(row.get("val_pck_auc", ""))]
            )
