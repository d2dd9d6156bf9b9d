"""Run configuration: JSON document with per-module sections, schema-checked.

Unknown keys are rejected (listed all at once), every field has a default,
and the fully-resolved config round-trips through --print-config.
"""

from __future__ import annotations

import copy
import json
from typing import Any, Dict, List

from .augment import AugmentationSpec
from .train import TrainConfig


class ConfigError(ValueError):
    """Schema violation: lists every offending key."""


DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "data": {
        "dataset": "",  # manifest directory for synthetic mode
        "scene_dir": "",  # RGBD scene directory for geometric mode
        "width": 128,
        "height": 128,
        "n_objects": 6,
        "n_train": 200,
        "n_val": 20,
        "n_test": 20,
        "views_per_scene": 2,
        "max_rotation": 45.0,
        "scale_range": [0.8, 1.25],
    },
    "augment": AugmentationSpec().to_dict(),
    "encoder": {"dim": 16},
    "loss": {"temperature": 0.07, "pool": "batch"},
    "train": {
        "mode": "synthetic",
        "learning_rate": 0.0003,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "correspondences": 512,
        "batch_size": 2,
        "batches_per_epoch": 50,
        "epochs": 30,
        "validate_every": 1,
        "geometric_augment_probability": 0.5,
        "val_keypoints": 50,
    },
    "eval": {
        "checkpoint": "",
        "split": "test",
        "n_pairs": 0,  # 0 = all pairs in the split
        "n_keypoints": 50,
    },
    "invariance": {
        "checkpoint": "",
        "sweeps": ["rotation", "scale", "tilt"],
        "n_scenes": 5,
        "n_keypoints": 50,
    },
    "heatmap": {
        "checkpoint": "",
        "db": "",  # keypoint DB JSON path
        "images": [],  # PNG paths to render heatmaps for
        "graspability": "",  # optional graspability mask PNG
        "eta": 0.1,
        "threshold": 0.5,
        "nms_radius": 10.0,
    },
    "serve": {
        "host": "127.0.0.1",
        "port": 8000,
        "image_dir": "",
        "checkpoint": "",
        "db_dir": "",
        "static_dir": "",
    },
}


def _check_unknown(doc: Dict[str, Any], defaults: Dict[str, Any], prefix: str, bad: List[str]):
    for key, val in doc.items():
        if key not in defaults:
            bad.append(f"{prefix}{key}")
        elif isinstance(val, dict) and isinstance(defaults[key], dict):
            _check_unknown(val, defaults[key], f"{prefix}{key}.", bad)


def _merge(base: Dict[str, Any], over: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve(doc: Dict[str, Any] | None = None, overrides: List[str] = ()) -> Dict[str, Any]:
    """Merge defaults <- config file <- --set overrides, rejecting unknown keys."""
    doc = doc or {}
    bad: List[str] = []
    _check_unknown(doc, DEFAULTS, "", bad)
    if bad:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(bad))}")
    cfg = _merge(DEFAULTS, doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = cfg
        parts = key.split(".")
        ref = DEFAULTS
        for p in parts[:-1]:
            if not isinstance(ref, dict) or p not in ref:
                raise ConfigError(f"unknown config keys: {key}")
            ref = ref[p]
            node = node.setdefault(p, {})
        if not isinstance(ref, dict) or parts[-1] not in ref:
            raise ConfigError(f"unknown config keys: {key}")
        node[parts[-1]] = val
    return cfg


def load(path, overrides: List[str] = ()) -> Dict[str, Any]:
    doc = {}
    if path:
        with open(path) as f:
            doc = json.load(f)
    return resolve(doc, overrides)


def train_config(cfg: Dict[str, Any]) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        mode=t["mode"],
        dim=cfg["encoder"]["dim"],
        learning_rate=t["learning_rate"],
        beta1=t["beta1"],
        beta2=t["beta2"],
        adam_eps=t["adam_eps"],
        correspondences=t["correspondences"],
        batch_size=t["batch_size"],
        batches_per_epoch=t["batches_per_epoch"],
        epochs=t["epochs"],
        validate_every=t["validate_every"],
        temperature=cfg["loss"]["temperature"],
        pool=cfg["loss"]["pool"],
        augment=AugmentationSpec.from_dict(cfg["augment"]),
        geometric_augment_probability=t["geometric_augment_probability"],
        val_keypoints=t["val_keypoints"],
        seed=cfg["seed"],
    )
