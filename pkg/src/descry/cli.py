"""Command-line entry points wiring dataset generation, training, evaluation,
invariance sweeps, heatmap batch jobs and the annotation server.

Outputs are written to a temp directory next to the target and promoted
atomically on success. Exit codes: 0 success, 1 usage/config error, 2
runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .core import Rng, load_image, save_image


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="descry", description=__doc__)
    p.add_argument(
        "command",
        choices=["gen-scenes", "train", "eval", "invariance", "heatmap", "serve"],
    )
    p.add_argument("--config", default="", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="K=V", help="override config key")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1, help="worker parallelism; 1 = deterministic")
    p.add_argument("--out", default=None, help="output directory (default $DESCRY_OUT or ./out)")
    p.add_argument("--print-config", action="store_true", help="print resolved config and exit")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config or None, args.set)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.print_config:
        print(json.dumps(cfg, indent=1))
        return 0
    out_dir = Path(args.out or os.environ.get("DESCRY_OUT", "out"))
    try:
        if args.command == "serve":
            return _cmd_serve(cfg)
        with _staged_output(out_dir) as tmp:
            if args.command == "gen-scenes":
                _cmd_gen_scenes(cfg, tmp)
            elif args.command == "train":
                _cmd_train(cfg, tmp)
            elif args.command == "eval":
                _cmd_eval(cfg, tmp)
            elif args.command == "invariance":
                _cmd_invariance(cfg, tmp)
            elif args.command == "heatmap":
                _cmd_heatmap(cfg, tmp)
        return 0
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


class _staged_output:
    """Write into a sibling temp dir; move files into place only on success."""

    def __init__(self, final: Path):
        self.final = final

    def __enter__(self) -> Path:
        self.final.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(
            tempfile.mkdtemp(prefix=self.final.name + ".partial.", dir=self.final.parent)
        )
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        self.final.mkdir(parents=True, exist_ok=True)
        for item in sorted(self.tmp.rglob("*")):
            rel = item.relative_to(self.tmp)
            dest = self.final / rel
            if item.is_dir():
                dest.mkdir(parents=True, exist_ok=True)
            else:
                dest.parent.mkdir(parents=True, exist_ok=True)
                os.replace(item, dest)
        shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _cmd_gen_scenes(cfg: dict, out: Path) -> None:
    from .scenegen import generate_dataset

    d = cfg["data"]
    generate_dataset(
        out,
        seed=cfg["seed"],
        width=d["width"],
        height=d["height"],
        n_objects=d["n_objects"],
        n_train=d["n_train"],
        n_val=d["n_val"],
        n_test=d["n_test"],
        views_per_scene=d["views_per_scene"],
        max_rotation=d["max_rotation"],
        scale_range=tuple(d["scale_range"]),
    )


def _load_manifest(cfg: dict):
    from .scenegen import load_manifest

    dataset = cfg["data"]["dataset"]
    if not dataset:
        raise ConfigError("data.dataset must point at a generated dataset directory")
    return load_manifest(dataset)


def _cmd_train(cfg: dict, out: Path) -> None:
    from . import train as trainmod
    from .reports import training_figure

    tcfg = cfgmod.train_config(cfg)
    if tcfg.mode == "synthetic":
        data = trainmod.SyntheticData.load(_load_manifest(cfg))
    else:
        from .geomcorr import load_scene_dir

        scene_dir = cfg["data"]["scene_dir"]
        if not scene_dir:
            raise ConfigError("data.scene_dir must point at an RGBD scene directory")
        data = trainmod.GeometricData.from_frames(load_scene_dir(scene_dir))
    _, log = trainmod.fit(tcfg, data, out)
    if log:
        training_figure(log, out / "training.png")


def _eval_pairs_from_split(cfg: dict, manifest, split: str):
    from .evaluation import pairs_from_scene
    from .scenegen import load_labels

    pairs = []
    for rec in getattr(manifest, split):
        img = load_image(manifest.root / rec.image_path)
        labels = load_labels(manifest, rec)
        pairs.extend(pairs_from_scene(img, labels, rec.views))
    n_pairs = cfg["eval"]["n_pairs"]
    if n_pairs:
        pairs = pairs[:n_pairs]
    return pairs


def _load_params(cfg: dict, section: str):
    from .encoder import load_checkpoint

    path = cfg[section]["checkpoint"]
    if not path:
        raise ConfigError(f"{section}.checkpoint must point at a checkpoint file")
    return load_checkpoint(path)


def _cmd_eval(cfg: dict, out: Path) -> None:
    from .evaluation import evaluate_pairs, summarize
    from .reports import error_figure

    params = _load_params(cfg, "eval")
    manifest = _load_manifest(cfg)
    pairs = _eval_pairs_from_split(cfg, manifest, cfg["eval"]["split"])
    errors = evaluate_pairs(params, pairs, cfg["eval"]["n_keypoints"], Rng(cfg["seed"], stream=5))
    summary = summarize(errors)
    with open(out / "summary.json", "w") as f:
        json.dump(summary.as_row(), f, indent=1)
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(summary.as_row()))
        w.writeheader()
        w.writerow(summary.as_row())
    np.savetxt(out / "errors.csv", errors, header="pixel_error", comments="")
    error_figure(errors, summary, out / "errors.png")


def _cmd_invariance(cfg: dict, out: Path) -> None:
    from .evaluation import invariance_sweep
    from .reports import sweep_figure
    from .scenegen import load_labels

    params = _load_params(cfg, "invariance")
    manifest = _load_manifest(cfg)
    recs = manifest.test[: cfg["invariance"]["n_scenes"]]
    scenes = [
        (load_image(manifest.root / r.image_path), load_labels(manifest, r)) for r in recs
    ]
    curves = {}
    for kind in cfg["invariance"]["sweeps"]:
        curve = invariance_sweep(
            params, scenes, kind, cfg["invariance"]["n_keypoints"], Rng(cfg["seed"], stream=6)
        )
        curves[kind] = curve
        with open(out / f"sweep_{kind}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["magnitude", "q75_pixel_error"])
            for mag, q in curve:
                w.writerow([mag, repr(q)])
    sweep_figure(curves, out / "sweeps.png")


def _cmd_heatmap(cfg: dict, out: Path) -> None:
    from .encoder import forward
    from .heatmap import HeatmapConfig, KeypointDB, db_heatmap, grasp_candidates

    params = _load_params(cfg, "heatmap")
    h = cfg["heatmap"]
    if not h["db"]:
        raise ConfigError("heatmap.db must point at a keypoint DB JSON file")
    db = KeypointDB.load(h["db"])
    hm_cfg = HeatmapConfig(eta=h["eta"])
    grasp = load_image(h["graspability"]) if h["graspability"] else None
    results = {}
    for img_path in h["images"]:
        img = load_image(img_path)
        desc, _ = forward(params, img)
        fused = db_heatmap(desc, db, hm_cfg)
        stem = Path(img_path).stem
        save_image(fused, out / f"heatmap_{stem}.png")
        if grasp is not None:
            cands = grasp_candidates(fused, grasp, h["threshold"], h["nms_radius"])
            results[stem] = [{"u": u, "v": v, "score": s} for u, v, s in cands]
    if results:
        with open(out / "candidates.json", "w") as f:
            json.dump(results, f, indent=1)


def _cmd_serve(cfg: dict) -> int:
    from .service import ServiceConfig, serve

    s = cfg["serve"]
    svc = ServiceConfig.from_env_and_args(
        image_dir=s["image_dir"] or None,
        checkpoint_path=s["checkpoint"] or None,
        db_dir=s["db_dir"] or None,
        static_dir=s["static_dir"] or None,
        eta=cfg["heatmap"]["eta"],
    )
    serve(svc, host=s["host"], port=s["port"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
