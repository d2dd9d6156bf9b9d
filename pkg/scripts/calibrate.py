"""Reference run for the desk-scale learning-signal thresholds."""

import sys
import time
from pathlib import Path

import numpy as np

from descry import train as T
from descry import scenegen
from descry.core import Rng, load_image
from descry.encoder import init
from descry.evaluation import evaluate_pairs, pairs_from_scene, summarize
from descry.scenegen import load_labels

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("/tmp/calib")


def test_pairs(mf):
    pairs = []
    for rec in mf.test:
        img = load_image(mf.root / rec.image_path)
        labels = load_labels(mf, rec)
        pairs.extend(pairs_from_scene(img, labels, rec.views))
    return pairs


def main():
    ds = OUT / "dataset"
    if not (ds / "manifest.json").exists():
        t0 = time.time()
        scenegen.generate_dataset(ds, seed=0)
        print(f"dataset generated in {time.time()-t0:.0f}s", flush=True)
    mf = scenegen.load_manifest(ds)
    data = T.SyntheticData.load(mf)
    pairs = test_pairs(mf)

    for seed in (0, 1, 2):
        run = OUT / f"run_seed{seed}"
        t0 = time.time()
        cfg = T.TrainConfig(seed=seed)
        params, log = T.fit(cfg, data, run)
        print(f"seed {seed}: trained in {time.time()-t0:.0f}s, "
              f"best val {max(r.get('val_pck_auc', 0) for r in log):.4f}", flush=True)
        untrained = init(cfg.dim, Rng(seed, stream=1))
        errs_t = evaluate_pairs(params, pairs, 50, Rng(seed, stream=20))
        errs_u = evaluate_pairs(untrained, pairs, 50, Rng(seed, stream=20))
        st, su = summarize(errs_t), summarize(errs_u)
        print(f"seed {seed}: trained median {st.median:.3f} q75 {st.q75:.3f} | "
              f"untrained median {su.median:.3f} | ratio {st.median/su.median:.4f}", flush=True)


if __name__ == "__main__":
    main()
