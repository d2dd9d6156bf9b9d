"""Reference run for the rotation-ablation ordering thresholds.

The with-affine arm is the default desk schedule (the same models as the
learning-signal reference in calibrate.py); this script trains the no-affine
arm on the same dataset and compares the rotation sweep at 90 degrees.
"""

import sys
import time
from dataclasses import replace
from pathlib import Path

from descry import train as T
from descry import scenegen
from descry.core import Rng, load_image
from descry.encoder import load_checkpoint
from descry.evaluation import invariance_sweep
from descry.scenegen import load_labels

CALIB = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("/tmp/calib")


def main():
    mf = scenegen.load_manifest(CALIB / "dataset")
    data = T.SyntheticData.load(mf)
    scenes = [
        (load_image(mf.root / r.image_path), load_labels(mf, r)) for r in mf.test[:5]
    ]
    for seed in (0, 1, 2):
        q75 = {}
        for name, affine in (("with", True), ("without", False)):
            run = CALIB / (f"run_seed{seed}" if affine else f"run_seed{seed}_noaffine")
            t0 = time.time()
            if (run / "best.ckpt").exists():
                params = load_checkpoint(run / "best.ckpt")
            else:
                cfg = T.TrainConfig(
                    seed=seed,
                    augment=replace(T.TrainConfig().augment, affine=affine),
                )
                params, _ = T.fit(cfg, data, run)
            curve = invariance_sweep(
                params, scenes, "rotation", 50, Rng(seed, stream=30), magnitudes=[0.0, 90.0]
            )
            q75[name] = dict(curve)[90.0]
            print(f"seed {seed} {name}-affine: {time.time()-t0:.0f}s "
                  f"q75@90={q75[name]:.2f}", flush=True)
        print(f"seed {seed}: ratio q75@90 without/with = {q75['without']/q75['with']:.3f}",
              flush=True)


if __name__ == "__main__":
    main()
