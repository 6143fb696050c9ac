"""Overfit all five variants on ten synthetic scenes and compare minSADE.

    python demos/02_overfit_variants.py --steps 2000
"""

# %%
import argparse
import time

import numpy as np

from jointpred.config import VARIANTS, preset
from jointpred.evaluation import min_scene_metrics
from jointpred.scene import SCENARIO_KINDS, build_frames, collate, generate_scene
from jointpred.training import train

ap = argparse.ArgumentParser()
ap.add_argument("--steps", type=int, default=500)
args = ap.parse_args()

scenes = [generate_scene(SCENARIO_KINDS[i % 4], 1000 + i) for i in range(10)]
batch = collate([build_frames(s) for s in scenes])

# %%
for variant in VARIANTS:
    t0 = time.perf_counter()
    cfg = preset("desk", variant=variant, epochs=args.steps, lr_decay_epochs=args.steps)
    res = train(cfg, scenes, max_steps=args.steps)
    preds = res.model.predict(batch, 6, rng=0)
    sade = np.mean([min_scene_metrics(p.trajectories, s.futures())[0] for p, s in zip(preds, scenes)])
    print(f"{variant:24s} minSADE {sade:.4f} m   final loss {res.curve[-1]['total']:.4f}   "
          f"{time.perf_counter() - t0:.0f}s")
