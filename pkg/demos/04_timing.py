"""Inference time against scene size, with the linear timing model.

Agents are padded with background traffic; extra lanes grow the map
independently so the two coefficients can be separated.

    python demos/04_timing.py --out timing.svg
"""

# %%
import argparse

import numpy as np

from jointpred.config import preset
from jointpred.evaluation import bench_inference, plot_timing
from jointpred.models import build_model
from jointpred.scene import build_frames, collate, generate_scene

ap = argparse.ArgumentParser()
ap.add_argument("--out", default="timing.svg")
args = ap.parse_args()

frames = [
    build_frames(generate_scene("merge", 10 * i + extra, n_agents=na, extra_lanes=extra))
    for i, na in enumerate(range(4, 33, 4))
    for extra in (0, 6, 12)
]
sizes = [(f.n_agents, f.n_lanes) for f in frames]

# %%
results = {}
for variant in ("marginal_recombination", "joint_loss", "multi_mlp", "anchor_transformer", "cvae"):
    model = build_model(preset("desk", variant=variant))
    rng = np.random.default_rng(0)
    results[variant] = bench_inference(lambda f: model.predict(collate([f]), 6, "sample", rng), frames, sizes)
    m = results[variant].model
    print(f"{variant:24s} T = {m.gamma0:6.2f} + {m.gamma_a:.3f} N_a + {m.gamma_l:.3f} N_l  ms  (R2 {m.r2:.2f})")

plot_timing(results, args.out)
print("wrote", args.out)
