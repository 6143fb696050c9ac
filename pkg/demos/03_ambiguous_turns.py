"""Ambiguous futures: one past, several manoeuvres.

A turn scene generated with ``branch=1`` and ``branch=2`` has the same past
and map but the ego car turns left in one and right in the other. Training
on such twins shows two things:

* the CVAE posterior sees the future, so its latent carries the manoeuvre
  and posterior reconstructions beat prior samples by a wide margin;
* the independent heads of Multi-MLP receive identical inputs for both
  twins, so winner-takes-all can settle on one head that averages them.

    python demos/03_ambiguous_turns.py --steps 2000
"""

# %%
import argparse

import numpy as np

from jointpred.config import preset
from jointpred.evaluation import min_scene_metrics
from jointpred.scene import SCENARIO_KINDS, build_frames, collate, generate_scene
from jointpred.training import train

ap = argparse.ArgumentParser()
ap.add_argument("--steps", type=int, default=1000)
args = ap.parse_args()

scenes = [generate_scene(SCENARIO_KINDS[i % 3], 1000 + i) for i in range(6)]
twins = [generate_scene("turn_multi_modal", s, branch=b, scene_id=f"turn{s}-{b}") for s in (0, 1) for b in (1, 2)]
scenes += twins
batch = collate([build_frames(s) for s in scenes])
ego = np.array([s.agents[0].future[-1] for s in twins])
print("ego end points of the twins (global):\n", ego.round(1))

# %%
cfg = preset("desk", variant="cvae", epochs=args.steps, lr_decay_epochs=args.steps)
cvae = train(cfg, scenes, max_steps=args.steps).model
gt, mask = batch.future_local, batch.agent_mask


def recon_error(source):
    errs = [(np.linalg.norm(cvae.reconstruct(batch, source, rng=s) - gt, axis=-1).mean(-1) * mask).sum() / mask.sum()
            for s in range(50)]
    return float(np.mean(errs))


print(f"cvae reconstruction error: posterior {recon_error('posterior'):.3f} m, prior {recon_error('prior'):.3f} m")

# %%
for variant in ("cvae", "multi_mlp", "anchor_transformer"):
    cfg = preset("desk", variant=variant, epochs=args.steps, lr_decay_epochs=args.steps)
    model = cvae if variant == "cvae" else train(cfg, scenes, max_steps=args.steps).model
    preds = model.predict(batch, 6, rng=0)
    per_scene = [min_scene_metrics(p.trajectories, s.futures())[0] for p, s in zip(preds, scenes)]
    print(f"{variant:20s} minSADE all {np.mean(per_scene):.3f}  twins {np.round(per_scene[-4:], 2)}")
