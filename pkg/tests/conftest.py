import numpy as np
import pytest

from jointpred.config import ExperimentConfig
from jointpred.scene import SCENARIO_KINDS, build_frames, collate, generate_scene


def small_config(variant: str, **kw) -> ExperimentConfig:
    base = dict(variant=variant, dim=16, heads=2, n_layers=2, k=3, latent_dim=4, t_past=12, t_future=10,
                bezier_degree=4, seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


def small_scenes(n: int, seed: int = 0, t_past: int = 12, t_future: int = 10, **kw):
    return [generate_scene(SCENARIO_KINDS[i % 4], seed * 1000 + i, t_past=t_past, t_future=t_future, **kw)
            for i in range(n)]


def batch_of(scenes):
    return collate([build_frames(s) for s in scenes])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def model_outputs(model, scene) -> dict[str, np.ndarray]:
    """Local-frame decoder outputs for one scene, agent axis first where there is one."""
    from jointpred import autodiff as ad

    batch = batch_of([scene])
    with ad.no_grad():
        out = model.decode(batch)
    res = {"trajectories": out.trajectories.data[0]}
    if out.agent_logits is not None:
        res["agent_logits"] = out.agent_logits.data[0]
    if out.scene_logits is not None:
        res["scene_logits"] = out.scene_logits.data[0]
    return res


def backbone_tokens(backbone, scene) -> np.ndarray:
    from jointpred import autodiff as ad

    with ad.no_grad():
        return backbone(batch_of([scene])).actor.data[0]
