import numpy as np
import pytest

from jointpred.scene import SceneError, Scene
from jointpred.training import CHECKPOINT_NAME, CURVE_FIELDS, CURVE_NAME, TrainingError, train

from conftest import small_config, small_scenes


def _data(cfg, n=4):
    return small_scenes(n, t_past=cfg.t_past, t_future=cfg.t_future)


def test_writes_checkpoint_and_curve(tmp_path):
    cfg = small_config("joint_loss", epochs=2, batch_size=2)
    res = train(cfg, _data(cfg), out_dir=tmp_path)
    assert res.epochs_run == 2 and len(res.curve) == 4
    lines = (tmp_path / CURVE_NAME).read_text().splitlines()
    assert lines[0] == ",".join(CURVE_FIELDS) and len(lines) == 5
    assert (tmp_path / CHECKPOINT_NAME).exists()


@pytest.mark.parametrize("variant", ["marginal_recombination", "cvae"])
def test_training_is_bit_reproducible(variant):
    cfg = small_config(variant, epochs=2, batch_size=2)
    a = train(cfg, _data(cfg)).checkpoint().to_bytes()
    b = train(cfg, _data(cfg)).checkpoint().to_bytes()
    assert a == b


def test_loss_decreases_on_repeated_batch():
    cfg = small_config("multi_mlp", epochs=80, batch_size=4, lr_decay_epochs=80)
    res = train(cfg, _data(cfg))
    assert res.curve[-1]["total"] < 0.5 * res.curve[0]["total"]


def test_max_steps_and_schedule():
    cfg = small_config("marginal_recombination", epochs=10, batch_size=1, lr_decay_epochs=4)
    res = train(cfg, _data(cfg, 3), max_steps=7)
    assert len(res.curve) == 7 and res.epochs_run == 3
    assert res.curve[0]["lr"] == cfg.lr_initial
    assert res.curve[-1]["lr"] < res.curve[0]["lr"]


def test_cvae_curve_records_kl():
    cfg = small_config("cvae", epochs=1, batch_size=2)
    res = train(cfg, _data(cfg))
    assert all(r["kl"] is not None and r["kl"] >= 0 for r in res.curve)


def test_on_step_callback():
    seen = []
    cfg = small_config("multi_mlp", epochs=1, batch_size=2)
    train(cfg, _data(cfg), on_step=lambda step, model, row: seen.append(step))
    assert seen == [0, 1]


def test_nan_loss_names_step():
    cfg = small_config("joint_loss", epochs=1, batch_size=2)
    scenes = _data(cfg)
    bad = scenes[0]
    bad.agents[0].future[3, 0] = np.nan
    with pytest.raises(TrainingError, match="step 0"):
        train(cfg, [bad])


def test_scenes_without_futures_rejected():
    cfg = small_config("joint_loss", epochs=1)
    s = _data(cfg, 1)[0]
    for a in s.agents:
        a.future = None
    with pytest.raises(SceneError, match="no ground-truth"):
        train(cfg, [Scene(s.id, s.agents, s.map, s.dt)])


def test_empty_training_set():
    with pytest.raises(SceneError, match="empty"):
        train(small_config("joint_loss"), [])
