import json
import subprocess
import sys

import pytest

from jointpred.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, run = root / "data", root / "run"
    assert main(["generate", "--count", "6", "--seed", "3", "--out", str(data)]) == 0
    assert main(["train", "--data", str(data), "--variant", "marginal_recombination", "--epochs", "1",
                 "--out", str(run)]) == 0
    return root, data, run


def test_generate_writes_index(workspace):
    _, data, _ = workspace
    index = json.loads((data / "index.json").read_text())
    assert len(index["splits"]["train"]) == 5 and len(index["splits"]["val"]) == 1
    assert "config_digest" in index["meta"]


def test_train_outputs(workspace, capsys):
    _, _, run = workspace
    assert (run / "checkpoint.ckpt").exists() and (run / "loss_curve.csv").exists()


def test_predict(workspace, capsys):
    root, data, run = workspace
    scene = sorted(data.glob("scene_*.json"))[0]
    out = root / "pred.json"
    assert main(["predict", "--checkpoint", str(run / "checkpoint.ckpt"), "--scene", str(scene), "--k", "4",
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["variant"] == "marginal_recombination" and len(doc["modes"]) == 4
    assert len(doc["mode_indices"]) == 4
    assert abs(sum(doc["probabilities"]) - 1) < 1e-12


def test_evaluate_runs(workspace, capsys):
    root, data, run = workspace
    out = root / "eval"
    assert main(["evaluate", "--checkpoint", str(run / "checkpoint.ckpt"), "--data", str(data), "--split", "train",
                 "--runs", "2", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["n_scenes"] == 5 and set(rep["run_summary"]) == {"minSADE", "minSFDE", "actorMR", "actorCR"}
    assert (out / "metrics.svg").exists()


def test_recombine(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text(json.dumps([[0.7, 0.3], [0.6, 0.4]]))
    assert main(["recombine", "--scores", str(p), "--k", "2"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [m["indices"] for m in doc["modes"]] == [[0, 0], [0, 1]]
    assert [round(m["score"], 12) for m in doc["modes"]] == [0.42, 0.28]
    assert main(["recombine", "--scores", str(p), "--k", "2", "--bruteforce"]) == 0
    assert json.loads(capsys.readouterr().out)["modes"] == doc["modes"]


def test_bench(workspace, capsys):
    root, data, run = workspace
    out = root / "bench"
    assert main(["bench", "--checkpoint", str(run / "checkpoint.ckpt"), "--data", str(data), "--repetitions", "1",
                 "--warmup", "0", "--out", str(out)]) == 0
    doc = json.loads((out / "timing.json").read_text())
    assert len(doc["samples"]) == 6 and "gamma_a" in doc["timing_model"]
    assert doc["reference_timing_model"]["gamma_a"] == 0.684
    assert (out / "timing.svg").exists()


def test_gradcheck_single_variant(tmp_path, capsys):
    out = tmp_path / "gc.json"
    assert main(["gradcheck", "--variant", "multi_mlp", "--instances", "2", "--skip-ops", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["ok"] is True


def test_usage_error_exit_code(capsys):
    assert main(["train"]) == 1
    assert main(["nonsense"]) == 1


def test_validation_exit_codes(tmp_path, capsys):
    assert main(["predict", "--checkpoint", str(tmp_path / "none.ckpt"), "--scene", "x.json"]) == 2
    assert "none.ckpt" in capsys.readouterr().err
    assert main(["generate", "--count", "2", "--kinds", "roundabout", "--out", str(tmp_path / "d")]) == 2
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"variant": "joint_loss", "beta": 0.3}))
    assert main(["train", "--config", str(bad), "--data", str(tmp_path), "--out", str(tmp_path / "r")]) == 2


def test_prior_mean_first_rejected_for_non_cvae(workspace, capsys):
    root, data, run = workspace
    scene = sorted(data.glob("scene_*.json"))[0]
    assert main(["predict", "--checkpoint", str(run / "checkpoint.ckpt"), "--scene", str(scene),
                 "--sampling", "prior-mean-first"]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "jointpred", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("jointpred")
