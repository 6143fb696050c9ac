import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointpred.evaluation import (
    METRICS,
    REFERENCE_TIMING,
    EvalReport,
    JointPrediction,
    TimingModel,
    actor_collision_rate,
    actor_miss_rate,
    bench_inference,
    collision_pairs,
    evaluate_predictions,
    fit_timing_model,
    min_scene_metrics,
    scene_metrics,
)
from jointpred.scene import AGENT_RADIUS, AGENT_TYPES


def brute_force_metrics(pred, gt, types, threshold=2.0):
    """Loop-based recomputation with ``math`` only."""
    K, Na, T = len(pred), len(pred[0]), len(pred[0][0])
    ades, fdes = [], []
    for k in range(K):
        tot, fin = 0.0, 0.0
        for a in range(Na):
            for t in range(T):
                tot += math.hypot(pred[k][a][t][0] - gt[a][t][0], pred[k][a][t][1] - gt[a][t][1])
            fin += math.hypot(pred[k][a][T - 1][0] - gt[a][T - 1][0], pred[k][a][T - 1][1] - gt[a][T - 1][1])
        ades.append(tot / (Na * T))
        fdes.append(fin / Na)
    best = min(range(K), key=lambda k: (ades[k], k))
    missed = 0
    for a in range(Na):
        e = math.hypot(pred[best][a][T - 1][0] - gt[a][T - 1][0], pred[best][a][T - 1][1] - gt[a][T - 1][1])
        missed += e > threshold
    hit = 0
    for a in range(Na):
        for b in range(Na):
            if a != b and any(
                math.hypot(pred[best][a][t][0] - pred[best][b][t][0], pred[best][a][t][1] - pred[best][b][t][1])
                < AGENT_RADIUS[types[a]] + AGENT_RADIUS[types[b]]
                for t in range(T)
            ):
                hit += 1
                break
    return {"minSADE": ades[best], "minSFDE": min(fdes), "actorMR": missed / Na, "actorCR": hit / Na}


def random_prediction(seed):
    rng = np.random.default_rng(seed)
    K, Na, T = rng.integers(1, 7), rng.integers(1, 6), rng.integers(2, 12)
    gt = np.cumsum(rng.normal(size=(Na, T, 2)), axis=1) * 2
    pred = gt[None] + rng.normal(size=(K, Na, T, 2)) * rng.uniform(0.1, 4.0)
    types = [AGENT_TYPES[i] for i in rng.integers(0, 3, size=Na)]
    return pred, gt, types


def test_hand_computed_example():
    gt = np.zeros((2, 3, 2))
    pred = np.zeros((2, 2, 3, 2))
    pred[0, :, :, 0] = 1.0  # mode 0: every point 1 m off
    pred[1, 0, :, 0] = 3.0  # mode 1: agent 0 is 3 m off, agent 1 exact
    sade, sfde, best = min_scene_metrics(pred, gt)
    assert (sade, sfde, best) == (1.0, 1.0, 0)
    assert actor_miss_rate(pred, gt, mode=1) == 0.5


def test_collision_uses_sum_of_radii():
    traj = np.zeros((2, 1, 2))
    traj[1, 0, 0] = 2.9
    assert collision_pairs(traj, ["vehicle", "cyclist"]).any()
    traj[1, 0, 0] = 3.0
    assert not collision_pairs(traj, ["vehicle", "cyclist"]).any()
    assert actor_collision_rate(traj, ["vehicle", "vehicle"]) == 1.0


def test_miss_threshold_must_be_positive():
    pred, gt, _ = random_prediction(0)
    with pytest.raises(ValueError):
        actor_miss_rate(pred, gt, threshold=0.0)


def test_shape_mismatch():
    with pytest.raises(ValueError, match="does not match"):
        min_scene_metrics(np.zeros((2, 3, 4, 2)), np.zeros((3, 5, 2)))


@pytest.mark.parametrize("seed", range(20))
def test_metrics_match_brute_force(seed):
    pred, gt, types = random_prediction(seed)
    got = scene_metrics(pred, gt, types)
    want = brute_force_metrics(pred.tolist(), gt.tolist(), types)
    for m in METRICS:
        assert got[m] == pytest.approx(want[m], rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_min_metrics_monotone_in_k(seed):
    pred, gt, _ = random_prediction(seed)
    vals = [min_scene_metrics(pred[:k], gt)[:2] for k in range(1, len(pred) + 1)]
    for (a1, f1), (a2, f2) in zip(vals, vals[1:]):
        assert a2 <= a1 and f2 <= f1


def test_prediction_dict_round_trip():
    p = JointPrediction("s", ["a", "b"], np.ones((2, 2, 3, 2)), np.array([0.4, 0.6]), np.array([[0, 1], [1, 0]]))
    q = JointPrediction.from_dict(json.loads(json.dumps(p.to_dict())))
    assert q.scene_id == "s" and q.k == 2
    np.testing.assert_array_equal(q.mode_indices, p.mode_indices)
    np.testing.assert_array_equal(q.trajectories, p.trajectories)


def _report():
    preds, gts, types = [], [], []
    for s in range(4):
        pred, gt, t = random_prediction(s)
        preds.append(JointPrediction(f"s{s}", [str(i) for i in range(len(t))], pred, np.full(len(pred), 1 / len(pred))))
        gts.append(gt)
        types.append(t)
    return evaluate_predictions(preds, gts, types, "abc123", 6)


def test_report_aggregate_and_csv():
    r = _report()
    assert r.n_scenes == 4
    lines = r.to_csv().splitlines()
    assert lines[0] == "scene_id,n_agents,minSADE,minSFDE,actorMR,actorCR,config_digest"
    assert lines[-1].startswith("__aggregate__,4,")
    assert float(lines[-1].split(",")[2]) == r.aggregate["minSADE"]


def test_run_summary_needs_two_runs():
    r = _report()
    assert r.run_summary() is None
    r.runs = [{m: 1.0 for m in METRICS}, {m: 3.0 for m in METRICS}]
    assert r.run_summary()["minSADE"] == {"mean": 2.0, "std": 1.0}


def test_report_files_are_byte_stable(tmp_path):
    a = _report().write(tmp_path / "a")
    b = _report().write(tmp_path / "b")
    assert [p.name for p in a] == ["report.json", "report.csv", "metrics.svg"]
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()


def test_empty_report_has_nan_aggregate():
    r = EvalReport([], "d", 6)
    assert all(math.isnan(v) for v in r.aggregate.values())


def test_timing_fit_recovers_planted_coefficients():
    rows = [(na, nl, 5 + 0.5 * na + 0.02 * nl) for na in range(2, 12) for nl in (3, 10, 40)]
    m = fit_timing_model(rows)
    assert abs(m.gamma0 - 5) < 1e-9 and abs(m.gamma_a - 0.5) < 1e-9 and abs(m.gamma_l - 0.02) < 1e-9
    assert m.r2 == 1.0
    assert m.predict(4, 10) == pytest.approx(7.2)


def test_timing_fit_errors():
    with pytest.raises(ValueError, match="at least 3"):
        fit_timing_model([(1, 1, 1.0)])
    with pytest.raises(ValueError, match="rank"):
        fit_timing_model([(n, 2 * n, 1.0 + n) for n in range(5)])


def test_constant_timings_report_zero_r2():
    m = fit_timing_model([(1, 2, 3.0), (2, 5, 3.0), (4, 1, 3.0)])
    assert m == TimingModel(3.0, 0.0, 0.0, 0.0)


def test_bench_with_fake_clock():
    ticks = iter(range(1000))
    clock = lambda: next(ticks) * 1e-3  # noqa: E731
    res = bench_inference(lambda s: None, [0, 1, 2], [(1, 1), (2, 5), (3, 2)], repetitions=2, clock=clock)
    assert len(res.samples) == 6
    assert all(s[2] == pytest.approx(1.0) for s in res.samples)
    assert res.to_dict()["mean_ms"] == pytest.approx(1.0)


def test_bench_empty():
    with pytest.raises(ValueError, match="empty"):
        bench_inference(lambda s: None, [], [])


def test_reference_timing_fixture_values():
    m1, m2 = REFERENCE_TIMING["marginal_recombination"], REFERENCE_TIMING["joint_loss"]
    assert (m1.gamma0, m1.gamma_a, m1.gamma_l, m1.r2) == (11.19, 0.684, 0.0375, 0.8665)
    assert (m2.gamma0, m2.gamma_a, m2.gamma_l, m2.r2) == (15.14, 0.0102, 0.00971, 0.0386)
    assert m1.gamma_a > m2.gamma_a
