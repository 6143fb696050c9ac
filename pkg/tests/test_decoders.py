import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from jointpred import autodiff as ad
from jointpred.autodiff import Tensor
from jointpred.decoders import (
    CP_SCALE,
    AnchorTransformerDecoder,
    BezierHead,
    BezierTrajectory,
    MarginalDecoder,
    MultiMLPDecoder,
    SceneScorer,
    bernstein_matrix,
    bezier_points,
    decode_bezier,
)


def _de_casteljau(cp, t):
    pts = np.array(cp, dtype=float)
    while len(pts) > 1:
        pts = (1 - t) * pts[:-1] + t * pts[1:]
    return pts[0]


@pytest.mark.parametrize("degree", [1, 3, 5, 7])
def test_bernstein_rows_partition_unity(degree):
    m = bernstein_matrix(degree, 30)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(m >= 0)


def test_bernstein_matrix_is_read_only():
    with pytest.raises(ValueError):
        bernstein_matrix(5, 10)[0, 0] = 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**31))
def test_bezier_matches_de_casteljau(degree, seed):
    cp = np.random.default_rng(seed).normal(size=(degree + 1, 2)) * 10
    t = np.linspace(0, 1, 9)
    got = bezier_points(cp, 0, t=t)
    want = np.array([_de_casteljau(cp, ti) for ti in t])
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_endpoints_are_exact():
    cp = np.random.default_rng(0).normal(size=(6, 2)) * 10
    traj = BezierTrajectory(cp)
    assert np.array_equal(traj(0.0)[0], cp[0])
    assert np.array_equal(traj(1.0)[0], cp[-1])
    assert np.array_equal(traj.sample(30)[-1], cp[-1])
    assert traj.degree == 5


def test_samples_stay_in_control_hull():
    rng = np.random.default_rng(5)
    for _ in range(50):
        cp = rng.normal(size=(6, 2))
        hull = ConvexHull(cp)
        pts = bezier_points(cp, 30)
        assert np.all(pts @ hull.equations[:, :2].T + hull.equations[:, 2] <= 1e-9)


def test_head_scales_control_points():
    rng = np.random.default_rng(0)
    head = BezierHead(8, 5, 30, rng, with_logit=True)
    tok = rng.normal(size=(3, 8))
    with ad.no_grad():
        cp, traj, logit = head(Tensor(tok))
    raw = head.mlp(Tensor(tok)).data
    np.testing.assert_allclose(cp.data.reshape(3, -1), raw[:, :12] * CP_SCALE)
    assert traj.shape == (3, 30, 2) and logit.shape == (3,)
    b, s = decode_bezier(head, tok[0])
    np.testing.assert_allclose(b.control, cp.data[0])
    assert s == pytest.approx(float(logit.data[0]))


def test_marginal_decoder_shapes():
    dec = MarginalDecoder(8, 4, 3, 10, np.random.default_rng(0))
    out = dec(Tensor(np.random.default_rng(1).normal(size=(2, 3, 8))))
    assert out.trajectories.shape == (2, 3, 4, 10, 2)
    assert out.agent_logits.shape == (2, 3, 4)
    assert out.scene_logits is None and out.k == 4


def test_multi_mlp_heads_are_independent():
    dec = MultiMLPDecoder(8, 3, 3, 10, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).normal(size=(1, 2, 8)))
    with ad.no_grad():
        before = dec(x, np.ones((1, 2))).trajectories.data
        dec.final[1].bias.data = dec.final[1].bias.data + 1.0
        after = dec(x, np.ones((1, 2))).trajectories.data
    assert np.array_equal(before[:, :, 0], after[:, :, 0])
    assert np.array_equal(before[:, :, 2], after[:, :, 2])
    assert not np.array_equal(before[:, :, 1], after[:, :, 1])


def test_scene_scorer_ignores_padded_agents():
    rng = np.random.default_rng(0)
    scorer = SceneScorer(8, rng)
    emb = rng.normal(size=(1, 3, 4, 8))
    mask = np.array([[1.0, 1.0, 0.0]])
    other = emb.copy()
    other[0, 2] = 50.0
    with ad.no_grad():
        np.testing.assert_array_equal(scorer(Tensor(emb), mask).data, scorer(Tensor(other), mask).data)


def test_anchor_without_layers_is_multi_mlp_on_anchor_queries():
    rng = np.random.default_rng(0)
    dec = AnchorTransformerDecoder(8, 2, 3, 0, 3, 10, rng)
    z = Tensor(np.random.default_rng(1).normal(size=(1, 2, 8)))
    mask = np.ones((1, 2))
    with ad.no_grad():
        a = dec(z, mask).trajectories.data
        queries = dec.anchors.data[None, None] + z.data[:, :, None]
        b = dec.multi_mlp(Tensor(queries), mask).trajectories.data
    np.testing.assert_array_equal(a, b)


def test_anchor_refinement_is_agent_specific():
    dec = AnchorTransformerDecoder(8, 2, 3, 2, 3, 10, np.random.default_rng(0))
    z = Tensor(np.random.default_rng(1).normal(size=(1, 2, 8)))
    with ad.no_grad():
        a = dec.refine(z, np.ones((1, 2))).data
    assert a.shape == (1, 2, 3, 8)
    assert not np.allclose(a[0, 0], a[0, 1])
