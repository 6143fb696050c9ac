import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jointpred import autodiff as ad
from jointpred.autodiff import Tensor
from jointpred.generative import GaussianSet, LatentScene, kl_divergence, sample_latent
from jointpred.models import CVAEModel

from conftest import batch_of, small_config, small_scenes


def _g(mu, logvar):
    return GaussianSet(Tensor(np.asarray(mu, dtype=float)), Tensor(np.asarray(logvar, dtype=float)))


def _kl_oracle(mq, lq, mp, lp):
    # closed form written from variances rather than log-variance differences
    vq, vp = np.exp(lq), np.exp(lp)
    return 0.5 * np.sum(np.log(vp / vq) + (vq + (mq - mp) ** 2) / vp - 1.0, axis=-1)


def test_kl_unit_mean_shift_is_half():
    q = _g([[[1.0]]], [[[0.0]]])
    p = _g([[[0.0]]], [[[0.0]]])
    assert kl_divergence(q, p).item() == 0.5


def test_kl_of_identical_gaussians_is_exactly_zero():
    rng = np.random.default_rng(0)
    mu, lv = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
    assert kl_divergence(_g(mu, lv), _g(mu, lv)).item() == 0.0


small = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (4, 1, 2, 3), elements=small))
def test_kl_nonnegative_and_matches_oracle(x):
    mq, lq, mp, lp = x
    kl = kl_divergence(_g(mq, lq), _g(mp, lp)).item()
    assert kl >= 0.0
    assert kl == pytest.approx(np.mean(_kl_oracle(mq, lq, mp, lp)), rel=1e-9, abs=1e-12)


def test_kl_masks_padded_agents():
    q = _g([[[1.0], [5.0]]], [[[0.0], [0.0]]])
    p = _g([[[0.0], [0.0]]], [[[0.0], [0.0]]])
    assert kl_divergence(q, p, np.array([[1.0, 0.0]])).item() == 0.5


def test_kl_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        kl_divergence(_g(np.zeros((1, 2, 3)), np.zeros((1, 2, 3))), _g(np.zeros((1, 2, 4)), np.zeros((1, 2, 4))))


def test_sample_latent_reparameterisation():
    g = _g(np.full((1, 2, 3), 2.0), np.full((1, 2, 3), np.log(4.0)))
    eps = np.random.default_rng(7).standard_normal((1, 2, 3))
    lat = sample_latent(g, "sample", rng=7)
    np.testing.assert_allclose(lat.b.data, 2.0 + 2.0 * eps)
    assert lat.provenance == "prior_sample"
    assert sample_latent(g, "mean").provenance == "prior_mean"
    with pytest.raises(ValueError):
        sample_latent(g, "mode")


def test_latent_provenance_validated():
    with pytest.raises(ValueError, match="provenance"):
        LatentScene(Tensor(np.zeros(1)), "guess")


def _cvae():
    cfg = small_config("cvae", beta=0.5)
    return CVAEModel(cfg), batch_of(small_scenes(2, t_past=cfg.t_past, t_future=cfg.t_future))


def test_decoder_rejects_wrong_latent_width():
    m, batch = _cvae()
    tokens = m.encoders(batch)
    with pytest.raises(ad.ShapeError, match="latent width"):
        m.decoder(tokens, LatentScene(Tensor(np.zeros((2, batch.max_agents, 99))), "prior_mean"))


def test_prior_mean_first_puts_the_mean_first():
    m, batch = _cvae()
    with ad.no_grad():
        tokens = m.encoders(batch)
        g = m.prior(tokens)
        mean_traj = m.decoder(tokens, LatentScene(g.mu, "prior_mean")).data
    lats = m.latents(g, 4, "prior-mean-first", rng=0)
    assert [lat.provenance for lat in lats] == ["prior_mean"] + ["prior_sample"] * 3
    traj = m.sample_local(batch, 4, "prior-mean-first", rng=0)
    np.testing.assert_allclose(traj[0], mean_traj, atol=1e-12)


def test_batched_and_looped_decoding_agree():
    m, batch = _cvae()
    a = m.sample_local(batch, 3, rng=1, batched=True)
    b = m.sample_local(batch, 3, rng=1, batched=False)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_posterior_needs_futures():
    from jointpred.scene import SceneError, build_frames, collate

    m, batch = _cvae()
    items = [build_frames(s) for s in small_scenes(1, t_past=12, t_future=10)]
    items[0].future_local = None
    with pytest.raises(SceneError, match="futures"):
        m.posterior_gaussians(collate(items), m.encoders(collate(items)))
