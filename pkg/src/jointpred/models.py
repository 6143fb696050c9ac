"""The five compared model variants behind one interface.

Every variant maps a :class:`~jointpred.scene.Batch` to local-frame
trajectories, has a training loss, and produces global-frame
:class:`~jointpred.evaluation.JointPrediction` objects at inference.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import Backbone, InstanceEncoders, TokenSet
from .config import ExperimentConfig
from .decoders import AnchorTransformerDecoder, MarginalDecoder, ModeSet, MultiMLPDecoder, SceneScorer
from .evaluation import JointPrediction
from .generative import CVAEDecoder, FutureEncoder, GaussianSet, LatentScene, PosteriorNet, PriorNet, kl_divergence
from .nn import Module
from .objectives import LossBreakdown, actor_wta_loss, elbo_loss, scene_wta_loss
from .recombination import normalized_scores, recombine_beam
from .scene import Batch, SceneError

SAMPLING = ("sample", "prior-mean-first")


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _to_global(batch: Batch, b: int, traj_local: np.ndarray) -> np.ndarray:
    """``[..., Na, T, 2]`` local trajectories of scene ``b`` -> global coordinates."""
    frames = batch.items[b].agent_frames
    out = np.empty_like(traj_local)
    for i, f in enumerate(frames):
        out[..., i, :, :] = f.to_global(traj_local[..., i, :, :].reshape(-1, 2)).reshape(out[..., i, :, :].shape)
    return out


class JointModel(Module):
    """Common interface. Subclasses implement ``decode``, ``loss`` and ``predict``."""

    variant = ""

    def __init__(self, config: ExperimentConfig):
        if config.variant != self.variant:
            raise ValueError(f"{type(self).__name__} needs variant {self.variant!r}, got {config.variant!r}")
        self.config = config

    def _check_sampling(self, sampling: str) -> None:
        if sampling not in SAMPLING:
            raise ValueError(f"unknown sampling mode {sampling!r}; expected one of {SAMPLING}")
        if sampling != "sample":
            raise ValueError(f"sampling {sampling!r} is only available for the cvae variant")

    def decode(self, batch: Batch) -> ModeSet:
        raise NotImplementedError

    def loss(self, batch: Batch, rng: np.random.Generator | None = None) -> LossBreakdown:
        raise NotImplementedError

    def predict(self, batch: Batch, k: int | None = None, sampling: str = "sample",
                rng: np.random.Generator | int | None = None) -> list[JointPrediction]:
        raise NotImplementedError


class MarginalRecombinationModel(JointModel):
    """Backbone + marginal Bézier decoder trained with actor-level WTA; joint modes via beam search."""

    variant = "marginal_recombination"

    def __init__(self, config: ExperimentConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        c = config
        self.backbone = Backbone(c.dim, c.heads, c.n_layers, rng)
        self.decoder = MarginalDecoder(c.dim, c.k, c.bezier_degree, c.t_future, rng)

    def decode(self, batch: Batch) -> ModeSet:
        return self.decoder(self.backbone(batch).actor)

    def loss(self, batch, rng=None):
        out = self.decode(batch)
        c = self.config
        return actor_wta_loss(out.trajectories, out.agent_logits, batch.future_local, batch.agent_mask,
                              c.lambda_reg, c.lambda_cls)

    def marginals(self, batch: Batch) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per scene: (marginal probabilities ``[Na, K]``, local trajectories ``[Na, K, T, 2]``)."""
        with ad.no_grad():
            out = self.decode(batch)
        res = []
        for b, it in enumerate(batch.items):
            na = it.n_agents
            res.append((_softmax_rows(out.agent_logits.data[b, :na]), out.trajectories.data[b, :na]))
        return res

    def predict(self, batch, k=None, sampling="sample", rng=None):
        self._check_sampling(sampling)
        k = self.config.k if k is None else k
        preds = []
        for b, (probs, traj) in enumerate(self.marginals(batch)):
            modes = recombine_beam(probs, k)
            idx = np.array([m.indices for m in modes], dtype=np.int64)  # [K', Na]
            local = traj[np.arange(traj.shape[0])[None, :], idx]  # [K', Na, T, 2]
            it = batch.items[b]
            preds.append(JointPrediction(it.scene_id, it.agent_ids, _to_global(batch, b, local),
                                         normalized_scores(modes), idx))
        return preds


class _SceneLevelModel(JointModel):
    """Shared inference path for the variants that decode scene modes directly."""

    def loss(self, batch, rng=None):
        out = self.decode(batch)
        c = self.config
        return scene_wta_loss(out.trajectories, out.scene_logits, batch.future_local, batch.agent_mask,
                              c.lambda_reg, c.lambda_cls)

    def predict(self, batch, k=None, sampling="sample", rng=None):
        self._check_sampling(sampling)
        k = self.config.k if k is None else k
        if not 1 <= k <= self.config.k:
            raise ValueError(f"k={k} must be in [1, {self.config.k}] for {self.variant}")
        with ad.no_grad():
            out = self.decode(batch)
        preds = []
        for b, it in enumerate(batch.items):
            na = it.n_agents
            probs = _softmax_rows(out.scene_logits.data[b])
            order = np.argsort(-probs, kind="stable")[:k]
            local = out.trajectories.data[b, :na][:, order].transpose(1, 0, 2, 3)  # [k, Na, T, 2]
            p = probs[order]
            preds.append(JointPrediction(it.scene_id, it.agent_ids, _to_global(batch, b, local), p / p.sum()))
        return preds


class JointLossModel(_SceneLevelModel):
    """Baseline decoder retrained with the scene-level loss and a scene scorer on its mode embeddings."""

    variant = "joint_loss"

    def __init__(self, config: ExperimentConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        c = config
        self.backbone = Backbone(c.dim, c.heads, c.n_layers, rng)
        self.decoder = MarginalDecoder(c.dim, c.k, c.bezier_degree, c.t_future, rng)
        self.scorer = SceneScorer(c.dim, rng)

    def decode(self, batch):
        out = self.decoder(self.backbone(batch).actor)
        out.scene_logits = self.scorer(out.mode_embeddings, batch.agent_mask)
        out.agent_logits = None
        return out


class MultiMLPModel(_SceneLevelModel):
    variant = "multi_mlp"

    def __init__(self, config: ExperimentConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        c = config
        self.backbone = Backbone(c.dim, c.heads, c.n_layers, rng)
        self.decoder = MultiMLPDecoder(c.dim, c.k, c.bezier_degree, c.t_future, rng)

    def decode(self, batch):
        return self.decoder(self.backbone(batch).actor, batch.agent_mask)


class AnchorTransformerModel(_SceneLevelModel):
    variant = "anchor_transformer"

    def __init__(self, config: ExperimentConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        c = config
        self.backbone = Backbone(c.dim, c.heads, c.n_layers, rng)
        self.decoder = AnchorTransformerDecoder(c.dim, c.heads, c.k, c.anchor_layers, c.bezier_degree,
                                                c.t_future, rng)

    def decode(self, batch):
        return self.decoder(self.backbone(batch).actor, batch.agent_mask)


def _tile_tokens(t: TokenSet, reps: int) -> TokenSet:
    if reps == 1:
        return t
    return TokenSet(
        ad.concat([t.actor] * reps, axis=0),
        ad.concat([t.map] * reps, axis=0),
        ad.concat([t.rpe] * reps, axis=0),
        np.concatenate([t.token_mask] * reps, axis=0),
    )


class CVAEModel(JointModel):
    """Posterior and prior networks over per-agent latents with a deterministic single-mode decoder.

    Only the encoders are shared; the posterior, prior and decoder each run
    their own SFT layers on the initial tokens and RPEs.
    """

    variant = "cvae"

    def __init__(self, config: ExperimentConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        c = config
        self.encoders = InstanceEncoders(c.dim, rng)
        self.future_encoder = FutureEncoder(c.dim, rng)
        self.posterior = PosteriorNet(c.dim, c.heads, c.cvae_layers, c.latent_dim, rng)
        self.prior = PriorNet(c.dim, c.heads, c.cvae_layers, c.latent_dim, rng)
        self.decoder = CVAEDecoder(c.dim, c.heads, c.cvae_layers, c.latent_dim, c.bezier_degree, c.t_future, rng)

    def posterior_gaussians(self, batch: Batch, tokens: TokenSet) -> GaussianSet:
        if not batch.has_future:
            raise SceneError("the posterior network needs ground-truth futures")
        return self.posterior(self.future_encoder(batch.future_feats), tokens)

    def loss(self, batch, rng=None):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        tokens = self.encoders(batch)
        q = self.posterior_gaussians(batch, tokens)
        p = self.prior(tokens)
        eps = rng.standard_normal(q.mu.shape)
        latent = LatentScene(q.mu + ad.exp(q.logvar * 0.5) * eps, "posterior_sample")
        recon = self.decoder(tokens, latent)
        kl = kl_divergence(q, p, batch.agent_mask)
        return elbo_loss(recon, batch.future_local, kl, self.config.beta, batch.agent_mask, self.config.lambda_reg)

    def latents(self, g: GaussianSet, k: int, sampling: str, rng) -> list[LatentScene]:
        """``k`` prior latents; with ``prior-mean-first`` the first one is the prior mean."""
        if sampling not in SAMPLING:
            raise ValueError(f"unknown sampling mode {sampling!r}; expected one of {SAMPLING}")
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        out = []
        start = 0
        if sampling == "prior-mean-first":
            out.append(LatentScene(g.mu, "prior_mean"))
            start = 1
        if k > start:
            eps = rng.standard_normal((k - start, *g.mu.shape))
            sd = np.exp(0.5 * g.logvar.data)
            out += [LatentScene(Tensor(g.mu.data + sd * e), "prior_sample") for e in eps]
        return out

    def decode_latents(self, tokens: TokenSet, latents: Sequence[LatentScene], batched: bool = True) -> np.ndarray:
        """Decode each latent set; returns ``[K, B, A, T, 2]``. ``batched=False`` loops over latents."""
        with ad.no_grad():
            if not batched:
                return np.stack([self.decoder(tokens, lat).data for lat in latents])
            K = len(latents)
            b = ad.concat([lat.b for lat in latents], axis=0)
            traj = self.decoder(_tile_tokens(tokens, K), LatentScene(b, latents[0].provenance)).data
            return traj.reshape(K, *tokens.actor.shape[:2], *traj.shape[2:])

    def sample_local(self, batch: Batch, k: int, sampling: str = "sample", rng=None,
                     batched: bool = True) -> np.ndarray:
        with ad.no_grad():
            tokens = self.encoders(batch)
            g = self.prior(tokens)
        return self.decode_latents(tokens, self.latents(g, k, sampling, rng), batched)

    def decode(self, batch: Batch) -> ModeSet:
        """Single prior-mean mode, shaped as a one-mode :class:`ModeSet`."""
        tokens = self.encoders(batch)
        traj = self.decoder(tokens, LatentScene(self.prior(tokens).mu, "prior_mean"))
        B, A, T, _ = traj.shape
        return ModeSet(traj.reshape(B, A, 1, T, 2))

    def reconstruct(self, batch: Batch, source: str = "posterior", rng=None) -> np.ndarray:
        """One local-frame sample conditioned on the posterior or the prior, ``[B, A, T, 2]``."""
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        with ad.no_grad():
            tokens = self.encoders(batch)
            if source == "posterior":
                g, prov = self.posterior_gaussians(batch, tokens), "posterior_sample"
            elif source == "prior":
                g, prov = self.prior(tokens), "prior_sample"
            else:
                raise ValueError(f"unknown latent source {source!r}")
            b = g.mu.data + np.exp(0.5 * g.logvar.data) * rng.standard_normal(g.mu.shape)
            return self.decoder(tokens, LatentScene(Tensor(b), prov)).data

    def predict(self, batch, k=None, sampling="sample", rng=None):
        k = self.config.k if k is None else k
        if k < 1:
            raise ValueError("k must be >= 1")
        traj = self.sample_local(batch, k, sampling, rng)  # [K, B, A, T, 2]
        preds = []
        for b, it in enumerate(batch.items):
            local = traj[:, b, : it.n_agents]
            preds.append(JointPrediction(it.scene_id, it.agent_ids, _to_global(batch, b, local), np.full(k, 1.0 / k)))
        return preds


MODEL_CLASSES = {
    cls.variant: cls
    for cls in (MarginalRecombinationModel, JointLossModel, MultiMLPModel, AnchorTransformerModel, CVAEModel)
}


def build_model(config: ExperimentConfig) -> JointModel:
    return MODEL_CLASSES[config.variant](config)


def parameter_grad_check(model: Module, loss_fn, names: Sequence[str] | None = None, h: float = 1e-5,
                         coords_per_param: int = 3,
                         rng: np.random.Generator | int | None = 0) -> dict[str, ad.GradCheckResult]:
    """Central-difference check of ``d loss_fn() / d parameter`` for the named parameters.

    ``loss_fn`` must be deterministic and return a scalar tensor. For each
    parameter, random flat coordinates are perturbed in place until
    ``coords_per_param`` of them have been checked; coordinates whose
    perturbations cross a kink are skipped (as in
    :func:`~jointpred.autodiff.grad_check_detail`) and replaced.
    """
    rng = np.random.default_rng(rng)
    params = model.parameters()
    names = list(params) if names is None else list(names)
    model.zero_grad()
    with ad.piece_trace() as base:
        loss = loss_fn()
    ad.backward(loss)
    out = {}
    with ad.no_grad():
        for name in names:
            p = params[name]
            analytic = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1)
            orig = p.data
            flat = orig.reshape(-1)
            worst, checked, skipped = 0.0, 0, 0
            try:
                for i in rng.permutation(flat.size):
                    if checked >= coords_per_param:
                        break
                    vals, same = [], True
                    for step in (h, -h):
                        pert = flat.copy()
                        pert[i] += step
                        p.data = pert.reshape(orig.shape)
                        with ad.piece_trace() as tr:
                            v = loss_fn().item()
                        if not np.isfinite(v):
                            raise FloatingPointError(f"non-finite loss perturbing {name}[{i}]")
                        vals.append(v)
                        same = same and tr == base
                    if not same:
                        skipped += 1
                        continue
                    num = (vals[0] - vals[1]) / (2 * h)
                    worst = max(worst, abs(analytic[i] - num) / max(1.0, abs(analytic[i])))
                    checked += 1
            finally:
                p.data = orig
            out[name] = ad.GradCheckResult(worst, checked, skipped)
    model.zero_grad()
    return out
