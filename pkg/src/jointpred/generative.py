"""CVAE submodules: posterior and prior networks, latent sampling, deterministic decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import ActorEncoder, SFTStack, TokenSet, fuse
from .decoders import BezierHead
from .nn import MLP, Module
from .scene import FUTURE_FEATURES

PROVENANCE = ("posterior_sample", "prior_sample", "prior_mean")


@dataclass
class GaussianSet:
    """Diagonal Gaussians, one per agent: mean and log-variance ``[B, A, D_B]``."""

    mu: Tensor
    logvar: Tensor

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.logvar.data)


@dataclass
class LatentScene:
    b: Tensor  # [B, A, D_B]
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown latent provenance {self.provenance!r}")


class GaussianHead(Module):
    def __init__(self, dim: int, latent_dim: int, rng: np.random.Generator):
        self.latent_dim = latent_dim
        self.mlp = MLP([dim, dim, 2 * latent_dim], rng)

    def __call__(self, z: Tensor) -> GaussianSet:
        out = self.mlp(z)
        return GaussianSet(out[..., : self.latent_dim], out[..., self.latent_dim :])


class PriorNet(Module):
    """p(B | X, M): SFT layers on ``[Z_actor, Z_map]`` then a per-agent Gaussian head."""

    def __init__(self, dim: int, heads: int, n_layers: int, latent_dim: int, rng: np.random.Generator):
        self.sft = SFTStack(n_layers, dim, heads, rng)
        self.head = GaussianHead(dim, latent_dim, rng)

    def __call__(self, tokens: TokenSet) -> GaussianSet:
        return self.head(fuse(self.sft, tokens.actor, tokens).actor)


class PosteriorNet(Module):
    """q(B | Y, X, M): like the prior, but actor tokens are first fused with future-trajectory tokens."""

    def __init__(self, dim: int, heads: int, n_layers: int, latent_dim: int, rng: np.random.Generator):
        self.augment = MLP([2 * dim, dim, dim], rng)
        self.sft = SFTStack(n_layers, dim, heads, rng)
        self.head = GaussianHead(dim, latent_dim, rng)

    def __call__(self, z_future: Tensor, tokens: TokenSet) -> GaussianSet:
        aug = self.augment(ad.concat([z_future, tokens.actor], axis=-1))
        return self.head(fuse(self.sft, aug, tokens).actor)


class FutureEncoder(ActorEncoder):
    """Second actor encoder applied to ground-truth futures in each agent's frame."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__(FUTURE_FEATURES, dim, rng)


def sample_latent(g: GaussianSet, mode: str = "sample", rng: np.random.Generator | int | None = None,
                  provenance: str | None = None) -> LatentScene:
    """Reparameterised draw ``mu + sigma * eps`` (``mode="sample"``) or the mean (``mode="mean"``)."""
    if mode == "mean":
        return LatentScene(g.mu, provenance or "prior_mean")
    if mode != "sample":
        raise ValueError(f"unknown sampling mode {mode!r}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    eps = rng.standard_normal(g.mu.shape)
    b = g.mu + ad.exp(g.logvar * 0.5) * eps
    return LatentScene(b, provenance or "prior_sample")


class CVAEDecoder(Module):
    """Deterministic decoder: actor tokens fused with their latent, SFT layers, single-mode Bézier head."""

    def __init__(self, dim: int, heads: int, n_layers: int, latent_dim: int, degree: int, n_steps: int,
                 rng: np.random.Generator):
        self.latent_dim = latent_dim
        self.augment = MLP([dim + latent_dim, dim, dim], rng)
        self.sft = SFTStack(n_layers, dim, heads, rng)
        self.head = BezierHead(dim, degree, n_steps, rng, with_logit=False)

    def __call__(self, tokens: TokenSet, latent: LatentScene) -> Tensor:
        """Returns trajectories ``[B, A, T, 2]`` in agent frames."""
        b = latent.b
        if b.shape[-1] != self.latent_dim:
            raise ad.ShapeError(f"cvae_decode: latent width {b.shape[-1]} != D_B={self.latent_dim}")
        if b.shape[:2] != tokens.actor.shape[:2]:
            raise ad.ShapeError(f"cvae_decode: latent rows {b.shape[:2]} != actors {tokens.actor.shape[:2]}")
        aug = self.augment(ad.concat([tokens.actor, b], axis=-1))
        _, traj, _ = self.head(fuse(self.sft, aug, tokens).actor)
        return traj


def kl_divergence(q: GaussianSet, p: GaussianSet, agent_mask: np.ndarray | None = None) -> Tensor:
    """KL(q || p) for diagonal Gaussians: summed over latent dims, averaged over agents, then scenes."""
    if q.mu.shape != p.mu.shape:
        raise ad.ShapeError(f"kl_divergence: shapes {q.mu.shape} and {p.mu.shape}")
    diff = q.mu - p.mu
    dlv = q.logvar - p.logvar
    # expm1(x) - x >= 0 survives rounding, and is exactly 0 when q == p
    term = ad.expm1(dlv) - dlv + diff * diff * ad.exp(-p.logvar)
    per_agent = ad.reduce_sum(term, axis=-1) * 0.5  # [B, A]
    if agent_mask is None:
        agent_mask = np.ones(per_agent.shape)
    m = np.asarray(agent_mask, dtype=np.float64)
    per_scene = ad.reduce_sum(per_agent * m, axis=-1) * (1.0 / np.maximum(m.sum(axis=-1), 1.0))
    return ad.reduce_mean(per_scene)
