"""Trajectory heads: Bézier MLP, Multi-MLP and the anchor-point transformer."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP, LayerNorm, Linear, Module, MultiHeadAttention, key_mask_bias, masked_mean

CP_SCALE = 10.0  # network output units -> metres for control points


@lru_cache(maxsize=None)
def bernstein_matrix(degree: int, n_steps: int) -> np.ndarray:
    """``[T, P+1]`` Bernstein basis sampled at t = 1/T, 2/T, ..., 1."""
    t = np.arange(1, n_steps + 1) / n_steps
    i = np.arange(degree + 1)
    binom = np.array([comb(degree, k) for k in i], dtype=np.float64)
    m = binom * t[:, None] ** i * (1.0 - t[:, None]) ** (degree - i)
    m.setflags(write=False)
    return m


def bezier_points(control, n_steps: int, t: np.ndarray | None = None):
    """Evaluate Bézier curves with control points ``[..., P+1, 2]``.

    Works on both tensors and arrays. ``t`` overrides the default sample
    parameters 1/T, ..., 1.
    """
    P = control.shape[-2] - 1
    if t is None:
        basis = bernstein_matrix(P, n_steps)
    else:
        t = np.asarray(t, dtype=np.float64)
        i = np.arange(P + 1)
        basis = np.array([comb(P, k) for k in i]) * t[:, None] ** i * (1.0 - t[:, None]) ** (P - i)
    if isinstance(control, Tensor):
        return basis @ control
    return basis @ np.asarray(control)


@dataclass
class BezierTrajectory:
    control: np.ndarray  # [P+1, 2]

    @property
    def degree(self) -> int:
        return self.control.shape[0] - 1

    def sample(self, n_steps: int) -> np.ndarray:
        return bezier_points(self.control, n_steps)

    def __call__(self, t) -> np.ndarray:
        return bezier_points(self.control, 0, t=np.atleast_1d(t))


class BezierHead(Module):
    """MLP from a token to Bézier control points (plus an optional confidence logit)."""

    def __init__(self, dim: int, degree: int, n_steps: int, rng: np.random.Generator, with_logit: bool = True):
        self.degree = degree
        self.n_steps = n_steps
        self.with_logit = with_logit
        self.mlp = MLP([dim, dim, 2 * (degree + 1) + int(with_logit)], rng)

    def __call__(self, token: Tensor) -> tuple[Tensor, Tensor, Tensor | None]:
        """Returns (control points ``[..., P+1, 2]``, trajectory ``[..., T, 2]``, logit ``[...]`` or None)."""
        out = self.mlp(token)
        n_cp = 2 * (self.degree + 1)
        cp = out[..., :n_cp] if self.with_logit else out
        cp = (cp * CP_SCALE).reshape(*out.shape[:-1], self.degree + 1, 2)
        logit = out[..., n_cp] if self.with_logit else None
        return cp, bezier_points(cp, self.n_steps), logit


def decode_bezier(head: BezierHead, token) -> tuple[BezierTrajectory, float | None]:
    """Control points and logit for a single token ``[D]``."""
    with ad.no_grad():
        cp, _, logit = head(Tensor(np.asarray(token, dtype=np.float64).reshape(1, -1)))
    return BezierTrajectory(cp.data[0]), (None if logit is None else float(logit.data[0]))


@dataclass
class ModeSet:
    """Decoder output for a batch. Trajectories are in each agent's local frame."""

    trajectories: Tensor  # [B, A, K, T, 2]
    agent_logits: Tensor | None = None  # [B, A, K], marginal scoring
    scene_logits: Tensor | None = None  # [B, K], joint scoring
    mode_embeddings: Tensor | None = None  # [B, A, K, D]

    @property
    def k(self) -> int:
        return self.trajectories.shape[2]


class SceneScorer(Module):
    """Scene confidence: mean-pool mode-k embeddings over valid agents, then a 2-layer MLP."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.mlp = MLP([dim, dim, 1], rng)

    def __call__(self, mode_emb: Tensor, agent_mask: np.ndarray) -> Tensor:
        pooled = masked_mean(mode_emb, agent_mask, axis=1)  # [B, K, D]
        return self.mlp(pooled).reshape(*pooled.shape[:-1])


class MarginalDecoder(Module):
    """Baseline head: project each token to ``K`` embeddings and share one Bézier MLP across them."""

    def __init__(self, dim: int, k: int, degree: int, n_steps: int, rng: np.random.Generator):
        self.k = k
        self.dim = dim
        self.split = Linear(dim, k * dim, rng)
        self.head = BezierHead(dim, degree, n_steps, rng, with_logit=True)

    def __call__(self, z_actor: Tensor) -> ModeSet:
        B, A, D = z_actor.shape
        emb = ad.relu(self.split(z_actor)).reshape(B, A, self.k, D)
        _, traj, logit = self.head(emb)
        return ModeSet(traj, agent_logits=logit, mode_embeddings=emb)


class MultiMLPDecoder(Module):
    """One independent MLP head per scene mode plus a shared scene scorer.

    Input is either shared tokens ``[B, A, D]`` or per-mode tokens ``[B, A, K, D]``.
    """

    def __init__(self, dim: int, k: int, degree: int, n_steps: int, rng: np.random.Generator):
        self.k = k
        self.degree = degree
        self.n_steps = n_steps
        self.hidden = [Linear(dim, dim, rng) for _ in range(k)]
        self.final = [Linear(dim, 2 * (degree + 1), rng) for _ in range(k)]
        self.scorer = SceneScorer(dim, rng)

    def __call__(self, x: Tensor, agent_mask: np.ndarray) -> ModeSet:
        per_mode = x.ndim == 4
        B, A = x.shape[:2]
        trajs, hids = [], []
        for k in range(self.k):
            xk = x[:, :, k] if per_mode else x
            h = ad.relu(self.hidden[k](xk))
            cp = (self.final[k](h) * CP_SCALE).reshape(B, A, 1, self.degree + 1, 2)
            trajs.append(bezier_points(cp, self.n_steps))
            hids.append(h.reshape(B, A, 1, h.shape[-1]))
        hid = ad.concat(hids, axis=2)
        return ModeSet(
            ad.concat(trajs, axis=2),
            scene_logits=self.scorer(hid, agent_mask),
            mode_embeddings=hid,
        )


class AnchorLayer(Module):
    """Mode self-attention, cross-attention to actor tokens, FFN; each with skip + layer norm."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ffn_mult: int = 2):
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ffn = MLP([dim, ffn_mult * dim, dim], rng)
        self.norm3 = LayerNorm(dim)

    def __call__(self, a: Tensor, z_actor: Tensor, agent_mask: np.ndarray) -> Tensor:
        B, A, D = z_actor.shape
        a = self.norm1(a + self.self_attn(a, a))
        kv = z_actor.reshape(B, 1, A, D)
        bias = key_mask_bias(agent_mask).reshape(B, 1, 1, 1, A)
        a = self.norm2(a + self.cross_attn(a, kv, bias))
        return self.norm3(a + self.ffn(a))


class AnchorTransformerDecoder(Module):
    """Learnable anchors ``[K, D]`` refined per agent, then decoded by a Multi-MLP head.

    Each agent's initial anchors are the shared anchors plus that agent's
    token, so the refinement is agent-specific.
    """

    def __init__(self, dim: int, heads: int, k: int, n_layers: int, degree: int, n_steps: int, rng: np.random.Generator):
        self.k = k
        self.anchors = Tensor(rng.normal(0.0, 1.0, size=(k, dim)), requires_grad=True)
        self.layers = [AnchorLayer(dim, heads, rng) for _ in range(n_layers)]
        self.multi_mlp = MultiMLPDecoder(dim, k, degree, n_steps, rng)

    def refine(self, z_actor: Tensor, agent_mask: np.ndarray) -> Tensor:
        B, A, D = z_actor.shape
        a = self.anchors.reshape(1, 1, self.k, D) + z_actor.reshape(B, A, 1, D)
        for layer in self.layers:
            a = layer(a, z_actor, agent_mask)
        return a

    def __call__(self, z_actor: Tensor, agent_mask: np.ndarray) -> ModeSet:
        return self.multi_mlp(self.refine(z_actor, agent_mask), agent_mask)
