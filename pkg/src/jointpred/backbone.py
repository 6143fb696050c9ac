"""Instance encoders, relative-pose embedding and the symmetric fusion transformer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP, LayerNorm, Linear, Module, MultiHeadAttention, key_mask_bias
from .scene import ACTOR_FEATURES, MAP_FEATURES, Batch

D_SCALE = 50.0  # metres; distance normaliser for the relative-pose embedding


def conv1d(x: Tensor, lin: Linear, stride: int = 1) -> Tensor:
    """Kernel-3 temporal convolution over axis -2 with zero padding of one step.

    ``lin`` maps the concatenated window ``[x_{t-1}, x_t, x_{t+1}]`` (``3C``
    inputs) to the output channels.
    """
    *lead, T, C = x.shape
    pad = np.zeros((*lead, 1, C))
    xp = ad.concat([pad, x, pad], axis=-2)
    win = ad.concat([xp[..., k : k + T : stride, :] for k in range(3)], axis=-1)
    return lin(win)


class ActorEncoder(Module):
    """Temporal CNN: three kernel-3 convolutions (strides 1, 2, 2) then max over time."""

    def __init__(self, n_in: int, dim: int, rng: np.random.Generator):
        self.conv1 = Linear(3 * n_in, dim, rng)
        self.conv2 = Linear(3 * dim, dim, rng)
        self.conv3 = Linear(3 * dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def __call__(self, feats, step_mask: np.ndarray | None = None) -> Tensor:
        x = ad.Tensor(feats) if not isinstance(feats, Tensor) else feats
        if step_mask is not None:
            x = x * np.asarray(step_mask)[..., None]
        h = ad.relu(conv1d(x, self.conv1, 1))
        h = ad.relu(conv1d(h, self.conv2, 2))
        h = ad.relu(conv1d(h, self.conv3, 2))
        return self.out(ad.reduce_max(h, axis=-2))


class MapEncoder(Module):
    """Shared per-point MLP followed by a max-pool over the polyline's points."""

    def __init__(self, n_in: int, dim: int, rng: np.random.Generator):
        self.point_mlp = MLP([n_in, dim, dim], rng)

    def __call__(self, feats) -> Tensor:
        return ad.reduce_max(self.point_mlp(feats), axis=-2)


def rpe_inputs(rel_pose: np.ndarray) -> np.ndarray:
    """``[..., 3]`` (alpha, beta, d) -> ``[..., 5]`` (sin a, cos a, sin b, cos b, d / D_SCALE)."""
    a, b, d = rel_pose[..., 0], rel_pose[..., 1], rel_pose[..., 2]
    return np.stack([np.sin(a), np.cos(a), np.sin(b), np.cos(b), d / D_SCALE], axis=-1)


class RPEEmbedding(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.mlp = MLP([5, dim, dim], rng)

    def __call__(self, rel_pose) -> Tensor:
        return self.mlp(rpe_inputs(np.asarray(rel_pose)))


class SFTLayer(Module):
    """One symmetric fusion transformer layer over tokens ``[B, N, D]`` and RPEs ``[B, N, N, D]``.

    Query i attends over context tokens ``c_ij = MLP(z_i ++ z_j ++ r_ij)``;
    every ``r_ij`` is then refreshed by adding ``MLP(c_ij)``.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ffn_mult: int = 2):
        self.dim = dim
        self.ctx_in = Linear(3 * dim, dim, rng)
        self.ctx_out = Linear(dim, dim, rng)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.ffn = MLP([dim, ffn_mult * dim, dim], rng)
        self.norm2 = LayerNorm(dim)
        self.rpe_update = MLP([dim, dim, dim], rng)

    def context(self, z: Tensor, rpe: Tensor) -> Tensor:
        D = self.dim
        W = self.ctx_in.weight
        # split product of the concatenation z_i ++ z_j ++ r_ij with W
        zi = (z @ W[:D]).reshape(z.shape[0], z.shape[1], 1, D)
        zj = (z @ W[D : 2 * D]).reshape(z.shape[0], 1, z.shape[1], D)
        h = ad.relu(zi + zj + rpe @ W[2 * D :] + self.ctx_in.bias)
        return self.ctx_out(h)

    def __call__(self, z: Tensor, rpe: Tensor, token_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        if z.shape[-1] != self.dim or rpe.shape[-1] != self.dim:
            raise ad.ShapeError(f"sft_layer: width mismatch tokens {z.shape} rpe {rpe.shape} vs D={self.dim}")
        B, N, D = z.shape
        if rpe.shape[:3] != (B, N, N):
            raise ad.ShapeError(f"sft_layer: rpe shape {rpe.shape} does not match tokens {z.shape}")
        c = self.context(z, rpe)
        bias = key_mask_bias(token_mask).reshape(B, 1, 1, 1, N)
        att = self.attn(z.reshape(B, N, 1, D), c, bias).reshape(B, N, D)
        z = self.norm1(z + att)
        z = self.norm2(z + self.ffn(z))
        rpe = rpe + self.rpe_update(c)
        return z, rpe


class SFTStack(Module):
    def __init__(self, n_layers: int, dim: int, heads: int, rng: np.random.Generator):
        self.layers = [SFTLayer(dim, heads, rng) for _ in range(n_layers)]

    def __call__(self, z: Tensor, rpe: Tensor, token_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        for layer in self.layers:
            z, rpe = layer(z, rpe, token_mask)
        return z, rpe


@dataclass
class TokenSet:
    actor: Tensor  # [B, A, D]
    map: Tensor  # [B, M, D]
    rpe: Tensor  # [B, N, N, D]
    token_mask: np.ndarray  # [B, N]

    @property
    def tokens(self) -> Tensor:
        return ad.concat([self.actor, self.map], axis=1)


class InstanceEncoders(Module):
    """Actor encoder, map encoder and RPE embedding."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.actor = ActorEncoder(ACTOR_FEATURES, dim, rng)
        self.map = MapEncoder(MAP_FEATURES, dim, rng)
        self.rpe = RPEEmbedding(dim, rng)

    def __call__(self, batch: Batch) -> TokenSet:
        za = self.actor(batch.actor_feats, batch.actor_mask)
        B, M = batch.map_mask.shape
        zm = self.map(batch.map_feats) if M else Tensor(np.zeros((B, 0, self.dim)))
        return TokenSet(za, zm, self.rpe(batch.rel_pose), batch.token_mask)


def fuse(stack: SFTStack, actor: Tensor, tokens: TokenSet) -> TokenSet:
    """Run ``stack`` on ``[actor, map]`` tokens with the initial RPEs of ``tokens``."""
    A = actor.shape[1]
    z, rpe = stack(ad.concat([actor, tokens.map], axis=1), tokens.rpe, tokens.token_mask)
    return TokenSet(z[:, :A], z[:, A:], rpe, tokens.token_mask)


class Backbone(Module):
    """Encoders followed by ``n_layers`` SFT layers on the combined token set."""

    def __init__(self, dim: int, heads: int, n_layers: int, rng: np.random.Generator):
        self.encoders = InstanceEncoders(dim, rng)
        self.sft = SFTStack(n_layers, dim, heads, rng)

    def __call__(self, batch: Batch) -> TokenSet:
        t = self.encoders(batch)
        return fuse(self.sft, t.actor, t)
