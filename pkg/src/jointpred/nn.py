"""Small layer library on top of :mod:`jointpred.autodiff`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MASK_BIAS = -1e9


class Module:
    """Base class; parameters are discovered by walking instance attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name)

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


def _walk(value, name: str):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")


def param(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = param(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = param(rng.uniform(-bound, bound, size=(n_out,)))

    def __call__(self, x) -> Tensor:
        return x @ self.weight + self.bias


class MLP(Module):
    """Linear layers with relu between them (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.relu(x)
        return x


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return ad.layer_norm(x, self.eps) * self.gamma + self.beta


def key_mask_bias(mask: np.ndarray) -> np.ndarray:
    """Additive logit bias: 0 for valid keys, a large negative value for padding."""
    return np.where(np.asarray(mask, dtype=bool), 0.0, MASK_BIAS)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with separate query and key/value inputs.

    ``query`` is ``[..., Q, D]`` and ``kv`` is ``[..., S, D]`` with broadcastable
    leading dims. ``bias`` broadcasts against the ``[..., H, Q, S]`` logits.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        *lead, n, d = x.shape
        x = x.reshape(*lead, n, self.heads, d // self.heads)
        nd = x.ndim
        return x.transpose(*range(nd - 3), nd - 2, nd - 3, nd - 1)

    def __call__(self, query, kv, bias: np.ndarray | None = None) -> Tensor:
        q, k, v = self._split(self.q(query)), self._split(self.k(kv)), self._split(self.v(kv))
        nd = k.ndim
        kt = k.transpose(*range(nd - 2), nd - 1, nd - 2)
        logits = (q @ kt) * (1.0 / math.sqrt(q.shape[-1]))
        if bias is not None:
            logits = logits + bias
        w = ad.softmax(logits)
        o = w @ v  # [..., H, Q, dh]
        nd = o.ndim
        o = o.transpose(*range(nd - 3), nd - 2, nd - 3, nd - 1)
        o = o.reshape(*o.shape[:-2], o.shape[-2] * o.shape[-1])
        return self.out(o)


def masked_mean(x: Tensor, mask: np.ndarray, axis: int) -> Tensor:
    """Mean of ``x`` over ``axis`` counting only entries where ``mask`` is true.

    ``mask`` has the shape of ``x`` up to and including ``axis``.
    """
    m = np.asarray(mask, dtype=np.float64)
    ax = axis % x.ndim
    m = m.reshape(m.shape + (1,) * (x.ndim - m.ndim))
    denom = np.maximum(m.sum(axis=ax, keepdims=True), 1.0)
    return ad.reduce_sum(x * m, axis=ax) * np.squeeze(1.0 / denom, ax)
