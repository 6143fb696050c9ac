"""Adam optimiser and the learning-rate schedule used for training."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
) -> AdamState:
    """Apply one bias-corrected Adam update in place.

    Parameters without a gradient entry (or with ``None``) are treated as
    having zero gradient.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


@dataclass(frozen=True)
class LRSchedule:
    """Geometric decay from ``initial`` to ``final`` over ``decay_epochs``, then constant.

    Epochs are 1-based: epoch 1 trains at ``initial`` and every epoch after
    ``decay_epochs`` trains at ``final``.
    """

    initial: float = 1e-3
    final: float = 1e-4
    decay_epochs: int = 40

    def __call__(self, epoch: int) -> float:
        if epoch < 1:
            raise ValueError("epochs are 1-based")
        if self.decay_epochs <= 0:
            return self.final
        frac = min(epoch - 1, self.decay_epochs) / self.decay_epochs
        return float(self.initial * (self.final / self.initial) ** frac)
