"""Training losses: actor- and scene-level winner-takes-all, classification, ELBO.

All losses share :func:`per_agent_mode_loss`, and agent averages are
always taken over the same contiguous agent axis. Because floating-point
addition is monotone, this makes ``actor regression <= scene regression``
hold exactly rather than up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LAMBDA_REG = 1.0
LAMBDA_CLS = 0.1
SMOOTH_L1_BETA = 1.0


@dataclass
class LossBreakdown:
    total: Tensor
    regression: float
    classification: float
    kl: float | None = None
    selected: np.ndarray | None = None  # k* per scene [B] or per agent [B, A]

    def as_dict(self) -> dict:
        return {
            "total": float(self.total.data),
            "regression": self.regression,
            "classification": self.classification,
            "kl": self.kl,
        }


def per_agent_mode_loss(traj, gt) -> Tensor:
    """Smooth-L1 summed over (x, y), averaged over time: ``[B, A, K, T, 2]`` x ``[B, A, T, 2]`` -> ``[B, A, K]``."""
    traj = traj if isinstance(traj, Tensor) else Tensor(traj)
    gt = np.asarray(gt, dtype=np.float64)
    if traj.ndim != 5 or gt.ndim != 4 or traj.shape[:2] != gt.shape[:2] or traj.shape[3:] != gt.shape[2:]:
        raise ad.ShapeError(f"wta loss: prediction shape {traj.shape} incompatible with ground truth {gt.shape}")
    if traj.shape[2] == 0:
        raise ValueError("wta loss: need at least one mode (K=0)")
    ell = ad.smooth_l1(traj, gt[:, :, None], SMOOTH_L1_BETA)
    return ad.reduce_mean(ad.reduce_sum(ell, axis=-1), axis=-1)


def _agent_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Masked mean over the last (agent) axis."""
    m = np.asarray(mask, dtype=np.float64)
    n = np.maximum(m.sum(axis=-1), 1.0)
    return ad.reduce_sum(x * m, axis=-1) * (1.0 / n)


def _one_hot(idx: np.ndarray, k: int) -> np.ndarray:
    return (np.asarray(idx)[..., None] == np.arange(k)).astype(np.float64)


def _default_mask(traj: Tensor, agent_mask) -> np.ndarray:
    return np.ones(traj.shape[:2]) if agent_mask is None else np.asarray(agent_mask, dtype=np.float64)


def actor_wta_loss(
    traj,
    agent_logits,
    gt,
    agent_mask=None,
    lambda_reg: float = LAMBDA_REG,
    lambda_cls: float = LAMBDA_CLS,
) -> LossBreakdown:
    """Each agent is scored only on its own best mode; classification targets that mode."""
    L = per_agent_mode_loss(traj, gt)  # [B, A, K]
    mask = _default_mask(L, agent_mask)
    K = L.shape[-1]
    best = ad.min_index(L, axis=-1)  # [B, A]
    onehot = _one_hot(best, K)
    reg_scene = _agent_mean(ad.reduce_sum(L * onehot, axis=-1), mask)  # [B]
    reg = ad.reduce_mean(reg_scene)
    total = reg * lambda_reg
    cls_val = 0.0
    if agent_logits is not None:
        nll = -ad.reduce_sum(ad.log_softmax(agent_logits) * onehot, axis=-1)
        cls = ad.reduce_mean(_agent_mean(nll, mask))
        total = total + cls * lambda_cls
        cls_val = float(cls.data)
    return LossBreakdown(total, float(reg.data), cls_val, None, best)


def scene_mode_loss(traj, gt, agent_mask=None) -> Tensor:
    """Per-scene, per-mode regression ``[B, K]``: agent- and time-averaged smooth-L1."""
    L = per_agent_mode_loss(traj, gt)
    mask = _default_mask(L, agent_mask)
    return _agent_mean(L.transpose(0, 2, 1), mask[:, None, :])


def scene_wta_loss(
    traj,
    scene_logits,
    gt,
    agent_mask=None,
    lambda_reg: float = LAMBDA_REG,
    lambda_cls: float = LAMBDA_CLS,
) -> LossBreakdown:
    """Winner-takes-all over whole-scene modes plus cross-entropy on the winning mode."""
    Ls = scene_mode_loss(traj, gt, agent_mask)  # [B, K]
    K = Ls.shape[-1]
    best = ad.min_index(Ls, axis=-1)  # [B]
    onehot = _one_hot(best, K)
    reg = ad.reduce_mean(ad.reduce_sum(Ls * onehot, axis=-1))
    total = reg * lambda_reg
    cls_val = 0.0
    if scene_logits is not None:
        cls = ad.reduce_mean(-ad.reduce_sum(ad.log_softmax(scene_logits) * onehot, axis=-1))
        total = total + cls * lambda_cls
        cls_val = float(cls.data)
    return LossBreakdown(total, float(reg.data), cls_val, None, best)


def elbo_loss(recon, gt, kl: Tensor, beta: float, agent_mask=None, lambda_reg: float = LAMBDA_REG) -> LossBreakdown:
    """Single-mode reconstruction plus ``beta``-weighted KL. ``recon`` is ``[B, A, T, 2]``."""
    recon = recon if isinstance(recon, Tensor) else Tensor(recon)
    B, A, T, _ = recon.shape
    scene = scene_wta_loss(recon.reshape(B, A, 1, T, 2), None, gt, agent_mask, lambda_reg=lambda_reg)
    total = scene.total + kl * beta
    return LossBreakdown(total, scene.regression, 0.0, float(kl.data), scene.selected)
