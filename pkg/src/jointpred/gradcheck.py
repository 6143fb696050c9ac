"""Finite-difference gradient suite over every differentiable op and every model loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import VARIANTS, ExperimentConfig
from .models import build_model, parameter_grad_check
from .scene import SCENARIO_KINDS, build_frames, collate, generate_scene

TOLERANCE = 1e-4
STEP = 1e-5


def _away_from_zero(rng, shape, lo=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < lo, np.sign(x + 1e-12) * lo, x)


def _positive(rng, shape):
    return rng.uniform(0.3, 2.0, size=shape)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return ad.reduce_sum(out * w)


def _unary(op: Callable, sample=None):
    def build(rng):
        x = (sample or (lambda r, s: r.normal(size=s)))(rng, (3, 4))
        w = rng.normal(size=op(Tensor(x)).shape)
        return [(lambda t: _weighted(op(t), w), x)]

    return build


def _binary(op: Callable, shape_a=(3, 4), shape_b=(3, 4), sample_b=None):
    def build(rng):
        a = rng.normal(size=shape_a)
        b = (sample_b or (lambda r, s: r.normal(size=s)))(rng, shape_b)
        w = rng.normal(size=op(Tensor(a), Tensor(b)).shape)
        return [
            (lambda t: _weighted(op(t, b), w), a),
            (lambda t: _weighted(op(a, t), w), b),
        ]

    return build


def _concat(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 5))
    w = rng.normal(size=(2, 8))
    return [
        (lambda t: _weighted(ad.concat([t, b], axis=-1), w), a),
        (lambda t: _weighted(ad.concat([a, t], axis=-1), w), b),
    ]


def _slice(rng):
    x = rng.normal(size=(4, 5))
    w1, w2 = rng.normal(size=(2, 3)), rng.normal(size=(3,))
    idx = np.array([0, 2, 2])
    return [
        (lambda t: _weighted(t[1:3, ::2], w1), x),
        (lambda t: _weighted(t[idx, 1], w2), x),
    ]


def _smooth_l1(rng):
    p, g = rng.normal(size=(3, 4)) * 2.0, rng.normal(size=(3, 4))
    # keep residuals off the transition and off zero
    r = p - g
    r = np.where(np.abs(np.abs(r) - 1.0) < 0.05, r * 1.2, r)
    r = np.where(np.abs(r) < 0.05, 0.1, r)
    p = g + r
    w = rng.normal(size=(3, 4))
    return [
        (lambda t: _weighted(ad.smooth_l1(t, g), w), p),
        (lambda t: _weighted(ad.smooth_l1(p, t), w), g),
    ]


OP_CASES: dict[str, Callable[[np.random.Generator], list]] = {
    "matmul": _binary(ad.matmul, (2, 3, 4), (4, 5)),
    "add": _binary(ad.add, (3, 4), (4,)),
    "sub": _binary(ad.sub, (3, 4), (3, 1)),
    "mul": _binary(ad.mul, (3, 4), (3, 4)),
    "div": _binary(ad.div, (3, 4), (3, 4), sample_b=_positive),
    "neg": _unary(ad.neg),
    "concat": _concat,
    "slice": _slice,
    "reshape": _unary(lambda t: ad.reshape(t, (4, 3))),
    "transpose": _unary(lambda t: ad.transpose(t, (1, 0))),
    "relu": _unary(ad.relu, _away_from_zero),
    "softmax": _unary(ad.softmax),
    "log_softmax": _unary(ad.log_softmax),
    "layer_norm": _unary(ad.layer_norm),
    "reduce_mean": _unary(lambda t: ad.reduce_mean(t, axis=0)),
    "reduce_sum": _unary(lambda t: ad.reduce_sum(t, axis=1)),
    "reduce_max": _unary(lambda t: ad.reduce_max(t, axis=-1)),
    "exp": _unary(ad.exp),
    "expm1": _unary(ad.expm1),
    "log": _unary(ad.log, _positive),
    "sqrt": _unary(ad.sqrt, _positive),
    "smooth_l1": _smooth_l1,
}


@dataclass
class GradcheckReport:
    tolerance: float
    results: dict[str, float] = field(default_factory=dict)  # name -> worst relative error
    checked: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)  # coordinates straddling a kink

    def add(self, name: str, parts) -> None:
        parts = list(parts)
        self.results[name] = max((r.max_error for r in parts), default=0.0)
        self.checked[name] = sum(r.checked for r in parts)
        self.skipped[name] = sum(r.skipped for r in parts)

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.results.items() if not (v <= self.tolerance and self.checked.get(k, 1) > 0)]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "ok": self.ok,
            "failures": self.failures,
            "results": self.results,
            "checked": self.checked,
            "skipped": self.skipped,
        }


def check_ops(instances: int = 20, seed: int = 0, h: float = STEP, tol: float = TOLERANCE) -> GradcheckReport:
    report = GradcheckReport(tol)
    for i, (name, build) in enumerate(OP_CASES.items()):
        parts = []
        for j in range(instances):
            for f, x in build(np.random.default_rng([seed, i, j])):
                parts.append(ad.grad_check_detail(f, x, h))
        report.add(f"op:{name}", parts)
    return report


def gradcheck_config(variant: str, seed: int = 0) -> ExperimentConfig:
    """Reduced-size configuration so each loss evaluation takes milliseconds."""
    extra = {"beta": 0.5} if variant == "cvae" else {}
    if variant == "anchor_transformer":
        extra["anchor_layers"] = 2
    return ExperimentConfig(variant=variant, dim=8, heads=2, n_layers=2, k=3, latent_dim=4, t_past=8,
                            t_future=6, bezier_degree=3, seed=seed, **extra)


def check_model(variant: str, instances: int = 20, seed: int = 0, h: float = STEP,
                params_per_instance: int = 6, coords_per_param: int = 2) -> list[ad.GradCheckResult]:
    """Check the variant's training loss on ``instances`` random scenes and weight draws."""
    parts = []
    for j in range(instances):
        cfg = gradcheck_config(variant, seed=seed * 1000 + j)
        model = build_model(cfg)
        rng = np.random.default_rng([seed, VARIANTS.index(variant), j])
        kinds = rng.choice(SCENARIO_KINDS, size=2)
        scenes = [generate_scene(str(k), int(rng.integers(1 << 30)), t_past=cfg.t_past, t_future=cfg.t_future)
                  for k in kinds]
        batch = collate([build_frames(s) for s in scenes])
        noise_seed = int(rng.integers(1 << 30))

        def loss():
            return model.loss(batch, np.random.default_rng(noise_seed)).total

        names = list(model.parameters())
        pick = rng.choice(len(names), size=min(params_per_instance, len(names)), replace=False)
        res = parameter_grad_check(model, loss, [names[p] for p in sorted(pick)], h, coords_per_param,
                                   rng=int(rng.integers(1 << 30)))
        parts += res.values()
    return parts


def run_suite(variants=VARIANTS, instances: int = 20, seed: int = 0, h: float = STEP,
              tol: float = TOLERANCE, include_ops: bool = True) -> GradcheckReport:
    report = check_ops(instances, seed, h, tol) if include_ops else GradcheckReport(tol)
    for v in variants:
        report.add(f"model:{v}", check_model(v, instances, seed, h))
    return report
