"""Multi-world metrics, the circle collision model, inference timing and reports."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .scene import AGENT_RADIUS

MISS_THRESHOLD = 2.0  # metres
METRICS = ("minSADE", "minSFDE", "actorMR", "actorCR")


@dataclass
class JointPrediction:
    """K scene modes in global coordinates with one confidence per mode."""

    scene_id: str
    agent_ids: list[str]
    trajectories: np.ndarray  # [K, Na, T, 2]
    probabilities: np.ndarray  # [K]
    mode_indices: np.ndarray | None = None  # [K, Na] for recombined marginals

    @property
    def k(self) -> int:
        return self.trajectories.shape[0]

    def to_dict(self) -> dict:
        d = {
            "scene_id": self.scene_id,
            "agent_ids": list(self.agent_ids),
            "probabilities": self.probabilities.tolist(),
            "modes": self.trajectories.tolist(),
        }
        if self.mode_indices is not None:
            d["mode_indices"] = self.mode_indices.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "JointPrediction":
        mi = d.get("mode_indices")
        return cls(
            d["scene_id"],
            list(d["agent_ids"]),
            np.asarray(d["modes"], dtype=np.float64),
            np.asarray(d["probabilities"], dtype=np.float64),
            None if mi is None else np.asarray(mi, dtype=np.int64),
        )


def _check(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim != 4 or pred.shape[1:] != gt.shape or pred.shape[0] < 1:
        raise ValueError(f"prediction {pred.shape} does not match ground truth {gt.shape} (need [K>=1, Na, T, 2])")
    return pred, gt


def mode_errors(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode scene ADE and FDE, each ``[K]``."""
    pred, gt = _check(pred, gt)
    err = np.linalg.norm(pred - gt[None], axis=-1)  # [K, Na, T]
    return err.mean(axis=(1, 2)), err[:, :, -1].mean(axis=1)


def min_scene_metrics(pred, gt) -> tuple[float, float, int]:
    """(minSADE, minSFDE, index of the minSADE mode). The two minima may come from different modes."""
    ade, fde = mode_errors(pred, gt)
    best = int(np.argmin(ade))
    return float(ade[best]), float(fde.min()), best


def actor_miss_rate(pred, gt, threshold: float = MISS_THRESHOLD, mode: int | None = None) -> float:
    """Fraction of agents whose final error in the selected mode exceeds ``threshold``."""
    if threshold <= 0:
        raise ValueError("miss threshold must be positive")
    pred, gt = _check(pred, gt)
    if mode is None:
        mode = min_scene_metrics(pred, gt)[2]
    fde = np.linalg.norm(pred[mode, :, -1] - gt[:, -1], axis=-1)
    return float(np.mean(fde > threshold))


def collision_pairs(traj, agent_types: Sequence[str]) -> np.ndarray:
    """Boolean ``[Na, Na]``: pair collides at some step (centre distance < sum of radii)."""
    traj = np.asarray(traj, dtype=np.float64)
    r = np.array([AGENT_RADIUS[t] for t in agent_types])
    d = np.linalg.norm(traj[:, None] - traj[None, :], axis=-1)  # [Na, Na, T]
    hit = (d < (r[:, None] + r[None, :])[..., None]).any(axis=-1)
    np.fill_diagonal(hit, False)
    return hit


def actor_collision_rate(traj, agent_types: Sequence[str]) -> float:
    """Fraction of agents of one mode ``[Na, T, 2]`` involved in at least one collision."""
    return float(np.mean(collision_pairs(traj, agent_types).any(axis=1)))


def scene_metrics(pred, gt, agent_types: Sequence[str], threshold: float = MISS_THRESHOLD) -> dict:
    sade, sfde, best = min_scene_metrics(pred, gt)
    return {
        "minSADE": sade,
        "minSFDE": sfde,
        "actorMR": actor_miss_rate(pred, gt, threshold, mode=best),
        "actorCR": actor_collision_rate(np.asarray(pred)[best], agent_types),
        "best_mode": best,
    }


# reports -------------------------------------------------------------------


@dataclass
class EvalReport:
    rows: list[dict]
    config_digest: str
    k: int
    runs: list[dict] = field(default_factory=list)

    @property
    def n_scenes(self) -> int:
        return len(self.rows)

    @property
    def aggregate(self) -> dict:
        if not self.rows:
            return {m: float("nan") for m in METRICS}
        return {m: float(np.mean([r[m] for r in self.rows])) for m in METRICS}

    def run_summary(self) -> dict | None:
        """Mean and std over repeated runs (population std), when several runs were made."""
        if len(self.runs) < 2:
            return None
        return {
            m: {"mean": float(np.mean([r[m] for r in self.runs])), "std": float(np.std([r[m] for r in self.runs]))}
            for m in METRICS
        }

    def to_dict(self) -> dict:
        d = {
            "config_digest": self.config_digest,
            "k": self.k,
            "n_scenes": self.n_scenes,
            "aggregate": self.aggregate,
            "scenes": self.rows,
        }
        if self.runs:
            d["runs"] = self.runs
            d["run_summary"] = self.run_summary()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scene_id", "n_agents", *METRICS, "config_digest"])
        for r in self.rows:
            w.writerow([r["scene_id"], r["n_agents"], *(repr(float(r[m])) for m in METRICS), self.config_digest])
        agg = self.aggregate
        w.writerow(["__aggregate__", self.n_scenes, *(repr(agg[m]) for m in METRICS), self.config_digest])
        return buf.getvalue()

    def write(self, out_dir, plots: bool = True) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json", out / "report.csv"]
        paths[0].write_text(self.to_json())
        paths[1].write_text(self.to_csv())
        if plots and self.rows:
            paths.append(plot_metric_distributions(self, out / "metrics.svg"))
        return paths


def evaluate_predictions(preds: Sequence[JointPrediction], gts: Sequence[np.ndarray],
                         types: Sequence[Sequence[str]], config_digest: str, k: int,
                         threshold: float = MISS_THRESHOLD) -> EvalReport:
    rows = []
    for p, g, t in zip(preds, gts, types):
        m = scene_metrics(p.trajectories, g, t, threshold)
        rows.append({"scene_id": p.scene_id, "n_agents": len(t), **m})
    return EvalReport(rows, config_digest, k)


def _svg_settings():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "jointpred"
    return plt


def plot_metric_distributions(report: EvalReport, path) -> Path:
    plt = _svg_settings()
    fig, axes = plt.subplots(1, 4, figsize=(12, 3))
    for ax, m in zip(axes, METRICS):
        ax.hist([r[m] for r in report.rows], bins=20, color="0.4")
        ax.set_title(m)
    fig.suptitle(f"{report.n_scenes} scenes, K={report.k}, config {report.config_digest}")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)


# inference timing ----------------------------------------------------------


@dataclass
class TimingModel:
    """``T_inference [ms] = gamma0 + gamma_a * N_a + gamma_l * N_l``."""

    gamma0: float
    gamma_a: float
    gamma_l: float
    r2: float

    def predict(self, n_agents, n_lanes):
        return self.gamma0 + self.gamma_a * np.asarray(n_agents) + self.gamma_l * np.asarray(n_lanes)

    def to_dict(self) -> dict:
        return {"gamma0": self.gamma0, "gamma_a": self.gamma_a, "gamma_l": self.gamma_l, "r2": self.r2}


def fit_timing_model(samples) -> TimingModel:
    """Ordinary least squares with intercept on rows of (N_a, N_l, elapsed ms).

    R² is ``1 - SS_res / SS_tot``; constant timings (``SS_tot = 0``) report 0.
    """
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != 3 or len(s) < 3:
        raise ValueError("need at least 3 samples of (n_agents, n_lanes, ms)")
    X = np.column_stack([np.ones(len(s)), s[:, 0], s[:, 1]])
    y = s[:, 2]
    if np.linalg.matrix_rank(X) < 3:
        raise ValueError("rank-deficient design: vary N_a and N_l independently")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        # constant timings
        return TimingModel(float(y[0]), 0.0, 0.0, 0.0)
    r2 = 1.0 - float(resid @ resid) / ss_tot
    return TimingModel(float(coef[0]), float(coef[1]), float(coef[2]), float(np.clip(r2, 0.0, 1.0)))


# published full-size GPU fits, shown next to local fits in bench reports;
# desk-scale CPU timings are not expected to reproduce them
REFERENCE_TIMING = {
    "marginal_recombination": TimingModel(11.19, 6.84e-1, 3.75e-2, 0.8665),
    "joint_loss": TimingModel(15.14, 1.02e-2, 9.71e-3, 0.0386),
}


@dataclass
class BenchResult:
    samples: list[tuple[int, int, float]]
    model: TimingModel

    @property
    def mean_ms(self) -> float:
        return float(np.mean([s[2] for s in self.samples]))

    @property
    def std_ms(self) -> float:
        return float(np.std([s[2] for s in self.samples]))

    def to_dict(self) -> dict:
        return {
            "mean_ms": self.mean_ms,
            "std_ms": self.std_ms,
            "timing_model": self.model.to_dict(),
            "samples": [list(s) for s in self.samples],
        }


def bench_inference(run: Callable[[object], object], scenes: Sequence, sizes: Sequence[tuple[int, int]],
                    repetitions: int = 3, warmup: int = 1,
                    clock: Callable[[], float] = time.perf_counter) -> BenchResult:
    """Time ``run(scene)`` per scene; ``sizes[i]`` is (N_a, N_l) of ``scenes[i]``.

    Each scene is run ``warmup`` times untimed, then ``repetitions`` timed
    runs each contribute one sample.
    """
    if not scenes:
        raise ValueError("bench_inference: empty dataset")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    samples = []
    for sc, (na, nl) in zip(scenes, sizes):
        for _ in range(warmup):
            run(sc)
        for _ in range(repetitions):
            t0 = clock()
            run(sc)
            samples.append((int(na), int(nl), (clock() - t0) * 1e3))
    return BenchResult(samples, fit_timing_model(samples))


def plot_timing(results: dict[str, BenchResult], path) -> Path:
    plt = _svg_settings()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, res in results.items():
        s = np.asarray(res.samples)
        ax.scatter(s[:, 0], s[:, 2], s=6, label=name)
    ax.set_xlabel("N_a")
    ax.set_ylabel("inference time [ms]")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)
