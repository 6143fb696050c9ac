"""Command-line interface: ``jointpred <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 validation failure (bad config,
data, checkpoint or arguments), 3 numeric failure (non-finite loss,
gradient-check violation).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, CheckpointError
from .config import PRESETS, VARIANTS, ConfigError, ExperimentConfig
from .evaluation import (
    REFERENCE_TIMING,
    EvalReport,
    JointPrediction,
    bench_inference,
    evaluate_predictions,
    plot_timing,
)
from .models import SAMPLING, build_model
from .recombination import normalized_scores, recombine_beam, recombine_bruteforce
from .scene import (
    SCENARIO_KINDS,
    SceneError,
    build_frames,
    collate,
    generate_scene,
    load_dataset,
    load_scene,
    write_dataset,
)
from .training import TrainingError, load_model, train

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("jointpred")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# helpers -------------------------------------------------------------------


def _config_from_args(args) -> ExperimentConfig:
    """Preset, then config file, then individual flags; later sources win."""
    fields: dict = dict(PRESETS["desk"])
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; have {sorted(PRESETS)}")
        fields = {**PRESETS["desk"], **PRESETS[args.preset]} if args.preset.startswith("cvae") else dict(PRESETS[args.preset])
    if getattr(args, "config", None):
        fields.update(ExperimentConfig.load(args.config).to_dict())
    for name in ("variant", "seed", "k", "epochs"):
        v = getattr(args, name, None)
        if v is not None:
            fields[name] = v
    return ExperimentConfig.from_dict(fields)


def _write_json(doc, out: str | None) -> None:
    text = json.dumps(doc, indent=1, sort_keys=True)
    if out is None or out == "-":
        print(text)
    else:
        p = Path(out)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)


def _load_checkpoint_model(path):
    ckpt = Checkpoint.load(path)
    return ckpt, load_model(ckpt)


def _predict_scenes(model, scenes, k, sampling, seed, batch_size=16) -> list[JointPrediction]:
    rng = np.random.default_rng(seed)
    preds = []
    frames = [build_frames(s) for s in scenes]
    for i in range(0, len(frames), batch_size):
        preds += model.predict(collate(frames[i : i + batch_size]), k, sampling, rng)
    return preds


# commands ------------------------------------------------------------------


def cmd_generate(args) -> int:
    kinds = args.kinds.split(",") if args.kinds else list(SCENARIO_KINDS)
    bad = [k for k in kinds if k not in SCENARIO_KINDS]
    if bad:
        raise SceneError(f"unknown scenario kinds {bad}; choose from {SCENARIO_KINDS}")
    if args.count < 1:
        raise SceneError("--count must be >= 1")
    cfg = _config_from_args(args)
    scenes = [
        generate_scene(kinds[i % len(kinds)], args.seed * 1_000_003 + i, n_agents=args.n_agents,
                       t_past=cfg.t_past, t_future=cfg.t_future, scene_id=f"s{args.seed}-{i:05d}")
        for i in range(args.count)
    ]
    n_val = int(round(args.val_fraction * args.count))
    order = np.random.default_rng(args.seed).permutation(args.count)
    splits = {"train": sorted(order[n_val:].tolist()), "val": sorted(order[:n_val].tolist())}
    meta = {"seed": args.seed, "count": args.count, "kinds": kinds, "config_digest": cfg.digest}
    out = write_dataset(args.out, scenes, splits, meta)
    print(f"wrote {args.count} scenes to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    data = args.data or cfg.train_data
    if not data:
        raise ConfigError("no training data: pass --data or set train_data in the config")
    scenes = load_dataset(data, args.split)
    res = train(cfg, scenes, args.out, max_steps=args.max_steps)
    final = res.curve[-1]["total"] if res.curve else None
    print(json.dumps({"config_digest": cfg.digest, "epochs": res.epochs_run, "steps": len(res.curve),
                      "final_loss": final, "out": str(args.out)}))
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt, model = _load_checkpoint_model(args.checkpoint)
    scene = load_scene(args.scene)
    pred = _predict_scenes(model, [scene], args.k, args.sampling, args.seed)[0]
    doc = {"config_digest": ckpt.config_digest, "variant": model.variant, "sampling": args.sampling,
           "seed": args.seed, **pred.to_dict()}
    _write_json(doc, args.out)
    return EXIT_OK


def evaluate_model(model, scenes, k, sampling, seed, runs, config_digest) -> EvalReport:
    missing = [s.id for s in scenes if not s.has_future]
    if missing:
        raise SceneError(f"cannot evaluate without ground-truth futures: {missing[:5]}")
    if not scenes:
        raise SceneError("evaluation split is empty")
    reports = []
    for r in range(runs):
        preds = _predict_scenes(model, scenes, k, sampling, seed + r)
        reports.append(evaluate_predictions(preds, [s.futures() for s in scenes],
                                            [s.agent_types() for s in scenes], config_digest, k))
    report = reports[0]
    if runs > 1:
        report.runs = [{"seed": seed + i, **rep.aggregate} for i, rep in enumerate(reports)]
    return report


def cmd_evaluate(args) -> int:
    ckpt, model = _load_checkpoint_model(args.checkpoint)
    scenes = load_dataset(args.data, args.split)
    if args.runs < 1:
        raise ConfigError("--runs must be >= 1")
    report = evaluate_model(model, scenes, args.k, args.sampling, args.seed, args.runs, ckpt.config_digest)
    paths = report.write(args.out, plots=not args.no_plots)
    print(json.dumps({"aggregate": report.aggregate, "run_summary": report.run_summary(),
                      "files": [str(p) for p in paths]}, sort_keys=True))
    return EXIT_OK


def cmd_recombine(args) -> int:
    doc = json.loads(Path(args.scores).read_text())
    scores = np.asarray(doc["scores"] if isinstance(doc, dict) else doc, dtype=np.float64)
    if args.bruteforce:
        modes = recombine_bruteforce(scores)[: args.k]
    else:
        modes = recombine_beam(scores, args.k, args.beam_width)
    out = {
        "k": args.k,
        "method": "bruteforce" if args.bruteforce else "beam",
        "modes": [{"indices": list(m.indices), "score": m.score, "log_score": m.log_score} for m in modes],
        "normalized_scores": normalized_scores(modes).tolist(),
    }
    _write_json(out, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.checkpoint:
        ckpt, model = _load_checkpoint_model(args.checkpoint)
        digest = ckpt.config_digest
    else:
        cfg = _config_from_args(args)
        model, digest = build_model(cfg), cfg.digest
    scenes = load_dataset(args.data, args.split)
    if not scenes:
        raise SceneError(f"{args.data}: empty dataset, nothing to benchmark")
    frames = [build_frames(s) for s in scenes]
    sizes = [(f.n_agents, f.n_lanes) for f in frames]
    rng = np.random.default_rng(args.seed)

    def run(f):
        return model.predict(collate([f]), args.k, "sample", rng)

    res = bench_inference(run, frames, sizes, args.repetitions, args.warmup)
    doc = {"config_digest": digest, "variant": model.variant, **res.to_dict()}
    if model.variant in REFERENCE_TIMING:
        doc["reference_timing_model"] = REFERENCE_TIMING[model.variant].to_dict()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(doc, str(out / "timing.json"))
    plot_timing({model.variant: res}, out / "timing.svg")
    print(json.dumps({"variant": model.variant, "mean_ms": res.mean_ms, "std_ms": res.std_ms,
                      "timing_model": res.model.to_dict()}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    variants = VARIANTS if args.variant in (None, "all") else [args.variant]
    report = run_suite(variants, args.instances, args.seed, args.step, args.tol, include_ops=not args.skip_ops)
    doc = report.to_dict()
    if args.out:
        _write_json(doc, args.out)
    for name, err in report.results.items():
        status = "ok  " if name not in report.failures else "FAIL"
        print(f"{status} {name:34s} max_rel_err={err:.3e} checked={report.checked[name]} "
              f"kinks_skipped={report.skipped[name]}")
    if not report.ok:
        print("failing: " + ", ".join(report.failures), file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="jointpred", description="Joint multi-agent motion prediction laboratory.")
    p.add_argument("--version", action="version", version=f"jointpred {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=0)
        if config:
            sp.add_argument("--config", help="JSON file with ExperimentConfig fields")
            sp.add_argument("--preset", choices=sorted(PRESETS))
            sp.add_argument("--variant", choices=VARIANTS)

    g = sub.add_parser("generate", help="write a synthetic scene dataset")
    common(g)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--kinds", help=f"comma-separated subset of {','.join(SCENARIO_KINDS)}")
    g.add_argument("--n-agents", type=int, help="pad every scene to this many agents")
    g.add_argument("--val-fraction", type=float, default=0.2)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model variant")
    common(t)
    t.add_argument("--data")
    t.add_argument("--split", default="train")
    t.add_argument("--k", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="predict K joint modes for one scene")
    common(pr, config=False)
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--scene", required=True)
    pr.add_argument("--k", type=int)
    pr.add_argument("--sampling", choices=SAMPLING, default="sample")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="metrics over a dataset split")
    common(e, config=False)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="val")
    e.add_argument("--k", type=int, default=6)
    e.add_argument("--sampling", choices=SAMPLING, default="sample")
    e.add_argument("--runs", type=int, default=1, help="repeat with seeds seed..seed+runs-1 (mean and std)")
    e.add_argument("--no-plots", action="store_true")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("recombine", help="top-K joint modes from marginal scores")
    r.add_argument("--scores", required=True, help='JSON [[...], ...] or {"scores": [[...], ...]}')
    r.add_argument("--k", type=int, default=6)
    r.add_argument("--beam-width", type=int)
    r.add_argument("--bruteforce", action="store_true")
    r.add_argument("--out")
    r.set_defaults(func=cmd_recombine)

    b = sub.add_parser("bench", help="inference timing and the linear timing model")
    common(b)
    b.add_argument("--checkpoint")
    b.add_argument("--data", required=True)
    b.add_argument("--split")
    b.add_argument("--k", type=int, default=6)
    b.add_argument("--repetitions", type=int, default=3)
    b.add_argument("--warmup", type=int, default=1)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    gc = sub.add_parser("gradcheck", help="finite-difference check of all ops and model losses")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--variant", choices=(*VARIANTS, "all"), default="all")
    gc.add_argument("--instances", type=int, default=20)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--step", type=float, default=1e-5)
    gc.add_argument("--skip-ops", action="store_true")
    gc.add_argument("--out")
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (TrainingError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SceneError, CheckpointError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
