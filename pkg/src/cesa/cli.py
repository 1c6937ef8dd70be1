"""Command line: gen-data, train, synth, analyze, eval, ablate, export-viz.

Exit codes: 0 success, 1 runtime failure, 2 input or validation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from .config import ConfigError, Config, load_config
from .substrate.rng import make_rng
from .synthworld import (ACTIONS, CATEGORIES, DatasetError, GrammarError, MotionSample, generate_corpus,
                         motion_from_json, motion_to_json, parse_text, read_dataset,
                         resolve_targets, scene_from_json, write_dataset)
from .synthworld.language import tokenize

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2
TEMPLATE = "<action> the <object> [<relation> the <anchor>]"


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise InputError(f"output directory {path} is not writable ({exc})") from exc
    return path


def _load_ckpt(path) -> ck.Checkpoint:
    try:
        return ck.load(path)
    except ck.CheckpointError as exc:
        raise InputError(str(exc)) from exc


def _load_scene(path):
    try:
        return scene_from_json(Path(path).read_text())
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: invalid scene file ({exc})") from exc


def _load_motion(path) -> MotionSample:
    try:
        return motion_from_json(Path(path).read_text())
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: invalid motion file ({exc})") from exc


def _load_data(path):
    try:
        return read_dataset(path)
    except DatasetError as exc:
        raise InputError(str(exc)) from exc


def _config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else load_config()
    if getattr(args, "mode", None):
        cfg.train.mode = args.mode
    if getattr(args, "max_steps", None) is not None:
        cfg.train.max_steps = args.max_steps
    if getattr(args, "epochs", None) is not None:
        cfg.train.epochs = args.epochs
    return cfg


def _check_compatible(cfg: Config, corpus) -> None:
    widths = {s.frames.shape[1] for s in corpus.samples}
    if widths != {cfg.model.frame_width}:
        raise InputError(f"dataset frame width {sorted(widths)} does not match the model's "
                         f"9 + 3J = {cfg.model.frame_width} (joints={cfg.model.joints})")


# -- subcommands ------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    out = _ensure_dir(args.out)
    corpus = generate_corpus(args.scenes, args.samples_per_scene, args.seed, n_frames=args.frames,
                             n_points=args.points, joints=args.joints,
                             ambiguity_allowed=args.ambiguity == "on")
    write_dataset(corpus, out)
    _print_json(corpus.summary())
    return EXIT_OK


def cmd_train(args) -> int:
    from .coevolution import train

    cfg = _config(args)
    corpus = _load_data(args.data)
    _check_compatible(cfg, corpus)
    out = Path(args.out)
    _ensure_dir(out.parent if str(out.parent) else ".")
    model = optimizer = None
    start = 0
    if args.resume:
        state = _load_ckpt(args.resume)
        model, optimizer = state.build_model(), state.optimizer
        start = int(state.meta.get("step", 0))
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    mode = "a" if args.resume else "w"
    with open(log_path, mode) as log:
        result = train(corpus, cfg, model=model, optimizer=optimizer, start_step=start,
                       log_stream=log, keep_best=False)
    last = ck.from_model(result.model, cfg, result.optimizer, {"step": result.step})
    ck.save(out.with_name(out.name + ".resume"), last)
    # the primary checkpoint holds the best-validation snapshot
    best_state = result.best_state if result.best_state is not None else result.model.state_dict()
    ck.save(out, ck.Checkpoint(cfg, best_state, result.optimizer,
                               {"step": result.step, "best_step": result.log.best_step}))
    final = result.log.validation[-1] if result.log.validation else {}
    _print_json({"checkpoint": str(out), "steps": result.step, "best_step": result.log.best_step,
                 "final_validation": final, "log": str(log_path)})
    return EXIT_OK


def _generate(model, cloud, text, frames, k, seed):
    return model.generator.generate(cloud, text, frames, k, make_rng(seed, "synth"))


def cmd_synth(args) -> int:
    state = _load_ckpt(args.ckpt)
    try:
        command = parse_text(args.text)
    except GrammarError as exc:
        raise InputError(f"{exc}; commands follow the template {TEMPLATE!r}") from exc
    if args.frames < 1 or args.samples < 1:
        raise InputError("--frames and --samples must be >= 1")
    if args.data:
        corpus = _load_data(args.data)
        if args.scene not in corpus.scenes:
            raise InputError(f"scene {args.scene!r} not in dataset {args.data}")
        scene, cloud = corpus.scenes[args.scene], corpus.clouds[args.scene]
    else:
        scene, cloud = _load_scene(args.scene)
    try:
        tokenize(args.text, state.config.model.text_len)
    except GrammarError as exc:
        raise InputError(str(exc)) from exc
    targets = resolve_targets(scene, command.object_category, command.relation, command.anchor_category,
                              state.config.data.tau_near)
    command = type(command)(command.action, command.object_category, command.relation,
                            command.anchor_category, targets)
    model = state.build_model()
    results = _generate(model, cloud, args.text, args.frames, args.samples, args.seed)
    out = _ensure_dir(args.out)
    kept, rejected = [], []
    for i, r in enumerate(results):
        sample = MotionSample(f"{scene.id}_gen{i:03d}", scene.id, command, targets[0] if targets else -1,
                              r.goal, r.frames, text=args.text)
        sample.path = np.asarray(r.path, np.float32)
        if args.reject_inconsistent:
            res = model.analyzer.analyze(sample.frames, cloud)
            if int(res.action) != command.action_index or int(res.object) != command.category_index:
                rejected.append(sample.sample_id)
                continue
        kept.append(sample)
    for s in kept:
        _write_text(out / f"{s.sample_id}.json", motion_to_json(s))
    manifest = {"scene_id": scene.id, "text": args.text, "frames": args.frames, "seed": args.seed,
                "samples": [f"{s.sample_id}.json" for s in kept], "rejected": rejected}
    _write_text(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    _print_json({"written": len(kept), "rejected": len(rejected), "out": str(out)})
    return EXIT_OK


def cmd_analyze(args) -> int:
    state = _load_ckpt(args.ckpt)
    motion = _load_motion(args.motion)
    scene, cloud = _load_scene(args.scene)
    if motion.frames.shape[1] != state.config.model.frame_width:
        raise InputError(f"{args.motion}: frame width {motion.frames.shape[1]} does not match the "
                         f"checkpoint's {state.config.model.frame_width}")
    res = state.build_model().analyzer.analyze(motion.frames, cloud)
    _print_json({
        "action": ACTIONS[int(res.action)], "object": CATEGORIES[int(res.object)],
        "action_distribution": {a: float(p) for a, p in zip(ACTIONS, res.action_dist)},
        "object_distribution": {c: float(p) for c, p in zip(CATEGORIES, res.object_dist)},
    })
    return EXIT_OK


def _metric_list(text: str):
    from .metrics import METRIC_NAMES

    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in METRIC_NAMES]
    if bad or not names:
        raise InputError(f"unknown metric(s) {bad}; valid names: {', '.join(METRIC_NAMES)}")
    return tuple(names)


def evaluation_report(model, cfg: Config, corpus, metrics, repeats: int, seed: int) -> dict:
    """Held-out evaluation repeated ``repeats`` times with a shared feature extractor."""
    from .metrics import evaluate_model, metric_report, train_feature_extractor

    train_set, val = corpus.split_by_scene(cfg.train.val_fraction, cfg.seed)
    if not val.samples:
        raise InputError("dataset has no held-out scenes (val_fraction too small)")
    fx = real = None
    if {"fid", "div"} & set(metrics):
        fx = train_feature_extractor([s.frames for s in train_set.samples], cfg.model.frames,
                                     cfg.model.frame_width, cfg.metrics.feature_dim,
                                     cfg.metrics.extractor_steps, seed=cfg.seed)
        real = fx.features([s.frames for s in val.samples])
    reps = [evaluate_model(model, val, make_rng(seed, "eval", r), metrics, extractor=fx,
                           real_features=real, metric_cfg=cfg.metrics) for r in range(repeats)]
    return metric_report(reps, len(val.samples), fx.digest() if fx else None, cfg.to_dict())


def cmd_eval(args) -> int:
    from .metrics import report_json

    metrics = _metric_list(args.metrics)
    if args.repeats < 1:
        raise InputError("--repeats must be >= 1")
    state = _load_ckpt(args.ckpt)
    corpus = _load_data(args.data)
    _check_compatible(state.config, corpus)
    report = evaluation_report(state.build_model(), state.config, corpus, metrics, args.repeats, args.seed)
    text = report_json(report)
    if args.out:
        _write_text(Path(args.out), text)
    print(text, end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .coevolution import ABLATION_VARIANTS, ablation_run
    from .metrics import evaluate_model, report_json, train_feature_extractor

    cfg = _config(args)
    corpus = _load_data(args.data)
    _check_compatible(cfg, corpus)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in ABLATION_VARIANTS]
    if bad:
        raise InputError(f"unknown variant(s) {bad}; valid: {', '.join(ABLATION_VARIANTS)}")
    train_set, val = corpus.split_by_scene(cfg.train.val_fraction, cfg.seed)
    fx = train_feature_extractor([s.frames for s in train_set.samples], cfg.model.frames,
                                 cfg.model.frame_width, cfg.metrics.feature_dim,
                                 cfg.metrics.extractor_steps, seed=cfg.seed)
    real = fx.features([s.frames for s in val.samples])

    def evaluator(model, val_corpus, rng):
        return evaluate_model(model, val_corpus, rng, ("fid", "goal", "path"), extractor=fx,
                              real_features=real, metric_cfg=cfg.metrics)

    reports = {v: ablation_run(v, corpus, cfg, evaluator, repeats=args.repeats) for v in variants}
    for v, rep in reports.items():
        # wall-clock stays out of the report so reruns are byte-identical
        print(f"{v}: trained in {rep.pop('train_seconds'):.1f}s", file=sys.stderr)
    text = report_json({"extractor_hash": fx.digest(), "config": cfg.to_dict(), "variants": reports})
    if args.out:
        _write_text(Path(args.out), text)
    print(text, end="")
    return EXIT_OK


def cmd_export_viz(args) -> int:
    from .viz import goals_json, joints_csv, render_svg

    scene, _ = _load_scene(args.scene)
    motions = [_load_motion(p) for p in args.motion]
    out = _ensure_dir(args.out)
    _write_text(out / "scene.svg", render_svg(scene, motions))
    _write_text(out / "joints.csv", joints_csv(motions))
    _write_text(out / "goals.json", goals_json(motions))
    _print_json({"out": str(out), "motions": len(motions)})
    return EXIT_OK


# -- parser ---------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cesa", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate an oracle dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--scenes", type=int, default=64)
    g.add_argument("--samples-per-scene", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--ambiguity", choices=("on", "off"), default="on")
    g.add_argument("--frames", type=int, default=30)
    g.add_argument("--points", type=int, default=256)
    g.add_argument("--joints", type=int, choices=(8, 22), default=8)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train generator and analyzer")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--mode", choices=("synthesis_only", "cesa"))
    t.add_argument("--out", required=True)
    t.add_argument("--log")
    t.add_argument("--resume", help="a .resume checkpoint written by a previous run")
    t.add_argument("--max-steps", type=int)
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="generate motions for a scene and command")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--scene", required=True, help="scene file, or scene id together with --data")
    s.add_argument("--data")
    s.add_argument("--text", required=True)
    s.add_argument("--frames", type=int, default=30)
    s.add_argument("--samples", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--reject-inconsistent", action="store_true")
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("analyze", help="recognize action and object of a motion")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--motion", required=True)
    a.add_argument("--scene", required=True)
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("eval", help="metric report on the held-out split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--metrics", default="fid,div,acc,noncollision,contact,goal,path")
    e.add_argument("--repeats", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("ablate", help="train and evaluate cascade variants")
    b.add_argument("--data", required=True)
    b.add_argument("--config")
    b.add_argument("--variants", default="full,no_goal,no_path,no_goal_no_path")
    b.add_argument("--repeats", type=int, default=20)
    b.add_argument("--max-steps", type=int)
    b.add_argument("--epochs", type=int)
    b.add_argument("--out")
    b.set_defaults(func=cmd_ablate)

    v = sub.add_parser("export-viz", help="SVG/CSV/JSON export of motions in a scene")
    v.add_argument("--motion", required=True, nargs="+")
    v.add_argument("--scene", required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_export_viz)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (InputError, ConfigError, GrammarError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # runtime failure: report and exit nonzero
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
