"""Acceptance suite: one test per criterion, each recorded as a PASS/FAIL line.

Trained models are shared between criteria and cached on disk under a key
that includes a hash of the package source, so a cache entry is only reused
for the exact code that produced it.  Each cached model remembers its
original training time, and the time checks below count that time.

Environment knobs: ``CESA_ACCEPTANCE_CACHE`` (cache directory),
``CESA_ACCEPTANCE_EPOCHS`` (generator epochs, default 40) and
``CESA_ACCEPTANCE_ANALYZER_EPOCHS`` (standalone analyzer epochs, default 15).
"""

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

import cesa
from cesa import checkpoint as ck
from cesa.batching import collate
from cesa.cli import main as cli
from cesa.coevolution import (augment_analyzer_training, recognition_accuracy_on, train, train_analyzer,
                              variant_config)
from cesa.config import desk_preset, paper_preset
from cesa.metrics import (confidence_interval, diversity, evaluate_model, fid, mean_pairwise_path_distance,
                          non_collision_score, train_feature_extractor)
from cesa.substrate import grad_check, kl_standard_normal, make_rng
from cesa.substrate.tensor import Tensor, no_grad
from cesa.synthworld import generate_corpus, interaction_point, read_dataset, skeleton_for, write_dataset

from conftest import record_criterion
from test_models import composed_loss_check
from test_substrate import PRIMITIVES

SEEDS = (0, 1, 2)
N_SCENES, PER_SCENE = 64, 16
EPOCHS = int(os.environ.get("CESA_ACCEPTANCE_EPOCHS", "40"))
ANALYZER_EPOCHS = int(os.environ.get("CESA_ACCEPTANCE_ANALYZER_EPOCHS", "15"))
EVAL_REPEATS = 5
CACHE = Path(os.environ.get("CESA_ACCEPTANCE_CACHE", Path(__file__).resolve().parents[1] / ".acceptance_cache"))


def _source_hash() -> str:
    root = Path(cesa.__file__).parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


class Lab:
    """Corpora, extractors and trained models shared by the criteria."""

    def __init__(self, cache: Path):
        self.dir = cache / f"{_source_hash()}_e{EPOCHS}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self._corpora, self._extractors, self._models = {}, {}, {}

    def corpus(self, seed):
        if seed not in self._corpora:
            self._corpora[seed] = generate_corpus(N_SCENES, PER_SCENE, seed=seed)
        return self._corpora[seed]

    def config(self, seed, variant="full"):
        cfg = desk_preset()
        cfg.seed, cfg.train.epochs = seed, EPOCHS
        return variant_config(cfg, variant)

    def split(self, seed):
        cfg = self.config(seed)
        return self.corpus(seed).split_by_scene(cfg.train.val_fraction, seed)

    def extractor(self, seed):
        """Feature extractor trained on the training split plus real held-out features."""
        if seed not in self._extractors:
            tr, val = self.split(seed)
            m = self.config(seed).metrics
            fx = train_feature_extractor([s.frames for s in tr.samples], 30, 33, m.feature_dim,
                                         m.extractor_steps, seed=seed)
            self._extractors[seed] = (fx, fx.features([s.frames for s in val.samples]))
        return self._extractors[seed]

    def model(self, seed, variant="full"):
        """(model, training seconds); trained once and cached."""
        key = (seed, variant)
        if key not in self._models:
            path = self.dir / f"{variant}_s{seed}.ckpt"
            if path.exists():
                state = ck.load(path)
                self._models[key] = (state.build_model(), state.meta["train_seconds"])
            else:
                cfg = self.config(seed, variant)
                res = train(self.corpus(seed), cfg)
                ck.save(path, ck.from_model(res.model, cfg, res.optimizer,
                                            {"train_seconds": res.log.wall_clock, "best_step": res.log.best_step}))
                self._models[key] = (res.model, res.log.wall_clock)
        return self._models[key]

    def cached_json(self, name, compute):
        path = self.dir / f"{name}.json"
        if path.exists():
            return json.loads(path.read_text())
        value = compute()
        path.write_text(json.dumps(value, sort_keys=True, indent=1))
        return value


@pytest.fixture(scope="module")
def lab():
    return Lab(CACHE)


def _fmt(x, digits=4):
    return f"{x:.{digits}f}"


# -- 1 --------------------------------------------------------------------------------
def test_criterion_1_gradient_suite(tiny_corpus):
    t0 = time.process_time()
    worst = {}
    for name, (fn, shapes) in PRIMITIVES.items():
        for trial in range(10):
            rng = make_rng(trial, "gradcheck", name)
            err = grad_check(fn, [rng.standard_normal(s) for s in shapes], h=1e-5)
            worst[name] = max(worst.get(name, 0.0), err)
    worst["goal+path+pose+rec"] = composed_loss_check(tiny_corpus)
    cpu = time.process_time() - t0
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err < 1e-4 and cpu < 120
    record_criterion(1, ok, f"{len(worst)} checks, worst rel. err {err:.2e} ({name}), {cpu:.1f} CPU-s")
    assert ok


# -- 2 --------------------------------------------------------------------------------
def test_criterion_2_closed_form_oracles():
    rng = make_rng(2, "oracles")
    kl_errs = []
    for _ in range(5):
        mu, logvar = rng.normal(size=4), rng.uniform(-1, 1, size=4)
        z = mu + np.exp(0.5 * logvar) * rng.standard_normal((100_000, 4))
        log_q = -0.5 * (((z - mu) ** 2) / np.exp(logvar) + logvar)
        log_p = -0.5 * z ** 2
        mc = (log_q - log_p).sum(axis=1).mean()
        exact = kl_standard_normal(Tensor(mu), Tensor(logvar)).item()
        kl_errs.append(abs(mc - exact) / exact)
    shift = np.full(8, 0.5)
    x, y = rng.standard_normal((10_000, 8)), rng.standard_normal((10_000, 8)) + shift
    fid_err = abs(fid(x, y) - shift @ shift) / (shift @ shift)
    self_fid = fid(x, x)
    ok = max(kl_errs) < 0.02 and fid_err < 0.05 and self_fid <= 1e-6
    record_criterion(2, ok, f"KL vs MC worst {100 * max(kl_errs):.2f}%, FID vs |mu|^2 {100 * fid_err:.2f}%, "
                            f"fid(X,X)={self_fid:.1e}")
    assert ok


# -- 3 --------------------------------------------------------------------------------
def test_criterion_3_overfit_eight_samples():
    corpus = generate_corpus(8, 1, seed=0)
    cfg = desk_preset()
    cfg.train.val_fraction, cfg.train.batch = 0.0, 8
    cfg.train.max_steps = cfg.train.epochs = 2000
    t0 = time.process_time()
    res = train(corpus, cfg)
    cpu = time.process_time() - t0
    b = collate(corpus, corpus.samples, cfg.model.text_len)
    with no_grad():
        out = res.model.generator.forward(b.tokens, b.points, make_rng(1, "overfit-eval"), b.frames.shape[1])
    goal_l1 = float(np.abs(out.goal.data - b.goal).sum(-1).mean())
    t_err = float(np.linalg.norm(out.frames.data[..., :3] - b.path, axis=-1).mean())
    acc = recognition_accuracy_on(res.model.analyzer, corpus)
    ok = goal_l1 < 0.1 and t_err < 0.1 and acc["act"] == 1.0 and acc["obj"] == 1.0 and cpu < 600
    record_criterion(3, ok, f"goal l1 {goal_l1:.3f} m, mean |t-path| {t_err:.3f} m, ACT {acc['act']:.2f}, "
                            f"OBJ {acc['obj']:.2f}, {len(res.log.steps)} steps, {cpu:.0f} CPU-s")
    assert ok


# -- 4 --------------------------------------------------------------------------------
def _reciprocity_one(lab, seed):
    model, _ = lab.model(seed)
    tr, val = lab.split(seed)
    cfg = lab.config(seed)
    out = {}
    t0 = time.process_time()
    for mult in (0, 1, 2):
        data, failures = augment_analyzer_training(tr, model.generator, mult, make_rng(seed, "augment", mult))
        an = train_analyzer(data, cfg.model, seed, ANALYZER_EPOCHS, batch=cfg.train.batch, lr=cfg.train.lr,
                            mask_from=tr)
        out[str(mult)] = {**recognition_accuracy_on(an, val), "failures": failures, "n_train": len(data.samples)}
    out["cpu_seconds"] = time.process_time() - t0
    return out


def test_criterion_4_reciprocity_synthesis_helps_analysis(lab):
    runs = [lab.cached_json(f"reciprocity1_s{s}_a{ANALYZER_EPOCHS}", lambda s=s: _reciprocity_one(lab, s))
            for s in SEEDS]
    acc = {m: float(np.mean([r[m]["mean"] for r in runs])) for m in ("0", "1", "2")}
    gen_seconds = sum(lab.model(s)[1] for s in SEEDS)
    minutes = (gen_seconds + sum(r["cpu_seconds"] for r in runs)) / 60
    ok = acc["2"] >= acc["1"] >= acc["0"] - 0.01 and minutes < 60
    per_seed = "; ".join(f"s{s}: " + "/".join(_fmt(r[m]["mean"], 3) for m in ("0", "1", "2"))
                         for s, r in zip(SEEDS, runs))
    record_criterion(4, ok, f"acc real {_fmt(acc['0'])}, +1x {_fmt(acc['1'])}, +2x {_fmt(acc['2'])} "
                            f"(per seed real/1x/2x: {per_seed}); {minutes:.1f} min incl. generator training")
    assert ok


# -- 5 --------------------------------------------------------------------------------
def _fid_of(lab, seed, variant):
    model, _ = lab.model(seed, variant)
    fx, real = lab.extractor(seed)
    _, val = lab.split(seed)
    reps = [evaluate_model(model, val, make_rng(seed, "fid-eval", variant, r), ("fid",), extractor=fx,
                           real_features=real)["fid"] for r in range(EVAL_REPEATS)]
    return float(np.mean(reps))


def test_criterion_5_reciprocity_analysis_helps_synthesis(lab):
    cesa_fid = [_fid_of(lab, s, "full") for s in SEEDS]
    base_fid = [_fid_of(lab, s, "synthesis_only") for s in SEEDS]
    ok = np.mean(cesa_fid) <= np.mean(base_fid)
    record_criterion(5, ok, f"held-out FID cesa {np.mean(cesa_fid):.2f} vs synthesis-only {np.mean(base_fid):.2f} "
                            f"(per seed {[round(x, 1) for x in cesa_fid]} vs {[round(x, 1) for x in base_fid]})")
    assert ok


# -- 6 --------------------------------------------------------------------------------
def _errors(lab, variant, repeats=20):
    model, _ = lab.model(0, variant)
    _, val = lab.split(0)
    reps = [evaluate_model(model, val, make_rng(0, "ablation-eval", variant, r), ("goal", "path"))
            for r in range(repeats)]
    return {k: confidence_interval([r[k] for r in reps]) for k in ("goal", "path")}


def test_criterion_6_cascade_ablation(lab):
    full, no_goal, no_path = (_errors(lab, v) for v in ("full", "no_goal", "no_path"))
    ok = full["goal"]["mean"] < no_goal["goal"]["mean"] and full["path"]["mean"] < no_path["path"]["mean"]

    def ci(s):
        return f"{s['mean']:.3f} +/- {s['ci95']:.3f}"

    record_criterion(6, ok, f"20 repeats, 95% CI: goal full {ci(full['goal'])} vs no_goal {ci(no_goal['goal'])}; "
                            f"path full {ci(full['path'])} vs no_path {ci(no_path['path'])}")
    assert ok


# -- 7 --------------------------------------------------------------------------------
def test_criterion_7_oracle_integrity():
    t0 = time.process_time()
    corpus = generate_corpus(N_SCENES, PER_SCENE, seed=0)
    cpu = time.process_time() - t0
    sk = skeleton_for(8)
    samples = corpus.samples
    score = non_collision_score([s.frames for s in samples], [corpus.scene_of(s) for s in samples],
                                [s.command.target_ids for s in samples], sk)
    near = 0
    for s in samples:
        scene = corpus.scene_of(s)
        d = min(np.linalg.norm(s.frames[-1, :3] - interaction_point(scene, scene.object(t), s.command.action, sk))
                for t in s.command.target_ids)
        near += d <= 0.3
    frac = near / len(samples)
    ok = score == 100.0 and frac >= 0.95 and cpu < 300
    record_criterion(7, ok, f"non-collision {score:.1f}, {100 * frac:.1f}% end within 0.3 m of a valid target, "
                            f"{len(samples)} samples in {cpu:.0f} CPU-s")
    assert ok


# -- 8 --------------------------------------------------------------------------------
def _draw(model, corpus, sample, k, rng):
    b = collate(corpus, [sample] * k, model.cfg.text_len)
    with no_grad():
        out = model.generator.forward(b.tokens, b.points, rng, sample.N)
    return out.frames.data, out.goal_estimate(), out.path_estimate()


def _ambiguity_clusters(model, corpus, rng, k=30, radius=0.5):
    """Number of distinct valid targets whose center has a goal sample within ``radius``."""
    sample = next((s for s in corpus.samples if len(s.command.target_ids) >= 2), None)
    if sample is None:
        return None
    _, goals, _ = _draw(model, corpus, sample, k, rng)
    scene = corpus.scene_of(sample)
    centers = [np.asarray(scene.object(t).center) for t in sample.command.target_ids]
    return sum(bool(np.any(np.linalg.norm(goals - c, axis=-1) < radius)) for c in centers)


def test_criterion_8_diversity(lab):
    model, _ = lab.model(0)
    fx, _ = lab.extractor(0)
    _, val = lab.split(0)
    frames, _, paths = _draw(model, val, val.samples[0], 10, make_rng(0, "diversity"))
    div = diversity(fx.features(list(frames)), make_rng(0, "div"))
    pair = mean_pairwise_path_distance(paths)
    clusters = [_ambiguity_clusters(lab.model(s)[0], lab.corpus(s), make_rng(s, "ambiguity")) for s in SEEDS]
    amb_ok = sum(c is not None and c >= 2 for c in clusters) >= 2
    ok = div > 0 and pair > 0.1
    record_criterion(8, ok, f"K=10: DIV {div:.3f}, mean pairwise path distance {pair:.3f} m; "
                            f"ambiguity clusters per seed {clusters} "
                            f"({'met' if amb_ok else 'not met'}, diagnostic)")
    assert ok


# -- 9 --------------------------------------------------------------------------------
TINY = {"model": {"d": 8, "heads": 2, "ffn": 16, "d_z": 4, "mlp_hidden": 8, "scene_queries": 4,
                  "goal_layers": 1, "path_layers": 1, "pose_layers": 1, "analyzer_layers": 1,
                  "goal_heads": 2, "path_heads": 2, "pose_heads": 2, "analyzer_heads": 2,
                  "frames": 6, "scene_points": 32},
        "train": {"epochs": 2, "batch": 4, "val_fraction": 0.25, "val_every": 2, "motion_pretrain_steps": 3},
        "metrics": {"extractor_steps": 20}}


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _cli_run(root: Path) -> dict:
    root.mkdir(parents=True)
    data, cfg = root / "data", root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    corpus_args = ["--scenes", "3", "--samples-per-scene", "3", "--seed", "4", "--frames", "6", "--points", "32"]
    steps = [["gen-data", "--out", str(data), *corpus_args],
             ["train", "--data", str(data), "--config", str(cfg), "--out", str(root / "m.ckpt")]]
    for argv in steps:
        assert cli(argv) == 0, argv
    corpus = read_dataset(data)
    scene = str(data / "scenes" / "scene_0000.json")
    text = f"walk to the {corpus.scenes['scene_0000'].objects[0].category}"
    motion = str(sorted((data / "motions").glob("*.json"))[0])
    ckpt = str(root / "m.ckpt")
    steps = [["synth", "--ckpt", ckpt, "--scene", scene, "--text", text, "--samples", "3",
              "--out", str(root / "synth")],
             ["analyze", "--ckpt", ckpt, "--motion", motion, "--scene", scene],
             ["eval", "--ckpt", ckpt, "--data", str(data), "--repeats", "2", "--out", str(root / "eval.json")],
             ["ablate", "--data", str(data), "--config", str(cfg), "--variants", "full,no_goal", "--repeats", "2",
              "--max-steps", "2", "--out", str(root / "ablate.json")],
             ["export-viz", "--motion", motion, "--scene", scene, "--out", str(root / "viz")]]
    for argv in steps:
        assert cli(argv) == 0, argv
    return _tree(root)


def test_criterion_9_determinism_and_formats(tmp_path, capsys):
    a, b = _cli_run(tmp_path / "a"), _cli_run(tmp_path / "b")
    capsys.readouterr()
    cli_same = a == b
    # dataset round trip
    corpus = read_dataset(tmp_path / "a" / "data")
    write_dataset(corpus, tmp_path / "again")
    data_same = _tree(tmp_path / "a" / "data") == _tree(tmp_path / "again")
    # checkpoint round trip
    raw = (tmp_path / "a" / "m.ckpt").read_bytes()
    ckpt_same = ck.load(tmp_path / "a" / "m.ckpt").to_bytes() == raw
    m, t = paper_preset().model, paper_preset().train
    preset = ((m.d, m.d_z, m.analyzer_layers) == (512, 32, 4)
              and (m.goal_layers, m.goal_heads, m.path_layers, m.path_heads, m.pose_layers, m.pose_heads)
              == (2, 2, 4, 4, 4, 4)
              and (t.lr, t.epochs, t.batch) == (0.001, 150, 32)
              and (t.alpha_goal, t.alpha_path, t.alpha_pose, t.alpha_rec, t.alpha_pred, t.alpha_kl)
              == (1, 1, 1, 10, 1, 0.1))
    ok = cli_same and data_same and ckpt_same and preset
    record_criterion(9, ok, f"7 CLI commands byte-identical on rerun: {cli_same} ({len(a)} files); dataset round "
                            f"trip: {data_same}; checkpoint round trip: {ckpt_same}; paper preset echo: {preset}")
    assert ok
