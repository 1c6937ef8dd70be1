"""Joint training of generator and analyzer, data augmentation and ablations."""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .analyzer import Analyzer, recognition_loss
from .batching import Batch, collate
from .config import VARIANTS, Config, ModelConfig, TrainConfig
from .encoders import pretrain_motion_encoder
from .generator import Generator
from .substrate import tensor as T
from .substrate.functional import ConfigError, onehot
from .substrate.nn import Module
from .substrate.optim import OptimizerState, adam_step
from .substrate.rng import make_rng
from .substrate.tensor import Tensor, backward, no_grad
from .synthworld.dataset import Corpus
from .synthworld.motion import MotionSample


class CesaModel(Module):
    """Generator and analyzer under one parameter namespace."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        rng = make_rng(seed, "init")
        self.generator = Generator(cfg, rng, dtype)
        shared = self.generator.cond.scene if cfg.shared_scene_encoder else None
        self.analyzer = Analyzer(cfg, rng, dtype, shared_scene=shared)
        self.cfg = cfg
        self.assign_names()

    def generator_parameters(self):
        return self.generator.trainable_parameters()


@dataclass
class TrainLog:
    steps: list[dict] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    best_step: int = -1

    def to_jsonl(self) -> str:
        lines = [json.dumps({"kind": "step", **r}, sort_keys=True) for r in self.steps]
        lines += [json.dumps({"kind": "validation", **r}, sort_keys=True) for r in self.validation]
        return "".join(line + "\n" for line in lines)


class NonFiniteLoss(FloatingPointError):
    pass


def total_loss(stage_losses: dict, rec_loss, cfg: TrainConfig):
    """``a_goal L_goal + a_path L_path + a_pose L_pose (+ a_rec L_rec in cesa mode)``."""
    weights = {"goal": cfg.alpha_goal, "path": cfg.alpha_path, "pose": cfg.alpha_pose}
    total = 0.0
    for name, value in stage_losses.items():
        total = total + value * weights[name]
    if cfg.mode == "cesa" and rec_loss is not None:
        total = total + rec_loss * cfg.alpha_rec
    return total


def forward_losses(model: CesaModel, batch: Batch, cfg: TrainConfig, rng: np.random.Generator,
                   include_rec: bool | None = None) -> dict[str, Tensor]:
    """Stage losses (and the recognition loss in cesa mode) for one batch.

    The recognition term runs the analyzer on the real motions and on the
    synthesized ones (labels from the conditioning command) in equal parts;
    ``rec`` is their mean and ``rec_real``/``rec_synth`` the two halves.  The
    generator alone consumes ``rng`` so that dropping the recognition term
    leaves every other quantity unchanged.
    """
    gen = model.generator
    n = batch.frames.shape[1]
    out = gen.forward(batch.tokens, batch.points, rng, n, goal=batch.goal, path=batch.path,
                      teacher_forcing=cfg.teacher_forcing)
    terms = gen.losses(out, batch.goal, batch.path, batch.frames, cfg.alpha_pred, cfg.alpha_kl)
    include_rec = cfg.mode == "cesa" if include_rec is None else include_rec
    if include_rec:
        an = model.analyzer
        f_S = out.context["f_S"] if an.scene is None else an.encode_scene(batch.points)
        frames = T.concat([Tensor(batch.frames.astype(out.frames.dtype)), out.frames], axis=0)
        a_logits, o_logits = an.logits(frames, T.concat([f_S, f_S], axis=0))
        b = len(batch)
        a_real, a_syn = T.split(a_logits, [b, b], axis=0)
        o_real, o_syn = T.split(o_logits, [b, b], axis=0)
        act = onehot(batch.act, an.num_actions, a_logits.dtype)
        obj = onehot(batch.obj, an.num_objects, o_logits.dtype)
        terms["rec_real"] = recognition_loss(a_real, o_real, act, obj)
        terms["rec_synth"] = recognition_loss(a_syn, o_syn, act, obj)
        terms["rec"] = (terms["rec_real"] + terms["rec_synth"]) * 0.5
    terms["_output"] = out
    return terms


def train_step(model: CesaModel, batch: Batch, cfg: TrainConfig, rng: np.random.Generator,
               state: OptimizerState) -> dict[str, float]:
    """One optimizer step; returns the finite loss terms as floats.

    Unless ``cfg.analyzer_learns_synthetic`` is set, the analyzer's own
    parameters are updated from the real half only: synthesized motions are
    scored by it (and the generator receives that gradient) but cannot teach
    it their labels, which would let the pair agree on a private code.
    """
    params = model.trainable_parameters() if cfg.mode == "cesa" else model.generator_parameters()
    for p in params:
        p.grad = np.zeros_like(p.data)
    terms = forward_losses(model, batch, cfg, rng)
    terms.pop("_output")
    rec = terms.pop("rec", None)
    rec_real, rec_syn = terms.pop("rec_real", None), terms.pop("rec_synth", None)
    loss = total_loss(terms, rec, cfg)
    record = {k: float(v.data) for k, v in terms.items()}
    if rec is not None:
        record.update(rec=float(rec.data), rec_real=float(rec_real.data), rec_synth=float(rec_syn.data))
    record["loss"] = float(loss.data)
    bad = [k for k, v in record.items() if not math.isfinite(v)]
    if bad:
        raise NonFiniteLoss(f"non-finite loss term(s) {bad} at step {state.step}: {record}")
    if rec is None or cfg.analyzer_learns_synthetic:
        backward(loss)
    else:
        backward(total_loss(terms, rec_syn * 0.5, cfg))
        for p in model.analyzer.trainable_parameters():
            p.grad[...] = 0.0
        backward(rec_real * (0.5 * cfg.alpha_rec))
    adam_step(params, state)
    return record


def new_optimizer(model: CesaModel, cfg: TrainConfig) -> OptimizerState:
    return OptimizerState.for_params(model.trainable_parameters(), lr=cfg.lr,
                                     clip_norm=cfg.grad_clip if cfg.grad_clip > 0 else None)


def set_output_statistics(model: CesaModel, corpus: Corpus) -> None:
    goals = np.stack([s.goal for s in corpus.samples]).astype(np.float64)
    paths = np.concatenate([s.path for s in corpus.samples]).astype(np.float64)
    frames = np.concatenate([s.frames for s in corpus.samples]).astype(np.float64)
    model.generator.set_output_statistics(goals.mean(0), paths.mean(0), frames.mean(0))
    if model.cfg.mask_static_channels:
        model.analyzer.motion.set_channel_mask(frames)


def validation_loss(model: CesaModel, corpus: Corpus, cfg: TrainConfig, seed: int,
                    batch_size: int = 64) -> dict[str, float]:
    """Teacher-forced stage losses on held-out samples with a fixed noise stream."""
    if not corpus.samples:
        return {}
    sums: dict[str, float] = {}
    rng = make_rng(seed, "validation")
    eval_cfg = replace(cfg, mode="synthesis_only")
    with no_grad():
        for i in range(0, len(corpus.samples), batch_size):
            chunk = corpus.samples[i:i + batch_size]
            batch = collate(corpus, chunk, model.cfg.text_len).astype(model.generator.dtype)
            terms = forward_losses(model, batch, eval_cfg, rng)
            terms.pop("_output")
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + float(v.data) * len(chunk)
    out = {k: v / len(corpus.samples) for k, v in sums.items()}
    out["total"] = float(total_loss(out, None, eval_cfg))
    return out


@dataclass
class TrainResult:
    model: CesaModel
    log: TrainLog
    optimizer: OptimizerState
    step: int
    best_state: dict | None = None


def train(corpus: Corpus, cfg: Config, model: CesaModel | None = None,
          optimizer: OptimizerState | None = None, start_step: int = 0,
          log_stream=None, keep_best: bool = True) -> TrainResult:
    """Mini-batch Adam over shuffled epochs with best-validation selection.

    Batches, shuffles and latent noise are keyed by (seed, step) so a run
    resumed from a checkpoint continues exactly like an uninterrupted one.
    """
    tcfg = cfg.train
    if tcfg.mode not in ("cesa", "synthesis_only"):
        raise ConfigError(f"unknown training mode {tcfg.mode!r}")
    if not corpus.samples:
        raise ConfigError("training corpus is empty")
    train_set, val_set = corpus.split_by_scene(tcfg.val_fraction, cfg.seed)
    if model is None:
        model = CesaModel(cfg.model, cfg.seed)
        set_output_statistics(model, train_set)
        if tcfg.motion_pretrain_steps > 0:
            pretrain_motion_encoder(model.analyzer.motion, [s.frames for s in train_set.samples],
                                    tcfg.motion_pretrain_steps, cfg.seed, batch=tcfg.batch, lr=tcfg.lr)
    optimizer = optimizer or new_optimizer(model, tcfg)
    log = TrainLog()
    n = len(train_set.samples)
    per_epoch = math.ceil(n / tcfg.batch)
    total = tcfg.epochs * per_epoch
    if tcfg.max_steps > 0:
        total = min(total, tcfg.max_steps)
    start = time.perf_counter()
    best = (math.inf, None)
    dtype = model.generator.dtype
    for step in range(start_step, total):
        epoch, k = divmod(step, per_epoch)
        order = make_rng(cfg.seed, "shuffle", epoch).permutation(n)
        idx = order[k * tcfg.batch:(k + 1) * tcfg.batch]
        batch = collate(train_set, [train_set.samples[i] for i in idx], cfg.model.text_len).astype(dtype)
        record = train_step(model, batch, tcfg, make_rng(cfg.seed, "step", step), optimizer)
        record.update(step=step, epoch=epoch)
        log.steps.append(record)
        if log_stream is not None:
            log_stream.write(json.dumps({"kind": "step", **record}, sort_keys=True) + "\n")
        last = step == total - 1
        if val_set.samples and ((step + 1) % tcfg.val_every == 0 or last):
            val = validation_loss(model, val_set, tcfg, cfg.seed)
            val["step"] = step
            log.validation.append(val)
            if log_stream is not None:
                log_stream.write(json.dumps({"kind": "validation", **val}, sort_keys=True) + "\n")
            if val["total"] < best[0]:
                best = (val["total"], model.state_dict())
                log.best_step = step
    if keep_best and best[1] is not None:
        model.load_state_dict(best[1])
    log.wall_clock = time.perf_counter() - start
    return TrainResult(model, log, optimizer, max(total, start_step), best[1])


# -- analyzer-only training and augmentation -------------------------------------------
def train_analyzer(corpus: Corpus, model_cfg: ModelConfig, seed: int, epochs: int,
                   batch: int = 32, lr: float = 0.001, max_steps: int = 0,
                   mask_from: Corpus | None = None, pretrain_steps: int = 1000) -> Analyzer:
    """Standalone analyzer (own scene encoder) trained on recognition loss only.

    The static-channel mask and the motion-encoder pretraining use the
    motions of ``mask_from`` (default: ``corpus``), normally the real samples.
    """
    cfg = replace(model_cfg, shared_scene_encoder=False)
    analyzer = Analyzer(cfg, make_rng(seed, "analyzer-init"))
    analyzer.assign_names()
    ref = mask_from if mask_from is not None else corpus
    if cfg.mask_static_channels:
        analyzer.motion.set_channel_mask(np.concatenate([s.frames for s in ref.samples]))
    if pretrain_steps > 0:
        pretrain_motion_encoder(analyzer.motion, [s.frames for s in ref.samples], pretrain_steps, seed,
                                batch=batch, lr=lr)
    params = analyzer.trainable_parameters()
    state = OptimizerState.for_params(params, lr=lr)
    n = len(corpus.samples)
    per_epoch = math.ceil(n / batch)
    total = epochs * per_epoch if max_steps <= 0 else min(epochs * per_epoch, max_steps)
    for step in range(total):
        epoch, k = divmod(step, per_epoch)
        order = make_rng(seed, "analyzer-shuffle", epoch).permutation(n)
        chunk = [corpus.samples[i] for i in order[k * batch:(k + 1) * batch]]
        b = collate(corpus, chunk, cfg.text_len)
        for p in params:
            p.grad = np.zeros_like(p.data)
        loss = analyzer.loss(b.frames, analyzer.encode_scene(b.points), b.act, b.obj)
        if not math.isfinite(float(loss.data)):
            raise NonFiniteLoss(f"analyzer loss non-finite at step {step}")
        backward(loss)
        adam_step(params, state)
    return analyzer


def recognition_accuracy_on(analyzer: Analyzer, corpus: Corpus, batch: int = 64) -> dict[str, float]:
    """Held-out ACT and OBJ accuracy (and their mean) of an analyzer."""
    hits_a = hits_o = 0
    for i in range(0, len(corpus.samples), batch):
        chunk = corpus.samples[i:i + batch]
        res = analyzer.analyze(np.stack([s.frames for s in chunk]),
                               np.stack([corpus.cloud_of(s) for s in chunk]))
        hits_a += int(np.sum(res.action == [s.action_index for s in chunk]))
        hits_o += int(np.sum(res.object == [s.category_index for s in chunk]))
    n = max(len(corpus.samples), 1)
    return {"act": hits_a / n, "obj": hits_o / n, "mean": (hits_a + hits_o) / (2 * n)}


def synthesize_for(generator: Generator, corpus: Corpus, samples: list[MotionSample],
                   rng: np.random.Generator, batch: int = 64) -> list[np.ndarray]:
    """One generated frame sequence per sample condition (same N as the sample)."""
    out = []
    with no_grad():
        for i in range(0, len(samples), batch):
            chunk = samples[i:i + batch]
            b = collate(corpus, chunk, generator.cfg.text_len)
            res = generator.forward(b.tokens, b.points, rng, b.frames.shape[1])
            out.extend(np.asarray(res.frames.data[j], np.float32) for j in range(len(chunk)))
    return out


def augment_analyzer_training(real: Corpus, generator: Generator, multiplier: int,
                              rng: np.random.Generator) -> tuple[Corpus, int]:
    """Add ``multiplier`` synthesized motions per real sample, labeled by its command.

    Returns the merged corpus and the number of discarded (non-finite) samples.
    """
    if multiplier not in (0, 1, 2):
        raise ValueError(f"multiplier must be 0, 1 or 2, got {multiplier}")
    extra, failures = [], 0
    for k in range(multiplier):
        frames = synthesize_for(generator, real, real.samples, rng)
        for s, f in zip(real.samples, frames):
            if not np.all(np.isfinite(f)):
                failures += 1
                continue
            extra.append(MotionSample(f"{s.sample_id}_syn{k}", s.scene_id, s.command, s.target_id,
                                      s.goal, f, text=s.text))
    return real.merged(extra), failures


# -- ablations --------------------------------------------------------------------
ABLATION_VARIANTS = VARIANTS + ("synthesis_only",)


def variant_config(cfg: Config, variant: str) -> Config:
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; choose from {ABLATION_VARIANTS}")
    cfg = copy.deepcopy(cfg)
    if variant == "synthesis_only":
        cfg.train.mode = "synthesis_only"
        cfg.model.variant = "full"
    else:
        cfg.model.variant = variant
    return cfg


def ablation_run(variant: str, corpus: Corpus, cfg: Config, evaluator, repeats: int = 20,
                 trained: TrainResult | None = None) -> dict:
    """Train one variant and evaluate it ``repeats`` times on the held-out split.

    ``evaluator(model, val_corpus, rng)`` returns a dict of metric values for
    one repetition; the report holds every repetition plus mean and 95% CI.
    """
    from .metrics import summarize_repeats

    vcfg = variant_config(cfg, variant)
    result = trained or train(corpus, vcfg)
    _, val = corpus.split_by_scene(vcfg.train.val_fraction, vcfg.seed)
    reps = [evaluator(result.model, val, make_rng(vcfg.seed, "ablation-eval", variant, r))
            for r in range(repeats)]
    return {"variant": variant, "seed": vcfg.seed, "repeats": reps,
            "summary": summarize_repeats(reps), "train_seconds": result.log.wall_clock}
