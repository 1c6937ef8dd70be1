"""Evaluation metrics: FID, DIV, ACC, non-collision, contact, goal/path errors."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .substrate import tensor as T
from .substrate.nn import MLP, Module
from .substrate.optim import OptimizerState, adam_step
from .substrate.rng import make_rng
from .substrate.tensor import Tensor, backward, no_grad
from .synthworld.motion import MotionSample
from .synthworld.scene import SceneSpec, box_distance, box_penetration
from .synthworld.skeleton import Skeleton, forward_kinematics, skeleton_for

STD_FLOOR = 0.1
METRIC_NAMES = ("fid", "div", "acc", "noncollision", "contact", "goal", "path")


class MetricInputError(ValueError):
    pass


# -- Gaussian statistics and FID ----------------------------------------------------
@dataclass
class GaussianFit:
    mu: np.ndarray
    sigma: np.ndarray


def fit_gaussian(features) -> GaussianFit:
    """Sample mean and unbiased covariance (symmetrized) of feature rows."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise MetricInputError(f"fit_gaussian needs >= 2 feature rows, got shape {x.shape}")
    mu = x.mean(axis=0)
    c = x - mu
    sigma = c.T @ c / (x.shape[0] - 1)
    return GaussianFit(mu, 0.5 * (sigma + sigma.T))


def matrix_sqrt_psd(a, tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigh; eigenvalues in [-tol, 0) are clamped."""
    a = np.asarray(a, dtype=np.float64)
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -tol * scale:
        raise np.linalg.LinAlgError(f"matrix_sqrt_psd: eigenvalue {w.min():.3g} is strongly negative")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid_from_stats(a: GaussianFit, b: GaussianFit) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)``."""
    if a.mu.shape != b.mu.shape:
        raise MetricInputError(f"fid: feature widths differ ({a.mu.shape[0]} vs {b.mu.shape[0]})")
    root_a = matrix_sqrt_psd(a.sigma)
    cross = matrix_sqrt_psd(root_a @ b.sigma @ root_a)
    diff = a.mu - b.mu
    value = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def fid(features_ref, features_gen) -> float:
    ref, gen = np.asarray(features_ref), np.asarray(features_gen)
    if ref.ndim != 2 or gen.ndim != 2 or ref.shape[1] != gen.shape[1]:
        raise MetricInputError(f"fid: incompatible feature shapes {ref.shape} and {gen.shape}")
    return fid_from_stats(fit_gaussian(ref), fit_gaussian(gen))


def diversity(features, rng: np.random.Generator, S: int | None = None) -> float:
    """Mean distance between two disjoint random subsets of size S."""
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    S = min(30, n // 2) if S is None else S
    if S < 1 or n < 2 * S:
        raise MetricInputError(f"diversity: need >= 2S feature rows (n={n}, S={S})")
    idx = rng.permutation(n)
    a, b = x[idx[:S]], x[idx[S:2 * S]]
    return float(np.linalg.norm(a - b, axis=-1).mean())


def mean_pairwise_path_distance(paths) -> float:
    """Average over sample pairs of the mean per-waypoint distance."""
    p = np.asarray(paths, dtype=np.float64)
    k = p.shape[0]
    if k < 2:
        raise MetricInputError("pairwise path distance needs >= 2 paths")
    d = np.linalg.norm(p[:, None] - p[None, :], axis=-1).mean(-1)
    return float(d[np.triu_indices(k, 1)].mean())


# -- recognition --------------------------------------------------------------------
def recognition_accuracy(predicted, labels) -> float:
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if predicted.shape != labels.shape:
        raise MetricInputError(f"accuracy: {predicted.shape} predictions vs {labels.shape} labels")
    return float(np.mean(predicted == labels)) if labels.size else 0.0


# -- scene compatibility ----------------------------------------------------------------
def _objects(scene: SceneSpec, ids) -> list:
    ids = set(ids)
    return [o for o in scene.objects if o.id in ids]


def joint_positions(frames, skeleton: Skeleton) -> np.ndarray:
    return forward_kinematics(np.asarray(frames, dtype=np.float64), skeleton)


def collision_free_fraction(joints: np.ndarray, scene: SceneSpec, exclude=(), tol: float = 0.01) -> tuple[int, int]:
    """(collision-free count, total count) over the (frame, joint) positions."""
    depth = np.zeros(joints.shape[:-1])
    for obj in scene.objects:
        if obj.id not in exclude:
            depth = np.maximum(depth, box_penetration(joints, obj))
    return int(np.sum(depth <= tol)), int(depth.size)


def non_collision_score(motions, scenes, target_ids, skeleton: Skeleton, tol: float = 0.01) -> float:
    """100 x fraction of FK joint positions not deeper than ``tol`` in a non-target box."""
    ok = total = 0
    for frames, scene, targets in zip(motions, scenes, target_ids):
        a, b = collision_free_fraction(joint_positions(frames, skeleton), scene, tuple(targets), tol)
        ok, total = ok + a, total + b
    return 100.0 * ok / total if total else 100.0


def in_contact(joints: np.ndarray, targets: list, radius: float = 0.05, fraction: float = 0.2) -> bool:
    """Some joint within ``radius`` of a target box in the final ceil(fraction N) frames."""
    n = joints.shape[0]
    tail = joints[n - max(1, math.ceil(fraction * n)):]
    return any(bool(np.any(box_distance(tail, obj) <= radius)) for obj in targets)


def contact_score(motions, scenes, commands, skeleton: Skeleton, radius: float = 0.05,
                  fraction: float = 0.2) -> float:
    """100 x fraction of contact-implying samples touching a valid target; walk-to excluded."""
    hits = count = 0
    for frames, scene, cmd in zip(motions, scenes, commands):
        if cmd.action == "walk to":
            continue
        count += 1
        hits += in_contact(joint_positions(frames, skeleton), _objects(scene, cmd.target_ids), radius, fraction)
    return 100.0 * hits / count if count else float("nan")


def goal_and_path_errors(pred_goals, pred_paths, samples: list[MotionSample],
                         scenes: list[SceneSpec]) -> tuple[float, float]:
    """Mean distance to the nearest valid target center; mean waypoint distance to the true path."""
    pred_goals = np.asarray(pred_goals, dtype=np.float64)
    if not (len(pred_goals) == len(pred_paths) == len(samples) == len(scenes)):
        raise MetricInputError("goal/path errors: predictions and ground truth differ in length")
    goal_err, path_err = [], []
    for g, p, s, scene in zip(pred_goals, pred_paths, samples, scenes):
        centers = np.array([o.center for o in _objects(scene, s.command.target_ids or (s.target_id,))])
        goal_err.append(np.linalg.norm(centers - g, axis=-1).min())
        p = np.asarray(p, dtype=np.float64)
        if p.shape != s.path.shape:
            raise MetricInputError(f"path error: predicted {p.shape} vs ground truth {s.path.shape}")
        path_err.append(np.linalg.norm(p - s.path, axis=-1).mean())
    return float(np.mean(goal_err)), float(np.mean(path_err))


# -- feature extractor ----------------------------------------------------------------------
def resample_frames(frames: np.ndarray, n: int) -> np.ndarray:
    """Linear time resampling of ``(N, F)`` frames to ``n`` frames."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] == n:
        return frames
    src = np.linspace(0.0, 1.0, frames.shape[0]) if frames.shape[0] > 1 else np.zeros(1)
    dst = np.linspace(0.0, 1.0, n)
    if frames.shape[0] == 1:
        return np.repeat(frames, n, axis=0)
    return np.stack([np.interp(dst, src, frames[:, c]) for c in range(frames.shape[1])], axis=1)


class FeatureExtractor(Module):
    """Motion autoencoder; the bottleneck activations are the evaluation features."""

    def __init__(self, frames: int, width: int, dim: int = 64, hidden: int = 256, seed: int = 0):
        rng = make_rng(seed, "feature-extractor")
        self.frames, self.width, self.dim = frames, width, dim
        self.encoder = MLP(frames * width, hidden, dim, rng, np.float32)
        self.decoder = MLP(dim, hidden, frames * width, rng, np.float32)
        self.mean = np.zeros(frames * width, np.float32)
        self.std = np.ones(frames * width, np.float32)
        self.assign_names()

    def _inputs(self, motions) -> np.ndarray:
        rows = np.stack([resample_frames(m, self.frames).reshape(-1) for m in motions])
        if rows.shape[1] != self.frames * self.width:
            raise MetricInputError(f"feature extractor expects frame width {self.width}")
        return ((rows - self.mean) / self.std).astype(np.float32)

    def fit(self, motions, steps: int = 1500, batch: int = 64, lr: float = 1e-3, seed: int = 0) -> list[float]:
        rows = np.stack([resample_frames(m, self.frames).reshape(-1) for m in motions])
        self.mean = rows.mean(0).astype(np.float32)
        # one scale per frame channel, floored so near-constant channels do not explode
        per_channel = rows.reshape(len(rows), self.frames, self.width).std(axis=(0, 1))
        self.std = np.tile(np.maximum(per_channel, STD_FLOOR), self.frames).astype(np.float32)
        x = self._inputs(motions)
        params = self.parameters()
        state = OptimizerState.for_params(params, lr=lr)
        rng = make_rng(seed, "feature-extractor-batches")
        losses = []
        for _ in range(steps):
            xb = Tensor(x[rng.integers(0, len(x), size=min(batch, len(x)))])
            for p in params:
                p.grad = np.zeros_like(p.data)
            diff = self.decoder(self.encoder(xb)) - xb
            loss = T.mean(diff * diff)
            backward(loss)
            adam_step(params, state)
            losses.append(float(loss.data))
        return losses

    def features(self, motions, batch: int = 256) -> np.ndarray:
        x = self._inputs(motions)
        with no_grad():
            return np.concatenate([self.encoder(Tensor(x[i:i + batch])).data
                                   for i in range(0, len(x), batch)]).astype(np.float64)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.frames}:{self.width}:{self.dim}".encode())
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data, "<f4").tobytes())
        h.update(self.mean.astype("<f4").tobytes())
        h.update(self.std.astype("<f4").tobytes())
        return h.hexdigest()[:16]


def train_feature_extractor(motions, frames: int, width: int, dim: int = 64, steps: int = 1500,
                            seed: int = 0) -> FeatureExtractor:
    fx = FeatureExtractor(frames, width, dim, seed=seed)
    fx.fit(motions, steps=steps, seed=seed)
    return fx


# -- evaluation and reports ----------------------------------------------------------------
def confidence_interval(values, level: float = 0.95) -> dict:
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    n = v.size
    if n == 0:
        return {"mean": None, "ci95": None, "std": None, "n": 0}
    mean = float(v.mean())
    if n == 1:
        return {"mean": mean, "ci95": 0.0, "std": 0.0, "n": 1}
    std = float(v.std(ddof=1))
    half = float(stats.t.ppf(0.5 + level / 2, n - 1) * std / math.sqrt(n))
    return {"mean": mean, "ci95": half, "std": std, "n": n}


def summarize_repeats(repeats: list[dict]) -> dict:
    names = sorted({k for r in repeats for k in r})
    return {k: confidence_interval([r[k] for r in repeats if r.get(k) is not None]) for k in names}


def evaluate_generated(samples: list[MotionSample], scenes: list[SceneSpec], frames: list[np.ndarray],
                       goals, paths, metrics, *, skeleton: Skeleton, extractor: FeatureExtractor | None = None,
                       real_features: np.ndarray | None = None, predicted_actions=None,
                       rng: np.random.Generator | None = None, collision_tol: float = 0.01,
                       contact_radius: float = 0.05, contact_fraction: float = 0.2) -> dict[str, float]:
    """Requested metric values for one set of generated motions matched to ``samples``."""
    unknown = [m for m in metrics if m not in METRIC_NAMES]
    if unknown:
        raise MetricInputError(f"unknown metric(s) {unknown}; valid names: {', '.join(METRIC_NAMES)}")
    out = {}
    feats = extractor.features(frames) if extractor is not None and {"fid", "div"} & set(metrics) else None
    if "fid" in metrics:
        out["fid"] = fid(real_features, feats)
    if "div" in metrics:
        out["div"] = diversity(feats, rng if rng is not None else make_rng(0, "div"))
    if "acc" in metrics:
        out["acc"] = recognition_accuracy(predicted_actions, [s.action_index for s in samples])
    if "noncollision" in metrics:
        out["noncollision"] = non_collision_score(frames, scenes, [s.command.target_ids for s in samples],
                                                  skeleton, collision_tol)
    if "contact" in metrics:
        out["contact"] = contact_score(frames, scenes, [s.command for s in samples], skeleton,
                                       contact_radius, contact_fraction)
    if "goal" in metrics or "path" in metrics:
        g, p = goal_and_path_errors(goals, paths, samples, scenes)
        if "goal" in metrics:
            out["goal"] = g
        if "path" in metrics:
            out["path"] = p
    return out


def evaluate_model(model, corpus, rng: np.random.Generator, metrics=METRIC_NAMES, *,
                   extractor: FeatureExtractor | None = None, real_features=None, metric_cfg=None,
                   batch: int = 64) -> dict[str, float]:
    """Generate one motion per held-out condition and score it."""
    from .batching import collate

    gen = model.generator
    frames, goals, paths, actions = [], [], [], []
    with no_grad():
        for i in range(0, len(corpus.samples), batch):
            chunk = corpus.samples[i:i + batch]
            b = collate(corpus, chunk, gen.cfg.text_len)
            out = gen.forward(b.tokens, b.points, rng, b.frames.shape[1])
            f = out.frames.data.astype(np.float32)
            frames.extend(f)
            goals.extend(out.goal_estimate())
            paths.extend(out.path_estimate())
            if "acc" in metrics:
                actions.extend(model.analyzer.analyze(f, b.points).action)
    if extractor is not None and real_features is None:
        real_features = extractor.features([s.frames for s in corpus.samples])
    mc = metric_cfg
    return evaluate_generated(
        corpus.samples, [corpus.scene_of(s) for s in corpus.samples], frames, goals, paths, metrics,
        skeleton=skeleton_for(gen.cfg.joints), extractor=extractor, real_features=real_features,
        predicted_actions=actions, rng=rng,
        collision_tol=mc.collision_tol if mc else 0.01, contact_radius=mc.contact_radius if mc else 0.05,
        contact_fraction=mc.contact_fraction if mc else 0.2)


def metric_report(repeats: list[dict], n_samples: int, extractor_hash: str | None, config: dict) -> dict:
    clean = [{k: (float(v) if math.isfinite(v) else None) for k, v in r.items()} for r in repeats]
    return {"metrics": summarize_repeats(repeats), "repeats": clean, "n_repeats": len(repeats),
            "sample_count": n_samples, "extractor_hash": extractor_hash, "config": config}


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")
