"""Interaction analyzer: body/scene attention layers and ACT/OBJ classifiers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .encoders import MotionEncoder, SceneEncoder
from .substrate import tensor as T
from .substrate.functional import ConfigError, cross_entropy, onehot
from .substrate.nn import MLP, AttentionBlock, FeedForward, Module
from .substrate.tensor import ShapeError, Tensor, no_grad


class InteractionLayer(Module):
    """Body tokens self-attend; scene tokens query the (pre-update) body tokens."""

    def __init__(self, d: int, heads: int, ffn: int, rng, dtype=np.float32):
        self.body_attn = AttentionBlock(d, heads, rng, dtype)
        self.body_ffn = FeedForward(d, ffn, rng, dtype)
        self.scene_attn = AttentionBlock(d, heads, rng, dtype, cross=True)
        self.scene_ffn = FeedForward(d, ffn, rng, dtype)

    def __call__(self, f_B: Tensor, f_S: Tensor) -> tuple[Tensor, Tensor]:
        if f_B.shape[-1] != f_S.shape[-1]:
            raise ShapeError(f"interaction: body width {f_B.shape[-1]} != scene width {f_S.shape[-1]}")
        new_B = self.body_ffn(self.body_attn(f_B))
        new_S = self.scene_ffn(self.scene_attn(f_S, f_B))
        return new_B, new_S


@dataclass
class RecognitionResult:
    action_dist: np.ndarray   # (..., A)
    object_dist: np.ndarray   # (..., O)

    @property
    def action(self) -> np.ndarray:
        return np.argmax(self.action_dist, axis=-1)

    @property
    def object(self) -> np.ndarray:
        return np.argmax(self.object_dist, axis=-1)


class Analyzer(Module):
    """Motion encoder + L interaction layers + mean-pooled classification heads.

    When ``shared_scene`` is given, scene tokens come from that encoder (owned
    by the generator) and the analyzer holds no scene parameters of its own.
    """

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32, shared_scene: SceneEncoder | None = None):
        if cfg.analyzer_layers < 1:
            raise ConfigError("analyzer needs at least one interaction layer (L >= 1)")
        if cfg.num_actions < 2 or cfg.num_objects < 2:
            raise ConfigError("analyzer needs at least two action and two object classes")
        self.num_actions, self.num_objects = cfg.num_actions, cfg.num_objects
        self.motion = MotionEncoder(cfg, rng, dtype)
        if cfg.freeze_motion_encoder:
            self.motion.set_trainable(False)
        self.scene = None if shared_scene is not None else SceneEncoder(cfg, rng, dtype)
        self._shared = {"scene": shared_scene}
        self.layers = [InteractionLayer(cfg.d, cfg.analyzer_heads, cfg.ffn, rng, dtype)
                       for _ in range(cfg.analyzer_layers)]
        self.action_head = MLP(cfg.d, cfg.mlp_hidden, cfg.num_actions, rng, dtype, zero_out=True)
        self.object_head = MLP(cfg.d, cfg.mlp_hidden, cfg.num_objects, rng, dtype, zero_out=True)

    def encode_scene(self, points) -> Tensor:
        enc = self.scene if self.scene is not None else self._shared["scene"]
        return enc(points)

    def interaction_layers(self, f_B: Tensor, f_S: Tensor) -> tuple[Tensor, Tensor]:
        for layer in self.layers:
            f_B, f_S = layer(f_B, f_S)
        return f_B, f_S

    def logits(self, frames, f_S: Tensor) -> tuple[Tensor, Tensor]:
        f_B = self.motion(frames)
        f_B, f_S = self.interaction_layers(f_B, f_S)
        return self.action_head(T.mean(f_B, axis=-2)), self.object_head(T.mean(f_S, axis=-2))

    def loss(self, frames, f_S: Tensor, act, obj) -> Tensor:
        a_logits, o_logits = self.logits(frames, f_S)
        return recognition_loss(a_logits, o_logits, onehot(act, self.num_actions, a_logits.dtype),
                                onehot(obj, self.num_objects, o_logits.dtype))

    def analyze(self, frames, points) -> RecognitionResult:
        frames = np.asarray(frames)
        single = frames.ndim == 2
        with no_grad():
            f_S = self.encode_scene(np.asarray(points)[None] if single else points)
            a, o = self.logits(frames[None] if single else frames, f_S)
            result = RecognitionResult(T.softmax(a).data, T.softmax(o).data)
        if single:
            return RecognitionResult(result.action_dist[0], result.object_dist[0])
        return result


def recognition_loss(action_logits: Tensor, object_logits: Tensor, action_onehot, object_onehot) -> Tensor:
    """Sum of the action and object cross-entropies."""
    return cross_entropy(action_logits, action_onehot) + cross_entropy(object_logits, object_onehot)
