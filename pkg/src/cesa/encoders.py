"""Small trainable text, scene and motion encoders plus the scene-text fusion."""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .substrate import tensor as T
from .substrate.functional import sinusoidal_pe
from .substrate.optim import OptimizerState, adam_step
from .substrate.rng import make_rng
from .substrate.nn import (AttentionBlock, Buffer, Embedding, EncoderLayer, FeedForward, LayerNorm, Linear,
                           MLP, Module, MultiHeadAttention)
from .substrate.tensor import Parameter, ShapeError, Tensor, backward
from .synthworld.language import TOKEN_ID, VOCAB

PAD_ID = TOKEN_ID["[PAD]"]
POSITION_SCALE = 1.0 / 3.0   # meters -> roughly unit range for room-sized coordinates


class TextEncoder(Module):
    """Token embedding + positions + self-attention; padded rows come out as zeros."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.capacity = cfg.text_len
        self.embed = Embedding(len(VOCAB), cfg.d, rng, dtype)
        self.layers = [EncoderLayer(cfg.d, cfg.heads, cfg.ffn, rng, dtype) for _ in range(cfg.text_layers)]
        self.norm = LayerNorm(cfg.d, dtype)
        self.pe = sinusoidal_pe(cfg.text_len, cfg.d, dtype)

    def __call__(self, ids) -> tuple[Tensor, np.ndarray]:
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        if ids.shape[-1] > self.capacity:
            raise ShapeError(f"text: {ids.shape[-1]} tokens exceed capacity P_tok={self.capacity}")
        if ids.shape[-1] < self.capacity:
            pad = np.full(ids.shape[:-1] + (self.capacity - ids.shape[-1],), PAD_ID)
            ids = np.concatenate([ids, pad], axis=-1)
        mask = ids != PAD_ID
        x = self.embed(ids) + Tensor(self.pe)
        for layer in self.layers:
            x = layer(x, self_mask=mask)
        x = self.norm(x) * Tensor(mask[..., None].astype(x.dtype))
        return x, mask


class SceneEncoder(Module):
    """Per-point MLP lift followed by learned query tokens attending to the point set."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.lift = MLP(6, cfg.d, cfg.d, rng, dtype)
        self.queries = Parameter((rng.standard_normal((cfg.scene_queries, cfg.d)) * 0.5).astype(dtype))
        self.cross = AttentionBlock(cfg.d, cfg.heads, rng, dtype, cross=True)
        self.ffn = FeedForward(cfg.d, cfg.ffn, rng, dtype)

    def __call__(self, points) -> Tensor:
        points = np.asarray(points)
        if points.shape[-1] != 6:
            raise ShapeError(f"scene: point rows must have width 6 (xyz rgb), got {points.shape[-1]}")
        batched = points.ndim == 3
        pts = points if batched else points[None]
        scaled = pts.astype(self.queries.dtype).copy()
        scaled[..., :3] *= POSITION_SCALE
        feats = self.lift(Tensor(scaled))
        q = T.broadcast_to(self.queries, (pts.shape[0],) + self.queries.shape)
        out = self.ffn(self.cross(q, feats))
        return out if batched else out.reshape(*out.shape[1:])


class MotionEncoder(Module):
    """Per-frame linear lift + positions + self-attention; one token per frame."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.width = cfg.frame_width
        self.d = cfg.d
        self.lift = Linear(cfg.frame_width, cfg.d, rng, dtype)
        self.layers = [EncoderLayer(cfg.d, cfg.heads, cfg.ffn, rng, dtype) for _ in range(cfg.motion_layers)]
        self.norm = LayerNorm(cfg.d, dtype)
        self.channel_mask = Buffer(np.ones(cfg.frame_width, dtype))

    def set_channel_mask(self, frames, tol: float = 1e-6) -> None:
        """Ignore frame channels that never vary in ``frames`` (N_total, width)."""
        std = np.asarray(frames, np.float64).reshape(-1, self.width).std(axis=0)
        self.channel_mask.data = (std > tol).astype(self.channel_mask.data.dtype)

    def __call__(self, frames) -> Tensor:
        frames = T.as_tensor(frames, dtype=self.lift.weight.dtype)
        if frames.shape[-1] != self.width:
            raise ShapeError(f"motion: frame width {frames.shape[-1]} != 9 + 3J = {self.width}")
        n = frames.shape[-2]
        x = frames * Tensor(_frame_scale(self.width, frames.dtype) * self.channel_mask.data.astype(frames.dtype))
        x = self.lift(x) + Tensor(sinusoidal_pe(n, self.d, x.dtype))
        for layer in self.layers:
            x = layer(x)
        return self.norm(x)


def pretrain_motion_encoder(encoder: MotionEncoder, motions, steps: int, seed: int, batch: int = 32,
                            lr: float = 1e-3, mask_ratio: float = 0.25) -> list[float]:
    """Masked-frame modeling on real motions: hidden frames are rebuilt from context.

    Masked frames are replaced by the mean frame; a throwaway linear head
    predicts the standardized originals. Returns the loss curve.
    """
    frames = np.stack([np.asarray(m, np.float64) for m in motions])
    if frames.ndim != 3 or frames.shape[-1] != encoder.width:
        raise ShapeError(f"pretraining needs equal-length motions of width {encoder.width}")
    dtype = encoder.lift.weight.dtype
    flat = frames.reshape(-1, encoder.width)
    mean, std = flat.mean(0), np.maximum(flat.std(0), 0.1)
    live = encoder.channel_mask.data.astype(np.float64)
    target = ((frames - mean) / std * live).astype(dtype)
    rng = make_rng(seed, "motion-pretrain")
    head = Linear(encoder.d, encoder.width, rng, dtype)
    head.assign_names("head.")
    names = [p.name for p in encoder.parameters()]
    was = [p.requires_grad for p in encoder.parameters()]
    encoder.assign_names("encoder.")
    encoder.set_trainable(True)
    params = encoder.parameters() + head.parameters()
    state = OptimizerState.for_params(params, lr=lr)
    n_frames, losses = frames.shape[1], []
    for _ in range(steps):
        idx = rng.integers(0, len(frames), size=min(batch, len(frames)))
        hide = rng.random((len(idx), n_frames)) < mask_ratio
        hide[np.arange(len(idx)), rng.integers(0, n_frames, size=len(idx))] = True
        x = np.where(hide[..., None], mean, frames[idx]).astype(dtype)
        weight = (hide[..., None] * live).astype(dtype)
        weight /= max(weight.sum(), 1.0)
        for p in params:
            p.grad = np.zeros_like(p.data)
        diff = head(encoder(x)) - Tensor(target[idx])
        loss = (diff * diff * Tensor(weight)).sum()
        backward(loss)
        adam_step(params, state)
        losses.append(float(loss.data))
    for p, name, flag in zip(encoder.parameters(), names, was):
        p.name, p.requires_grad = name, flag
    return losses


def _frame_scale(width: int, dtype) -> np.ndarray:
    scale = np.ones(width, dtype=dtype)
    scale[:3] = POSITION_SCALE
    return scale


class Fusion(Module):
    """Cross-attention fusion of scene and text tokens into f_ST.

    With ``scene_queries_text`` the scene tokens query the text tokens and the
    result has one row per scene token; the pooled vector is the token mean.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.direction = cfg.fusion
        self.norm = LayerNorm(cfg.d, dtype)
        self.context_norm = LayerNorm(cfg.d, dtype)
        self.attn = MultiHeadAttention(cfg.d, cfg.heads, rng, dtype)

    def __call__(self, f_S: Tensor, f_T: Tensor, text_mask=None, return_weights: bool = False):
        if f_S.shape[-1] != f_T.shape[-1]:
            raise ShapeError(f"fuse: scene width {f_S.shape[-1]} != text width {f_T.shape[-1]}")
        if self.direction == "scene_queries_text":
            queries, context, key_mask, row_mask = f_S, f_T, text_mask, None
        else:
            queries, context, key_mask, row_mask = f_T, f_S, None, text_mask
        attended, weights = self.attn(self.norm(queries), self.context_norm(context),
                                      key_mask=key_mask, return_weights=True)
        fused = queries + attended
        if row_mask is None:
            pooled = T.mean(fused, axis=-2)
        else:
            m = np.asarray(row_mask, dtype=fused.dtype)[..., None]
            fused = fused * Tensor(m)
            pooled = T.tsum(fused, axis=-2) * Tensor(1.0 / np.maximum(m.sum(-2), 1.0))
        if return_weights:
            return fused, pooled, weights
        return fused, pooled


class ConditionEncoder(Module):
    """Text + scene encoders and their fusion: the generator's conditioning context."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.text = TextEncoder(cfg, rng, dtype)
        self.scene = SceneEncoder(cfg, rng, dtype)
        self.fusion = Fusion(cfg, rng, dtype)

    def __call__(self, ids, points):
        f_T, mask = self.text(ids)
        f_S = self.scene(points)
        f_ST, pooled = self.fusion(f_S, f_T, mask)
        context_mask = mask if self.fusion.direction == "text_queries_scene" else None
        return {"f_T": f_T, "f_S": f_S, "f_ST": f_ST, "pooled": pooled,
                "text_mask": mask, "context_mask": context_mask}
