"""Cascaded goal -> path -> pose conditional variational generator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .batching import condition_batch
from .config import VARIANTS, ModelConfig
from .encoders import ConditionEncoder
from .substrate import tensor as T
from .substrate.functional import (LOGVAR_MAX, LOGVAR_MIN, ConfigError, kl_standard_normal, l1_loss,
                                   reparameterized_sample, sinusoidal_pe)
from .substrate.nn import MLP, DecoderLayer, LayerNorm, Linear, Module
from .substrate.tensor import ShapeError, Tensor, no_grad


class LatentHead(Module):
    """Conditional Gaussian: mu and log-variance MLPs on the same input."""

    def __init__(self, n_in: int, hidden: int, d_z: int, rng, dtype=np.float32,
                 zero_mu: bool = False, zero_logvar: bool = True):
        self.n_in = n_in
        self.mu = MLP(n_in, hidden, d_z, rng, dtype, zero_out=zero_mu)
        self.logvar = MLP(n_in, hidden, d_z, rng, dtype, zero_out=zero_logvar)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"latent head expects width {self.n_in}, got {x.shape[-1]}")
        return self.mu(x), T.clip(self.logvar(x), LOGVAR_MIN, LOGVAR_MAX)


def stage_loss(pred: Tensor, target, mu: Tensor, logvar: Tensor, alpha_pred: float = 1.0,
               alpha_kl: float = 0.1) -> Tensor:
    """``alpha_pred * l1 + alpha_kl * KL(q || N(0, I))``."""
    return l1_loss(pred, target) * alpha_pred + kl_standard_normal(mu, logvar) * alpha_kl


goal_loss = path_loss = pose_loss = stage_loss


class _TokenDecoder(Module):
    def __init__(self, cfg: ModelConfig, layers: int, heads: int, n_out: int, rng, dtype):
        self.d = cfg.d
        self.query = Linear(cfg.d_z, cfg.d, rng, dtype)
        self.layers = [DecoderLayer(cfg.d, heads, cfg.ffn, rng, dtype, cross=cfg.decoder_cross_attention)
                       for _ in range(layers)]
        self.norm = LayerNorm(cfg.d, dtype)
        self.out = Linear(cfg.d, n_out, rng, dtype)

    def _run(self, x: Tensor, context: Tensor, context_mask) -> Tensor:
        for layer in self.layers:
            x = layer(x, context, context_mask=context_mask)
        return self.out(self.norm(x))


class GoalDecoder(_TokenDecoder):
    """One query token from the goal latent, cross-attending to f_ST, mapped to R^3."""

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        super().__init__(cfg, cfg.goal_layers, cfg.goal_heads, 3, rng, dtype)

    def __call__(self, f_g: Tensor, f_ST: Tensor, context_mask=None) -> Tensor:
        b = f_g.shape[0]
        x = self.query(f_g).reshape(b, 1, self.d)
        return self._run(x, f_ST, context_mask).reshape(b, 3)


class PathDecoder(_TokenDecoder):
    """N query tokens = projected path latent + sinusoidal positions; one waypoint each."""

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        super().__init__(cfg, cfg.path_layers, cfg.path_heads, 3, rng, dtype)

    def __call__(self, f_p: Tensor, f_ST: Tensor, n: int, context_mask=None) -> Tensor:
        if n < 1:
            raise ValueError(f"path decoder: N must be >= 1, got {n}")
        b = f_p.shape[0]
        x = self.query(f_p).reshape(b, 1, self.d) + Tensor(sinusoidal_pe(n, self.d, f_p.dtype))
        return self._run(x, f_ST, context_mask)


class PoseDecoder(_TokenDecoder):
    """Per-frame queries from the pose latent, the path waypoint and positions.

    With ``translation_residual`` the translation channels are predicted as an
    offset from the conditioning waypoint. With ``orthonormal_rotation`` the
    root 6D channels are Gram-Schmidt projected onto two orthonormal columns.
    """

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32, use_path: bool = True):
        super().__init__(cfg, cfg.pose_layers, cfg.pose_heads, cfg.frame_width, rng, dtype)
        self.path_proj = Linear(3, cfg.d, rng, dtype) if use_path else None
        self.residual = cfg.translation_residual and use_path
        self.orthonormal = cfg.orthonormal_rotation

    def __call__(self, f_m: Tensor, path, f_ST: Tensor, n: int, context_mask=None) -> Tensor:
        b = f_m.shape[0]
        x = self.query(f_m).reshape(b, 1, self.d) + Tensor(sinusoidal_pe(n, self.d, f_m.dtype))
        if self.path_proj is not None:
            path = T.as_tensor(path, dtype=f_m.dtype)
            if path.shape[-2] != n:
                raise ShapeError(f"pose decoder: path has {path.shape[-2]} waypoints, N={n}")
            x = x + self.path_proj(path * (1.0 / 3.0))
        out = self._run(x, f_ST, context_mask)
        t, a, b, joints = T.split(out, [3, 3, 3, out.shape[-1] - 9], axis=-1)
        if self.residual:
            t = t + path
        if self.orthonormal:
            a, b = _gram_schmidt(a, b)
        return T.concat([t, a, b, joints], axis=-1)


def _unit(v: Tensor, eps: float = 1e-8) -> Tensor:
    return v / T.sqrt((v * v).sum(axis=-1, keepdims=True) + eps)


def _gram_schmidt(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    a = _unit(a)
    return a, _unit(b - a * (a * b).sum(axis=-1, keepdims=True))


@dataclass
class GenerationOutput:
    goal: Tensor | None
    path: Tensor | None
    frames: Tensor
    latents: dict[str, tuple[Tensor, Tensor]] = field(default_factory=dict)
    context: dict = field(default_factory=dict)

    def goal_estimate(self) -> np.ndarray:
        """Predicted goal, or the final waypoint when the goal stage is disabled."""
        if self.goal is not None:
            return self.goal.data
        return self.path_estimate()[:, -1]

    def path_estimate(self) -> np.ndarray:
        """Predicted path, or the translation trace when the path stage is disabled."""
        if self.path is not None:
            return self.path.data
        return self.frames.data[..., :3]


@dataclass
class GenerationResult:
    goal: np.ndarray        # (3,) (final waypoint when the goal stage is off)
    path: np.ndarray        # (N, 3)
    frames: np.ndarray      # (N, 9 + 3J)
    latents: dict[str, np.ndarray]


class Generator(Module):
    """Condition encoder plus the goal, path and pose stages."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        if cfg.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {cfg.variant!r}; choose from {VARIANTS}")
        self.cfg = cfg
        self.use_goal = cfg.variant in ("full", "no_path")
        self.use_path = cfg.variant in ("full", "no_goal")
        d, h, z = cfg.d, cfg.mlp_hidden, cfg.d_z
        self.cond = ConditionEncoder(cfg, rng, dtype)
        if self.use_goal:
            self.goal_head = LatentHead(d, h, z, rng, dtype)
            self.goal_decoder = GoalDecoder(cfg, rng, dtype)
        if self.use_path:
            self.path_head = LatentHead(d + (3 if self.use_goal else 0), h, z, rng, dtype)
            self.path_decoder = PathDecoder(cfg, rng, dtype)
        pose_in = d + (3 if (self.use_path or self.use_goal) else 0)
        self.pose_head = LatentHead(pose_in, h, z, rng, dtype)
        self.pose_decoder = PoseDecoder(cfg, rng, dtype, use_path=self.use_path)

    @property
    def dtype(self):
        return self.pose_decoder.out.weight.dtype

    def set_output_statistics(self, goal_mean, path_mean, frame_mean) -> None:
        """Start the output layers at the data means (translation residual excluded)."""
        dt = self.dtype
        if self.use_goal:
            self.goal_decoder.out.bias.data = np.asarray(goal_mean, dt).copy()
        if self.use_path:
            self.path_decoder.out.bias.data = np.asarray(path_mean, dt).copy()
        fm = np.asarray(frame_mean, dt).copy()
        if self.pose_decoder.residual:
            fm[:3] = 0.0
        self.pose_decoder.out.bias.data = fm

    def forward(self, tokens, points, rng: np.random.Generator, n_frames: int,
                goal=None, path=None, teacher_forcing: bool = False) -> GenerationOutput:
        """Run the cascade; ``goal``/``path`` replace predictions downstream when teacher forcing."""
        ctx = self.cond(tokens, points)
        f_ST, pooled, cmask = ctx["f_ST"], ctx["pooled"], ctx["context_mask"]
        dt = pooled.dtype
        latents = {}
        goal_hat = path_hat = None
        goal_cond = path_cond = None
        if self.use_goal:
            mu, lv = self.goal_head(pooled)
            latents["goal"] = (mu, lv)
            goal_hat = self.goal_decoder(reparameterized_sample(mu, lv, rng), f_ST, cmask)
            goal_cond = Tensor(np.asarray(goal, dt)) if teacher_forcing else goal_hat
        if self.use_path:
            inp = T.concat([goal_cond, pooled], axis=-1) if self.use_goal else pooled
            mu, lv = self.path_head(inp)
            latents["path"] = (mu, lv)
            path_hat = self.path_decoder(reparameterized_sample(mu, lv, rng), f_ST, n_frames, cmask)
            path_cond = Tensor(np.asarray(path, dt)) if teacher_forcing else path_hat
        if self.use_path:
            inp = T.concat([T.mean(path_cond, axis=-2), pooled], axis=-1)
        elif self.use_goal:
            inp = T.concat([goal_cond, pooled], axis=-1)
        else:
            inp = pooled
        mu, lv = self.pose_head(inp)
        latents["pose"] = (mu, lv)
        frames_hat = self.pose_decoder(reparameterized_sample(mu, lv, rng), path_cond, f_ST,
                                       n_frames, cmask)
        return GenerationOutput(goal_hat, path_hat, frames_hat, latents, ctx)

    def losses(self, out: GenerationOutput, goal, path, frames, alpha_pred: float = 1.0,
               alpha_kl: float = 0.1) -> dict[str, Tensor]:
        terms = {}
        if out.goal is not None:
            terms["goal"] = stage_loss(out.goal, goal, *out.latents["goal"], alpha_pred, alpha_kl)
        if out.path is not None:
            terms["path"] = stage_loss(out.path, path, *out.latents["path"], alpha_pred, alpha_kl)
        terms["pose"] = stage_loss(out.frames, frames, *out.latents["pose"], alpha_pred, alpha_kl)
        return terms

    def generate(self, cloud, text: str, n_frames: int, k: int,
                 rng: np.random.Generator) -> list[GenerationResult]:
        """``k`` independent cascades from the same (scene, text) condition."""
        if k < 1:
            raise ValueError("generate: K must be >= 1")
        tokens, points = condition_batch(text, cloud, k, self.cfg.text_len)
        with no_grad():
            out = self.forward(tokens, points, rng, n_frames)
        goals, paths = out.goal_estimate(), out.path_estimate()
        return [GenerationResult(goals[i].copy(), paths[i].copy(), out.frames.data[i].copy(),
                                 {s: mu.data[i].copy() for s, (mu, _) in out.latents.items()})
                for i in range(k)]
