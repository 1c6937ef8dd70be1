"""Run configuration: dataclasses, presets and JSON-schema validation."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import asdict, dataclass, field
from typing import get_type_hints

import jsonschema

from .substrate.functional import ConfigError

VARIANTS = ("full", "no_goal", "no_path", "no_goal_no_path")
MODES = ("synthesis_only", "cesa")
FUSIONS = ("scene_queries_text", "text_queries_scene")


@dataclass
class ModelConfig:
    d: int = 64
    heads: int = 4
    ffn: int = 128
    d_z: int = 32
    mlp_hidden: int = 128
    text_len: int = 10
    text_layers: int = 1
    scene_points: int = 256
    scene_queries: int = 16
    motion_layers: int = 1
    frames: int = 30
    joints: int = 8
    goal_layers: int = 2
    goal_heads: int = 2
    path_layers: int = 4
    path_heads: int = 4
    pose_layers: int = 4
    pose_heads: int = 4
    analyzer_layers: int = 4
    analyzer_heads: int = 4
    num_actions: int = 4
    num_objects: int = 8
    fusion: str = "scene_queries_text"
    decoder_cross_attention: bool = True
    translation_residual: bool = True
    orthonormal_rotation: bool = True
    shared_scene_encoder: bool = True
    mask_static_channels: bool = True
    freeze_motion_encoder: bool = True
    variant: str = "full"

    @property
    def frame_width(self) -> int:
        return 9 + 3 * self.joints


@dataclass
class TrainConfig:
    mode: str = "cesa"
    alpha_goal: float = 1.0
    alpha_path: float = 1.0
    alpha_pose: float = 1.0
    alpha_rec: float = 10.0
    alpha_pred: float = 1.0
    alpha_kl: float = 0.1
    lr: float = 0.001
    epochs: int = 150
    batch: int = 32
    max_steps: int = 0           # 0 = no cap beyond epochs
    teacher_forcing: bool = True
    analyzer_learns_synthetic: bool = True
    grad_clip: float = 0.0       # 0 = off
    motion_pretrain_steps: int = 1000
    val_fraction: float = 0.1
    val_every: int = 200


@dataclass
class DataConfig:
    scenes: int = 64
    samples_per_scene: int = 16
    ambiguity: bool = True
    tau_near: float = 1.5
    grid_resolution: float = 0.1
    body_radius: float = 0.2


@dataclass
class MetricConfig:
    collision_tol: float = 0.01
    contact_radius: float = 0.05
    contact_fraction: float = 0.2
    feature_dim: int = 64
    div_subset: int = 30
    extractor_steps: int = 1500
    repeats: int = 20


@dataclass
class Config:
    preset: str = "desk"
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def desk_preset() -> Config:
    """Laptop-scale layout; gradient clipping keeps small-batch Adam from spiking."""
    return Config(train=TrainConfig(grad_clip=1.0))


def paper_preset() -> Config:
    """Published layout: 512-d embeddings, 32-d latents, 2/2, 4/4, 4/4 decoders, L=4."""
    model = ModelConfig(d=512, heads=8, ffn=2048, d_z=32, mlp_hidden=512, text_len=16,
                        text_layers=2, scene_points=1024, scene_queries=64, motion_layers=2,
                        frames=60, joints=22, goal_layers=2, goal_heads=2, path_layers=4,
                        path_heads=4, pose_layers=4, pose_heads=4, analyzer_layers=4,
                        analyzer_heads=8)
    train = TrainConfig(lr=0.001, epochs=150, batch=32, alpha_goal=1.0, alpha_path=1.0,
                        alpha_pose=1.0, alpha_rec=10.0, alpha_pred=1.0, alpha_kl=0.1)
    return Config(preset="paper", model=model, train=train)


PRESETS = {"desk": desk_preset, "paper": paper_preset}

_JSON_TYPES = {int: "integer", float: "number", bool: "boolean", str: "string"}
_ENUMS = {("model", "fusion"): FUSIONS, ("model", "variant"): VARIANTS,
          ("train", "mode"): MODES, ("", "preset"): tuple(PRESETS)}


def _section_schema(cls, section: str) -> dict:
    props = {}
    for name, tp in get_type_hints(cls).items():
        if dataclasses.is_dataclass(tp):
            props[name] = _section_schema(tp, name)
            continue
        prop = {"type": _JSON_TYPES[tp]}
        if tp in (int, float):
            prop["minimum"] = 0
        if (section, name) in _ENUMS:
            prop["enum"] = list(_ENUMS[(section, name)])
        props[name] = prop
    return {"type": "object", "properties": props, "additionalProperties": False}


def config_schema() -> dict:
    schema = _section_schema(Config, "")
    schema["$schema"] = "https://json-schema.org/draft/2020-12/schema"
    schema["title"] = "cesa run configuration"
    return schema


def _semantic_errors(cfg: Config) -> list[str]:
    m, t = cfg.model, cfg.train
    errs = []
    for name in ("heads", "goal_heads", "path_heads", "pose_heads", "analyzer_heads"):
        h = getattr(m, name)
        if h < 1 or m.d % h:
            errs.append(f"model.d={m.d} must be divisible by model.{name}={h}")
    if m.d % 2:
        errs.append("model.d must be even (sinusoidal positions)")
    for name in ("text_len", "scene_queries", "frames", "scene_points", "d_z", "joints",
                 "goal_layers", "path_layers", "pose_layers", "analyzer_layers", "text_layers"):
        if getattr(m, name) < 1:
            errs.append(f"model.{name} must be >= 1")
    if m.num_actions < 2 or m.num_objects < 2:
        errs.append("model.num_actions and model.num_objects must be >= 2")
    if t.batch < 1:
        errs.append("train.batch must be >= 1")
    if not 0 <= t.val_fraction < 1:
        errs.append("train.val_fraction must lie in [0, 1)")
    return errs


def _build(cls, data: dict):
    kwargs = {}
    hints = get_type_hints(cls)
    for key, value in data.items():
        tp = hints[key]
        kwargs[key] = _build(tp, value) if dataclasses.is_dataclass(tp) else tp(value)
    return cls(**kwargs)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


def validate_config_dict(data: dict) -> list[str]:
    validator = jsonschema.Draft202012Validator(config_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    return [f"{'.'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors]


def config_from_dict(data: dict, env: dict | None = None) -> Config:
    """Validate a (partial) config dict layered over its preset.

    All problems are collected and raised together.  ``CESA_SEED`` in the
    environment overrides the seed.
    """
    errors = validate_config_dict(data)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    preset = data.get("preset", "desk")
    merged = _merge(PRESETS[preset]().to_dict(), data)
    env = os.environ if env is None else env
    if env.get("CESA_SEED") not in (None, ""):
        try:
            merged["seed"] = int(env["CESA_SEED"])
        except ValueError as exc:
            raise ConfigError(f"CESA_SEED must be an integer, got {env['CESA_SEED']!r}") from exc
    cfg = _build(Config, merged)
    errors = _semantic_errors(cfg)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


def load_config(path=None, preset: str = "desk", env: dict | None = None) -> Config:
    if path is None:
        return config_from_dict({"preset": preset}, env)
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(data, env)
