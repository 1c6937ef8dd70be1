import numpy as np
import pytest

from cesa.config import Config, ModelConfig, TrainConfig
from cesa.synthworld import generate_corpus


def tiny_model_config(**kw) -> ModelConfig:
    base = dict(d=8, heads=2, ffn=16, d_z=4, mlp_hidden=8, text_len=10, text_layers=1,
                scene_points=16, scene_queries=4, motion_layers=1, frames=5, joints=8,
                goal_layers=1, goal_heads=2, path_layers=1, path_heads=2, pose_layers=1,
                pose_heads=2, analyzer_layers=1, analyzer_heads=2)
    base.update(kw)
    return ModelConfig(**base)


def tiny_config(seed: int = 0, **train_kw) -> Config:
    train = dict(batch=4, epochs=2, val_fraction=0.0, grad_clip=1.0, motion_pretrain_steps=3)
    train.update(train_kw)
    return Config(seed=seed, model=tiny_model_config(), train=TrainConfig(**train))


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_corpus(4, 2, seed=11, n_frames=5, n_points=16)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(6, 4, seed=5, n_frames=30, n_points=64)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# -- acceptance summary ------------------------------------------------------------
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
