"""Stacking corpus samples into model-ready arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synthworld.dataset import Corpus
from .synthworld.language import tokenize
from .synthworld.motion import MotionSample


@dataclass
class Batch:
    tokens: np.ndarray    # (B, P_tok) int64
    points: np.ndarray    # (B, P, 6) float32
    goal: np.ndarray      # (B, 3)
    path: np.ndarray      # (B, N, 3)
    frames: np.ndarray    # (B, N, F)
    act: np.ndarray       # (B,) action index
    obj: np.ndarray       # (B,) object category index
    samples: list[MotionSample]

    def __len__(self) -> int:
        return len(self.tokens)

    def astype(self, dtype) -> "Batch":
        return Batch(self.tokens, self.points.astype(dtype), self.goal.astype(dtype),
                     self.path.astype(dtype), self.frames.astype(dtype), self.act, self.obj,
                     self.samples)


def collate(corpus: Corpus, samples: list[MotionSample], text_len: int) -> Batch:
    return Batch(
        tokens=np.stack([tokenize(s.text, text_len) for s in samples]),
        points=np.stack([corpus.cloud_of(s) for s in samples]).astype(np.float32),
        goal=np.stack([s.goal for s in samples]).astype(np.float32),
        path=np.stack([s.path for s in samples]).astype(np.float32),
        frames=np.stack([s.frames for s in samples]).astype(np.float32),
        act=np.array([s.action_index for s in samples], dtype=np.int64),
        obj=np.array([s.category_index for s in samples], dtype=np.int64),
        samples=list(samples),
    )


def condition_batch(text: str, cloud: np.ndarray, k: int, text_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Repeat one (text, scene) condition ``k`` times."""
    ids = tokenize(text, text_len)
    return np.repeat(ids[None], k, axis=0), np.repeat(np.asarray(cloud, np.float32)[None], k, axis=0)
