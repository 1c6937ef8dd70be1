"""Splittable counter-based random streams keyed by (seed, purpose labels)."""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, *labels) -> int:
    text = "/".join([str(int(seed))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:16], "little")


def make_rng(seed: int, *labels) -> np.random.Generator:
    """Return an independent Philox stream for ``(seed, *labels)``.

    The same key always yields the same stream regardless of call order, so
    per-sample or per-step generators can be created on demand and in any
    process.
    """
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *labels)))
