"""Corpus generation and the on-disk dataset layout.

Layout::

    manifest.jsonl        one JSON record per sample, sorted by sample id
    scenes/<id>.json      scene description + base64 little-endian f32 point cloud
    motions/<id>.json     command, goal, path and frames as flat f32 JSON arrays

Each manifest record also carries the sha256 of its scene and motion files so
that corruption is reported with the offending path.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..substrate.rng import make_rng
from .language import CommandSpec, generate_command
from .motion import MotionSample, synthesize_oracle_motion
from .planning import OccupancyGrid, PlanningError
from .scene import ACTIONS, CATEGORIES, GenerationError, SceneConfig, SceneSpec, generate_scene, sample_point_cloud
from .skeleton import skeleton_for


class DatasetError(IOError):
    """Missing, malformed or corrupted dataset file."""


@dataclass
class Corpus:
    scenes: dict[str, SceneSpec] = field(default_factory=dict)
    clouds: dict[str, np.ndarray] = field(default_factory=dict)
    samples: list[MotionSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def scene_of(self, sample: MotionSample) -> SceneSpec:
        return self.scenes[sample.scene_id]

    def cloud_of(self, sample: MotionSample) -> np.ndarray:
        return self.clouds[sample.scene_id]

    def subset(self, samples) -> "Corpus":
        samples = list(samples)
        ids = {s.scene_id for s in samples}
        return Corpus({k: v for k, v in self.scenes.items() if k in ids},
                      {k: v for k, v in self.clouds.items() if k in ids}, samples)

    def split_by_scene(self, val_fraction: float = 0.1, seed: int = 0) -> tuple["Corpus", "Corpus"]:
        """Hold out whole scenes so no room appears in both parts."""
        ids = sorted(self.scenes)
        order = make_rng(seed, "split").permutation(len(ids))
        n_val = int(round(val_fraction * len(ids)))
        if val_fraction > 0 and len(ids) > 1:
            n_val = min(max(n_val, 1), len(ids) - 1)
        val_ids = {ids[i] for i in order[:n_val]}
        train = [s for s in self.samples if s.scene_id not in val_ids]
        val = [s for s in self.samples if s.scene_id in val_ids]
        return self.subset(train), self.subset(val)

    def merged(self, extra: list[MotionSample]) -> "Corpus":
        return Corpus(dict(self.scenes), dict(self.clouds), self.samples + list(extra))

    def summary(self) -> dict:
        acts = Counter(ACTIONS[s.action_index] for s in self.samples)
        cats = Counter(CATEGORIES[s.category_index] for s in self.samples)
        return {"scenes": len(self.scenes), "samples": len(self.samples),
                "actions": {a: acts.get(a, 0) for a in ACTIONS},
                "objects": {c: cats.get(c, 0) for c in CATEGORIES},
                "ambiguous": sum(s.command.ambiguous for s in self.samples)}


def generate_corpus(n_scenes: int, samples_per_scene: int, seed: int, n_frames: int = 30,
                    n_points: int = 256, joints: int = 8, ambiguity_allowed: bool = True,
                    scene_config: SceneConfig | None = None, tau_near: float = 1.5,
                    max_attempts: int = 5) -> Corpus:
    """Oracle corpus; every scene and sample draws from its own keyed stream."""
    cfg = scene_config or SceneConfig()
    skeleton = skeleton_for(joints)
    corpus = Corpus()
    for i in range(n_scenes):
        scene = generate_scene(cfg, make_rng(seed, "scene", i), f"scene_{i:04d}")
        corpus.scenes[scene.id] = scene
        corpus.clouds[scene.id] = sample_point_cloud(scene, n_points, make_rng(seed, "cloud", i))
        grid = OccupancyGrid(scene)
        for j in range(samples_per_scene):
            rng = make_rng(seed, "sample", i, j)
            for _ in range(max_attempts):
                command = generate_command(scene, rng, ambiguity_allowed, tau_near=tau_near)
                try:
                    sample = synthesize_oracle_motion(scene, command, n_frames, rng, skeleton,
                                                      grid, sample_id=f"{scene.id}_{j:03d}")
                    break
                except PlanningError:
                    continue
            else:
                raise GenerationError(f"{scene.id} sample {j}: no plannable command "
                                      f"in {max_attempts} attempts")
            corpus.samples.append(sample)
    return corpus


# -- serialization ----------------------------------------------------------------
def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _f32_list(a) -> list[float]:
    return [float(x) for x in np.asarray(a, dtype=np.float32).ravel()]


def scene_to_json(scene: SceneSpec, cloud: np.ndarray) -> str:
    cloud = np.ascontiguousarray(cloud, dtype="<f4")
    return _dumps({"scene": scene.to_dict(), "P": int(cloud.shape[0]),
                   "points": base64.b64encode(cloud.tobytes()).decode("ascii")})


def scene_from_json(text: str) -> tuple[SceneSpec, np.ndarray]:
    d = json.loads(text)
    raw = base64.b64decode(d["points"], validate=True)
    cloud = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    if cloud.size != 6 * int(d["P"]):
        raise ValueError(f"point payload holds {cloud.size} floats, expected {6 * int(d['P'])}")
    return SceneSpec.from_dict(d["scene"]), cloud.reshape(-1, 6)


def motion_to_json(sample: MotionSample) -> str:
    n, width = sample.frames.shape
    return _dumps({
        "sample_id": sample.sample_id, "scene_id": sample.scene_id,
        "command": sample.command.to_dict(), "text": sample.text,
        "target_id": sample.target_id, "goal": _f32_list(sample.goal),
        "N": n, "J": (width - 9) // 3,
        "path": _f32_list(sample.path), "frames": _f32_list(sample.frames),
    })


def motion_from_json(text: str) -> MotionSample:
    d = json.loads(text)
    n, J = int(d["N"]), int(d["J"])
    frames = np.asarray(d["frames"], dtype=np.float64).astype(np.float32)
    if frames.size != n * (9 + 3 * J):
        raise ValueError(f"frames hold {frames.size} values, expected N*(9+3J) = {n * (9 + 3 * J)}")
    frames = frames.reshape(n, 9 + 3 * J)
    path = np.asarray(d["path"], dtype=np.float64).astype(np.float32).reshape(n, 3)
    sample = MotionSample(d["sample_id"], d["scene_id"], CommandSpec.from_dict(d["command"]),
                          int(d["target_id"]), np.asarray(d["goal"], dtype=np.float32), frames,
                          text=d["text"])
    sample.path = path
    return sample


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset(corpus: Corpus, directory) -> Path:
    """Write scenes, motions, then the manifest (so a manifest implies complete files)."""
    root = Path(directory)
    (root / "scenes").mkdir(parents=True, exist_ok=True)
    (root / "motions").mkdir(parents=True, exist_ok=True)
    scene_sha = {}
    for sid in sorted(corpus.scenes):
        text = scene_to_json(corpus.scenes[sid], corpus.clouds[sid])
        _atomic_write(root / "scenes" / f"{sid}.json", text)
        scene_sha[sid] = _sha(text)
    records = []
    for s in sorted(corpus.samples, key=lambda s: s.sample_id):
        text = motion_to_json(s)
        _atomic_write(root / "motions" / f"{s.sample_id}.json", text)
        records.append(_dumps({
            "sample_id": s.sample_id, "scene_file": f"scenes/{s.scene_id}.json",
            "motion_file": f"motions/{s.sample_id}.json", "text": s.text,
            "action_index": s.action_index, "object_category_index": s.category_index,
            "target_object_id": s.target_id, "goal": _f32_list(s.goal), "N": s.N,
            "scene_sha256": scene_sha[s.scene_id], "motion_sha256": _sha(text),
        }))
    _atomic_write(root / "manifest.jsonl", "".join(records))
    return root


def _read_checked(path: Path, digest: str | None) -> str:
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise DatasetError(f"{path}: cannot read ({exc})") from exc
    if digest is not None and _sha(text) != digest:
        raise DatasetError(f"{path}: checksum mismatch (file corrupted)")
    return text


def read_dataset(directory) -> Corpus:
    root = Path(directory)
    manifest = root / "manifest.jsonl"
    text = _read_checked(manifest, None)
    corpus = Corpus()
    for lineno, line in enumerate(text.splitlines(), 1):
        try:
            rec = json.loads(line)
            scene_file, motion_file = rec["scene_file"], rec["motion_file"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetError(f"{manifest}:{lineno}: malformed record ({exc})") from exc
        scene_path, motion_path = root / scene_file, root / motion_file
        if scene_file not in corpus.scenes:
            text = _read_checked(scene_path, rec.get("scene_sha256"))
            try:
                corpus.scenes[scene_file], corpus.clouds[scene_file] = scene_from_json(text)
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{scene_path}: invalid content ({exc})") from exc
        text = _read_checked(motion_path, rec.get("motion_sha256"))
        try:
            corpus.samples.append(motion_from_json(text))
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetError(f"{motion_path}: invalid content ({exc})") from exc
    # re-key by scene id once every file is loaded
    by_file = dict(corpus.scenes)
    corpus.scenes = {s.id: s for s in by_file.values()}
    corpus.clouds = {by_file[f].id: c for f, c in corpus.clouds.items()}
    return corpus
