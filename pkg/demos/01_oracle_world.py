"""Build a small synthetic world and look at what the oracle produces.

Run: python demos/01_oracle_world.py [out_dir]
"""

import sys
from collections import Counter
from pathlib import Path

import numpy as np

from cesa.metrics import contact_score, non_collision_score
from cesa.synthworld import generate_corpus, skeleton_for, write_dataset
from cesa.viz import goals_json, joints_csv, render_svg

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_world")
corpus = generate_corpus(n_scenes=6, samples_per_scene=5, seed=3)
print(f"{len(corpus.scenes)} scenes, {len(corpus.samples)} oracle motions")
print("actions:", dict(Counter(s.command.action for s in corpus.samples)))
print("example commands:")
for s in corpus.samples[:4]:
    print(f"  {s.sample_id}: '{s.text}' -> targets {s.command.target_ids}")

# The oracle is the metric calibration point: it should never collide and
# should touch its target for every non-walking action.
sk = skeleton_for(8)
frames = [s.frames for s in corpus.samples]
scenes = [corpus.scene_of(s) for s in corpus.samples]
print("non-collision:", non_collision_score(frames, scenes, [s.command.target_ids for s in corpus.samples], sk))
print("contact:", round(contact_score(frames, scenes, [s.command for s in corpus.samples], sk), 1))

ambiguous = [s for s in corpus.samples if len(s.command.target_ids) > 1]
print(f"{len(ambiguous)} commands resolve to more than one object")

write_dataset(corpus, out / "data")
scene_id = corpus.samples[0].scene_id
motions = [s for s in corpus.samples if s.scene_id == scene_id]
(out / "scene.svg").write_text(render_svg(corpus.scenes[scene_id], motions))
(out / "joints.csv").write_text(joints_csv(motions))
(out / "goals.json").write_text(goals_json(motions))
lengths = [np.linalg.norm(np.diff(m.path[:, :2], axis=0), axis=1).sum() for m in motions]
print(f"wrote {out}/; path lengths in {scene_id}: {np.round(lengths, 2)} m")
