"""Train a small cesa model for a few minutes, then sample the same command K times.

Run: python demos/02_train_and_sample.py [epochs]
"""

import sys
import time

import numpy as np

from cesa.batching import collate
from cesa.coevolution import train
from cesa.config import desk_preset
from cesa.metrics import evaluate_model, mean_pairwise_path_distance
from cesa.substrate import make_rng
from cesa.substrate.tensor import no_grad
from cesa.synthworld import generate_corpus

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 5
corpus = generate_corpus(n_scenes=16, samples_per_scene=8, seed=0)
cfg = desk_preset()
cfg.train.epochs = epochs

t0 = time.perf_counter()
result = train(corpus, cfg)
print(f"trained {len(result.log.steps)} steps in {time.perf_counter() - t0:.0f}s, "
      f"best validation at step {result.log.best_step}")
for v in result.log.validation:
    print(f"  step {v['step']:4d}  goal {v['goal']:.3f}  path {v['path']:.3f}  pose {v['pose']:.3f}")

_, val = corpus.split_by_scene(cfg.train.val_fraction, cfg.seed)
scores = evaluate_model(result.model, val, make_rng(0, "demo-eval"), ("goal", "path", "noncollision", "acc"))
print("held-out:", {k: round(v, 3) for k, v in scores.items()})

# Same scene, same words, ten latent draws: goals and paths should spread out.
sample = val.samples[0]
b = collate(val, [sample] * 10, cfg.model.text_len)
with no_grad():
    out = result.model.generator.forward(b.tokens, b.points, make_rng(0, "demo-k"), sample.N)
goals = out.goal_estimate()
print(f"'{sample.text}': true goal {np.round(sample.goal, 2)}")
print("sampled goals:\n", np.round(goals, 2))
print(f"mean pairwise path distance {mean_pairwise_path_distance(out.path_estimate()):.3f} m")
