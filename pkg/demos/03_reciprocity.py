"""Both directions of the synthesis/analysis coupling at toy scale.

1. Analysis from synthesis: an analyzer trained on real motions only versus
   real plus one or two synthesized copies of every training command.
2. Synthesis from analysis: held-out FID of a generator trained with the
   recognition term versus one trained on the stage losses alone.

Numbers at this scale are noisy; the acceptance suite runs the full version.
Run: python demos/03_reciprocity.py [epochs]
"""

import sys

import numpy as np

from cesa.coevolution import (augment_analyzer_training, recognition_accuracy_on, train, train_analyzer,
                              variant_config)
from cesa.config import desk_preset
from cesa.metrics import evaluate_model, train_feature_extractor
from cesa.substrate import make_rng
from cesa.synthworld import generate_corpus

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 8
corpus = generate_corpus(n_scenes=24, samples_per_scene=8, seed=1)
cfg = desk_preset()
cfg.seed, cfg.train.epochs = 1, epochs
tr, val = corpus.split_by_scene(cfg.train.val_fraction, cfg.seed)

models = {v: train(corpus, variant_config(cfg, v)).model for v in ("full", "synthesis_only")}

fx = train_feature_extractor([s.frames for s in tr.samples], 30, 33, seed=cfg.seed)
real = fx.features([s.frames for s in val.samples])
for name, model in models.items():
    fids = [evaluate_model(model, val, make_rng(1, "fid", r), ("fid",), extractor=fx, real_features=real)["fid"]
            for r in range(3)]
    print(f"{name:15s} held-out FID {np.mean(fids):8.2f}")

gen = models["full"].generator
for mult in (0, 1, 2):
    data, _ = augment_analyzer_training(tr, gen, mult, make_rng(1, "augment", mult))
    analyzer = train_analyzer(data, cfg.model, cfg.seed, epochs=epochs, mask_from=tr)
    acc = recognition_accuracy_on(analyzer, val)
    print(f"real + {mult}x synthetic ({len(data.samples)} samples): "
          f"ACT {acc['act']:.3f}  OBJ {acc['obj']:.3f}")
