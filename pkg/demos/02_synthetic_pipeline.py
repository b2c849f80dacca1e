"""
Training the five architectures on synthetic IMU windows
========================================================

Synthetic Low/Medium/High windows stand in for real recordings. Each
architecture is trained with the default hyperparameters (lr 0.01,
15 epochs, batch 10, momentum 0.9) on a per-subject 80/20 split.
Runs in about a minute on one core.
"""

import time

from alc.model_zoo import ModelKind
from alc.preprocess import SensorConfig
from alc.synth import SynthSpec, generate
from alc.train_eval import Hyperparams, row_normalize, run_experiment

data = generate(SynthSpec(n_subjects=4, windows_per_class_per_subject=20, channels=18,
                          noise_std=0.5, seed=0))
print(f"{len(data)} windows, class counts {data.class_counts().tolist()}")

for kind in ModelKind:
    start = time.perf_counter()
    exp = run_experiment(SensorConfig.WA, kind, data, Hyperparams(seed=0), repeats_per_subject=2)
    print(f"{kind.value:>9}: accuracy {exp.result.accuracy:.3f}  "
          f"macro-F1 {exp.result.macro_f1:.3f}  ({time.perf_counter() - start:.1f}s)")

###############################################################################
# Row-normalized confusion matrix of the last model, in percent

print(row_normalize(exp.result.confusion).round(1))
