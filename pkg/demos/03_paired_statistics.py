"""
Comparing sensor configurations with paired tests
=================================================

Per-subject F1 scores of two configurations are paired on
(subject, repeat) keys and compared with the Wilcoxon signed-rank test;
with three comparisons the Bonferroni threshold is 0.05 / 3.
"""

import numpy as np

from alc.stats import bonferroni, compare_configs, compare_pairs, wilcoxon_signed_rank

print(wilcoxon_signed_rank([1, 2, 3, 4, 5]))

###############################################################################
# Nine subjects, two evaluations each

rng = np.random.default_rng(1)
keys = [(s, r) for s in range(9) for r in range(2)]
wo = dict(zip(keys, rng.uniform(0.6, 0.8, 18)))
wa = {k: v + rng.uniform(0.02, 0.15) for k, v in wo.items()}
w18 = {k: v + rng.normal(0.01, 0.02) for k, v in wa.items()}

paired = compare_configs(wo, wa, ("WO", "WA"))
print("WO-WA mean difference", paired.diffs.mean().round(4))

for row in compare_pairs({"WO": wo, "WA": wa, "W18": w18}):
    print(row)

###############################################################################
# Decisions for externally reported p-values

print(bonferroni([0.0039, 0.00195, 0.0264], alpha=0.05, m=3))
