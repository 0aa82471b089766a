"""
Scoring a distilled model against its base
==========================================

Feature similarity says how much representational geometry two models
share; relevance says how well features track the class structure. Both
are squared distance correlations averaged over batches, reported with
degenerate batches flagged rather than silently averaged in.
"""

import numpy as np

from kdlens import fss, perturb_batch, postprocess, rs, unicam
from kdlens.saliency import DISTILLED, Heatmap
from kdlens.testkit import gen_fixtures

fx = gen_fixtures(seed=7, n=8)
student, base = fx.student_net, fx.base_net

# feature similarity between the two models on the same inputs
f_student = student.features(fx.images)
f_base = base.features(fx.images)
report = fss([f_student], [f_base], layer="C2")
print("FSS:", round(report.mean, 4), " degenerate:", list(report.degenerate_batches))

# a model against itself scores exactly 1
self_report = fss([f_student], [f_student.copy()], layer="C2")
print("self-FSS:", self_report.mean)

# relevance against the class-embedding table; the fixture labels
# alternate, so both classes appear in the batch
report = rs([f_student], [fx.labels], fx.embedding_table, layer="C2")
print("RS:", round(report.mean, 4))

# a single-class batch has no label variation to correlate against:
# flagged and scored zero instead of producing a misleading number
single = rs([f_student[:4]], [np.zeros(4, dtype=np.int64)], fx.embedding_table, layer="C2")
print("single-class RS:", single.mean, " degenerate:", list(single.degenerate_batches))

# saliency-guided perturbation: keep only the pixels the distilled model
# considers its own, then ask how the feature geometry shifts
heat = postprocess(unicam(fx.student_bundle, fx.base_bundle, DISTILLED), 16, 16)
masked = perturb_batch(fx.images, heat)
f_masked = student.features(masked)
print("FSS(masked, full):", round(fss([f_masked], [f_student], layer="C2").mean, 4))

# an all-ones map keeps the image intact, an all-zeros map blanks it
ones = Heatmap(maps=np.ones((8, 16, 16)), normalized=True)
print("identity mask changes nothing:", bool(np.array_equal(perturb_batch(fx.images, ones), fx.images)))

# reports serialize to canonical JSON with sorted keys and exact floats
print(report.to_json())
