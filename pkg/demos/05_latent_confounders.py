"""Detect a hidden common cause from the split existence bookkeeping.

When the gradient steps for an edge are recorded separately for
interventions on its source versus everything else, a latent confounder
leaves a unique signature: the observational components of both directions
grow while the interventional ones collapse.

Run as: python demos/05_latent_confounders.py   (about a minute)
"""

import numpy as np

from dagfit import (
    FitConfig,
    add_latent_confounders,
    detect_confounders,
    fit,
    gen_graph,
    generate_dataset,
    make_neural_cgm,
    shd,
)

g = gen_graph("random", 8, edge_prob=0.3, seed=0)
full, latents = add_latent_confounders(g, 1, seed=4)
pair = tuple(sorted(int(c) for c in full.children(latents[0])))
print("hidden cause added over pair", pair)

cgm = make_neural_cgm(full, cardinality=4, seed=0)
dataset = generate_dataset(cgm, obs_count=5000, int_count=512, seed=0, latent_vars=latents)

result = fit(dataset, FitConfig(epochs=10, seed=0), truth_graph=g, confounders=True)
report = detect_confounders(result.split, threshold=0.4)

print("graph error (SHD):", shd(result.graph, g))
top = sorted(report.entries, key=lambda e: -e["score"])[:4]
for entry in top:
    mark = " <- flagged" if entry["flagged"] else ""
    print("pair (%d, %d): score %.3f%s" % (entry["i"], entry["j"], entry["score"], mark))
