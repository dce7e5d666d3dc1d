"""Compare the grouped gradient estimator against the single-group
REINFORCE-style baseline.

Both estimate the same existence-logit gradients from the same graph
samples; the grouped form differences two conditional means and cancels
most of the shared noise.

Run as: python demos/04_gradient_variance.py
"""

import numpy as np

from dagfit import (
    EdgeParams,
    TableEstimator,
    gen_graph,
    generate_dataset,
    gradient_variance_probe,
    make_product_cgm,
)

g = gen_graph("random", 8, edge_prob=0.3, seed=4)
cgm = make_product_cgm(g, cardinality=2, seed=4)
dataset = generate_dataset(cgm, obs_count=500, int_count=2000, seed=4)
estimators = [TableEstimator(cgm, i) for i in range(8)]
params = EdgeParams.zeros(8)

rng = np.random.default_rng(0)
print(f"{'K':>5} {'grouped std':>12} {'baseline std':>13} {'median ratio':>13}")
for k in (20, 100, 400):
    probe = gradient_variance_probe(estimators, dataset, params, k=k, reps=100, rng=rng)
    ok = probe.comparable()
    ratio = probe.std_main[ok] / probe.std_baseline[ok]
    print(
        "%5d %12.5f %13.5f %13.3f"
        % (k, np.nanmean(probe.std_main[ok]), np.nanmean(probe.std_baseline[ok]),
           np.median(ratio))
    )

# The baseline's mean carries a systematic offset; aligning the means is a
# translation, so the spread columns above compare like with like.
probe = gradient_variance_probe(estimators, dataset, params, k=100, reps=100,
                                rng=np.random.default_rng(1))
ok = probe.comparable()
print("\nmean alignment offset (average):", round(float(np.nanmean(probe.mean_offset[ok])), 4))
