"""Build synthetic ground-truth models and draw observational and
interventional data from them.

Run as: python demos/01_simulate_and_sample.py
"""

import numpy as np

from dagfit import (
    exact_int_joint,
    exact_joint,
    gen_graph,
    generate_dataset,
    make_neural_cgm,
    make_product_cgm,
    sample_int,
    sample_obs,
)

# The six standard structures. Edges always point from a lower to a higher
# index, so every generator output is a DAG by construction.
for kind in ("chain", "bidiag", "collider", "full", "jungle", "random"):
    g = gen_graph(kind, 8, edge_prob=0.3, seed=0)
    print(f"{kind:>9}: {g.num_edges:2d} edges, e.g. {g.edges()[:4]}")

# A ground-truth model attaches one conditional distribution per variable.
# The neural family mirrors the benchmark generator: random two-layer
# networks over parent embeddings, orthogonally initialized.
g = gen_graph("chain", 5)
cgm = make_neural_cgm(g, cardinality=10, seed=1)
obs = sample_obs(cgm, 5000, seed=2)
print("\nneural chain, observational block:", obs.shape)

# Interventions replace one mechanism by the uniform distribution. Only the
# target and its descendants are affected.
forced = sample_int(cgm, target=2, count=5000, seed=3)
print("intervened column frequencies:", np.bincount(forced[:, 2], minlength=10))

# For tiny models the joint is available exactly, which drives the oracle
# machinery used throughout the tests.
small = make_product_cgm(gen_graph("chain", 3), cardinality=2, seed=4)
joint = exact_joint(small)
print("\nexact joint sums to", joint.probs.sum())
print("intervened marginal of X2:", exact_int_joint(small, 1).marginal((1,)))

# A Dataset bundles one observational block plus one block per intervention
# target; generate_dataset wires the seeds so everything reproduces.
ds = generate_dataset(cgm, obs_count=5000, int_count=200, seed=5)
print("\ndataset:", ds.obs.shape, "obs rows,", len(ds.ints), "interventional blocks")
