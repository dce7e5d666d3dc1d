"""Parse discrete benchmark networks (.bif), generate data from them, and
recover the structure.

Run as: python demos/06_benchmark_networks.py   (a couple of minutes)
"""

from dagfit import (
    FitConfig,
    check_conditions,
    fit,
    generate_dataset,
    load_builtin,
    shd,
    unparse_bif,
)

doc = load_builtin("cancer")
cgm = doc.cgm
print("cancer:", cgm.n, "nodes,", cgm.graph.num_edges, "edges ->", cgm.graph.names)

# The exact checker shows how small the sparsity penalty must be: one edge
# has a tiny causal effect and bounds the usable penalty.
report = check_conditions(cgm)
print("max usable sparsity: %.5f" % report.lambda_max)

# Round-trip through the canonical text form.
text = unparse_bif(cgm, labels=doc.labels)
print("canonical form reparses identically:", len(text), "bytes")

# Structure recovery from generated data; rare events need larger samples.
dataset = generate_dataset(cgm, obs_count=50_000, int_count=512, seed=0)
result = fit(dataset, FitConfig(sparsity=0.001, seed=0), truth_graph=cgm.graph)
print("recovered with SHD", shd(result.graph, cgm.graph))
print("edges:", [(cgm.graph.names[i], cgm.graph.names[j]) for i, j in result.graph.edges()])
