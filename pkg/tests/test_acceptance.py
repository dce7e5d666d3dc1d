"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL
line with its runtime.

The experiments at fixed sample sizes are sensitive to the dataset draw
itself (a finite block carries its own empirical version of the convergence
conditions), so where a criterion leaves the instance open, the instance is
fixed by a documented, condition-based screen rather than by luck: dataset
realizations must actually satisfy the (limited-data) recoverability or
detectability conditions the theory requires. The screens are computed
exactly from joints or blocks, never from fit outcomes.
"""

import contextlib
import json
import sys
import time

import numpy as np
import pytest

import dagfit.cli
from dagfit import (
    EdgeParams,
    FitConfig,
    TableEstimator,
    add_latent_confounders,
    chain3_cgm,
    collect_edge_stats,
    detect_confounders,
    enforce_acyclic_order,
    exact_gamma_gradient,
    exact_joint,
    fit,
    gamma_gradient,
    gen_graph,
    generate_dataset,
    gradient_variance_probe,
    is_acyclic,
    load_builtin,
    make_neural_cgm,
    make_product_cgm,
    order_objective,
    read_dataset,
    sample_graphs,
    sample_int,
    shd,
    write_dataset,
)
from dagfit.networks import fixture_path

from .test_estimators import gradient_worst_error, hidden_preactivations, random_case
from .test_graphs import noisy_consistent_params


@contextlib.contextmanager
def criterion(num, desc, budget_s):
    start = time.time()
    try:
        yield
    except BaseException:
        print(f"[criterion {num}] FAIL ({time.time() - start:.1f}s) {desc}",
              file=sys.__stderr__, flush=True)
        raise
    elapsed = time.time() - start
    print(f"[criterion {num}] PASS ({elapsed:.1f}s) {desc}", file=sys.__stderr__, flush=True)
    assert elapsed <= budget_s, f"runtime {elapsed:.1f}s exceeds the {budget_s}s budget"


def test_criterion_1_worked_example_reproduction(capsys, tmp_path):
    with criterion(1, "exact checker reproduces the worked chain example", 1.0):
        code = dagfit.cli.main(
            ["verify", str(fixture_path("chain3")), "--sparsity", "0.019"]
        )
        out = capsys.readouterr().out
        assert code == 0
        report = json.loads(out)
        edges = {(e["i"], e["j"]): e for e in report["edges"]}
        assert abs(edges[(0, 1)]["cond1_values"][""] - 0.023) < 1e-3
        assert abs(edges[(0, 1)]["cond1_values"]["2"] - 0.015) < 1e-3
        assert abs(edges[(0, 1)]["cond3_min"] - 0.020) < 1e-3
        assert abs(edges[(1, 2)]["cond3_min"] - 0.193) < 1e-3
        pairs = {(p["i"], p["j"]): p for p in report["ancestor_pairs"]}
        assert abs(pairs[(0, 2)]["cond1_values"][""] - 0.008) < 1e-3
        assert abs(pairs[(0, 2)]["cond1_values"]["1"]) < 1e-3
        assert abs(report["lambda_max"] - 0.020) < 1e-3


@pytest.mark.slow
def test_criterion_2_sparsity_boundary():
    # Dataset seed 3 is fixed so the 10k-per-intervention realization's own
    # condition-3 boundary (0.02006) matches the data-limit value; at this
    # block size the boundary's sampling deviation rivals the +-0.001 margins
    # under test, so the five seeds vary the training run.
    with criterion(2, "sparsity straddling the exact bound keeps/drops the weak edge", 300):
        cgm = chain3_cgm()
        ds = generate_dataset(cgm, 100_000, 10_000, seed=3)
        outcomes = {}
        for lam in (0.019, 0.021):
            hits = 0
            for seed in range(5):
                ests = [TableEstimator(cgm, i) for i in range(3)]
                cfg = FitConfig(epochs=100, dist_iters=0, graph_iters=100,
                                sparsity=lam, seed=seed)
                res = fit(ds, cfg, estimators=ests)
                if lam == 0.019:
                    hits += shd(res.graph, cgm.graph) == 0
                else:
                    hits += res.graph.edges() == [(1, 2)]  # exactly the weak edge missing
            outcomes[lam] = hits
        assert outcomes[0.019] >= 4, outcomes
        assert outcomes[0.021] >= 4, outcomes


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["chain", "bidiag", "jungle"])
def test_criterion_3_structure_recovery(kind):
    with criterion(3, f"desk-scale recovery on {kind} (n=8, 5 seeds)", 5 * 300 + 120):
        shds = []
        for seed in range(5):
            g = gen_graph(kind, 8)
            cgm = make_neural_cgm(g, 10, seed=seed)
            ds = generate_dataset(cgm, 5000, 200, seed=seed)
            t0 = time.time()
            res = fit(ds, FitConfig(seed=seed))
            assert time.time() - t0 <= 300, "single fit exceeded five minutes"
            _, acyclic = enforce_acyclic_order(res.params, mode="exhaustive", metas=ds.metas)
            shds.append(shd(acyclic, cgm.graph))
        assert np.mean(shds) <= 1.0, (kind, shds)


def test_criterion_4_gradient_estimator_variance():
    with criterion(4, "grouped estimator stds at most half the baseline's on >=90% of edges", 120):
        g = gen_graph("random", 8, edge_prob=0.3, seed=4)
        cgm = make_product_cgm(g, 2, seed=4)
        ds = generate_dataset(cgm, 500, 2000, seed=4)
        ests = [TableEstimator(cgm, i) for i in range(8)]
        probe = gradient_variance_probe(
            ests, ds, EdgeParams.zeros(8), k=100, reps=200, rng=np.random.default_rng(0)
        )
        ok = probe.comparable()
        assert ok.sum() >= 50
        ratio = probe.std_main[ok] / probe.std_baseline[ok]
        assert np.mean(ratio <= 0.5) >= 0.9, float(np.mean(ratio <= 0.5))


def _fixed_binary_cgms():
    out = [chain3_cgm()]
    for seed in (2, 5):
        g = gen_graph("random", 3, edge_prob=0.5, seed=seed)
        out.append(make_product_cgm(g, 2, seed=seed))
    return out


def test_criterion_5_unbiasedness_oracle():
    with criterion(5, "Monte-Carlo gradient mean matches the exact expectation", 60):
        i, j = 0, 1
        targets = [0, 2]
        for c_idx, cgm in enumerate(_fixed_binary_cgms()):
            ests = [TableEstimator(cgm, v) for v in range(3)]
            for setting in ("zero", "one"):
                params = EdgeParams.zeros(3)
                if setting == "one":
                    params.gamma[...] = 1.0
                    np.fill_diagonal(params.gamma, 0.0)
                    upper = -np.ones((3, 3))
                    params = EdgeParams(params.gamma, np.triu(upper, 1))
                exact = exact_gamma_gradient(cgm, params, 0.004, i, j)
                rng = np.random.default_rng(100 + c_idx)
                vals = np.empty(10_000)
                for rep in range(10_000):
                    t = targets[int(rng.integers(2))]
                    rows = sample_int(cgm, t, 64, seed=[c_idx, rep])
                    graphs = sample_graphs(params, 100, rng)
                    stats = collect_edge_stats(ests, rows, graphs, skip_var=t)
                    vals[rep] = gamma_gradient(stats, params, 0.004, t)[i, j]
                se = vals.std() / np.sqrt(len(vals))
                # the absolute floor covers independent pairs, where both
                # sides equal the penalty term exactly and the spread is dust
                assert abs(vals.mean() - exact) < 3 * se + 1e-12, (
                    c_idx, setting, vals.mean(), exact, se,
                )


def _screened_confounder_instance(seed, cardinality=4, mi_floor=0.05):
    """Random graph + one hidden cause over a non-ancestral pair whose exact
    mutual information clears the detectability floor."""
    g = gen_graph("random", 8, edge_prob=0.3, seed=seed)
    for attempt in range(40):
        full, latents = add_latent_confounders(g, 1, seed=1000 * seed + attempt)
        i, j = sorted(int(c) for c in full.children(latents[0]))
        if j in g.descendants(i) or i in g.descendants(j):
            continue
        cgm = make_neural_cgm(full, cardinality, seed=seed)
        m = exact_joint(cgm).marginal((i, j))
        pi = m.sum(1, keepdims=True)
        pj = m.sum(0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            mi = float(np.where(m > 0, m * np.log(m / (pi * pj)), 0.0).sum())
        if mi >= mi_floor:
            return g, cgm, latents, (i, j)
    raise RuntimeError(f"no detectable instance for seed {seed}")


@pytest.mark.slow
def test_criterion_6_confounder_detection():
    with criterion(6, "hidden common cause flagged, nothing else, graph intact", 300):
        hits = 0
        for seed in range(5):
            g, cgm, latents, pair = _screened_confounder_instance(seed)
            ds = generate_dataset(cgm, 5000, 512, seed=seed, latent_vars=latents)
            res = fit(ds, FitConfig(epochs=10, seed=seed), confounders=True)
            report = detect_confounders(res.split, 0.4)
            lc_pair = next(e["score"] for e in report.entries if (e["i"], e["j"]) == pair)
            max_other = max(e["score"] for e in report.entries if (e["i"], e["j"]) != pair)
            ok = lc_pair > 0.4 and max_other < 0.4 and shd(res.graph, g) <= 1
            hits += ok
        assert hits >= 4, hits


def _cancer_recoverable(cgm, seed, sparsity, clearance=1e-3):
    """Limited-data condition 3 for the weakest edge (Pollution -> Cancer,
    conditioned on Smoker), computed from the seed's own blocks."""
    ds = generate_dataset(cgm, 1000, 512, seed=seed)
    est = TableEstimator(cgm, 2)
    pp = est.parents
    with_mask = np.zeros(4, bool)
    with_mask[[pp.index(0), pp.index(1)]] = True
    wo_mask = np.zeros(4, bool)
    wo_mask[pp.index(1)] = True
    gains = []
    for t in (0, 1, 3, 4):
        block = ds.ints[t].samples
        lw = est.logprob_many(block, with_mask[None, :])[0]
        lo = est.logprob_many(block, wo_mask[None, :])[0]
        gains.append(float((lw - lo).mean()))
    return float(np.mean(gains)) > sparsity + clearance


@pytest.mark.slow
def test_criterion_7_benchmark_network_recovery(capsys, tmp_path):
    with criterion(7, "benchmark networks parse and cancer is recovered", 600):
        code = dagfit.cli.main(["parse", str(fixture_path("cancer")), "--out", str(tmp_path / "c")])
        assert code == 0 and json.loads(capsys.readouterr().out)["nodes"] == 5
        code = dagfit.cli.main(["parse", str(fixture_path("asia")), "--out", str(tmp_path / "a")])
        assert code == 0 and json.loads(capsys.readouterr().out)["nodes"] == 8

        cgm = load_builtin("cancer").cgm
        # The exact checker bounds the usable penalty at 0.00189, hence 0.001.
        # Seeds are screened by the limited-data recoverability condition:
        # a draw whose own blocks put the weak edge's gain at or below the
        # penalty cannot witness the algorithm either way.
        sparsity = 0.001
        seeds = []
        candidate = 0
        while len(seeds) < 5:
            if _cancer_recoverable(cgm, candidate, sparsity):
                seeds.append(candidate)
            candidate += 1
        hits = 0
        for seed in seeds:
            ds = generate_dataset(cgm, 50_000, 512, seed=seed)
            res = fit(ds, FitConfig(epochs=60, sparsity=sparsity, seed=seed))
            hits += shd(res.graph, cgm.graph) == 0
        assert hits >= 4, (seeds, hits)


def test_criterion_8a_finite_difference_gradients():
    with criterion("8a", "analytic gradients match central differences", 300):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 25:
            est, x, masks = random_case(rng)
            if np.abs(hidden_preactivations(est, x, masks)).min() < 1e-3:
                continue  # rectifier kink: central differences are invalid there
            assert gradient_worst_error(est, x, masks) < 1e-4
            checked += 1


def test_criterion_8b_acyclicity_fuzz():
    with criterion("8b", "order enforcement yields a DAG on 10k random parameters", 300):
        rng = np.random.default_rng(7)
        for trial in range(10_000):
            n = int(rng.integers(2, 9))
            params = EdgeParams(rng.normal(0, 3, (n, n)), rng.normal(0, 3, (n, n)))
            _, graph = enforce_acyclic_order(params, mode="greedy")
            assert is_acyclic(graph)


def test_criterion_8c_order_search_equivalence():
    with criterion("8c", "greedy order search matches the exact optimum (100 instances)", 120):
        rng = np.random.default_rng(13)
        for trial in range(100):
            n = int(rng.integers(3, 8))
            params = noisy_consistent_params(rng, n)
            o1, _ = enforce_acyclic_order(params, mode="exhaustive")
            o2, _ = enforce_acyclic_order(params, mode="greedy")
            assert np.isclose(
                order_objective(o1, params), order_objective(o2, params), atol=1e-9
            )


def test_criterion_8d_theta_antisymmetry_during_training():
    with criterion("8d", "orientation logits stay exactly antisymmetric", 120):
        cgm = chain3_cgm()
        ds = generate_dataset(cgm, 500, 1000, seed=0)
        ests = [TableEstimator(cgm, i) for i in range(3)]
        cfg = FitConfig(epochs=1, dist_iters=0, graph_iters=1, seed=0)
        from dagfit import graph_fit_step, make_graph_fit_state, theta_stage

        params = EdgeParams.zeros(3)
        state = make_graph_fit_state(cfg, ds)
        rng = np.random.default_rng(0)
        for _ in range(200):
            graph_fit_step(ests, ds, params, cfg, rng, state)
            assert np.array_equal(params.theta, -params.theta.T)
        cfg2 = FitConfig(epochs=1, dist_iters=0, graph_iters=1,
                         theta_stage_iters=50, seed=0)
        theta_stage(ests, ds, params, cfg2, rng, state)
        assert np.array_equal(params.theta, -params.theta.T)


def test_criterion_8e_dataset_round_trip(tmp_path):
    with criterion("8e", "dataset directory round trips bit-exactly", 60):
        g = gen_graph("random", 5, edge_prob=0.4, seed=1)
        cgm = make_product_cgm(g, 3, seed=1)
        ds = generate_dataset(cgm, 300, 100, seed=1)
        write_dataset(ds, tmp_path / "d1")
        back = read_dataset(tmp_path / "d1")
        assert np.array_equal(back.obs, ds.obs)
        for t in ds.ints:
            assert np.array_equal(back.ints[t].samples, ds.ints[t].samples)
        write_dataset(back, tmp_path / "d2")
        for name in sorted(p.name for p in (tmp_path / "d1").iterdir()):
            assert (tmp_path / "d1" / name).read_bytes() == (tmp_path / "d2" / name).read_bytes()


def test_criterion_8f_fit_determinism():
    with criterion("8f", "same seed, same data: bit-identical trajectories", 120):
        g = gen_graph("chain", 3)
        cgm = make_product_cgm(g, 3, seed=2)
        ds = generate_dataset(cgm, 400, 200, seed=2)
        cfg = FitConfig(epochs=2, dist_iters=50, graph_iters=20, graph_samples=20,
                        batch_size=32, seed=9)
        r1 = fit(ds, cfg)
        r2 = fit(ds, cfg)
        assert np.array_equal(r1.params.gamma, r2.params.gamma)
        assert np.array_equal(r1.params.theta, r2.params.theta)
        for e1, e2 in zip(r1.estimators, r2.estimators):
            assert np.array_equal(e1.flat, e2.flat)
        assert r1.trace == r2.trace
