import numpy as np
import pytest

from dagfit import (
    ConfigError,
    EdgeParams,
    FitConfig,
    ParameterError,
    TableEstimator,
    bengio_gamma_gradient,
    chain3_cgm,
    collect_edge_stats,
    enforce_acyclic_order,
    exact_gamma_gradient,
    fit,
    gamma_gradient,
    gen_graph,
    generate_dataset,
    gradient_variance_probe,
    graph_fit_step,
    make_graph_fit_state,
    make_neural_cgm,
    make_product_cgm,
    predict_graph,
    sample_graphs,
    shd,
    theta_gradient,
    theta_stage,
)
from dagfit.fitting import LOGP_FLOOR, EdgeStats


def stats_for_pair(l_with, l_without, n=2, pair=(0, 1)):
    sum1 = np.zeros((n, n))
    cnt1 = np.zeros((n, n))
    sum0 = np.zeros((n, n))
    cnt0 = np.zeros((n, n))
    sum1[pair] = l_with
    cnt1[pair] = 1
    sum0[pair] = l_without
    cnt0[pair] = 1
    return EdgeStats(sum1, cnt1, sum0, cnt0, np.zeros((2, n)), np.zeros((2, n, n), dtype=bool))


def test_config_validation_and_json():
    cfg = FitConfig(epochs=2)
    blob = cfg.to_dict()
    assert FitConfig.from_dict(blob) == cfg
    with pytest.raises(ConfigError):
        FitConfig(graph_samples=1)
    with pytest.raises(ConfigError):
        FitConfig(sparsity=-1e-3)
    with pytest.raises(ConfigError):
        FitConfig.from_dict({"bogus_key": 1})
    with pytest.raises(ConfigError):
        FitConfig.from_json("not json")


def test_sample_graphs_statistics():
    rng = np.random.default_rng(0)
    params = EdgeParams.zeros(3)
    draws = sample_graphs(params, 10_000, rng)
    assert draws.shape == (10_000, 3, 3)
    assert not draws[:, np.arange(3), np.arange(3)].any()
    freq = draws.astype(float).mean(axis=0)
    off = ~np.eye(3, dtype=bool)
    se = np.sqrt(0.25 * 0.75 / 10_000)
    assert np.all(np.abs(freq[off] - 0.25) < 3 * se)
    params.gamma[0, 1] = 40.0
    params.set_theta(0, 1, 40.0)
    forced = sample_graphs(params, 200, rng)
    assert forced[:, 0, 1].all()
    with pytest.raises(ParameterError):
        sample_graphs(params, 0, rng)


def test_collect_edge_stats_two_graph_example():
    cgm = chain3_cgm()
    ests = [TableEstimator(cgm, i) for i in range(3)]
    rng = np.random.default_rng(1)
    batch = np.stack([rng.integers(0, 2, 16) for _ in range(3)], axis=1).astype(np.int32)
    graphs = np.zeros((2, 3, 3), dtype=bool)
    graphs[0, 0, 1] = True  # the two graphs differ only in entry (0, 1)
    stats = collect_edge_stats(ests, batch, graphs)
    mean1, mean0, valid = stats.group_means()
    assert valid[0, 1]
    assert np.isclose(mean1[0, 1], stats.nll[0, 1])
    assert np.isclose(mean0[0, 1], stats.nll[1, 1])
    # an entry constant across graphs leaves one group empty
    assert not valid[1, 0]
    assert stats.cnt1[1, 0] == 0


def test_collect_edge_stats_matches_naive_oracle():
    cgm = chain3_cgm()
    ests = [TableEstimator(cgm, i) for i in range(3)]
    rng = np.random.default_rng(2)
    batch = np.stack([rng.integers(0, 2, 32) for _ in range(3)], axis=1).astype(np.int32)
    graphs = sample_graphs(EdgeParams.zeros(3), 20, rng)
    stats = collect_edge_stats(ests, batch, graphs)
    mean1, mean0, valid = stats.group_means()
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            groups = {0: [], 1: []}
            for k in range(20):
                est = ests[j]
                mask = graphs[k, est.parents, j]
                lp = np.maximum(est.logprob_many(batch, mask[None, :])[0], LOGP_FLOOR)
                groups[int(graphs[k, i, j])].append(-lp.mean())
            if groups[1]:
                assert np.isclose(mean1[i, j], np.mean(groups[1]))
            else:
                assert not valid[i, j]
            if groups[0]:
                assert np.isclose(mean0[i, j], np.mean(groups[0]))


def test_gamma_gradient_values():
    params = EdgeParams.zeros(2)
    stats = stats_for_pair(1.0, 1.2)
    g = gamma_gradient(stats, params, 0.004, intervention_target=None)
    assert np.isclose(g[0, 1], 0.25 * 0.5 * (1.0 - 1.2 + 0.004))
    assert np.isclose(g[0, 1], -0.0245)
    # equal group means and zero penalty: zero gradient
    g0 = gamma_gradient(stats_for_pair(1.1, 1.1), params, 0.0, None)
    assert g0[0, 1] == 0.0
    # empty with-edge group: zero gradient
    empty = stats_for_pair(1.0, 1.2)
    empty.cnt1[0, 1] = 0
    assert gamma_gradient(empty, params, 0.004, None)[0, 1] == 0.0
    # the intervened variable's column is skipped
    g2 = gamma_gradient(stats_for_pair(1.0, 1.2), params, 0.004, intervention_target=1)
    assert g2[0, 1] == 0.0


def test_theta_gradient_values():
    params = EdgeParams.zeros(2)
    stats = stats_for_pair(0.9, 1.1)
    g = theta_gradient(stats, params, intervention_target=0)
    assert np.isclose(g[0, 1], 0.25 * 0.5 * (0.9 - 1.1))
    assert np.isclose(g[0, 1], -0.025)
    assert np.isclose(g[1, 0], 0.025)
    assert np.array_equal(g, -g.T)
    # rows other than the target's stay zero
    g2 = theta_gradient(stats, params, intervention_target=1)
    assert np.all(g2[0, :] == 0)


def test_bengio_gradient_example():
    params = EdgeParams.zeros(2)
    params.set_theta(0, 1, 40.0)  # sigma(theta) = 1
    graphs = np.zeros((2, 2, 2), dtype=bool)
    graphs[0, 0, 1] = True
    nll = np.array([[0.0, 2.0], [0.0, 1.0]])
    stats = EdgeStats(None, None, None, None, nll, graphs)
    g = bengio_gamma_gradient(stats, params, 0.0)
    assert np.isclose(g[0, 1], -1.0 / 6.0)
    # zero denominator: flagged, zero gradient
    stats0 = EdgeStats(None, None, None, None, np.zeros((2, 2)), graphs)
    g0, flags = bengio_gamma_gradient(stats0, params, 0.0, return_flags=True)
    assert np.all(g0 == 0) and flags.all()


def chain_fit_ingredients(seed=0, int_count=5000):
    cgm = chain3_cgm()
    ds = generate_dataset(cgm, 1000, int_count, seed=seed)
    ests = [TableEstimator(cgm, i) for i in range(3)]
    return cgm, ds, ests


def test_graph_fit_step_recovers_chain():
    cgm, ds, ests = chain_fit_ingredients()
    cfg = FitConfig(epochs=1, dist_iters=0, graph_iters=1, sparsity=0.004, seed=0)
    params = EdgeParams.zeros(3)
    state = make_graph_fit_state(cfg, ds)
    rng = np.random.default_rng(0)
    for _ in range(2000):
        graph_fit_step(ests, ds, params, cfg, rng, state)
        assert np.array_equal(params.theta, -params.theta.T)
    assert predict_graph(params, ds.metas).edges() == [(0, 1), (1, 2)]


def test_graph_fit_step_huge_sparsity_empties_graph():
    cgm, ds, ests = chain_fit_ingredients(seed=3)
    cfg = FitConfig(epochs=1, dist_iters=0, graph_iters=1, sparsity=10.0, seed=0)
    params = EdgeParams.zeros(3)
    state = make_graph_fit_state(cfg, ds)
    rng = np.random.default_rng(0)
    for _ in range(300):
        graph_fit_step(ests, ds, params, cfg, rng, state)
    off = ~np.eye(3, dtype=bool)
    assert np.all(params.gamma[off] < 0)
    assert predict_graph(params).num_edges == 0


def test_offtarget_theta_rows_never_move_in_full_mode():
    cgm, ds, ests = chain_fit_ingredients(seed=1)
    cfg = FitConfig(epochs=1, dist_iters=0, graph_iters=1, seed=0)
    params = EdgeParams.zeros(3)
    state = make_graph_fit_state(cfg, ds)
    rng = np.random.default_rng(4)
    for _ in range(50):
        before = params.theta.copy()
        rep = graph_fit_step(ests, ds, params, cfg, rng, state)
        t = rep["target"]
        others = [i for i in range(3) if i != t]
        sub = np.ix_(others, others)
        assert np.array_equal(params.theta[sub], before[sub])


def test_theta_stage_freezes_gamma():
    cgm, ds, ests = chain_fit_ingredients(seed=2)
    cfg = FitConfig(
        epochs=1, dist_iters=0, graph_iters=1, theta_stage_iters=50,
        theta_stage_samples=2, seed=0,
    )
    params = EdgeParams.zeros(3)
    params.gamma[...] = 0.3
    np.fill_diagonal(params.gamma, 0.0)
    state = make_graph_fit_state(cfg, ds)
    rng = np.random.default_rng(0)
    gamma_before = params.gamma.copy()
    theta_before = params.theta.copy()
    theta_stage(ests, ds, params, cfg, rng, state)
    assert np.array_equal(params.gamma, gamma_before)
    assert not np.array_equal(params.theta, theta_before)
    assert np.array_equal(params.theta, -params.theta.T)


def test_theta_stage_gradient_agrees_with_grouped_estimator():
    # paired-sample estimate vs grouped estimate of the same expectation
    cgm, ds, ests = chain_fit_ingredients(seed=5)
    params = EdgeParams.zeros(3)
    rng = np.random.default_rng(6)
    t = 0
    block = ds.ints[t].samples
    paired, grouped = [], []
    for _ in range(1000):
        rows = block[rng.integers(0, block.shape[0], size=64)]
        # paired: one base graph with entry (t, j) toggled both ways
        base = sample_graphs(params, 2, rng)
        est = ests[1]
        masks = base[:, est.parents, 1]
        ppos = est.parents.index(t)
        m1 = masks.copy(); m1[:, ppos] = True
        m0 = masks.copy(); m0[:, ppos] = False
        lp = np.maximum(est.logprob_many(rows, np.vstack([m1, m0])), LOGP_FLOOR)
        nll = -lp.mean(axis=1)
        paired.append(nll[:2].mean() - nll[2:].mean())
        # grouped: independent graphs split by the entry's value
        graphs = sample_graphs(params, 20, rng)
        stats = collect_edge_stats(ests, rows, graphs, skip_var=t)
        mean1, mean0, valid = stats.group_means()
        if valid[t, 1]:
            grouped.append(mean1[t, 1] - mean0[t, 1])
    pm, gm = np.mean(paired), np.mean(grouped)
    se = np.sqrt(np.var(paired) / len(paired) + np.var(grouped) / len(grouped))
    assert abs(pm - gm) < 3 * se


def test_fit_trace_and_determinism():
    cgm, ds, ests = chain_fit_ingredients(seed=7, int_count=500)
    cfg = FitConfig(epochs=3, dist_iters=0, graph_iters=30, seed=11)
    r1 = fit(ds, cfg, estimators=[TableEstimator(cgm, i) for i in range(3)],
             truth_graph=cgm.graph)
    r2 = fit(ds, cfg, estimators=[TableEstimator(cgm, i) for i in range(3)],
             truth_graph=cgm.graph)
    assert len(r1.trace) == 3
    assert all("shd" in e for e in r1.trace)
    assert np.array_equal(r1.params.gamma, r2.params.gamma)
    assert np.array_equal(r1.params.theta, r2.params.theta)


def test_fit_mlp_determinism_bit_exact():
    g = gen_graph("chain", 3)
    cgm = make_product_cgm(g, 3, seed=0)
    ds = generate_dataset(cgm, 400, 200, seed=0)
    cfg = FitConfig(epochs=2, dist_iters=40, graph_iters=15, graph_samples=20,
                    batch_size=32, seed=5)
    r1 = fit(ds, cfg)
    r2 = fit(ds, cfg)
    assert np.array_equal(r1.params.gamma, r2.params.gamma)
    assert np.array_equal(r1.params.theta, r2.params.theta)
    for e1, e2 in zip(r1.estimators, r2.estimators):
        assert np.array_equal(e1.flat, e2.flat)


def test_fit_requires_interventions():
    g = gen_graph("chain", 2)
    cgm = make_product_cgm(g, 2, seed=0)
    ds = generate_dataset(cgm, 100, 10, seed=0)
    ds.ints.clear()
    with pytest.raises(ConfigError):
        fit(ds, FitConfig(epochs=1))


def test_fit_independent_data_predicts_empty_graph():
    g = gen_graph("chain", 3)
    g.adj[...] = False  # three independent variables
    cgm = make_product_cgm(g, 3, seed=1)
    ds = generate_dataset(cgm, 2000, 2000, seed=1)
    ests = [TableEstimator(cgm, i) for i in range(3)]
    cfg = FitConfig(epochs=10, dist_iters=0, graph_iters=60, seed=0)
    res = fit(ds, cfg, estimators=ests)
    assert res.graph.num_edges == 0


def test_independent_pair_zero_expected_gradient():
    # two variables, no edge, no penalty: E[gamma gradient] = 0, where the
    # expectation also covers the interventional sampling itself
    from dagfit import sample_int

    g = gen_graph("chain", 2)
    g.adj[...] = False
    cgm = make_product_cgm(g, 2, seed=3)
    ests = [TableEstimator(cgm, i) for i in range(2)]
    params = EdgeParams.zeros(2)
    rng = np.random.default_rng(8)
    vals = []
    for rep in range(800):
        t = int(rng.integers(2))
        rows = sample_int(cgm, t, 64, seed=[8, rep])
        graphs = sample_graphs(params, 20, rng)
        stats = collect_edge_stats(ests, rows, graphs, skip_var=t)
        grad = gamma_gradient(stats, params, 0.0, t)
        vals.append(grad[t, 1 - t])  # the updatable entry points away from t
    se = np.std(vals) / np.sqrt(len(vals))
    # the absolute floor covers the exactly-independent case where both the
    # mean and its standard error collapse to floating-point dust
    assert abs(np.mean(vals)) < 3 * se + 1e-12


def test_predict_graph_threshold():
    params = EdgeParams.zeros(3)
    assert predict_graph(params).num_edges == 0  # boundary is strict
    params.gamma[0, 1] = 4.0
    params.set_theta(0, 1, 4.0)
    assert predict_graph(params).edges() == [(0, 1)]
    # positive orientation one way forbids the reverse edge outright
    params.gamma[1, 0] = 9.0
    assert (1, 0) not in predict_graph(params).edges()


def test_monte_carlo_gamma_gradient_unbiased_small():
    from dagfit import sample_int

    cgm = chain3_cgm()
    ests = [TableEstimator(cgm, i) for i in range(3)]
    params = EdgeParams.zeros(3)
    i, j = 0, 1
    exact = exact_gamma_gradient(cgm, params, 0.004, i, j)
    rng = np.random.default_rng(10)
    vals = []
    targets = [t for t in range(3) if t != j]
    for rep in range(3000):
        t = targets[int(rng.integers(len(targets)))]
        rows = sample_int(cgm, t, 128, seed=[10, rep])
        graphs = sample_graphs(params, 20, rng)
        stats = collect_edge_stats(ests, rows, graphs, skip_var=t)
        vals.append(gamma_gradient(stats, params, 0.004, t)[i, j])
    se = np.std(vals) / np.sqrt(len(vals))
    assert abs(np.mean(vals) - exact) < 3 * se
    assert exact < 0  # the true edge pulls its existence logit up


def test_variance_probe_shrinks_with_k():
    g = gen_graph("random", 5, edge_prob=0.4, seed=2)
    cgm = make_product_cgm(g, 2, seed=2)
    ds = generate_dataset(cgm, 500, 1000, seed=2)
    ests = [TableEstimator(cgm, i) for i in range(5)]
    params = EdgeParams.zeros(5)
    rng = np.random.default_rng(3)
    meds = []
    for k in (20, 100, 400):
        probe = gradient_variance_probe(ests, ds, params, k, 60, rng)
        ok = probe.comparable()
        assert ok.sum() > 0
        meds.append(np.median(probe.std_main[ok]))
        # after the alignment shift both estimators report the same mean
        assert np.allclose(probe.aligned_mean_baseline()[ok], probe.mean_main[ok], atol=1e-12)
    assert meds[2] < meds[0]
    with pytest.raises(ParameterError):
        gradient_variance_probe(ests, ds, params, 20, 10, rng)


@pytest.mark.slow
def test_fit_chain5_neural_end_to_end():
    g = gen_graph("chain", 5)
    recovered = 0
    for seed in (0, 1):
        cgm = make_neural_cgm(g, 10, seed=seed)
        ds = generate_dataset(cgm, 5000, 200, seed=seed)
        res = fit(ds, FitConfig(seed=seed), truth_graph=cgm.graph)
        _, acyclic = enforce_acyclic_order(res.params, mode="exhaustive", metas=ds.metas)
        if shd(acyclic, cgm.graph) == 0:
            recovered += 1
    assert recovered >= 1


def test_partial_mode_updates_unintervened_pairs():
    g = gen_graph("chain", 4)
    cgm = make_product_cgm(g, 2, seed=4)
    ds = generate_dataset(cgm, 500, 2000, seed=4, targets=[0, 1])
    ests = [TableEstimator(cgm, i) for i in range(4)]
    cfg = FitConfig(epochs=1, dist_iters=0, graph_iters=1, seed=0)
    rng = np.random.default_rng(0)

    # with the extended estimator off, pairs without adjacent interventions freeze
    params_off = EdgeParams.zeros(4)
    state_off = make_graph_fit_state(cfg, ds, partial=False)
    for _ in range(60):
        graph_fit_step(ests, ds, params_off, cfg, rng, state_off)
    assert params_off.theta[2, 3] == 0.0

    params_on = EdgeParams.zeros(4)
    state_on = make_graph_fit_state(cfg, ds, partial=None)  # auto-detects
    assert state_on.partial
    rng = np.random.default_rng(0)
    for _ in range(60):
        graph_fit_step(ests, ds, params_on, cfg, rng, state_on)
        assert np.array_equal(params_on.theta, -params_on.theta.T)
    assert params_on.theta[2, 3] != 0.0
    # adjacent-intervention rows behave as in full mode either way
    assert params_on.theta[0, 1] != 0.0


def test_partial_fit_learns_orientation_of_far_pairs():
    # interventions on a strict subset still orient the downstream chain link
    g = gen_graph("chain", 4)
    cgm = make_product_cgm(g, 2, seed=11)
    ds = generate_dataset(cgm, 2000, 4000, seed=11, targets=[0, 1])
    ests = [TableEstimator(cgm, i) for i in range(4)]
    cfg = FitConfig(epochs=20, dist_iters=0, graph_iters=100, sparsity=0.002, seed=2)
    res = fit(ds, cfg, estimators=ests)
    # the intervened part of the chain is recovered outright
    assert (0, 1) in res.graph.edges()
    assert (1, 2) in res.graph.edges()
    # and the unintervened pair's orientation logit moved toward 2 -> 3
    assert res.params.theta[2, 3] > 0
