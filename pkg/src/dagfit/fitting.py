"""The graph-fitting stage and the outer alternating training loop.

Each graph-fitting step draws one intervention, a data batch from its block,
and K adjacency samples; evaluates every variable's conditional NLL once per
sampled graph; and converts the per-pair group means (edge present vs absent)
into low-variance gradient updates for the existence and orientation logits.
A REINFORCE-style single-group estimator is kept alongside purely for
variance comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from .confounders import SplitGamma, split_update
from .errors import ConfigError, ParameterError
from .estimators import Adam, MlpEstimator, train_step
from .graphs import CausalGraph, EdgeParams, default_metas, shd
from .util import expit, expit_grad

# Deterministic mechanisms can give true zero probabilities; flooring the
# log-probabilities keeps the gradient statistics finite.
LOGP_FLOOR = -30.0


@dataclass
class FitConfig:
    """Hyperparameters of the alternating two-stage training loop."""

    epochs: int = 30
    dist_iters: int = 1000
    graph_iters: int = 100
    graph_samples: int = 100
    batch_size: int = 128
    sparsity: float = 0.004
    lr_model: float = 5e-3
    weight_decay: float = 1e-4
    lr_gamma: float = 2e-2
    lr_theta: float = 1e-1
    betas_gamma: tuple = (0.9, 0.9)
    betas_theta: tuple = (0.9, 0.999)
    theta_freeze: bool = False
    theta_stage_iters: int = 1000
    theta_stage_samples: int = 2
    partial_theta_lr_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.betas_gamma = tuple(self.betas_gamma)
        self.betas_theta = tuple(self.betas_theta)
        if self.graph_samples < 2:
            raise ConfigError("graph_samples must be at least 2")
        if self.sparsity < 0:
            raise ConfigError("sparsity must be non-negative")
        for name in ("lr_model", "lr_gamma", "lr_theta"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if min(self.epochs, self.dist_iters, self.graph_iters) < 0:
            raise ConfigError("iteration counts must be non-negative")
        if self.theta_stage_samples < 1:
            raise ConfigError("theta_stage_samples must be positive")
        if not (0 < self.partial_theta_lr_factor <= 1):
            raise ConfigError("partial_theta_lr_factor must lie in (0, 1]")

    def to_dict(self):
        out = {}
        for f in dc_fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dc_fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


def sample_graphs(params: EdgeParams, k, rng):
    """Draw k adjacency matrices entrywise from Ber(sigma(gamma)*sigma(theta))."""
    if k < 1:
        raise ParameterError("need at least one graph sample")
    p = params.edge_probabilities()
    return rng.random((k, params.n, params.n)) < p


@dataclass
class EdgeStats:
    """Per ordered pair: NLL sums/counts under graphs with and without the edge.

    ``nll[k, j]`` is the batch-mean clamped NLL of variable j under graph k;
    the intervened variable's column is skipped (zeros) since no gradient
    reads it.
    """

    sum1: np.ndarray
    cnt1: np.ndarray
    sum0: np.ndarray
    cnt0: np.ndarray
    nll: np.ndarray
    graphs: np.ndarray
    skip_var: int | None = None

    def group_means(self):
        """(mean with edge, mean without, validity mask) per ordered pair."""
        with np.errstate(invalid="ignore", divide="ignore"):
            mean1 = np.where(self.cnt1 > 0, self.sum1 / np.maximum(self.cnt1, 1), 0.0)
            mean0 = np.where(self.cnt0 > 0, self.sum0 / np.maximum(self.cnt0, 1), 0.0)
        valid = (self.cnt1 > 0) & (self.cnt0 > 0)
        return mean1, mean0, valid


def collect_edge_stats(estimators, batch, graphs, skip_var=None) -> EdgeStats:
    """Evaluate all variables' NLLs under each sampled graph and split them
    into the edge-present / edge-absent groups for every ordered pair.

    Log-likelihood evaluations are shared: one pass per (graph, variable),
    with duplicate parent masks deduplicated.
    """
    if batch.shape[0] == 0:
        raise ParameterError("empty batch")
    k, n, _ = graphs.shape
    nll = np.zeros((k, n))
    for j in range(n):
        if j == skip_var:
            continue
        est = estimators[j]
        masks = graphs[:, est.parents, j]
        uniq, inv = np.unique(masks, axis=0, return_inverse=True)
        lp = est.logprob_many(batch, uniq)
        lp = np.maximum(lp, LOGP_FLOOR)
        nll[:, j] = (-lp.mean(axis=1))[inv]
    cf = graphs.astype(np.float64)
    sum1 = np.einsum("kij,kj->ij", cf, nll)
    cnt1 = cf.sum(axis=0)
    sum0 = nll.sum(axis=0)[None, :] - sum1
    cnt0 = k - cnt1
    return EdgeStats(sum1, cnt1, sum0, cnt0, nll, graphs, skip_var)


def gamma_gradient(stats: EdgeStats, params: EdgeParams, sparsity, intervention_target):
    """Existence-logit gradient from grouped NLL means.

    grad[i, j] = sigma'(gamma_ij) * sigma(theta_ij) * (L_with - L_without + sparsity);
    the intervened variable's column and pairs with an empty group are zeroed.
    """
    mean1, mean0, valid = stats.group_means()
    bracket = np.where(valid, mean1 - mean0 + sparsity, 0.0)
    grad = expit_grad(params.gamma) * expit(params.theta) * bracket
    np.fill_diagonal(grad, 0.0)
    if intervention_target is not None:
        grad[:, intervention_target] = 0.0
    return grad


def theta_gradient(stats: EdgeStats, params: EdgeParams, intervention_target):
    """Orientation-logit gradient; only the intervened variable's row moves,
    with the mirror entries receiving the exact negation."""
    t = intervention_target
    mean1, mean0, valid = stats.group_means()
    d = np.where(valid[t], mean1[t] - mean0[t], 0.0)
    row = expit_grad(params.theta[t]) * expit(params.gamma[t]) * d
    row[t] = 0.0
    grad = np.zeros_like(params.theta)
    grad[t, :] = row
    grad[:, t] = -row
    return grad


def offtarget_theta_gradient(stats: EdgeStats, params: EdgeParams, pair_mask):
    """Orientation gradient for pairs with no adjacent interventions, driven
    by the current step's (non-adjacent) intervention. ``pair_mask`` is a
    symmetric boolean matrix selecting those pairs."""
    mean1, mean0, valid = stats.group_means()
    d = np.where(valid, mean1 - mean0, 0.0)
    sg = expit(params.gamma)
    grad = np.zeros_like(params.theta)
    n = params.n
    for i in range(n):
        for j in range(i + 1, n):
            if not pair_mask[i, j]:
                continue
            g = expit_grad(params.theta[i, j]) * (sg[i, j] * d[i, j] - sg[j, i] * d[j, i])
            grad[i, j] = g
            grad[j, i] = -g
    return grad


def bengio_gamma_gradient(stats: EdgeStats, params: EdgeParams, sparsity, return_flags=False):
    """REINFORCE-style single-group estimator kept for variance comparison.

    g[i, j] = sigma(theta_ij) * (mean_k[(sigma(gamma_ij) - C_ij) * L_j] /
    mean_k[L_j] + sparsity).  A zero denominator flags the column and yields
    a zero gradient there.
    """
    k = stats.graphs.shape[0]
    sg = expit(params.gamma)
    cf = stats.graphs.astype(np.float64)
    num = np.einsum("kij,kj->ij", sg[None, :, :] - cf, stats.nll) / k
    den = stats.nll.mean(axis=0)
    bad = den == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        grad = expit(params.theta) * (num / np.where(bad, 1.0, den)[None, :] + sparsity)
    grad[:, bad] = 0.0
    np.fill_diagonal(grad, 0.0)
    if stats.skip_var is not None:
        grad[:, stats.skip_var] = 0.0
    if return_flags:
        return grad, bad
    return grad


@dataclass
class GraphFitState:
    """Optimizer and mode state threaded through graph-fitting steps."""

    opt_gamma: Adam
    opt_theta: Adam
    opt_theta_offtarget: Adam | None = None
    split: SplitGamma | None = None
    partial: bool = False
    free_pair_mask: np.ndarray | None = None


def make_graph_fit_state(config: FitConfig, dataset, confounders=False, partial=None):
    n = dataset.n
    targets = set(dataset.intervened_targets)
    if partial is None:
        partial = len(targets) < n
    state = GraphFitState(
        opt_gamma=Adam(config.lr_gamma, config.betas_gamma),
        opt_theta=Adam(config.lr_theta, config.betas_theta),
    )
    if confounders:
        state.split = SplitGamma(
            n,
            opt_i=Adam(config.lr_gamma, config.betas_gamma),
            opt_o=Adam(config.lr_gamma, config.betas_gamma),
        )
    if partial:
        free = np.zeros((n, n), dtype=bool)
        for i in range(n):
            for j in range(n):
                if i != j and i not in targets and j not in targets:
                    free[i, j] = True
        state.partial = bool(free.any())
        state.free_pair_mask = free
        if state.partial:
            state.opt_theta_offtarget = Adam(
                config.lr_theta * config.partial_theta_lr_factor, config.betas_theta
            )
    return state


def graph_fit_step(estimators, dataset, params, config, rng, state: GraphFitState):
    """One intervention draw, one batch, K graph samples, one update of the
    edge parameters. Returns a small step report."""
    targets = dataset.intervened_targets
    if not targets:
        raise ConfigError("dataset has no interventional blocks")
    t = targets[int(rng.integers(len(targets)))]
    block = dataset.ints[t].samples
    rows = block[rng.integers(0, block.shape[0], size=config.batch_size)]
    graphs = sample_graphs(params, config.graph_samples, rng)
    stats = collect_edge_stats(estimators, rows, graphs, skip_var=t)

    ggrad = gamma_gradient(stats, params, config.sparsity, t)
    if state.split is not None:
        split_update(state.split, ggrad, t)
        params.gamma[...] = state.split.effective()
    else:
        state.opt_gamma.step({"gamma": params.gamma}, {"gamma": ggrad})
        np.fill_diagonal(params.gamma, 0.0)

    tgrad = theta_gradient(stats, params, t)
    tmask = np.zeros_like(params.theta, dtype=bool)
    tmask[t, :] = True
    tmask[:, t] = True
    tmask[t, t] = False
    state.opt_theta.step({"theta": params.theta}, {"theta": tgrad}, apply_mask={"theta": tmask})

    if state.partial:
        xgrad = offtarget_theta_gradient(stats, params, state.free_pair_mask)
        state.opt_theta_offtarget.step(
            {"theta": params.theta},
            {"theta": xgrad},
            apply_mask={"theta": state.free_pair_mask},
        )
    np.fill_diagonal(params.theta, 0.0)
    mean_nll = float(np.delete(stats.nll, t, axis=1).mean())
    return {"target": t, "mean_nll": mean_nll}


def theta_stage(estimators, dataset, params, config, rng, state: GraphFitState):
    """Orientation-only training with the existence logits frozen.

    Uses paired graph samples that share all entries except the one under
    test, so a handful of samples per step already gives low variance.
    """
    targets = dataset.intervened_targets
    if not targets:
        raise ConfigError("dataset has no interventional blocks")
    n = params.n
    for _ in range(config.theta_stage_iters):
        t = targets[int(rng.integers(len(targets)))]
        block = dataset.ints[t].samples
        rows = block[rng.integers(0, block.shape[0], size=config.batch_size)]
        base = sample_graphs(params, config.theta_stage_samples, rng)
        d = np.zeros(n)
        for j in range(n):
            if j == t:
                continue
            est = estimators[j]
            masks = base[:, est.parents, j]
            ppos = est.parents.index(t)
            m1 = masks.copy()
            m1[:, ppos] = True
            m0 = masks.copy()
            m0[:, ppos] = False
            lp = est.logprob_many(rows, np.vstack([m1, m0]))
            lp = np.maximum(lp, LOGP_FLOOR)
            nll = -lp.mean(axis=1)
            s = config.theta_stage_samples
            d[j] = nll[:s].mean() - nll[s:].mean()
        row = expit_grad(params.theta[t]) * expit(params.gamma[t]) * d
        row[t] = 0.0
        grad = np.zeros_like(params.theta)
        grad[t, :] = row
        grad[:, t] = -row
        tmask = np.zeros_like(params.theta, dtype=bool)
        tmask[t, :] = True
        tmask[:, t] = True
        tmask[t, t] = False
        state.opt_theta.step({"theta": params.theta}, {"theta": grad}, apply_mask={"theta": tmask})
    np.fill_diagonal(params.theta, 0.0)
    return {"iters": config.theta_stage_iters}


def predict_graph(params: EdgeParams, metas=None) -> CausalGraph:
    """Threshold the learned parameters: edge i -> j iff both sigmoids
    strictly exceed 0.5. No acyclicity guarantee here."""
    keep = (params.gamma > 0.0) & (params.theta > 0.0)
    np.fill_diagonal(keep, False)
    if metas is None:
        metas = default_metas(params.n)
    return CausalGraph(metas, keep)


@dataclass
class FitResult:
    params: EdgeParams
    graph: CausalGraph
    trace: list
    split: SplitGamma | None = None
    estimators: list = field(default_factory=list)


def fit(
    dataset,
    config: FitConfig,
    estimators=None,
    truth_graph=None,
    confounders=False,
    partial=None,
    estimator_dtype=np.float32,
) -> FitResult:
    """Run the full alternating loop and return the learned parameters, the
    thresholded graph, and one trace entry per epoch.

    ``estimators`` may be prebuilt (e.g. exact table oracles); when omitted,
    one masked-input network per variable is created (single precision by
    default; the edge parameters and gradient statistics stay double).
    Distribution fitting is skipped entirely if no estimator is trainable.
    """
    if not dataset.intervened_targets:
        raise ConfigError("dataset has no interventional blocks")
    n = dataset.n
    cards = [m.cardinality for m in dataset.metas]
    rng = np.random.default_rng(config.seed)
    if estimators is None:
        seeds = rng.integers(0, 2**31 - 1, size=n)
        estimators = [
            MlpEstimator(cards, i, seed=int(seeds[i]), dtype=estimator_dtype)
            for i in range(n)
        ]
    if len(estimators) != n:
        raise ConfigError(f"need {n} estimators, got {len(estimators)}")
    opts = {
        i: Adam(config.lr_model, weight_decay=config.weight_decay)
        for i, est in enumerate(estimators)
        if est.trainable
    }
    params = EdgeParams.zeros(n)
    state = make_graph_fit_state(config, dataset, confounders=confounders, partial=partial)
    obs_count = dataset.obs.shape[0]
    if opts and obs_count == 0:
        raise ConfigError("trainable estimators require observational samples")
    trace = []
    for epoch in range(config.epochs):
        if opts:
            for _ in range(config.dist_iters):
                rows = dataset.obs[rng.integers(0, obs_count, size=config.batch_size)]
                for i, est in enumerate(estimators):
                    if est.trainable:
                        train_step(est, rows, params, opts[i], rng)
        nlls = []
        for _ in range(config.graph_iters):
            rep = graph_fit_step(estimators, dataset, params, config, rng, state)
            nlls.append(rep["mean_nll"])
        if config.theta_freeze and config.theta_stage_iters > 0:
            theta_stage(estimators, dataset, params, config, rng, state)
        graph = predict_graph(params, dataset.metas)
        entry = {
            "epoch": epoch,
            "mean_nll": float(np.mean(nlls)) if nlls else None,
            "edge_count": graph.num_edges,
        }
        if truth_graph is not None:
            entry["shd"] = shd(graph, truth_graph)
        trace.append(entry)
    params.enforce_invariants()
    return FitResult(params, predict_graph(params, dataset.metas), trace, state.split, estimators)


@dataclass
class VarianceProbe:
    """Per-edge standard deviations for the grouped and the REINFORCE-style
    gradient estimators.

    The single-group baseline carries a large systematic offset (its
    centering term sigma(gamma) - C does not have mean zero), so the two
    estimators are put on a common mean by translation: ``mean_offset`` is
    the shift applied to the baseline. A translation leaves the standard
    deviations untouched, which keeps the spread comparison meaningful where
    a multiplicative rescaling would degenerate on near-zero means.
    """

    std_main: np.ndarray
    std_baseline: np.ndarray
    mean_main: np.ndarray
    mean_baseline: np.ndarray
    mean_offset: np.ndarray
    k: int
    reps: int

    def aligned_mean_baseline(self):
        return self.mean_baseline - self.mean_offset

    def comparable(self):
        """Mask of edges where both estimators produced usable statistics."""
        return (
            np.isfinite(self.std_main)
            & np.isfinite(self.std_baseline)
            & (self.std_baseline > 0)
        )


def gradient_variance_probe(
    estimators, dataset, params, k, reps, rng, batch_size=128
) -> VarianceProbe:
    """Repeatedly re-estimate both gradients from fresh K-sample batches and
    report their per-edge standard deviations."""
    if reps < 30:
        raise ParameterError("need at least 30 repetitions")
    targets = dataset.intervened_targets
    if not targets:
        raise ConfigError("dataset has no interventional blocks")
    n = params.n
    main = np.full((reps, n, n), np.nan)
    base = np.full((reps, n, n), np.nan)
    for r in range(reps):
        t = targets[int(rng.integers(len(targets)))]
        block = dataset.ints[t].samples
        rows = block[rng.integers(0, block.shape[0], size=batch_size)]
        graphs = sample_graphs(params, k, rng)
        stats = collect_edge_stats(estimators, rows, graphs, skip_var=t)
        gm = gamma_gradient(stats, params, 0.0, t)
        gb = bengio_gamma_gradient(stats, params, 0.0)
        gm[:, t] = np.nan
        gb[:, t] = np.nan
        main[r] = gm
        base[r] = gb
    idx = np.arange(n)
    with np.errstate(invalid="ignore", divide="ignore"):
        std_main = np.nanstd(main, axis=0)
        std_base = np.nanstd(base, axis=0)
        mean_main = np.nanmean(main, axis=0)
        mean_base = np.nanmean(base, axis=0)
    std_main[idx, idx] = np.nan
    std_base[idx, idx] = np.nan
    return VarianceProbe(
        std_main=std_main,
        std_baseline=std_base,
        mean_main=mean_main,
        mean_baseline=mean_base,
        mean_offset=mean_base - mean_main,
        k=k,
        reps=reps,
    )
