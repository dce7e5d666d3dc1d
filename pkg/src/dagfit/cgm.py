"""Ground-truth causal graphical models over categorical variables.

A CGM pairs a DAG with one conditional distribution per variable. Three
mechanism families are supported: dense probability tables, randomly
initialized two-layer networks (the synthetic benchmark generator), and
deterministic lookups. Sampling is ancestral; tiny models additionally
support exact joint computation for oracle-grade checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ParameterError
from .graphs import CausalGraph, VarMeta, default_metas

MAX_JOINT_CELLS = 10**7

PROB_ATOL = 1e-9


def _draw_categorical(rng, p):
    """One draw per row of the probability matrix ``p`` (rows sum to 1)."""
    u = rng.random(p.shape[0])
    cum = np.cumsum(p, axis=1)
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1).astype(np.int32)


def _orthogonal(rng, rows, cols, gain):
    """Semi-orthogonal matrix scaled by ``gain`` (orthonormal rows or columns)."""
    flat = rng.normal(size=(rows, cols))
    if rows < cols:
        q, r = np.linalg.qr(flat.T)
        d = np.sign(np.diag(r))
        d[d == 0] = 1.0
        return gain * (q * d).T
    q, r = np.linalg.qr(flat)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return gain * (q * d)


def _softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class TableCpd:
    """Full conditional probability table, axes = (parents..., own categories)."""

    kind = "table"

    def __init__(self, table):
        table = np.asarray(table, dtype=np.float64)
        if np.any(table < 0):
            raise ParameterError("probability table has negative entries")
        sums = table.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=PROB_ATOL, rtol=0.0):
            raise ParameterError("probability rows must sum to 1")
        self.table = table

    @property
    def arity(self):
        return self.table.ndim - 1

    @property
    def card(self):
        return self.table.shape[-1]

    def prob(self, parent_values):
        if self.arity == 0:
            return np.broadcast_to(self.table, (parent_values.shape[0], self.card))
        return self.table[tuple(parent_values.T)]

    def table_form(self):
        return self.table


class DeterministicCpd:
    """Lookup mapping each parent tuple to a single output category."""

    kind = "deterministic"

    def __init__(self, lookup, card):
        lookup = np.asarray(lookup, dtype=np.int32)
        if lookup.ndim == 0:
            raise ParameterError("deterministic CPDs need at least one parent")
        if np.any(lookup < 0) or np.any(lookup >= card):
            raise ParameterError("lookup values out of range")
        self.lookup = lookup
        self._card = int(card)

    @property
    def arity(self):
        return self.lookup.ndim

    @property
    def card(self):
        return self._card

    def prob(self, parent_values):
        out = np.zeros((parent_values.shape[0], self._card))
        out[np.arange(parent_values.shape[0]), self.lookup[tuple(parent_values.T)]] = 1.0
        return out

    def table_form(self):
        return np.eye(self._card)[self.lookup]


class NeuralCpd:
    """Two-layer network mechanism: per-parent embeddings (dim 4), hidden
    width 48, leaky-rectifier slope 0.1, softmax output."""

    kind = "neural"
    EMB_DIM = 4
    HIDDEN = 48
    SLOPE = 0.1

    def __init__(self, card, embeddings, w1, b1, w2, b2, root_logits=None):
        self._card = int(card)
        self.embeddings = embeddings
        self.w1 = w1
        self.b1 = b1
        self.w2 = w2
        self.b2 = b2
        self.root_logits = root_logits

    @classmethod
    def random(cls, rng, card, parent_cards, gain=2.5):
        if len(parent_cards) == 0:
            logits = rng.uniform(-0.5, 0.5, size=card)
            return cls(card, [], None, None, None, None, root_logits=logits)
        embeddings = [_orthogonal(rng, pc, cls.EMB_DIM, gain) for pc in parent_cards]
        w1 = _orthogonal(rng, cls.HIDDEN, cls.EMB_DIM * len(parent_cards), gain)
        b1 = rng.uniform(-0.5, 0.5, size=cls.HIDDEN)
        w2 = _orthogonal(rng, card, cls.HIDDEN, gain)
        b2 = rng.uniform(-0.5, 0.5, size=card)
        return cls(card, embeddings, w1, b1, w2, b2)

    @property
    def arity(self):
        return len(self.embeddings)

    @property
    def card(self):
        return self._card

    def prob(self, parent_values):
        r = parent_values.shape[0]
        if self.arity == 0:
            return np.broadcast_to(_softmax(self.root_logits), (r, self._card))
        z = np.concatenate(
            [emb[parent_values[:, k]] for k, emb in enumerate(self.embeddings)],
            axis=1,
        )
        h = z @ self.w1.T + self.b1
        a = np.where(h > 0, h, self.SLOPE * h)
        return _softmax(a @ self.w2.T + self.b2)

    def table_form(self):
        if self.arity == 0:
            return _softmax(self.root_logits)
        parent_cards = [e.shape[0] for e in self.embeddings]
        grids = np.indices(parent_cards).reshape(len(parent_cards), -1).T
        return self.prob(grids.astype(np.int32)).reshape(*parent_cards, self._card)


class Cgm:
    """A DAG plus one CPD per variable (parents in index order)."""

    def __init__(self, graph: CausalGraph, cpds):
        cpds = list(cpds)
        if len(cpds) != graph.n:
            raise ParameterError("need exactly one CPD per variable")
        for i, cpd in enumerate(cpds):
            indeg = len(graph.parents(i))
            if cpd.arity != indeg:
                raise ParameterError(
                    f"CPD arity {cpd.arity} != in-degree {indeg} for variable {i}"
                )
            if cpd.card != graph.metas[i].cardinality:
                raise ParameterError(f"CPD cardinality mismatch for variable {i}")
        self.graph = graph
        self.cpds = cpds
        self._topo = graph.topological_order()

    @property
    def n(self):
        return self.graph.n

    @property
    def cards(self):
        return self.graph.cards

    def _sample(self, count, rng, intervene_on=None, drop_vars=()):
        values = np.zeros((count, self.n), dtype=np.int32)
        for i in self._topo:
            card = self.graph.metas[i].cardinality
            if intervene_on is not None and i == intervene_on:
                values[:, i] = rng.integers(0, card, size=count, dtype=np.int32)
                continue
            parents = self.graph.parents(i)
            p = self.cpds[i].prob(values[:, parents])
            values[:, i] = _draw_categorical(rng, p)
        if drop_vars:
            keep = [i for i in range(self.n) if i not in set(drop_vars)]
            values = values[:, keep]
        return values


def sample_obs(cgm: Cgm, count, seed, drop_vars=()):
    """Ancestral samples from the observational joint distribution."""
    rng = np.random.default_rng(seed)
    return cgm._sample(count, rng, drop_vars=drop_vars)


def sample_int(cgm: Cgm, target, count, seed, drop_vars=()):
    """Samples with the target's mechanism replaced by the uniform distribution."""
    if not (0 <= target < cgm.n) or target in set(drop_vars):
        raise ParameterError(f"invalid intervention target {target}")
    rng = np.random.default_rng(seed)
    return cgm._sample(count, rng, intervene_on=target, drop_vars=drop_vars)


@dataclass
class JointTable:
    """Exact joint over the category product space (flat, C-order)."""

    probs: np.ndarray
    cards: tuple

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        total = int(np.prod(self.cards))
        if self.probs.size != total:
            raise ParameterError("joint size does not match cardinalities")
        if abs(self.probs.sum() - 1.0) > PROB_ATOL:
            raise ParameterError("joint does not sum to 1")

    @property
    def strides(self):
        out = np.ones(len(self.cards), dtype=np.int64)
        for i in range(len(self.cards) - 2, -1, -1):
            out[i] = out[i + 1] * self.cards[i + 1]
        return out

    def grid(self):
        return self.probs.reshape(self.cards)

    def marginal(self, axes):
        """Marginal over ``axes`` (returned axes follow sorted order)."""
        axes = tuple(sorted(axes))
        drop = tuple(a for a in range(len(self.cards)) if a not in axes)
        return self.grid().sum(axis=drop) if drop else self.grid()

    def conditional(self, target, given):
        """P(target | given) as an array of shape cards[given...] + (card_target,).

        Conditioning cells with zero probability get a uniform row; the
        estimator such a cell would back never saw data there.
        """
        given = tuple(sorted(given))
        if target in given:
            raise ParameterError("target cannot be in the conditioning set")
        m = self.marginal(given + (target,))
        # move the target axis (in sorted position) to the end
        tpos = sum(1 for g in given if g < target)
        m = np.moveaxis(m, tpos, -1)
        denom = m.sum(axis=-1, keepdims=True)
        card = self.cards[target]
        uniform = np.full_like(m, 1.0 / card)
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = np.where(denom > 0, m / np.where(denom > 0, denom, 1.0), uniform)
        return cond


def _expand_to_grid(arr, axes, cards):
    """Reshape ``arr`` (whose dims correspond to ``axes``) so it broadcasts
    against the full N-dimensional grid."""
    order = np.argsort(axes)
    arr_t = np.transpose(arr, order)
    shape = [1] * len(cards)
    for ax in axes:
        shape[ax] = cards[ax]
    return arr_t.reshape(shape)


def _joint(cgm: Cgm, intervene_on=None):
    cards = cgm.cards
    total = math.prod(cards)
    if total > MAX_JOINT_CELLS:
        raise CapacityError(
            f"joint has {total} cells, exceeding the limit of {MAX_JOINT_CELLS}"
        )
    grid = np.ones(cards, dtype=np.float64)
    for i in range(cgm.n):
        if intervene_on is not None and i == intervene_on:
            grid = grid * (1.0 / cards[i])
            continue
        parents = list(cgm.graph.parents(i))
        table = cgm.cpds[i].table_form()
        grid = grid * _expand_to_grid(table, parents + [i], cards)
    return JointTable(grid.reshape(-1), tuple(cards))


def exact_joint(cgm: Cgm) -> JointTable:
    return _joint(cgm)


def exact_int_joint(cgm: Cgm, target) -> JointTable:
    if not (0 <= target < cgm.n):
        raise ParameterError(f"invalid intervention target {target}")
    return _joint(cgm, intervene_on=target)


def make_neural_cgm(g: CausalGraph, cardinality, seed) -> Cgm:
    """Random neural mechanisms with orthogonal init (gain 2.5) and uniform
    biases in [-0.5, 0.5]; root variables are bias-only softmax marginals."""
    if cardinality < 2:
        raise ParameterError("cardinality must be >= 2")
    rng = np.random.default_rng(seed)
    metas = [VarMeta(m.name, cardinality) for m in g.metas]
    graph = CausalGraph(metas, g.adj)
    cpds = []
    for i in range(graph.n):
        parent_cards = [cardinality] * len(graph.parents(i))
        cpds.append(NeuralCpd.random(rng, cardinality, parent_cards))
    return Cgm(graph, cpds)


def make_product_cgm(g: CausalGraph, cardinality, seed) -> Cgm:
    """Each conditional is a normalized product of per-parent pairwise factors,
    each factor a softmax of N(0, 2) logits; materialized as tables."""
    if cardinality < 2:
        raise ParameterError("cardinality must be >= 2")
    rng = np.random.default_rng(seed)
    metas = [VarMeta(m.name, cardinality) for m in g.metas]
    graph = CausalGraph(metas, g.adj)
    cpds = []
    for i in range(graph.n):
        parents = graph.parents(i)
        if len(parents) == 0:
            cpds.append(TableCpd(_softmax(rng.normal(0.0, 2.0, size=cardinality))))
            continue
        pc = [cardinality] * len(parents)
        table = np.ones((*pc, cardinality))
        for k in range(len(parents)):
            # factor[b, a] = p(X_i = a | parent_k = b)
            factor = _softmax(rng.normal(0.0, 2.0, size=(cardinality, cardinality)))
            shape = [1] * len(parents) + [cardinality]
            shape[k] = cardinality
            table = table * factor.reshape(shape)
        table = table / table.sum(axis=-1, keepdims=True)
        cpds.append(TableCpd(table))
    return Cgm(graph, cpds)


def make_deterministic_cgm(g: CausalGraph, cardinality, seed, leaf_noise=False) -> Cgm:
    """Non-root variables map each parent tuple to a fixed random category;
    roots get random stochastic marginals. With ``leaf_noise`` the leaf
    variables keep stochastic tables so only interior nodes are deterministic."""
    if cardinality < 2:
        raise ParameterError("cardinality must be >= 2")
    rng = np.random.default_rng(seed)
    metas = [VarMeta(m.name, cardinality) for m in g.metas]
    graph = CausalGraph(metas, g.adj)
    leaves = set(graph.leaves().tolist())
    cpds = []
    for i in range(graph.n):
        parents = graph.parents(i)
        if len(parents) == 0:
            cpds.append(TableCpd(rng.dirichlet(np.ones(cardinality))))
        elif leaf_noise and i in leaves:
            pc = [cardinality] * len(parents)
            rows = rng.dirichlet(np.ones(cardinality), size=math.prod(pc))
            cpds.append(TableCpd(rows.reshape(*pc, cardinality)))
        else:
            pc = [cardinality] * len(parents)
            cpds.append(DeterministicCpd(rng.integers(0, cardinality, size=pc), cardinality))
    return Cgm(graph, cpds)


def add_latent_confounders(g: CausalGraph, k, seed):
    """Append ``k`` hidden root nodes, each pointing at a distinct unconnected
    pair of the existing nodes. Returns (augmented graph, latent index list)."""
    n = g.n
    candidates = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if not g.adj[i, j] and not g.adj[j, i]
    ]
    if len(candidates) < k:
        raise ParameterError(
            f"need {k} unconnected pairs but only {len(candidates)} exist"
        )
    rng = np.random.default_rng(seed)
    picks = [candidates[t] for t in rng.permutation(len(candidates))[:k]]
    metas = list(g.metas) + [VarMeta(f"L{m + 1}", 2) for m in range(k)]
    adj = np.zeros((n + k, n + k), dtype=bool)
    adj[:n, :n] = g.adj
    for m, (i, j) in enumerate(picks):
        adj[n + m, i] = True
        adj[n + m, j] = True
    return CausalGraph(metas, adj), list(range(n, n + k))


@dataclass
class InterventionBlock:
    samples: np.ndarray
    descriptor: dict = field(default_factory=lambda: {"type": "uniform"})


@dataclass
class Dataset:
    """Observational samples plus per-target interventional sample blocks.

    Column order follows ``metas``; ``ints`` is keyed by the column index of
    the intervened variable. The intervened set may be a strict subset of the
    variables (partial-intervention regime).
    """

    metas: list
    obs: np.ndarray
    ints: dict
    seeds: dict = field(default_factory=dict)

    def __post_init__(self):
        cards = np.array([m.cardinality for m in self.metas])
        self._check_block(self.obs, cards, "obs")
        for t, block in self.ints.items():
            if not (0 <= t < len(self.metas)):
                raise ParameterError(f"intervention target {t} out of range")
            self._check_block(block.samples, cards, f"int[{t}]")

    @staticmethod
    def _check_block(block, cards, label):
        if block.ndim != 2 or block.shape[1] != len(cards):
            raise ParameterError(f"{label} block has wrong shape {block.shape}")
        if block.size and (block.min() < 0 or np.any(block.max(axis=0) >= cards)):
            raise ParameterError(f"{label} block has out-of-range categories")

    @property
    def n(self):
        return len(self.metas)

    @property
    def intervened_targets(self):
        return sorted(self.ints.keys())


def generate_dataset(
    cgm: Cgm, obs_count, int_count, seed, latent_vars=(), targets=None
) -> Dataset:
    """Sample a full dataset from a CGM; latent columns are dropped and the
    intervention targets are keyed by their position among observed columns."""
    latents = set(latent_vars)
    observed = [i for i in range(cgm.n) if i not in latents]
    col_of = {v: c for c, v in enumerate(observed)}
    metas = [cgm.graph.metas[i] for i in observed]
    obs = sample_obs(cgm, obs_count, [seed, 0], drop_vars=latents)
    if targets is None:
        targets = observed
    ints = {}
    for t in targets:
        if t in latents:
            raise ParameterError(f"cannot intervene on latent variable {t}")
        samples = sample_int(cgm, t, int_count, [seed, 1 + t], drop_vars=latents)
        ints[col_of[t]] = InterventionBlock(samples)
    return Dataset(metas, obs, ints, seeds={"root": seed})
