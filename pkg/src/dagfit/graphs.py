"""Directed graphs over categorical variables: generators, metrics, ordering.

A graph is a list of variable descriptions plus a boolean adjacency matrix
with ``adj[i, j]`` meaning an edge from variable ``i`` to variable ``j``.
Edge beliefs learned by the fitting stage live in :class:`EdgeParams`, which
keeps one existence logit and one (antisymmetric) orientation logit per
ordered pair.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, ParameterError
from .util import expit, log_expit

GRAPH_KINDS = ("bidiag", "chain", "collider", "full", "jungle", "random")


@dataclass(frozen=True)
class VarMeta:
    """Name and category count of one variable."""

    name: str
    cardinality: int

    def __post_init__(self):
        if not self.name:
            raise ParameterError("variable name must be non-empty")
        if self.cardinality < 2:
            raise ParameterError(
                f"cardinality must be >= 2, got {self.cardinality} for {self.name!r}"
            )


class CausalGraph:
    """Variable metadata plus a boolean directed adjacency matrix."""

    __slots__ = ("metas", "adj")

    def __init__(self, metas, adj):
        metas = list(metas)
        adj = np.array(adj, dtype=bool)
        n = len(metas)
        if adj.shape != (n, n):
            raise ParameterError(f"adjacency must be {n}x{n}, got {adj.shape}")
        if np.any(np.diag(adj)):
            raise ParameterError("self-loops are not allowed")
        names = [m.name for m in metas]
        if len(set(names)) != n:
            raise ParameterError("variable names must be unique")
        self.metas = metas
        self.adj = adj

    @property
    def n(self):
        return len(self.metas)

    @property
    def names(self):
        return [m.name for m in self.metas]

    @property
    def cards(self):
        return [m.cardinality for m in self.metas]

    def edges(self):
        """Edge list as sorted (src, dst) index pairs."""
        return [(int(i), int(j)) for i, j in np.argwhere(self.adj)]

    @property
    def num_edges(self):
        return int(self.adj.sum())

    def parents(self, j):
        return np.flatnonzero(self.adj[:, j])

    def children(self, i):
        return np.flatnonzero(self.adj[i, :])

    def roots(self):
        return np.flatnonzero(~self.adj.any(axis=0))

    def leaves(self):
        return np.flatnonzero(~self.adj.any(axis=1))

    def descendants(self, i):
        """All nodes reachable from ``i`` by directed paths (excluding ``i``)."""
        seen = np.zeros(self.n, dtype=bool)
        stack = list(self.children(i))
        while stack:
            v = stack.pop()
            if not seen[v]:
                seen[v] = True
                stack.extend(self.children(v))
        return np.flatnonzero(seen)

    def topological_order(self):
        """Kahn's algorithm; raises ParameterError if the graph is cyclic."""
        indeg = self.adj.sum(axis=0).astype(int)
        ready = sorted(np.flatnonzero(indeg == 0).tolist())
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for c in self.children(v):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(int(c))
        if len(order) != self.n:
            raise ParameterError("graph contains a directed cycle")
        return order

    def __eq__(self, other):
        if not isinstance(other, CausalGraph):
            return NotImplemented
        return self.metas == other.metas and np.array_equal(self.adj, other.adj)

    def __repr__(self):
        return f"CausalGraph(n={self.n}, edges={self.num_edges})"

    def copy(self):
        return CausalGraph(list(self.metas), self.adj.copy())


def default_metas(n, cardinality=2):
    return [VarMeta(f"X{i + 1}", cardinality) for i in range(n)]


def is_acyclic(g: CausalGraph) -> bool:
    try:
        g.topological_order()
    except ParameterError:
        return False
    return True


def gen_graph(kind, n, edge_prob=None, seed=0, cardinality=2) -> CausalGraph:
    """Build one of the standard synthetic graph structures.

    ``chain`` links consecutive nodes; ``bidiag`` adds the 2-hop skip edges;
    ``collider`` makes the last node the child of all others; ``full`` connects
    every pair i < j; ``jungle`` is a perfect binary tree (children of i are
    2i+1 and 2i+2) plus edges from each node to its grandchildren; ``random``
    draws each i < j edge independently with probability ``edge_prob``.
    All orientations follow the index order i < j.
    """
    if kind not in GRAPH_KINDS:
        raise ParameterError(f"unknown graph kind {kind!r}")
    if n < 2:
        raise ParameterError(f"need n >= 2, got {n}")
    if kind == "jungle" and n < 3:
        raise ParameterError("jungle requires n >= 3")
    adj = np.zeros((n, n), dtype=bool)
    if kind == "chain":
        for i in range(n - 1):
            adj[i, i + 1] = True
    elif kind == "bidiag":
        for i in range(n - 1):
            adj[i, i + 1] = True
            if i + 2 < n:
                adj[i, i + 2] = True
    elif kind == "collider":
        adj[: n - 1, n - 1] = True
    elif kind == "full":
        adj[np.triu_indices(n, k=1)] = True
    elif kind == "jungle":
        for i in range(n):
            for c in (2 * i + 1, 2 * i + 2):
                if c < n:
                    adj[i, c] = True
        base = adj.copy()
        for i in range(n):
            for c in np.flatnonzero(base[i]):
                for gc in np.flatnonzero(base[c]):
                    adj[i, gc] = True
    else:  # random
        if edge_prob is None or not (0.0 < edge_prob < 1.0):
            raise ParameterError(
                f"random graphs need edge_prob in (0,1), got {edge_prob}"
            )
        rng = np.random.default_rng(seed)
        iu = np.triu_indices(n, k=1)
        draws = rng.random(len(iu[0])) < edge_prob
        adj[iu] = draws
    return CausalGraph(default_metas(n, cardinality), adj)


def shd(pred: CausalGraph, truth: CausalGraph) -> int:
    """Structural hamming distance; a reversed edge counts as one flip."""
    if pred.n != truth.n:
        raise ParameterError(f"node count mismatch: {pred.n} vs {truth.n}")
    a, b = pred.adj, truth.adj
    total = 0
    for i in range(pred.n):
        for j in range(i + 1, pred.n):
            pa = (a[i, j], a[j, i])
            pb = (b[i, j], b[j, i])
            if pa == pb:
                continue
            if pa in ((True, False), (False, True)) and pb == (pa[1], pa[0]):
                total += 1
            else:
                total += int(pa[0] != pb[0]) + int(pa[1] != pb[1])
    return total


def edge_precision_recall(pred: CausalGraph, truth: CausalGraph):
    """Directed-edge precision and recall; empty sets score 1.0."""
    if pred.n != truth.n:
        raise ParameterError(f"node count mismatch: {pred.n} vs {truth.n}")
    tp = int((pred.adj & truth.adj).sum())
    np_, nt = pred.num_edges, truth.num_edges
    precision = 1.0 if np_ == 0 else tp / np_
    recall = 1.0 if nt == 0 else tp / nt
    return precision, recall


class EdgeParams:
    """Edge-existence logits ``gamma`` and orientation logits ``theta``.

    ``theta`` is kept exactly antisymmetric (theta[j, i] == -theta[i, j]) and
    both diagonals are pinned at zero; the probability of the directed edge
    i -> j is sigmoid(gamma[i, j]) * sigmoid(theta[i, j]).
    """

    __slots__ = ("gamma", "theta")

    def __init__(self, gamma, theta):
        gamma = np.array(gamma, dtype=np.float64)
        theta = np.array(theta, dtype=np.float64)
        if gamma.ndim != 2 or gamma.shape[0] != gamma.shape[1]:
            raise ParameterError("gamma must be square")
        if theta.shape != gamma.shape:
            raise ParameterError("theta must match gamma's shape")
        np.fill_diagonal(gamma, 0.0)
        upper = np.triu(theta, k=1)
        self.gamma = gamma
        self.theta = upper - upper.T

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, n)), np.zeros((n, n)))

    @property
    def n(self):
        return self.gamma.shape[0]

    def set_theta(self, i, j, value):
        """Write one orientation logit, mirroring the negation exactly."""
        if i == j:
            raise ParameterError("theta diagonal is fixed at zero")
        self.theta[i, j] = value
        self.theta[j, i] = -value

    def enforce_invariants(self):
        """Re-pin diagonals; verify antisymmetry holds bit-exactly."""
        np.fill_diagonal(self.gamma, 0.0)
        np.fill_diagonal(self.theta, 0.0)
        if not np.array_equal(self.theta, -self.theta.T):
            raise ParameterError("theta lost antisymmetry")

    def edge_probabilities(self):
        p = expit(self.gamma) * expit(self.theta)
        np.fill_diagonal(p, 0.0)
        return p

    def copy(self):
        return EdgeParams(self.gamma.copy(), self.theta.copy())


@dataclass(frozen=True)
class OrderPermutation:
    """A global variable order; order[k] is the node at position k."""

    order: tuple

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ParameterError("order must be a permutation of 0..N-1")

    def positions(self):
        pos = np.empty(len(self.order), dtype=int)
        for k, v in enumerate(self.order):
            pos[v] = k
        return pos


def _order_score(order, logsig):
    s = 0.0
    for a in range(len(order)):
        for b in range(a + 1, len(order)):
            s += logsig[order[a], order[b]]
    return s


def _best_order_exact(logsig):
    """Exact argmax over permutations via subset DP; ties break toward the
    lexicographically smallest permutation."""
    n = logsig.shape[0]
    full = (1 << n) - 1
    # cross[v][S]: sum of logsig[u, v] over u in subset S
    cross = np.zeros((n, 1 << n))
    for v in range(n):
        for s in range(1, 1 << n):
            low = (s & -s).bit_length() - 1
            cross[v][s] = cross[v][s & (s - 1)] + logsig[low, v]
    # best[S]: max internal score over orderings of subset S
    best = np.full(1 << n, -np.inf)
    best[0] = 0.0
    for s in range(1, 1 << n):
        rem = s
        while rem:
            v = (rem & -rem).bit_length() - 1
            rem &= rem - 1
            cand = best[s ^ (1 << v)] + cross[v][s ^ (1 << v)]
            if cand > best[s]:
                best[s] = cand
    # Position-by-position reconstruction: pick the smallest node whose
    # completion value attains the maximum (lexicographic tie-break).
    order = []
    placed = 0
    acc = 0.0
    remaining = full
    for _ in range(n):
        cand_best = -np.inf
        cand_v = -1
        rem = remaining
        while rem:
            v = (rem & -rem).bit_length() - 1
            rem &= rem - 1
            rest = remaining ^ (1 << v)
            # prefix pairs + (prefix, v) + pairs inside rest
            value = acc + cross[v][placed] + best[rest]
            # (prefix + v, w) pairs for every w still to be placed
            pv = placed | (1 << v)
            r = rest
            while r:
                w = (r & -r).bit_length() - 1
                r &= r - 1
                value += cross[w][pv]
            if value > cand_best:
                cand_best = value
                cand_v = v
        v = cand_v
        order.append(v)
        acc += cross[v][placed]
        placed |= 1 << v
        remaining ^= 1 << v
    return order


def _descend(order, logsig):
    """Steepest-descent local search over single-node insertions and pairwise
    swaps; returns the locally optimal order and its score."""
    n = len(order)
    order = list(order)
    improved = True
    while improved:
        improved = False
        best_delta = 1e-12
        best_move = None
        for a in range(n):
            v = order[a]
            for b in range(n):
                if b == a:
                    continue
                if b > a:
                    delta = sum(logsig[u, v] - logsig[v, u] for u in order[a + 1 : b + 1])
                else:
                    delta = sum(logsig[v, u] - logsig[u, v] for u in order[b:a])
                if delta > best_delta:
                    best_delta = delta
                    best_move = ("ins", a, b)
        for a in range(n):
            for b in range(a + 1, n):
                v, w = order[a], order[b]
                delta = logsig[w, v] - logsig[v, w]
                for u in order[a + 1 : b]:
                    delta += (logsig[u, v] - logsig[v, u]) + (logsig[w, u] - logsig[u, w])
                if delta > best_delta:
                    best_delta = delta
                    best_move = ("swap", a, b)
        if best_move is not None:
            kind, a, b = best_move
            if kind == "ins":
                order.insert(b, order.pop(a))
            else:
                order[a], order[b] = order[b], order[a]
            improved = True
    return order, _order_score(order, logsig)


def _best_order_greedy(theta, logsig):
    """Deterministic multistart local search, seeded by sigmoid row sums.

    Single-insertion moves alone leave a small fraction of instances in a
    local optimum, so the neighborhood also includes pairwise swaps, and the
    incumbent is re-descended from every cyclic rotation until no rotation
    improves it.
    """
    n = theta.shape[0]
    base = list(np.argsort(-expit(theta).sum(axis=1), kind="stable"))
    best_order, best_score = None, -np.inf
    for start in (base, list(range(n)), base[::-1]):
        order, score = _descend(start, logsig)
        if score > best_score:
            best_order, best_score = order, score
    improved = True
    while improved:
        improved = False
        for k in range(1, n):
            order, score = _descend(best_order[k:] + best_order[:k], logsig)
            if score > best_score + 1e-12:
                best_order, best_score = order, score
                improved = True
    return best_order


def enforce_acyclic_order(params: EdgeParams, mode="greedy", metas=None):
    """Find the variable order maximizing pairwise orientation probabilities
    and drop every surviving edge that points against it.

    Returns (OrderPermutation, CausalGraph); the graph keeps edge i -> j only
    if sigmoid(gamma[i,j]) > 0.5, sigmoid(theta[i,j]) > 0.5 and i precedes j,
    so the output is acyclic by construction.
    """
    n = params.n
    if mode not in ("exhaustive", "greedy"):
        raise ParameterError(f"unknown mode {mode!r}")
    if mode == "exhaustive" and n > 10:
        raise ParameterError("exhaustive order search supports at most 10 nodes")
    logsig = log_expit(params.theta)
    np.fill_diagonal(logsig, 0.0)
    if mode == "exhaustive":
        order = _best_order_exact(logsig)
    else:
        order = _best_order_greedy(params.theta, logsig)
    perm = OrderPermutation(tuple(int(v) for v in order))
    pos = perm.positions()
    keep = (params.gamma > 0.0) & (params.theta > 0.0)
    keep &= pos[:, None] < pos[None, :]
    np.fill_diagonal(keep, False)
    if metas is None:
        metas = default_metas(n)
    return perm, CausalGraph(metas, keep)


def order_objective(order, params: EdgeParams) -> float:
    """Product over ordered pairs of orientation probabilities, in log space."""
    logsig = log_expit(params.theta)
    np.fill_diagonal(logsig, 0.0)
    seq = order.order if isinstance(order, OrderPermutation) else list(order)
    return _order_score(seq, logsig)


def write_graph_text(g: CausalGraph) -> str:
    """Text form: one ``nodes:`` header line, then one ``edge:`` line per edge."""
    lines = ["nodes: " + ",".join(f"{m.name}:{m.cardinality}" for m in g.metas)]
    name = g.names
    for i, j in g.edges():
        lines.append(f"edge: {name[i]} -> {name[j]}")
    return "\n".join(lines) + "\n"


def read_graph_text(text: str) -> CausalGraph:
    lines = text.split("\n")
    metas = None
    index = {}
    adj = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("nodes:"):
            if metas is not None:
                raise DataFormatError("duplicate nodes header", line=lineno)
            metas = []
            for part in line[len("nodes:") :].strip().split(","):
                if ":" not in part:
                    raise DataFormatError(
                        f"bad node spec {part!r}, expected name:cardinality",
                        line=lineno,
                    )
                name, card = part.rsplit(":", 1)
                try:
                    metas.append(VarMeta(name.strip(), int(card)))
                except (ValueError, ParameterError) as e:
                    raise DataFormatError(str(e), line=lineno) from e
            index = {m.name: k for k, m in enumerate(metas)}
            adj = np.zeros((len(metas), len(metas)), dtype=bool)
        elif line.startswith("edge:"):
            if metas is None:
                raise DataFormatError("edge before nodes header", line=lineno)
            body = line[len("edge:") :].strip()
            if "->" not in body:
                raise DataFormatError(f"bad edge line {body!r}", line=lineno)
            src, dst = (s.strip() for s in body.split("->", 1))
            for nm in (src, dst):
                if nm not in index:
                    raise DataFormatError(f"unknown variable {nm!r}", line=lineno)
            adj[index[src], index[dst]] = True
        else:
            raise DataFormatError(f"unrecognized line {line!r}", line=lineno)
    if metas is None:
        raise DataFormatError("missing nodes header")
    return CausalGraph(metas, adj)
