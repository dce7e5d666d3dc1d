"""Exact checking of the fitting procedure's convergence conditions.

For tiny models the guarantees can be verified outright: every expectation is
computed from exact observational/interventional joints, and parent subsets
are enumerated exhaustively. The same machinery yields the exact expectation
of the existence-logit gradient, which serves as the unbiasedness oracle for
the Monte-Carlo estimator.

All logarithms are natural.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .cgm import Cgm, _expand_to_grid, exact_int_joint, exact_joint
from .errors import ParameterError
from .graphs import EdgeParams
from .util import expit, expit_grad

_TOL = 1e-12


class _ExactTables:
    """Cached conditional log-tables and interventional joints for one CGM."""

    def __init__(self, cgm: Cgm):
        self.cgm = cgm
        self.cards = tuple(cgm.cards)
        self.obs = exact_joint(cgm)
        self._int_grids = {}
        self._logcond = {}

    def int_grid(self, t):
        if t not in self._int_grids:
            self._int_grids[t] = exact_int_joint(self.cgm, t).grid()
        return self._int_grids[t]

    def logcond_grid(self, j, subset):
        """log p(X_j | subset) broadcast over the full category grid."""
        key = (j, tuple(sorted(subset)))
        if key not in self._logcond:
            cond = self.obs.conditional(j, key[1])
            with np.errstate(divide="ignore"):
                logc = np.log(cond)
            axes = list(key[1]) + [j]
            self._logcond[key] = _expand_to_grid(logc, axes, self.cards)
        return self._logcond[key]

    def gain(self, t, j, subset, i):
        """E under intervention on t of log p(X_j|subset,i) - log p(X_j|subset)."""
        w = self.int_grid(t)
        with np.errstate(invalid="ignore"):
            # -inf log-conditionals (deterministic zeros) may meet here; the
            # resulting non-finite cells only matter where w > 0
            diff = self.logcond_grid(j, tuple(subset) + (i,)) - self.logcond_grid(j, subset)
            terms = np.where(w > 0, w * diff, 0.0)
        return float(terms.sum())


def _subsets(universe):
    """Subsets in increasing cardinality, lexicographic within each size."""
    universe = sorted(universe)
    for r in range(len(universe) + 1):
        yield from itertools.combinations(universe, r)


@dataclass
class PairConditions:
    """Conditions 1-2 for one ordered pair (source, affected variable)."""

    i: int
    j: int
    cond1_min: float = math.inf
    cond1_witness: tuple = ()
    cond1_values: dict = field(default_factory=dict)
    cond2_max: float = -math.inf
    cond2_witness: tuple = ()

    def satisfied(self):
        return self.cond1_min >= -_TOL and self.cond2_max > _TOL


@dataclass
class EdgeConditions(PairConditions):
    """Conditions 1-3 for a true edge; cond3_min bounds the usable sparsity."""

    cond3_min: float = math.inf
    cond3_witness: tuple = ()
    cond3_values: dict = field(default_factory=dict)

    @property
    def lambda_max(self):
        return self.cond3_min


@dataclass
class ConditionReport:
    edges: list
    ancestor_pairs: list
    lambda_max: float
    lambda_note: str = ""
    requested_lambda: float | None = None

    def passes(self, sparsity=None):
        lam = self.requested_lambda if sparsity is None else sparsity
        ok = all(e.satisfied() for e in self.edges)
        ok = ok and all(p.satisfied() for p in self.ancestor_pairs)
        if lam is not None:
            ok = ok and all(lam < e.cond3_min for e in self.edges)
        return ok

    def failing_edges(self, sparsity):
        return [(e.i, e.j) for e in self.edges if not (sparsity < e.cond3_min)]

    def to_json(self):
        def enc(rec, with3):
            out = {
                "i": rec.i,
                "j": rec.j,
                "cond1_min": rec.cond1_min,
                "cond1_witness": list(rec.cond1_witness),
                "cond2_max": rec.cond2_max,
                "cond1_values": {",".join(map(str, k)): v for k, v in rec.cond1_values.items()},
            }
            if with3:
                out["cond3_min"] = rec.cond3_min
                out["cond3_witness"] = list(rec.cond3_witness)
                out["cond3_values"] = {
                    ",".join(map(str, k)): v for k, v in rec.cond3_values.items()
                }
                out["lambda_max"] = rec.lambda_max
            return out

        data = {
            "edges": [enc(e, True) for e in self.edges],
            "ancestor_pairs": [enc(p, False) for p in self.ancestor_pairs],
            "lambda_max": None if math.isinf(self.lambda_max) else self.lambda_max,
            "lambda_note": self.lambda_note,
        }
        if self.requested_lambda is not None:
            data["requested_lambda"] = self.requested_lambda
            data["passes"] = self.passes()
            data["failing_edges"] = self.failing_edges(self.requested_lambda)
        return data

    def to_table(self, names=None):
        label = (lambda v: names[v]) if names else (lambda v: f"X{v + 1}")
        lines = []
        header = f"{'edge':<16}{'cond1_min':>12}{'cond2_max':>12}{'cond3_min':>12}"
        lines.append(header)
        lines.append("-" * len(header))
        for e in self.edges:
            lines.append(
                f"{label(e.i) + ' -> ' + label(e.j):<16}"
                f"{e.cond1_min:>12.4f}{e.cond2_max:>12.4f}{e.cond3_min:>12.4f}"
            )
        for p in self.ancestor_pairs:
            lines.append(
                f"{label(p.i) + ' ~> ' + label(p.j):<16}"
                f"{p.cond1_min:>12.4f}{p.cond2_max:>12.4f}{'-':>12}"
            )
        lam = "inf" if math.isinf(self.lambda_max) else f"{self.lambda_max:.4f}"
        lines.append(f"max usable sparsity: {lam}")
        if self.lambda_note:
            lines.append(self.lambda_note)
        return "\n".join(lines)


def _fill_pair(tables: _ExactTables, rec: PairConditions):
    universe = [k for k in range(len(tables.cards)) if k not in (rec.i, rec.j)]
    for subset in _subsets(universe):
        val = tables.gain(rec.i, rec.j, subset, rec.i)
        rec.cond1_values[subset] = val
        if val < rec.cond1_min:
            rec.cond1_min = val
            rec.cond1_witness = subset
        if val > rec.cond2_max:
            rec.cond2_max = val
            rec.cond2_witness = subset


def check_conditions(cgm: Cgm, sparsity=None) -> ConditionReport:
    """Evaluate the convergence conditions exactly on a small CGM.

    Condition 1/2: for every true edge i -> j (and every ancestor-descendant
    pair), adding i to any parent subset of j must not hurt, and must strictly
    help for at least one subset, in expectation under the intervention on i.
    Condition 3: the minimum, over subsets of the cycle-free candidate parents
    of j, of the expected gain of adding i -- averaged uniformly over
    interventions on every variable except j -- must exceed the sparsity
    penalty. The smallest such minimum over edges is the usable maximum.
    """
    tables = _ExactTables(cgm)
    g = cgm.graph
    n = g.n
    edges = []
    for i, j in g.edges():
        rec = EdgeConditions(i=int(i), j=int(j))
        _fill_pair(tables, rec)
        nondesc = set(range(n)) - set(g.descendants(j).tolist()) - {i, j}
        targets = [t for t in range(n) if t != j]
        for subset in _subsets(nondesc):
            val = sum(tables.gain(t, j, subset, i) for t in targets) / len(targets)
            rec.cond3_values[subset] = val
            if val < rec.cond3_min:
                rec.cond3_min = val
                rec.cond3_witness = subset
        edges.append(rec)
    pairs = []
    for i in range(n):
        for j in g.descendants(i):
            if not g.adj[i, j]:
                rec = PairConditions(i=int(i), j=int(j))
                _fill_pair(tables, rec)
                pairs.append(rec)
    if edges:
        lambda_max = min(e.cond3_min for e in edges)
        note = ""
    else:
        lambda_max = math.inf
        note = "graph has no edges; the sparsity bound is vacuous"
    return ConditionReport(
        edges=edges,
        ancestor_pairs=pairs,
        lambda_max=lambda_max,
        lambda_note=note,
        requested_lambda=sparsity,
    )


def max_lambda(cgm: Cgm) -> float:
    """Largest sparsity weight below which condition 3 holds on every true
    edge; +inf when the graph has no edges at all."""
    return check_conditions(cgm).lambda_max


def exact_gamma_gradient(cgm: Cgm, params: EdgeParams, sparsity, i, j) -> float:
    """Exact expectation of the existence-logit gradient for the pair (i, j).

    Enumerates the uniform intervention mixture (all targets except j), the
    interventional joints, and every setting of the other incoming edges of
    j weighted by its probability under the current parameters. Matches what
    the Monte-Carlo estimator converges to when its batch and graph samples
    grow (the log-probability floor is ignored here; it never binds on
    models with non-vanishing probabilities).
    """
    if i == j:
        raise ParameterError("need two distinct variables")
    tables = _ExactTables(cgm)
    n = cgm.n
    others = [k for k in range(n) if k not in (i, j)]
    q = params.edge_probabilities()[:, j]
    targets = [t for t in range(n) if t != j]
    w = 1.0 / len(targets)
    total = 0.0
    for subset in _subsets(others):
        p_subset = 1.0
        for k in others:
            p_subset *= q[k] if k in subset else (1.0 - q[k])
        if p_subset == 0.0:
            continue
        gain = sum(tables.gain(t, j, subset, i) for t in targets) * w
        # NLL difference (with-edge minus without) is the negated gain
        total += p_subset * (-gain)
    return float(
        expit_grad(params.gamma[i, j]) * expit(params.theta[i, j]) * (total + sparsity)
    )
