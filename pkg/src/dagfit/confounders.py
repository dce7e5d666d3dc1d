"""Split edge-existence bookkeeping and the latent-confounder score.

The existence logit of each edge is decomposed as gamma = gamma_i + gamma_o,
where gamma_i accumulates only gradient steps taken under interventions on
the edge's source variable and gamma_o accumulates all the others. A hidden
common cause of two otherwise unlinked variables drives the four
observational components up and the four interventional ones down, which the
score below turns into a number in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .estimators import Adam
from .util import expit


class SplitGamma:
    """Two existence-logit matrices with separate optimizer state."""

    def __init__(self, n, opt_i=None, opt_o=None, lr=2e-2, betas=(0.9, 0.9)):
        self.gamma_i = np.zeros((n, n))
        self.gamma_o = np.zeros((n, n))
        self.opt_i = opt_i if opt_i is not None else Adam(lr, betas)
        self.opt_o = opt_o if opt_o is not None else Adam(lr, betas)

    @property
    def n(self):
        return self.gamma_i.shape[0]

    def effective(self):
        return self.gamma_i + self.gamma_o


def split_update(sg: SplitGamma, grad, intervention_target):
    """Route one gradient matrix into the two stores.

    Row ``intervention_target`` flows into ``gamma_i``; every other entry
    flows into ``gamma_o``. Updates are applied only where each matrix
    received gradient, so per entry exactly one of the two stores moves.
    """
    t = intervention_target
    if grad.shape != sg.gamma_i.shape:
        raise ParameterError("gradient shape mismatch")
    row_mask = np.zeros_like(sg.gamma_i, dtype=bool)
    row_mask[t, :] = True
    grad_i = np.where(row_mask, grad, 0.0)
    grad_o = np.where(row_mask, 0.0, grad)
    sg.opt_i.step({"g": sg.gamma_i}, {"g": grad_i}, apply_mask={"g": row_mask})
    sg.opt_o.step({"g": sg.gamma_o}, {"g": grad_o}, apply_mask={"g": ~row_mask})
    np.fill_diagonal(sg.gamma_i, 0.0)
    np.fill_diagonal(sg.gamma_o, 0.0)
    return sg


def lc_score(sg: SplitGamma, i, j) -> float:
    """Latent-confounder score for the unordered pair (i, j), in [0, 1]."""
    if i == j:
        raise ParameterError("confounder score needs two distinct variables")
    return float(
        expit(sg.gamma_o[i, j])
        * expit(sg.gamma_o[j, i])
        * (1.0 - expit(sg.gamma_i[i, j]))
        * (1.0 - expit(sg.gamma_i[j, i]))
    )


@dataclass
class ConfounderReport:
    """Scores for every unordered pair; flagged where score > threshold."""

    threshold: float
    entries: list = field(default_factory=list)

    def flagged_pairs(self):
        return [(e["i"], e["j"]) for e in self.entries if e["flagged"]]

    def to_json(self):
        return self.entries

    def max_score(self):
        return max((e["score"] for e in self.entries), default=0.0)


def detect_confounders(sg: SplitGamma, threshold) -> ConfounderReport:
    if not (0.0 < threshold < 1.0):
        raise ParameterError(f"threshold must lie in (0, 1), got {threshold}")
    report = ConfounderReport(threshold=threshold)
    for i in range(sg.n):
        for j in range(i + 1, sg.n):
            score = lc_score(sg, i, j)
            report.entries.append(
                {"i": i, "j": j, "score": score, "flagged": bool(score > threshold)}
            )
    return report
