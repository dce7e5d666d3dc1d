"""Bundled benchmark networks and hand-built reference models."""

from __future__ import annotations

from importlib import resources

import numpy as np

from .bif import BifDocument, load_bif
from .cgm import Cgm, TableCpd
from .errors import ParameterError
from .graphs import CausalGraph, VarMeta

BUILTIN_NETWORKS = ("cancer", "asia", "earthquake", "chain3")


def fixture_path(name):
    """Filesystem path of a bundled ``.bif`` network."""
    if not name.endswith(".bif"):
        name += ".bif"
    path = resources.files("dagfit") / "fixtures" / name
    if not path.is_file():
        raise ParameterError(f"no bundled network {name!r}")
    return path


def load_builtin(name) -> BifDocument:
    return load_bif(fixture_path(name))


def chain3_cgm() -> Cgm:
    """Binary chain X1 -> X2 -> X3 used throughout the exact-checker tests.

    X1 is Bernoulli(0.7); X2 copies X1 with probability 0.6; X3 copies X2
    with probability 0.2.
    """
    metas = [VarMeta("X1", 2), VarMeta("X2", 2), VarMeta("X3", 2)]
    adj = np.zeros((3, 3), dtype=bool)
    adj[0, 1] = adj[1, 2] = True
    return Cgm(
        CausalGraph(metas, adj),
        [
            TableCpd(np.array([0.3, 0.7])),
            TableCpd(np.array([[0.6, 0.4], [0.4, 0.6]])),
            TableCpd(np.array([[0.2, 0.8], [0.8, 0.2]])),
        ],
    )


def xor_fork_cgm(eps=0.1) -> Cgm:
    """Noisy-XOR collider X1 -> X3 <- X2 with uniform, independent inputs.

    Either input alone says nothing about the output, so no positive
    sparsity weight preserves the guarantee for this graph.
    """
    if not (0.0 < eps < 0.5):
        raise ParameterError("eps must lie in (0, 0.5)")
    metas = [VarMeta("X1", 2), VarMeta("X2", 2), VarMeta("X3", 2)]
    adj = np.zeros((3, 3), dtype=bool)
    adj[0, 2] = adj[1, 2] = True
    table = np.empty((2, 2, 2))
    for x1 in (0, 1):
        for x2 in (0, 1):
            p1 = eps if x1 == x2 else 1.0 - eps
            table[x1, x2] = [1.0 - p1, p1]
    return Cgm(
        CausalGraph(metas, adj),
        [
            TableCpd(np.array([0.5, 0.5])),
            TableCpd(np.array([0.5, 0.5])),
            TableCpd(table),
        ],
    )
