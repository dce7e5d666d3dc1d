"""Parser for the discrete Bayesian-network interchange format (.bif).

Covers the dialect used by the public network repositories: ``network``,
``variable`` (discrete only) and ``probability`` blocks, ``//`` and ``/* */``
comments, and ``property`` lines (parsed and ignored). Probability rows are
renormalized on load since the files carry rounded values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cgm import Cgm, TableCpd
from .errors import DataFormatError
from .graphs import CausalGraph, VarMeta

_PUNCT = set("(){}[];,|")

ROW_SUM_ATOL = 1e-2
ROW_SKIP_NORM_ATOL = 1e-12


@dataclass
class _Token:
    text: str
    line: int
    col: int


def _tokenize(text):
    tokens = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        if text.startswith("/*", i):
            end = text.find("*/", i + 2)
            if end < 0:
                raise DataFormatError("unterminated block comment", line=line, column=col)
            skipped = text[i : end + 2]
            line += skipped.count("\n")
            col = 1 if "\n" in skipped else col + len(skipped)
            i = end + 2
            continue
        if c in _PUNCT:
            tokens.append(_Token(c, line, col))
            i += 1
            col += 1
            continue
        start = i
        startcol = col
        while i < n and text[i] not in " \t\r\n" and text[i] not in _PUNCT and not (
            text.startswith("//", i) or text.startswith("/*", i)
        ):
            i += 1
            col += 1
        tokens.append(_Token(text[start:i], line, startcol))
    return tokens


class _Stream:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, expect=None):
        tok = self.peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else None
            raise DataFormatError(
                f"unexpected end of input (expected {expect!r})" if expect else "unexpected end of input",
                line=last.line if last else None,
            )
        self.pos += 1
        if expect is not None and tok.text != expect:
            raise DataFormatError(
                f"expected {expect!r}, found {tok.text!r}", line=tok.line, column=tok.col
            )
        return tok

    def at_end(self):
        return self.pos >= len(self.tokens)


def _parse_number(tok):
    try:
        return float(tok.text)
    except ValueError:
        raise DataFormatError(f"expected a number, found {tok.text!r}", line=tok.line, column=tok.col)


def _skip_property(stream):
    while True:
        tok = stream.next(expect=None)
        if tok.text == ";":
            return


@dataclass
class BifDocument:
    """Parsed network: a table-CPD model plus the outcome-label mapping."""

    network_name: str
    cgm: Cgm
    labels: dict  # variable name -> list of outcome labels in index order


def _parse_variable(stream, variables, order):
    name_tok = stream.next()
    name = name_tok.text
    if name in variables:
        raise DataFormatError(f"duplicate variable {name!r}", line=name_tok.line)
    stream.next(expect="{")
    labels = None
    card = None
    while True:
        tok = stream.next()
        if tok.text == "}":
            break
        if tok.text == "property":
            _skip_property(stream)
            continue
        if tok.text != "type":
            raise DataFormatError(
                f"unexpected token {tok.text!r} in variable block", line=tok.line, column=tok.col
            )
        kind = stream.next()
        if kind.text != "discrete":
            raise DataFormatError(
                f"only discrete variables are supported, found {kind.text!r}",
                line=kind.line,
                column=kind.col,
            )
        stream.next(expect="[")
        card = int(_parse_number(stream.next()))
        stream.next(expect="]")
        stream.next(expect="{")
        labels = []
        while True:
            t = stream.next()
            if t.text == "}":
                break
            if t.text == ",":
                continue
            labels.append(t.text)
        stream.next(expect=";")
    if labels is None or card is None:
        raise DataFormatError(f"variable {name!r} has no type declaration", line=name_tok.line)
    if len(labels) != card:
        raise DataFormatError(
            f"variable {name!r} declares {card} outcomes but lists {len(labels)}",
            line=name_tok.line,
        )
    variables[name] = labels
    order.append(name)


def _parse_values_row(stream):
    values = []
    while True:
        tok = stream.next()
        if tok.text == ";":
            return values, tok
        if tok.text == ",":
            continue
        values.append(_parse_number(tok))


def _parse_probability(stream, variables, cpds):
    stream.next(expect="(")
    target_tok = stream.next()
    target = target_tok.text
    if target not in variables:
        raise DataFormatError(f"unknown variable {target!r}", line=target_tok.line, column=target_tok.col)
    parents = []
    tok = stream.next()
    if tok.text == "|":
        while True:
            p = stream.next()
            if p.text == ")":
                break
            if p.text == ",":
                continue
            if p.text not in variables:
                raise DataFormatError(f"unknown variable {p.text!r}", line=p.line, column=p.col)
            parents.append(p.text)
    elif tok.text != ")":
        raise DataFormatError(f"expected '|' or ')', found {tok.text!r}", line=tok.line, column=tok.col)
    if target in cpds:
        raise DataFormatError(f"duplicate probability block for {target!r}", line=target_tok.line)
    stream.next(expect="{")
    card = len(variables[target])
    parent_cards = [len(variables[p]) for p in parents]
    label_index = {p: {lab: k for k, lab in enumerate(variables[p])} for p in parents}
    rows = {}
    root_row = None
    while True:
        tok = stream.next()
        if tok.text == "}":
            break
        if tok.text == "property":
            _skip_property(stream)
            continue
        if tok.text == "table":
            values, endtok = _parse_values_row(stream)
            if parents:
                raise DataFormatError(
                    f"'table' row in conditioned block for {target!r}", line=tok.line
                )
            root_row = (values, endtok)
            continue
        if tok.text == "(":
            combo = []
            while True:
                t = stream.next()
                if t.text == ")":
                    break
                if t.text == ",":
                    continue
                combo.append(t)
            if len(combo) != len(parents):
                raise DataFormatError(
                    f"tuple arity {len(combo)} != parent count {len(parents)} for {target!r}",
                    line=tok.line,
                )
            idx = []
            for t, p in zip(combo, parents):
                if t.text not in label_index[p]:
                    raise DataFormatError(
                        f"unknown outcome {t.text!r} for parent {p!r}", line=t.line, column=t.col
                    )
                idx.append(label_index[p][t.text])
            values, endtok = _parse_values_row(stream)
            if tuple(idx) in rows:
                raise DataFormatError(
                    f"duplicate parent tuple for {target!r}", line=tok.line
                )
            rows[tuple(idx)] = (values, endtok)
            continue
        raise DataFormatError(
            f"unexpected token {tok.text!r} in probability block", line=tok.line, column=tok.col
        )

    def check_row(values, endtok):
        if len(values) != card:
            raise DataFormatError(
                f"row for {target!r} has {len(values)} entries, expected {card}",
                line=endtok.line,
            )
        arr = np.asarray(values, dtype=np.float64)
        if np.any(arr < 0):
            raise DataFormatError(f"negative probability for {target!r}", line=endtok.line)
        s = arr.sum()
        if abs(s - 1.0) > ROW_SUM_ATOL:
            raise DataFormatError(
                f"row for {target!r} sums to {s:.6f}, beyond tolerance", line=endtok.line
            )
        if abs(s - 1.0) > ROW_SKIP_NORM_ATOL:
            arr = arr / s
        return arr

    if not parents:
        if root_row is None:
            raise DataFormatError(f"missing 'table' row for root variable {target!r}", line=target_tok.line)
        table = check_row(*root_row)
    else:
        table = np.zeros((*parent_cards, card))
        seen = np.zeros(parent_cards, dtype=bool)
        for idx, payload in rows.items():
            table[idx] = check_row(*payload)
            seen[idx] = True
        if not seen.all():
            missing = np.argwhere(~seen)[0]
            raise DataFormatError(
                f"missing parent tuple {tuple(int(v) for v in missing)} for {target!r}",
                line=target_tok.line,
            )
    cpds[target] = (parents, table)


def parse_bif_document(text: str) -> BifDocument:
    stream = _Stream(_tokenize(text))
    variables = {}
    order = []
    cpds = {}
    network_name = ""
    while not stream.at_end():
        tok = stream.next()
        if tok.text == "network":
            parts = []
            while stream.peek() is not None and stream.peek().text != "{":
                parts.append(stream.next().text)
            network_name = " ".join(parts)
            stream.next(expect="{")
            while True:
                t = stream.next()
                if t.text == "}":
                    break
                if t.text == "property":
                    _skip_property(stream)
        elif tok.text == "variable":
            _parse_variable(stream, variables, order)
        elif tok.text == "probability":
            _parse_probability(stream, variables, cpds)
        else:
            raise DataFormatError(
                f"unexpected top-level token {tok.text!r}", line=tok.line, column=tok.col
            )
    if not order:
        raise DataFormatError("no variables declared")
    missing = [v for v in order if v not in cpds]
    if missing:
        raise DataFormatError(f"missing probability block for {missing[0]!r}")
    index = {name: k for k, name in enumerate(order)}
    n = len(order)
    adj = np.zeros((n, n), dtype=bool)
    metas = [VarMeta(name, len(variables[name])) for name in order]
    tables = [None] * n
    for name, (parents, table) in cpds.items():
        j = index[name]
        pidx = [index[p] for p in parents]
        for p in pidx:
            adj[p, j] = True
        if pidx:
            # reorder table axes from declaration order to index order
            perm = np.argsort(pidx)
            table = np.transpose(table, list(perm) + [len(pidx)])
        tables[j] = TableCpd(table)
    graph = CausalGraph(metas, adj)
    cgm = Cgm(graph, tables)
    return BifDocument(
        network_name=network_name,
        cgm=cgm,
        labels={name: list(variables[name]) for name in order},
    )


def parse_bif(text: str) -> Cgm:
    """Parse BIF text into a table-CPD model (see :func:`parse_bif_document`)."""
    return parse_bif_document(text).cgm


def load_bif(path) -> BifDocument:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return parse_bif_document(fh.read())
        except DataFormatError as e:
            raise DataFormatError(str(e), path=str(path)) from e


def unparse_bif(cgm: Cgm, labels=None, network_name="unknown") -> str:
    """Canonical BIF text for a table-CPD model.

    Any model whose CPDs can be materialized as tables is accepted; rows are
    written in C-order over index-ordered parents at full precision, so the
    output reparses to an identical model.
    """
    g = cgm.graph
    if labels is None:
        labels = {}
    out = [f"network {network_name} {{", "}"]
    for m in g.metas:
        labs = labels.get(m.name) or [f"c{k}" for k in range(m.cardinality)]
        out.append(f"variable {m.name} {{")
        out.append(f"  type discrete [ {m.cardinality} ] {{ {', '.join(labs)} }};")
        out.append("}")
    for j in range(g.n):
        parents = list(g.parents(j))
        table = cgm.cpds[j].table_form()
        tname = g.metas[j].name
        if not parents:
            row = ", ".join(repr(float(v)) for v in np.atleast_1d(table))
            out.append(f"probability ( {tname} ) {{")
            out.append(f"  table {row};")
            out.append("}")
            continue
        pnames = [g.metas[p].name for p in parents]
        plabels = [labels.get(nm) or [f"c{k}" for k in range(g.metas[p].cardinality)]
                   for nm, p in zip(pnames, parents)]
        out.append(f"probability ( {tname} | {', '.join(pnames)} ) {{")
        pcards = [g.metas[p].cardinality for p in parents]
        for combo in np.ndindex(*pcards):
            key = ", ".join(plabels[k][v] for k, v in enumerate(combo))
            row = ", ".join(repr(float(v)) for v in table[combo])
            out.append(f"  ({key}) {row};")
        out.append("}")
    return "\n".join(out) + "\n"
